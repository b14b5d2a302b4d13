//! Class-conditional ID embedding buffers and EMA prototypes.
//!
//! Each class keeps a fixed-capacity FIFO of unit embeddings. Once full, a new
//! insertion evicts the oldest entry. Prototypes follow
//! `mu <- normalize(gamma * mu + (1 - gamma) * batch_mean)` and are undefined
//! until the first update.
//!
//! Queries take `&self`, so any number of readers may share one frozen store
//! while chains run; mutation needs `&mut self`.

mod io;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{dist_sq, norm, normalize, UnitVector};

pub use io::{read_binary, read_json, write_binary, write_json, StoreFile};

/// Buffer size used for CIFAR-scale runs.
pub const DEFAULT_CAPACITY: usize = 1000;
/// Prototype EMA factor.
pub const DEFAULT_EMA_FACTOR: f64 = 0.95;

/// An ordered pair of distinct class ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClusterPair {
    pub u: usize,
    pub v: usize,
}

impl ClusterPair {
    pub fn new(u: usize, v: usize) -> Result<Self> {
        if u == v {
            return Err(Error::BadArg(format!("cluster pair needs distinct classes, got ({u}, {v})")));
        }
        Ok(ClusterPair { u, v })
    }

    pub fn swapped(self) -> Self {
        ClusterPair { u: self.v, v: self.u }
    }
}

impl fmt::Display for ClusterPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.u, self.v)
    }
}

/// Result of a k-th nearest neighbor query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub distance: f64,
    /// Position in insertion order, 0 being the oldest entry still buffered.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct ClassBuffer {
    /// `capacity * dim` slots, row-major; only the first `len` rows are live.
    data: Vec<f64>,
    len: usize,
    /// Slot holding the oldest entry.
    head: usize,
}

impl ClassBuffer {
    fn new() -> Self {
        ClassBuffer {
            data: Vec::new(),
            len: 0,
            head: 0,
        }
    }

    fn slot_of(&self, index: usize, capacity: usize) -> usize {
        (self.head + index) % capacity
    }

    fn index_of(&self, slot: usize, capacity: usize) -> usize {
        (slot + capacity - self.head) % capacity
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdStore {
    num_classes: usize,
    dim: usize,
    capacity: usize,
    ema_factor: f64,
    buffers: Vec<ClassBuffer>,
    prototypes: Vec<Option<UnitVector>>,
}

impl IdStore {
    pub fn new(num_classes: usize, dim: usize, capacity: usize, ema_factor: f64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::BadConfig(format!("need at least 2 classes, got {num_classes}")));
        }
        if dim < 2 {
            return Err(Error::BadConfig(format!("need dimension >= 2, got {dim}")));
        }
        if capacity == 0 {
            return Err(Error::BadConfig("buffer capacity must be positive".into()));
        }
        if !(ema_factor > 0.0 && ema_factor < 1.0) {
            return Err(Error::BadConfig(format!("EMA factor must lie in (0, 1), got {ema_factor}")));
        }
        Ok(IdStore {
            num_classes,
            dim,
            capacity,
            ema_factor,
            buffers: vec![ClassBuffer::new(); num_classes],
            prototypes: vec![None; num_classes],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn ema_factor(&self) -> f64 {
        self.ema_factor
    }

    fn check_class(&self, class_id: usize) -> Result<()> {
        if class_id >= self.num_classes {
            return Err(Error::BadClass {
                class_id,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    /// Appends `z` to the class buffer, evicting the oldest entry when full.
    pub fn insert(&mut self, class_id: usize, z: &UnitVector) -> Result<()> {
        self.check_class(class_id)?;
        self.check_dim(z.dim())?;
        let (dim, cap) = (self.dim, self.capacity);
        let buf = &mut self.buffers[class_id];
        if buf.len < cap {
            buf.data.extend_from_slice(z.as_slice());
            buf.len += 1;
        } else {
            let slot = buf.head;
            buf.data[slot * dim..(slot + 1) * dim].copy_from_slice(z.as_slice());
            buf.head = (buf.head + 1) % cap;
        }
        Ok(())
    }

    /// Like [`insert`](Self::insert) for raw coordinates; rejects vectors whose
    /// norm is off by more than 1e-6.
    pub fn insert_coords(&mut self, class_id: usize, coords: &[f64]) -> Result<()> {
        self.check_class(class_id)?;
        self.check_dim(coords.len())?;
        let z = UnitVector::new(coords.to_vec())?;
        self.insert(class_id, &z)
    }

    /// EMA prototype update. The first call for a class sets the prototype to
    /// `normalize(batch_mean)`.
    pub fn update_prototype(&mut self, class_id: usize, batch_mean: &[f64]) -> Result<()> {
        self.check_class(class_id)?;
        self.check_dim(batch_mean.len())?;
        if self.buffers[class_id].len == 0 {
            return Err(Error::EmptyBuffer { class_id });
        }
        let gamma = self.ema_factor;
        let updated = match &self.prototypes[class_id] {
            None => normalize(batch_mean)?,
            Some(mu) => {
                let blended: Vec<f64> = mu
                    .as_slice()
                    .iter()
                    .zip(batch_mean)
                    .map(|(m, b)| gamma * m + (1.0 - gamma) * b)
                    .collect();
                normalize(&blended)?
            }
        };
        self.prototypes[class_id] = Some(updated);
        Ok(())
    }

    /// Inserts a labelled batch, then EMA-updates the prototype of every class
    /// present in it with that class's batch mean.
    pub fn insert_batch(&mut self, batch: &[(usize, UnitVector)]) -> Result<()> {
        let mut sums = vec![vec![0.0; self.dim]; self.num_classes];
        let mut counts = vec![0usize; self.num_classes];
        for (class_id, z) in batch {
            self.insert(*class_id, z)?;
            for (s, x) in sums[*class_id].iter_mut().zip(z.as_slice()) {
                *s += x;
            }
            counts[*class_id] += 1;
        }
        for (class_id, (sum, count)) in sums.iter().zip(&counts).enumerate() {
            if *count > 0 {
                let mean: Vec<f64> = sum.iter().map(|s| s / *count as f64).collect();
                self.update_prototype(class_id, &mean)?;
            }
        }
        Ok(())
    }

    /// Overwrites a prototype directly. Used when loading stores and building
    /// fixtures.
    pub fn set_prototype(&mut self, class_id: usize, mu: UnitVector) -> Result<()> {
        self.check_class(class_id)?;
        self.check_dim(mu.dim())?;
        self.prototypes[class_id] = Some(mu);
        Ok(())
    }

    pub fn len(&self, class_id: usize) -> usize {
        self.buffers.get(class_id).map_or(0, |b| b.len)
    }

    pub fn total_len(&self) -> usize {
        self.buffers.iter().map(|b| b.len).sum()
    }

    pub fn min_len(&self) -> usize {
        self.buffers.iter().map(|b| b.len).min().unwrap_or(0)
    }

    /// Live rows of a class buffer in storage order (not insertion order).
    /// Suited for order-free reductions.
    pub(crate) fn raw_rows(&self, class_id: usize) -> &[f64] {
        let buf = &self.buffers[class_id];
        &buf.data[..buf.len * self.dim]
    }

    /// Embedding `index` of a class, counted from the oldest.
    pub fn embedding(&self, class_id: usize, index: usize) -> &[f64] {
        let buf = &self.buffers[class_id];
        assert!(index < buf.len, "embedding index out of range");
        let slot = buf.slot_of(index, self.capacity);
        &buf.data[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Buffered embeddings of a class, oldest first.
    pub fn embeddings(&self, class_id: usize) -> impl Iterator<Item = &[f64]> + '_ {
        let len = self.len(class_id);
        (0..len).map(move |i| self.embedding(class_id, i))
    }

    /// Every buffered embedding across classes, class-major and oldest first.
    pub fn all_embeddings(&self) -> Vec<UnitVector> {
        (0..self.num_classes)
            .flat_map(|c| self.embeddings(c))
            .map(|row| UnitVector::from_stored(row.to_vec()))
            .collect()
    }

    pub fn prototype(&self, class_id: usize) -> Result<&UnitVector> {
        self.check_class(class_id)?;
        self.prototypes[class_id]
            .as_ref()
            .ok_or(Error::UndefinedPrototype { class_id })
    }

    pub fn prototypes(&self) -> Result<Vec<UnitVector>> {
        (0..self.num_classes)
            .map(|c| self.prototype(c).cloned())
            .collect()
    }

    /// k-th nearest buffered neighbor of `z` in class `class_id` by Euclidean
    /// distance. Ties go to the older entry.
    pub fn knn(&self, class_id: usize, z: &[f64], k: usize) -> Result<Neighbor> {
        self.check_class(class_id)?;
        self.check_dim(z.len())?;
        let buf = &self.buffers[class_id];
        if k == 0 {
            return Err(Error::BadArg("k must be at least 1".into()));
        }
        if buf.len < k {
            return Err(Error::InsufficientData {
                class_id,
                available: buf.len,
                required: k,
            });
        }
        let mut scored: Vec<(f64, usize)> = buf.data[..buf.len * self.dim]
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(slot, row)| (dist_sq(z, row), buf.index_of(slot, self.capacity)))
            .collect();
        let (_, kth, _) = scored.select_nth_unstable_by(k - 1, by_distance_then_index);
        Ok(Neighbor {
            distance: kth.0.sqrt(),
            index: kth.1,
        })
    }

    /// Distance to the k-th nearest neighbor together with that neighbor.
    pub fn knn_distance(&self, class_id: usize, z: &UnitVector, k: usize) -> Result<(f64, UnitVector)> {
        let nb = self.knn(class_id, z.as_slice(), k)?;
        let point = UnitVector::from_stored(self.embedding(class_id, nb.index).to_vec());
        Ok((nb.distance, point))
    }

    /// The `n_adj` other classes whose prototypes have the largest cosine
    /// similarity to this class's prototype, most similar first.
    pub fn adjacent_clusters(&self, class_id: usize, n_adj: usize) -> Result<Vec<usize>> {
        self.check_class(class_id)?;
        if n_adj == 0 || n_adj >= self.num_classes {
            return Err(Error::BadArg(format!(
                "n_adj must lie in [1, {}], got {n_adj}",
                self.num_classes - 1
            )));
        }
        let mu = self.prototype(class_id)?;
        let mut ranked = Vec::with_capacity(self.num_classes - 1);
        for j in (0..self.num_classes).filter(|&j| j != class_id) {
            ranked.push((mu.dot(self.prototype(j)?), j));
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(ranked.into_iter().take(n_adj).map(|(_, j)| j).collect())
    }

    /// Normalized sum of the two prototypes of `pair`.
    pub fn midpoint(&self, pair: ClusterPair) -> Result<UnitVector> {
        let a = self.prototype(pair.u)?;
        let b = self.prototype(pair.v)?;
        let sum: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x + y).collect();
        if norm(&sum) < 1e-8 {
            return Err(Error::AntipodalPrototypes { pair });
        }
        normalize(&sum)
    }
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::SQRT_2;

    fn random_unit(rng: &mut impl Rng, d: usize) -> UnitVector {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        normalize(&g).unwrap()
    }

    fn e(d: usize, i: usize) -> UnitVector {
        UnitVector::basis(d, i)
    }

    #[test]
    fn insert_and_evict_fifo() {
        let mut s = IdStore::new(2, 3, 2, 0.95).unwrap();
        s.insert(0, &e(3, 0)).unwrap();
        assert_eq!(s.embeddings(0).collect::<Vec<_>>(), vec![e(3, 0).as_slice()]);
        s.insert(0, &e(3, 1)).unwrap();
        s.insert(0, &e(3, 2)).unwrap();
        let rows: Vec<_> = s.embeddings(0).collect();
        assert_eq!(rows, vec![e(3, 1).as_slice(), e(3, 2).as_slice()]);
    }

    #[test]
    fn default_capacity_fills() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = IdStore::new(2, 8, DEFAULT_CAPACITY, DEFAULT_EMA_FACTOR).unwrap();
        for _ in 0..1000 {
            s.insert(1, &random_unit(&mut rng, 8)).unwrap();
        }
        assert_eq!(s.len(1), 1000);
        s.insert(1, &random_unit(&mut rng, 8)).unwrap();
        assert_eq!(s.len(1), 1000);
    }

    #[test]
    fn insert_errors() {
        let mut s = IdStore::new(2, 2, 4, 0.5).unwrap();
        assert!(matches!(s.insert(2, &e(2, 0)), Err(Error::BadClass { .. })));
        assert!(matches!(s.insert_coords(0, &[1.0, 1.0]), Err(Error::NotUnit { .. })));
        assert!(matches!(s.insert(0, &e(3, 0)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn prototype_updates() {
        let mut s = IdStore::new(2, 3, 4, 0.95).unwrap();
        assert!(matches!(s.update_prototype(0, &[1.0, 0.0, 0.0]), Err(Error::EmptyBuffer { .. })));
        s.insert(0, &e(3, 0)).unwrap();
        s.update_prototype(0, &[2.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.prototype(0).unwrap(), &e(3, 0));
        s.update_prototype(0, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.prototype(0).unwrap(), &e(3, 0));
        assert!(matches!(s.prototype(1), Err(Error::UndefinedPrototype { class_id: 1 })));

        let mut s = IdStore::new(2, 3, 4, 0.5).unwrap();
        s.insert(0, &e(3, 0)).unwrap();
        s.update_prototype(0, &[1.0, 0.0, 0.0]).unwrap();
        s.update_prototype(0, &[0.0, 1.0, 0.0]).unwrap();
        let mu = s.prototype(0).unwrap().as_slice();
        assert!((mu[0] - 1.0 / SQRT_2).abs() < 1e-15);
        assert!((mu[1] - 1.0 / SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn prototype_zero_blend_fails() {
        let mut s = IdStore::new(2, 2, 4, 0.5).unwrap();
        s.insert(0, &e(2, 0)).unwrap();
        s.update_prototype(0, &[1.0, 0.0]).unwrap();
        assert!(matches!(s.update_prototype(0, &[-1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn knn_examples() {
        let mut s = IdStore::new(2, 3, 8, 0.5).unwrap();
        s.insert(0, &e(3, 0)).unwrap();
        s.insert(0, &e(3, 1)).unwrap();
        let (d, nb) = s.knn_distance(0, &e(3, 0), 1).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(nb, e(3, 0));
        let (d, nb) = s.knn_distance(0, &e(3, 0), 2).unwrap();
        assert!((d - SQRT_2).abs() < 1e-15);
        assert_eq!(nb, e(3, 1));
        assert!(matches!(
            s.knn_distance(0, &e(3, 0), 3),
            Err(Error::InsufficientData { available: 2, required: 3, .. })
        ));
        assert!(matches!(s.knn_distance(1, &e(3, 0), 1), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn knn_ties_prefer_older_entry() {
        let mut s = IdStore::new(2, 2, 3, 0.5).unwrap();
        s.insert(0, &e(2, 1)).unwrap();
        s.insert(0, &e(2, 1).neg()).unwrap();
        let nb = s.knn(0, e(2, 0).as_slice(), 1).unwrap();
        assert_eq!(nb.index, 0);
        let nb = s.knn(0, e(2, 0).as_slice(), 2).unwrap();
        assert_eq!(nb.index, 1);
        // Wrap the ring so the oldest entry sits in a later slot.
        s.insert(0, &e(2, 1)).unwrap();
        s.insert(0, &e(2, 1).neg()).unwrap();
        let nb = s.knn(0, e(2, 0).as_slice(), 1).unwrap();
        assert_eq!(nb.index, 0);
        assert_eq!(s.embedding(0, 0), e(2, 1).neg().as_slice());
    }

    #[test]
    fn adjacency_examples() {
        let mut s = IdStore::new(3, 2, 2, 0.5).unwrap();
        s.set_prototype(0, e(2, 0)).unwrap();
        s.set_prototype(1, e(2, 1)).unwrap();
        s.set_prototype(2, e(2, 0).neg()).unwrap();
        assert_eq!(s.adjacent_clusters(0, 1).unwrap(), vec![1]);
        assert_eq!(s.adjacent_clusters(0, 2).unwrap(), vec![1, 2]);
        assert!(matches!(s.adjacent_clusters(0, 3), Err(Error::BadArg(_))));
        assert!(matches!(s.adjacent_clusters(0, 0), Err(Error::BadArg(_))));

        let mut two = IdStore::new(2, 2, 2, 0.5).unwrap();
        two.set_prototype(0, e(2, 0)).unwrap();
        two.set_prototype(1, e(2, 1)).unwrap();
        assert_eq!(two.adjacent_clusters(1, 1).unwrap(), vec![0]);
    }

    #[test]
    fn adjacency_tie_goes_to_lower_class() {
        let mut s = IdStore::new(3, 2, 2, 0.5).unwrap();
        s.set_prototype(0, e(2, 0)).unwrap();
        s.set_prototype(1, e(2, 1)).unwrap();
        s.set_prototype(2, e(2, 1).neg()).unwrap();
        assert_eq!(s.adjacent_clusters(0, 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn midpoint_examples() {
        let mut s = IdStore::new(3, 3, 2, 0.5).unwrap();
        s.set_prototype(0, e(3, 0)).unwrap();
        s.set_prototype(1, e(3, 1)).unwrap();
        s.set_prototype(2, e(3, 0).neg()).unwrap();
        let m = s.midpoint(ClusterPair::new(0, 1).unwrap()).unwrap();
        assert!((m.as_slice()[0] - 1.0 / SQRT_2).abs() < 1e-15);
        assert!((m.as_slice()[1] - 1.0 / SQRT_2).abs() < 1e-15);
        assert!(matches!(
            s.midpoint(ClusterPair::new(0, 2).unwrap()),
            Err(Error::AntipodalPrototypes { .. })
        ));
        let mut same = IdStore::new(2, 3, 2, 0.5).unwrap();
        same.set_prototype(0, e(3, 0)).unwrap();
        same.set_prototype(1, e(3, 0)).unwrap();
        assert_eq!(same.midpoint(ClusterPair::new(0, 1).unwrap()).unwrap(), e(3, 0));
        assert!(ClusterPair::new(1, 1).is_err());
    }
}
