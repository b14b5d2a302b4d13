//! Brute-force reference implementations shared by the integration tests.
//! They use nalgebra and naive formulas on purpose, so they share no code
//! path with the library beyond the public types.

#![allow(dead_code)]

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sphere_ood::{normalize, IdStore, UnitVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn random_unit(d: usize, rng: &mut impl Rng) -> UnitVector {
    normalize(&gaussian(d, rng)).unwrap()
}

pub fn vec(z: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(z)
}

/// Naive Euclidean distance, one term at a time.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    s.sqrt()
}

/// `(distance, insertion index)` of the k-th nearest row by full sort, ties
/// to the lower index.
pub fn kth_neighbor(rows: &[Vec<f64>], z: &[f64], k: usize) -> (f64, usize) {
    let mut all: Vec<(f64, usize)> = rows.iter().enumerate().map(|(i, r)| (distance(r, z), i)).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all[k - 1]
}

/// Store with `per_class` points around random class centers, prototypes set
/// from the class means. Points are `normalize(center + spread g)`.
pub fn clustered_store(c: usize, d: usize, per_class: usize, spread: f64, seed: u64) -> IdStore {
    let mut r = rng(seed);
    let mut store = IdStore::new(c, d, per_class, 0.9).unwrap();
    for class in 0..c {
        let center = random_unit(d, &mut r);
        let mut mean = vec![0.0; d];
        for _ in 0..per_class {
            let g = gaussian(d, &mut r);
            let p: Vec<f64> = center.as_slice().iter().zip(&g).map(|(m, g)| m + spread * g).collect();
            let z = normalize(&p).unwrap();
            for (a, x) in mean.iter_mut().zip(z.as_slice()) {
                *a += x / per_class as f64;
            }
            store.insert(class, &z).unwrap();
        }
        store.update_prototype(class, &mean).unwrap();
    }
    store
}

/// `-ln max_c P_c(z)` from unshifted kernel sums.
pub fn naive_surprise(store: &IdStore, z: &[f64], kappa: f64) -> f64 {
    let zv = vec(z);
    let dens: Vec<f64> = (0..store.num_classes())
        .map(|c| {
            let rows: Vec<&[f64]> = store.embeddings(c).collect();
            rows.iter().map(|x| (kappa * vec(x).dot(&zv)).exp()).sum::<f64>() / rows.len() as f64
        })
        .collect();
    let total: f64 = dens.iter().sum();
    let best = dens.iter().copied().fold(f64::MIN, f64::max);
    -(best / total).ln()
}

/// Largest ID score `t` such that at least 95% of ID scores are `>= t`,
/// found by trying every candidate.
pub fn naive_threshold(id: &[f64]) -> f64 {
    let n = id.len();
    id.iter()
        .copied()
        .filter(|&t| 20 * id.iter().filter(|&&s| s >= t).count() >= 19 * n)
        .fold(f64::MIN, f64::max)
}

pub fn naive_fpr95(id: &[f64], ood: &[f64]) -> f64 {
    let t = naive_threshold(id);
    ood.iter().filter(|&&s| s >= t).count() as f64 / ood.len() as f64
}

/// Pair counting with half credit for ties.
pub fn naive_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &a in id {
        for &b in ood {
            twice += if a > b {
                2
            } else if a == b {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * id.len() * ood.len()) as f64
}

/// Trapezoidal PR area with ID positive, one point per distinct threshold,
/// starting from (recall 0, precision 1).
pub fn naive_aupr(id: &[f64], ood: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = id.iter().chain(ood).copied().collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let (mut r0, mut p0, mut area) = (0.0, 1.0, 0.0);
    for t in thresholds {
        let tp = id.iter().filter(|&&s| s >= t).count() as f64;
        let fp = ood.iter().filter(|&&s| s >= t).count() as f64;
        let r = tp / id.len() as f64;
        let p = tp / (tp + fp);
        area += (r - r0) * (p + p0) / 2.0;
        r0 = r;
        p0 = p;
    }
    area
}

fn naive_log_softmax(z: &[f64], protos: &[UnitVector], tau: f64) -> Vec<f64> {
    let zv = vec(z);
    let e: Vec<f64> = protos.iter().map(|m| (vec(m.as_slice()).dot(&zv) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| (x / s).ln()).collect()
}

pub fn naive_ood_loss(outliers: &[Vec<f64>], protos: &[UnitVector], tau: f64) -> f64 {
    let c = protos.len() as f64;
    outliers
        .iter()
        .map(|z| naive_log_softmax(z, protos, tau).iter().sum::<f64>() / c)
        .sum::<f64>()
        / outliers.len() as f64
}

pub fn naive_cider(id: &[(UnitVector, usize)], protos: &[UnitVector], tau: f64) -> (f64, f64) {
    let c = protos.len();
    let mut disp = 0.0;
    for i in 0..c {
        let s: f64 = (0..c)
            .filter(|&j| j != i)
            .map(|j| (protos[i].dot(&protos[j]) / tau).exp())
            .sum();
        disp += (s / (c - 1) as f64).ln();
    }
    disp /= c as f64;
    let comp = -id
        .iter()
        .map(|(z, l)| naive_log_softmax(z.as_slice(), protos, tau)[*l])
        .sum::<f64>()
        / id.len() as f64;
    (disp, comp)
}

/// Relative error `|a - b| / max(|b|, floor)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = (vec(a) - vec(b)).norm();
    diff / vec(b).norm().max(1e-300)
}
