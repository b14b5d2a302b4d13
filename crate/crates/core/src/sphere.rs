//! Geometry on the unit hypersphere S^{d-1}.
//!
//! Positions are [`UnitVector`]s, momenta are [`TangentVector`]s living in the
//! tangent space `{v : <v, z> = 0}` of the position they are paired with.
//! Geodesics are great circles, so one leapfrog position update is a rotation
//! in the plane spanned by `z` and `q`:
//!
//! ```text
//! z' =  z cos(|q| e) + (q / |q|) sin(|q| e)
//! q' = -z |q| sin(|q| e) + q cos(|q| e)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when accepting externally supplied vectors as unit norm.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorize the reduction.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Squared Euclidean distance, summed left to right so the result does not
/// depend on how the loop is unrolled.
#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A point on the unit hypersphere of dimension `d >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Accepts `coords` if it already has unit norm within [`UNIT_TOLERANCE`].
    /// The stored value is re-normalized so the tighter invariant holds.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::BadArg(format!(
                "unit vectors need dimension >= 2, got {}",
                coords.len()
            )));
        }
        let n = norm(&coords);
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NotUnit { norm: n });
        }
        Ok(UnitVector(coords.into_iter().map(|x| x / n).collect()))
    }

    /// Wraps coordinates copied out of an existing unit vector, bit for bit.
    pub(crate) fn from_stored(coords: Vec<f64>) -> Self {
        debug_assert!((norm(&coords) - 1.0).abs() <= UNIT_TOLERANCE);
        UnitVector(coords)
    }

    /// The `i`-th standard basis vector of `R^dim`.
    pub fn basis(dim: usize, i: usize) -> Self {
        assert!(dim >= 2 && i < dim);
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        UnitVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn distance(&self, other: &UnitVector) -> f64 {
        dist_sq(&self.0, &other.0).sqrt()
    }

    /// Angle to `other` in radians, in `[0, pi]`.
    pub fn angle(&self, other: &UnitVector) -> f64 {
        self.dot(other).clamp(-1.0, 1.0).acos()
    }

    pub fn neg(&self) -> UnitVector {
        UnitVector(self.0.iter().map(|x| -x).collect())
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        UnitVector::new(v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(u: UnitVector) -> Self {
        u.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Momentum in the tangent space of the position it travels with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn zeros(dim: usize) -> Self {
        TangentVector(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn neg(&self) -> TangentVector {
        TangentVector(self.0.iter().map(|x| -x).collect())
    }

    /// `self - scale * (I - z z^T) g`, i.e. a momentum kick by the tangential
    /// part of `g`.
    pub fn kicked(&self, z: &UnitVector, g: &[f64], scale: f64) -> TangentVector {
        let radial = dot(z.as_slice(), g);
        let coords = self
            .0
            .iter()
            .zip(g)
            .zip(z.as_slice())
            .map(|((q, g), z)| q - scale * (g - radial * z))
            .collect();
        TangentVector(coords)
    }
}

/// `v / |v|`. Fails with [`Error::ZeroVector`] when the norm is at the level
/// of rounding noise.
pub fn normalize(v: &[f64]) -> Result<UnitVector> {
    if v.len() < 2 {
        return Err(Error::BadArg(format!(
            "unit vectors need dimension >= 2, got {}",
            v.len()
        )));
    }
    let n = norm(v);
    if !n.is_finite() || n <= f64::EPSILON * (v.len() as f64).sqrt() {
        return Err(Error::ZeroVector);
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// `(I - z z^T) q`.
pub fn project_tangent(q: &[f64], z: &UnitVector) -> TangentVector {
    let radial = dot(q, z.as_slice());
    TangentVector(
        q.iter()
            .zip(z.as_slice())
            .map(|(q, z)| q - radial * z)
            .collect(),
    )
}

/// Moves `(z, q)` along the great circle through `z` with initial velocity
/// `q` for time `eps`. Zero momentum is an identity step.
pub fn geodesic_step(z: &UnitVector, q: &TangentVector, eps: f64) -> (UnitVector, TangentVector) {
    let speed = q.norm();
    if speed == 0.0 {
        return (z.clone(), q.clone());
    }
    let (sin, cos) = (speed * eps).sin_cos();
    let mut pos = Vec::with_capacity(z.dim());
    let mut mom = Vec::with_capacity(z.dim());
    for (&zi, &qi) in z.as_slice().iter().zip(q.as_slice()) {
        pos.push(zi * cos + qi / speed * sin);
        mom.push(-zi * speed * sin + qi * cos);
    }
    // Re-normalize to stop drift over many steps.
    let n = norm(&pos);
    for x in &mut pos {
        *x /= n;
    }
    (UnitVector(pos), TangentVector(mom))
}
