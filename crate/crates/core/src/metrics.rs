//! Detection scoring and evaluation.
//!
//! The detector scores a test embedding by the negative distance to its k-th
//! nearest reference (ID) embedding, so higher means more ID-like. Thresholds
//! are calibrated so 95% of ID scores are kept. AUPR treats ID as the positive
//! class.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{dist_sq, dot, UnitVector};

/// Neighbor rank of the inference-time KNN detector.
pub const DEFAULT_K_DETECT: usize = 50;
/// Minimum ID sample count for threshold calibration.
pub const MIN_CALIBRATION_SAMPLES: usize = 20;

/// Reference embeddings packed for repeated k-th NN queries.
#[derive(Debug, Clone)]
pub struct KnnScorer {
    dim: usize,
    rows: Vec<f64>,
    k: usize,
}

impl KnnScorer {
    pub fn new(reference: &[UnitVector], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::BadArg("k must be at least 1".into()));
        }
        if reference.len() < k {
            return Err(Error::TooFewSamples {
                required: k,
                got: reference.len(),
            });
        }
        let dim = reference[0].dim();
        let mut rows = Vec::with_capacity(reference.len() * dim);
        for z in reference {
            if z.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: z.dim() });
            }
            rows.extend_from_slice(z.as_slice());
        }
        Ok(KnnScorer { dim, rows, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distance to the k-th nearest reference embedding.
    pub fn distance(&self, z: &UnitVector) -> f64 {
        let mut d: Vec<f64> = self
            .rows
            .chunks_exact(self.dim)
            .map(|row| dist_sq(z.as_slice(), row))
            .collect();
        let (_, kth, _) = d.select_nth_unstable_by(self.k - 1, f64::total_cmp);
        kth.sqrt()
    }

    /// `-distance`, the detector score.
    pub fn score(&self, z: &UnitVector) -> f64 {
        -self.distance(z)
    }

    pub fn scores(&self, zs: &[UnitVector]) -> Vec<f64> {
        zs.iter().map(|z| self.score(z)).collect()
    }
}

/// `-|z - Z_(k)|` for a one-off query.
pub fn knn_score(reference: &[UnitVector], z: &UnitVector, k: usize) -> Result<f64> {
    if reference.len() < k || k == 0 {
        return Err(Error::InsufficientData {
            class_id: 0,
            available: reference.len(),
            required: k.max(1),
        });
    }
    Ok(KnnScorer::new(reference, k)?.score(z))
}

/// Largest `beta` with at least 95% of `id_scores` at or above it.
pub fn calibrate_threshold(id_scores: &[f64]) -> Result<f64> {
    let n = id_scores.len();
    if n < MIN_CALIBRATION_SAMPLES {
        return Err(Error::TooFewSamples {
            required: MIN_CALIBRATION_SAMPLES,
            got: n,
        });
    }
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // ceil(0.95 n) in exact integer arithmetic.
    let keep = (19 * n).div_ceil(20);
    Ok(sorted[keep - 1])
}

fn check_non_empty(id_scores: &[f64], ood_scores: &[f64]) -> Result<()> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::TooFewSamples {
            required: 1,
            got: id_scores.len().min(ood_scores.len()),
        });
    }
    Ok(())
}

/// Fraction of OOD scores at or above the 95%-TPR threshold.
pub fn fpr_at_tpr95(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_non_empty(id_scores, ood_scores)?;
    let beta = calibrate_threshold(id_scores)?;
    let false_pos = ood_scores.iter().filter(|&&s| s >= beta).count();
    Ok(false_pos as f64 / ood_scores.len() as f64)
}

/// `P(id > ood) + 0.5 P(id == ood)` via a merged sort.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_non_empty(id_scores, ood_scores)?;
    let mut ood = ood_scores.to_vec();
    ood.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &s in id_scores {
        let below = ood.partition_point(|&o| o < s);
        let not_above = ood.partition_point(|&o| o <= s);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (id_scores.len() as f64 * ood.len() as f64))
}

/// Area under the precision-recall curve with ID as the positive class,
/// trapezoidal over every distinct threshold, anchored at (recall 0,
/// precision 1).
pub fn aupr(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_non_empty(id_scores, ood_scores)?;
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let positives = id_scores.len() as f64;
    let (mut tp, mut fp) = (0.0, 0.0);
    let (mut prev_recall, mut prev_precision) = (0.0, 1.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let threshold = all[i].0;
        while i < all.len() && all[i].0.total_cmp(&threshold) == Ordering::Equal {
            if all[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let recall = tp / positives;
        let precision = tp / (tp + fp);
        area += (recall - prev_recall) * (precision + prev_precision) / 2.0;
        prev_recall = recall;
        prev_precision = precision;
    }
    Ok(area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
    pub fpr95: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub threshold: f64,
}

impl ScoreReport {
    pub fn new(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> Result<Self> {
        let threshold = calibrate_threshold(&id_scores)?;
        Ok(ScoreReport {
            fpr95: fpr_at_tpr95(&id_scores, &ood_scores)?,
            auroc: auroc(&id_scores, &ood_scores)?,
            aupr: aupr(&id_scores, &ood_scores)?,
            threshold,
            id_scores,
            ood_scores,
        })
    }

    /// `(metric, value)` rows for CSV output.
    pub fn rows(&self) -> [(&'static str, f64); 4] {
        [
            ("fpr95", self.fpr95),
            ("auroc", self.auroc),
            ("aupr", self.aupr),
            ("threshold", self.threshold),
        ]
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["metric", "value"])?;
        for (name, value) in self.rows() {
            w.write_record([name, &value.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Angular embedding-quality summary, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypersphereQuality {
    /// `arccos` of the mean best-prototype cosine of OOD points. Larger is better.
    pub separation: f64,
    /// `arccos` of the mean pairwise prototype cosine.
    pub dispersion: f64,
    /// `arccos` of the mean ID-to-own-prototype cosine.
    pub compactness: f64,
}

fn degrees(cos: f64) -> f64 {
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn hypersphere_quality(
    ood_test: &[UnitVector],
    id_test: &[(UnitVector, usize)],
    prototypes: &[UnitVector],
) -> Result<HypersphereQuality> {
    let c = prototypes.len();
    if c < 2 {
        return Err(Error::BadArg("need at least two prototypes".into()));
    }
    if ood_test.is_empty() || id_test.is_empty() {
        return Err(Error::BadArg("need non-empty ID and OOD test sets".into()));
    }
    let separation = ood_test
        .iter()
        .map(|z| {
            prototypes
                .iter()
                .map(|mu| z.dot(mu))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / ood_test.len() as f64;
    let mut dispersion = 0.0;
    for (i, a) in prototypes.iter().enumerate() {
        let row: f64 = prototypes
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, b)| dot(a.as_slice(), b.as_slice()))
            .sum();
        dispersion += row / (c - 1) as f64;
    }
    dispersion /= c as f64;
    let mut compactness = 0.0;
    for (z, label) in id_test {
        let mu = prototypes.get(*label).ok_or(Error::BadClass {
            class_id: *label,
            num_classes: c,
        })?;
        compactness += z.dot(mu);
    }
    compactness /= id_test.len() as f64;
    Ok(HypersphereQuality {
        separation: degrees(separation),
        dispersion: degrees(dispersion),
        compactness: degrees(compactness),
    })
}
