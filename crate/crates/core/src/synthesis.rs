//! Batch synthesis: one chain per (class, adjacent class) pair.
//!
//! For class `c` and each of its `n_adj` most cosine-similar classes `j`, a
//! chain starts at the prototype midpoint `b_{c,j}`, computes its hard-margin
//! threshold there, and runs `rounds` transitions. Accepted positions are the
//! outliers; rejected rounds contribute nothing. Chains are independent and
//! run in parallel against the frozen store, and the output is ordered by
//! (class, adjacency rank, round) whatever the execution order.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{hard_margin_threshold, EnergyContext, GradientMode, DEFAULT_DELTA, DEFAULT_K, DEFAULT_KAPPA};
use crate::error::{Error, Result};
use crate::metrics::KnnScorer;
use crate::samplers::{transition, ChainState, HmcConfig, TransitionRecord};
use crate::sphere::{normalize, UnitVector};
use crate::store::{ClusterPair, IdStore};

/// Adjacent clusters per class.
pub const DEFAULT_N_ADJ: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub hmc: HmcConfig,
    /// Neighbor rank for the OOD-ness potential.
    pub k: usize,
    pub delta: f64,
    /// vMF bandwidth of the margin's density estimate.
    pub kappa: f64,
    pub n_adj: usize,
    pub gradient_mode: GradientMode,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            hmc: HmcConfig::default(),
            k: DEFAULT_K,
            delta: DEFAULT_DELTA,
            kappa: DEFAULT_KAPPA,
            n_adj: DEFAULT_N_ADJ,
            gradient_mode: GradientMode::default(),
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        self.hmc.validate()?;
        if self.k == 0 {
            return Err(Error::BadConfig("k must be at least 1".into()));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::BadConfig(format!("kappa must be positive, got {}", self.kappa)));
        }
        if self.delta.is_nan() || self.delta < 0.0 {
            return Err(Error::BadConfig(format!("delta must be >= 0, got {}", self.delta)));
        }
        if self.n_adj == 0 {
            return Err(Error::BadConfig("n_adj must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierSample {
    pub position: UnitVector,
    pub chain: usize,
    pub pair: ClusterPair,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub pair: ClusterPair,
    /// Rank of `pair.v` among the neighbors of `pair.u`, 0 = most similar.
    pub rank: usize,
    /// Hard-margin threshold; absent for baseline batches.
    pub t_minus: Option<f64>,
    pub accepted: usize,
    pub records: Vec<TransitionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierBatch {
    pub samples: Vec<OutlierSample>,
    pub chains: Vec<ChainSummary>,
    /// Pairs whose prototypes are antipodal, so no chain was run.
    pub skipped: Vec<ClusterPair>,
    pub config: SynthesisConfig,
}

impl OutlierBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> Vec<UnitVector> {
        self.samples.iter().map(|s| s.position.clone()).collect()
    }

    pub fn records(&self) -> impl Iterator<Item = (&ChainSummary, &TransitionRecord)> {
        self.chains.iter().flat_map(|c| c.records.iter().map(move |r| (c, r)))
    }

    fn rate(&self, pick: impl Fn(&TransitionRecord) -> bool) -> f64 {
        let (hits, total) = self
            .records()
            .fold((0usize, 0usize), |(h, t), (_, r)| (h + pick(r) as usize, t + 1));
        if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        }
    }

    /// Fraction of transitions passing the MH test alone.
    pub fn mh_acceptance_rate(&self) -> f64 {
        self.rate(|r| r.mh_accept)
    }

    /// Fraction of transitions accepted (MH and margin).
    pub fn acceptance_rate(&self) -> f64 {
        self.rate(|r| r.accepted)
    }

    /// One row per sample: chain, class pair, round, then coordinates.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let dim = self.samples.first().map_or(0, |s| s.position.dim());
        let mut header = vec!["chain".to_string(), "u".into(), "v".into(), "round".into()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![
                s.chain.to_string(),
                s.pair.u.to_string(),
                s.pair.v.to_string(),
                s.round.to_string(),
            ];
            row.extend(s.position.as_slice().iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One JSON object per transition.
    pub fn write_trace<W: Write>(&self, mut writer: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            chain: usize,
            pair: ClusterPair,
            round: usize,
            h_init: f64,
            h_prop: f64,
            alpha: f64,
            mh_accept: bool,
            margin_pass: bool,
            accepted: bool,
            retries: usize,
            proposed: &'a UnitVector,
        }
        for (chain, r) in self.records() {
            let line = Line {
                chain: chain.chain,
                pair: chain.pair,
                round: r.round,
                h_init: r.h_init,
                h_prop: r.h_prop,
                alpha: r.alpha,
                mh_accept: r.mh_accept,
                margin_pass: r.margin_pass,
                accepted: r.accepted,
                retries: r.retries,
                proposed: &r.proposed,
            };
            serde_json::to_writer(&mut writer, &line)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

struct ChainPlan {
    chain: usize,
    rank: usize,
    pair: ClusterPair,
}

fn plan_chains(store: &IdStore, n_adj: usize) -> Result<Vec<ChainPlan>> {
    let mut plans = Vec::with_capacity(store.num_classes() * n_adj);
    for c in 0..store.num_classes() {
        for (rank, j) in store.adjacent_clusters(c, n_adj)?.into_iter().enumerate() {
            plans.push(ChainPlan {
                chain: c * n_adj + rank,
                rank,
                pair: ClusterPair { u: c, v: j },
            });
        }
    }
    Ok(plans)
}

fn check_ready(store: &IdStore, k: usize) -> Result<()> {
    for class_id in 0..store.num_classes() {
        if store.len(class_id) < k {
            return Err(Error::InsufficientData {
                class_id,
                available: store.len(class_id),
                required: k,
            });
        }
        store.prototype(class_id)?;
    }
    Ok(())
}

fn run_chain(store: &IdStore, cfg: &SynthesisConfig, plan: &ChainPlan) -> Result<Option<ChainSummary>> {
    let start = match store.midpoint(plan.pair) {
        Ok(b) => b,
        Err(Error::AntipodalPrototypes { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let t_minus = hard_margin_threshold(store, plan.pair, cfg.kappa, cfg.delta)?;
    let ctx = EnergyContext::new(store, plan.pair, cfg.k, cfg.kappa)?.with_mode(cfg.gradient_mode);
    let mut state = ChainState::new(start, Some(plan.pair), t_minus, cfg.hmc.seed, plan.chain as u64);
    let mut records = Vec::with_capacity(cfg.hmc.rounds);
    for _ in 0..cfg.hmc.rounds {
        records.push(transition(&ctx, &mut state, &cfg.hmc)?);
    }
    Ok(Some(ChainSummary {
        chain: plan.chain,
        pair: plan.pair,
        rank: plan.rank,
        t_minus: Some(t_minus),
        accepted: state.history.len(),
        records,
    }))
}

/// Runs every chain of one synthesis call and gathers the accepted positions.
///
/// Requires each class buffer to hold at least `cfg.k` embeddings and every
/// prototype to be defined. An all-rejection run yields an empty batch.
pub fn synthesize_batch(store: &IdStore, cfg: &SynthesisConfig) -> Result<OutlierBatch> {
    cfg.validate()?;
    check_ready(store, cfg.k)?;
    let plans = plan_chains(store, cfg.n_adj.min(store.num_classes() - 1))?;
    let outcomes: Vec<Option<ChainSummary>> = plans
        .par_iter()
        .map(|plan| run_chain(store, cfg, plan))
        .collect::<Result<_>>()?;

    let mut samples = Vec::new();
    let mut chains = Vec::new();
    let mut skipped = Vec::new();
    for (plan, outcome) in plans.iter().zip(outcomes) {
        match outcome {
            None => skipped.push(plan.pair),
            Some(summary) => {
                for r in summary.records.iter().filter(|r| r.accepted) {
                    samples.push(OutlierSample {
                        position: r.proposed.clone(),
                        chain: summary.chain,
                        pair: summary.pair,
                        round: r.round,
                    });
                }
                chains.push(summary);
            }
        }
    }
    Ok(OutlierBatch {
        samples,
        chains,
        skipped,
        config: cfg.clone(),
    })
}

/// Isotropic perturbations of the pair midpoints, `normalize(b + sigma g)`,
/// with the same chain layout as [`synthesize_batch`]. Sample `i` of a pair is
/// labelled round `i + 1`.
pub fn gaussian_baseline_batch(
    store: &IdStore,
    sigma: f64,
    count_per_pair: usize,
    cfg: &SynthesisConfig,
) -> Result<OutlierBatch> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::BadArg(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let plans = plan_chains(store, cfg.n_adj.min(store.num_classes() - 1))?;
    let mut samples = Vec::new();
    let mut chains = Vec::new();
    let mut skipped = Vec::new();
    for plan in &plans {
        let mid = match store.midpoint(plan.pair) {
            Ok(b) => b,
            Err(Error::AntipodalPrototypes { .. }) => {
                skipped.push(plan.pair);
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.hmc.seed);
        rng.set_stream(plan.chain as u64);
        for i in 0..count_per_pair {
            let position = if sigma == 0.0 {
                mid.clone()
            } else {
                let moved: Vec<f64> = mid
                    .as_slice()
                    .iter()
                    .map(|b| b + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                normalize(&moved)?
            };
            samples.push(OutlierSample {
                position,
                chain: plan.chain,
                pair: plan.pair,
                round: i + 1,
            });
        }
        chains.push(ChainSummary {
            chain: plan.chain,
            pair: plan.pair,
            rank: plan.rank,
            t_minus: None,
            accepted: count_per_pair,
            records: Vec::new(),
        });
    }
    Ok(OutlierBatch {
        samples,
        chains,
        skipped,
        config: cfg.clone(),
    })
}

/// KNN distance statistics of the samples produced in one round. Detector
/// scores are the negated distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub distances: Vec<f64>,
}

fn summarize(round: usize, distances: Vec<f64>) -> RoundStats {
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    RoundStats {
        round,
        count: distances.len(),
        mean,
        std: var.sqrt(),
        min: distances.iter().copied().fold(f64::INFINITY, f64::min),
        max: distances.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        distances,
    }
}

/// Groups batch samples by round and summarizes their KNN distances to the
/// scorer's reference set. Rounds with no accepted sample are omitted.
pub fn round_wise_scores(batch: &OutlierBatch, scorer: &KnnScorer) -> Vec<RoundStats> {
    let max_round = batch.samples.iter().map(|s| s.round).max().unwrap_or(0);
    let mut by_round: Vec<Vec<f64>> = vec![Vec::new(); max_round + 1];
    for s in &batch.samples {
        by_round[s.round].push(scorer.distance(&s.position));
    }
    by_round
        .into_iter()
        .enumerate()
        .filter(|(_, d)| !d.is_empty())
        .map(|(round, d)| summarize(round, d))
        .collect()
}

/// Population standard deviation of the detector scores of `samples`.
pub fn score_std(samples: &[UnitVector], scorer: &KnnScorer) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let scores = scorer.scores(samples);
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(d: usize, i: usize) -> UnitVector {
        UnitVector::basis(d, i)
    }

    fn quadrant_store() -> IdStore {
        let mut s = IdStore::new(2, 3, 8, 0.9).unwrap();
        for (c, axis) in [(0, 0), (1, 1)] {
            for t in [-0.2, -0.1, 0.0, 0.1, 0.2] {
                let mut v = vec![0.0; 3];
                v[axis] = 1.0;
                v[2] = t;
                s.insert(c, &normalize(&v).unwrap()).unwrap();
            }
            s.set_prototype(c, e(3, axis)).unwrap();
        }
        s
    }

    #[test]
    fn counting_bound_two_classes() {
        let store = quadrant_store();
        let cfg = SynthesisConfig {
            k: 2,
            n_adj: 1,
            ..SynthesisConfig::default()
        };
        let batch = synthesize_batch(&store, &cfg).unwrap();
        assert_eq!(batch.chains.len(), 2);
        assert!(batch.len() <= 2 * 5);
        for s in &batch.samples {
            assert!(s.round >= 1 && s.round <= 5);
        }
    }

    #[test]
    fn insufficient_data_is_reported() {
        let store = quadrant_store();
        let cfg = SynthesisConfig {
            k: 6,
            n_adj: 1,
            ..SynthesisConfig::default()
        };
        assert!(matches!(
            synthesize_batch(&store, &cfg),
            Err(Error::InsufficientData { required: 6, .. })
        ));
    }

    #[test]
    fn antipodal_pairs_are_skipped() {
        let mut store = quadrant_store();
        store.set_prototype(1, e(3, 0).neg()).unwrap();
        let cfg = SynthesisConfig {
            k: 2,
            n_adj: 1,
            ..SynthesisConfig::default()
        };
        let batch = synthesize_batch(&store, &cfg).unwrap();
        assert!(batch.chains.is_empty());
        assert_eq!(batch.skipped.len(), 2);
        assert!(batch.is_empty());
    }

    #[test]
    fn baseline_zero_sigma_sits_on_midpoints() {
        let store = quadrant_store();
        let cfg = SynthesisConfig {
            n_adj: 1,
            ..SynthesisConfig::default()
        };
        let batch = gaussian_baseline_batch(&store, 0.0, 3, &cfg).unwrap();
        assert_eq!(batch.len(), 2 * 3);
        let mid = store.midpoint(ClusterPair::new(0, 1).unwrap()).unwrap();
        for s in &batch.samples {
            assert_eq!(s.position, mid);
        }
    }

    #[test]
    fn round_stats_single_round_and_constant() {
        let store = quadrant_store();
        let cfg = SynthesisConfig {
            n_adj: 1,
            ..SynthesisConfig::default()
        };
        let mut batch = gaussian_baseline_batch(&store, 0.0, 4, &cfg).unwrap();
        for s in &mut batch.samples {
            s.round = 1;
        }
        let scorer = KnnScorer::new(&store.all_embeddings(), 3).unwrap();
        let stats = round_wise_scores(&batch, &scorer);
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].count, 8);
        assert_eq!(stats[0].std, 0.0);
    }

    #[test]
    fn csv_and_trace_export() {
        let store = quadrant_store();
        let cfg = SynthesisConfig {
            k: 2,
            n_adj: 1,
            ..SynthesisConfig::default()
        };
        let batch = synthesize_batch(&store, &cfg).unwrap();
        let mut csv_out = Vec::new();
        batch.write_csv(&mut csv_out).unwrap();
        let text = String::from_utf8(csv_out).unwrap();
        assert_eq!(text.lines().count(), batch.len() + 1);
        let mut trace = Vec::new();
        batch.write_trace(&mut trace).unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(trace)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2 * 5);
        assert!(lines[0].get("alpha").is_some());
    }
}
