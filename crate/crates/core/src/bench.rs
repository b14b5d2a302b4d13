//! Desk-scale experiment harness over synthetic vMF class clusters.
//!
//! A run draws class prototypes uniformly on the sphere, fills the store with
//! vMF samples around them, then repeats a training-shaped loop: insert fresh
//! draws, update prototypes, synthesize a batch, evaluate the losses and score
//! a held-out test set. Every output file except `timings.csv` is a pure
//! function of the config, so reruns are byte-identical.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{KnnScorer, ScoreReport, DEFAULT_K_DETECT};
use crate::objectives::{cider_losses, combined_objective, ood_discernment_loss, Temperature, DEFAULT_LAMBDA_D};
use crate::samplers::Variant;
use crate::sphere::{dot, normalize, UnitVector};
use crate::store::{ClusterPair, IdStore, DEFAULT_CAPACITY, DEFAULT_EMA_FACTOR};
use crate::synthesis::{gaussian_baseline_batch, round_wise_scores, score_std, synthesize_batch, OutlierBatch, RoundStats, SynthesisConfig};

/// Weight of the compactness term inside the ID contrastive loss.
pub const COMPACTNESS_WEIGHT: f64 = 0.5;

/// Held-out OOD test set: uniform points on the sphere plus vMF clusters
/// centered at the midpoint of each class and its nearest neighbor class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeldOutSpec {
    pub id_per_class: usize,
    pub uniform: usize,
    pub midpoint_per_class: usize,
    pub midpoint_kappa: f64,
}

impl Default for HeldOutSpec {
    fn default() -> Self {
        HeldOutSpec {
            id_per_class: 100,
            uniform: 500,
            midpoint_per_class: 50,
            midpoint_kappa: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub dim: usize,
    pub num_classes: usize,
    /// Points drawn per class when the store is first filled.
    pub points_per_class: usize,
    /// vMF concentration of every class cluster.
    pub class_kappa: f64,
    pub capacity: usize,
    pub ema_factor: f64,
    pub seed: u64,
    pub prototype_seed: u64,
    pub held_out: HeldOutSpec,
    pub synthesis: SynthesisConfig,
    pub k_detect: usize,
    pub lambda_d: f64,
    pub iterations: usize,
    /// Fresh ID draws per class inserted at the start of each iteration.
    pub fresh_per_class: usize,
    pub trace: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            dim: 16,
            num_classes: 10,
            points_per_class: DEFAULT_CAPACITY,
            class_kappa: 20.0,
            capacity: DEFAULT_CAPACITY,
            ema_factor: DEFAULT_EMA_FACTOR,
            seed: 0,
            prototype_seed: 0,
            held_out: HeldOutSpec::default(),
            synthesis: SynthesisConfig::default(),
            k_detect: DEFAULT_K_DETECT,
            lambda_d: DEFAULT_LAMBDA_D,
            iterations: 10,
            fresh_per_class: 50,
            trace: false,
            output_dir: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::BadConfig(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.dim < 2 {
            return Err(Error::BadConfig(format!("dimension must be at least 2, got {}", self.dim)));
        }
        if self.capacity == 0 || self.points_per_class == 0 {
            return Err(Error::BadConfig("capacity and points_per_class must be positive".into()));
        }
        if !(self.ema_factor >= 0.0 && self.ema_factor < 1.0) {
            return Err(Error::BadConfig(format!("ema_factor must be in [0, 1), got {}", self.ema_factor)));
        }
        if !(self.class_kappa >= 0.0 && self.class_kappa.is_finite()) {
            return Err(Error::BadConfig(format!("class_kappa must be finite and >= 0, got {}", self.class_kappa)));
        }
        if !(self.held_out.midpoint_kappa >= 0.0 && self.held_out.midpoint_kappa.is_finite()) {
            return Err(Error::BadConfig("held_out.midpoint_kappa must be finite and >= 0".into()));
        }
        if self.held_out.id_per_class == 0 || self.held_out.uniform + self.held_out.midpoint_per_class == 0 {
            return Err(Error::BadConfig("held-out ID and OOD sets must be non-empty".into()));
        }
        if self.k_detect == 0 {
            return Err(Error::BadConfig("k_detect must be at least 1".into()));
        }
        if !(self.lambda_d >= 0.0 && self.lambda_d.is_finite()) {
            return Err(Error::BadConfig(format!("lambda_d must be finite and >= 0, got {}", self.lambda_d)));
        }
        self.synthesis.validate()
    }

    /// Synthesis settings with `k` clipped to the buffer fill and `n_adj`
    /// clipped to `C - 1`.
    pub fn effective_synthesis(&self) -> SynthesisConfig {
        let fill = self.capacity.min(self.points_per_class);
        SynthesisConfig {
            k: self.synthesis.k.min(fill),
            n_adj: self.synthesis.n_adj.min(self.num_classes - 1),
            ..self.synthesis.clone()
        }
    }

    pub fn temperature(&self) -> Result<Temperature> {
        Temperature::from_kappa(self.synthesis.kappa)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::BadConfig(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Separate RNG streams for each purpose, all derived from one seed.
fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 40) | index);
    rng
}

const STREAM_PROTOTYPES: u64 = 1;
const STREAM_INITIAL: u64 = 2;
const STREAM_FRESH: u64 = 3;
const STREAM_HELD_OUT_ID: u64 = 4;
const STREAM_HELD_OUT_OOD: u64 = 5;
const STREAM_SUBSAMPLE: u64 = 6;

pub fn uniform_on_sphere(dim: usize, rng: &mut impl Rng) -> UnitVector {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = normalize(&g) {
            return u;
        }
    }
}

/// Draws from vMF(mu, kappa) using Wood's rejection sampler for the cosine
/// `w = z^T mu` and a uniform direction in the tangent space of `mu`.
pub fn sample_vmf(mu: &UnitVector, kappa: f64, rng: &mut impl Rng) -> UnitVector {
    let d = mu.dim();
    let m = (d - 1) as f64;
    let w = if kappa == 0.0 {
        // The uniform case; Beta((d-1)/2, (d-1)/2) gives the cosine directly.
        let beta = Beta::new(m / 2.0, m / 2.0).expect("valid beta parameters");
        1.0 - 2.0 * beta.sample(rng)
    } else {
        // Rationalized form of (-2 kappa + sqrt(4 kappa^2 + m^2)) / m, which
        // cancels catastrophically for large kappa.
        let b = m / (2.0 * kappa + (4.0 * kappa * kappa + m * m).sqrt());
        let x0 = (1.0 - b) / (1.0 + b);
        let c = kappa * x0 + m * (1.0 - x0 * x0).ln();
        let beta = Beta::new(m / 2.0, m / 2.0).expect("valid beta parameters");
        loop {
            let z = beta.sample(rng);
            let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
            let u: f64 = rng.random();
            if kappa * w + m * (1.0 - x0 * w).ln() - c >= u.ln() {
                break w;
            }
        }
    };
    let tangent = loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let along = dot(&g, mu.as_slice());
        let t: Vec<f64> = g.iter().zip(mu.as_slice()).map(|(gi, mi)| gi - along * mi).collect();
        if let Ok(t) = normalize(&t) {
            break t;
        }
    };
    let s = (1.0 - w * w).max(0.0).sqrt();
    let z: Vec<f64> = mu
        .as_slice()
        .iter()
        .zip(tangent.as_slice())
        .map(|(m, t)| w * m + s * t)
        .collect();
    normalize(&z).expect("unit combination of orthonormal vectors")
}

/// Ground-truth class centers drawn uniformly on the sphere.
pub fn true_prototypes(cfg: &BenchConfig) -> Vec<UnitVector> {
    let mut rng = stream_rng(cfg.prototype_seed, STREAM_PROTOTYPES, 0);
    (0..cfg.num_classes).map(|_| uniform_on_sphere(cfg.dim, &mut rng)).collect()
}

fn draw_class(center: &UnitVector, kappa: f64, n: usize, rng: &mut impl Rng) -> Vec<UnitVector> {
    (0..n).map(|_| sample_vmf(center, kappa, rng)).collect()
}

/// Builds a store from synthetic vMF clusters. Each prototype is set to the
/// normalized mean of its class's draws.
pub fn generate_synthetic_id(cfg: &BenchConfig) -> Result<IdStore> {
    cfg.validate()?;
    let centers = true_prototypes(cfg);
    let mut store = IdStore::new(cfg.num_classes, cfg.dim, cfg.capacity, cfg.ema_factor)
        .map_err(|e| Error::BadConfig(e.to_string()))?;
    let classes: Vec<Vec<UnitVector>> = centers
        .par_iter()
        .enumerate()
        .map(|(c, mu)| {
            let mut rng = stream_rng(cfg.seed, STREAM_INITIAL, c as u64);
            draw_class(mu, cfg.class_kappa, cfg.points_per_class, &mut rng)
        })
        .collect();
    for (c, points) in classes.iter().enumerate() {
        for z in points {
            store.insert(c, z)?;
        }
        store.update_prototype(c, &mean_of(points, cfg.dim))?;
    }
    Ok(store)
}

fn mean_of(points: &[UnitVector], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for z in points {
        for (a, x) in m.iter_mut().zip(z.as_slice()) {
            *a += x;
        }
    }
    let n = points.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

/// Labelled held-out ID points and unlabelled held-out OOD points.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub id: Vec<(UnitVector, usize)>,
    pub ood: Vec<UnitVector>,
}

pub fn held_out_test_set(cfg: &BenchConfig) -> Result<TestSet> {
    let centers = true_prototypes(cfg);
    let mut id = Vec::new();
    for (c, mu) in centers.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, STREAM_HELD_OUT_ID, c as u64);
        id.extend(draw_class(mu, cfg.class_kappa, cfg.held_out.id_per_class, &mut rng).into_iter().map(|z| (z, c)));
    }
    let mut rng = stream_rng(cfg.seed, STREAM_HELD_OUT_OOD, 0);
    let mut ood: Vec<UnitVector> = (0..cfg.held_out.uniform).map(|_| uniform_on_sphere(cfg.dim, &mut rng)).collect();
    for (c, mu) in centers.iter().enumerate() {
        let nearest = (0..centers.len())
            .filter(|&j| j != c)
            .max_by(|&a, &b| mu.dot(&centers[a]).total_cmp(&mu.dot(&centers[b])).then(b.cmp(&a)))
            .expect("at least two classes");
        let sum: Vec<f64> = mu.as_slice().iter().zip(centers[nearest].as_slice()).map(|(a, b)| a + b).collect();
        let Ok(mid) = normalize(&sum) else { continue };
        let mut rng = stream_rng(cfg.seed, STREAM_HELD_OUT_OOD, 1 + c as u64);
        ood.extend(draw_class(&mid, cfg.held_out.midpoint_kappa, cfg.held_out.midpoint_per_class, &mut rng));
    }
    Ok(TestSet { id, ood })
}

/// Per-iteration summary. Losses are evaluated on the fresh ID draws and the
/// synthesized batch; the OOD loss is absent when the batch is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub outliers: usize,
    pub skipped_pairs: usize,
    pub mh_acceptance: f64,
    pub acceptance: f64,
    pub ood_disc: Option<f64>,
    pub l_disp: f64,
    pub l_comp: f64,
    pub objective: f64,
    pub fpr95: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub outlier_score_mean: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: BenchConfig,
    pub iterations: Vec<IterationRecord>,
    pub batches: Vec<OutlierBatch>,
    /// `(iteration, stats)` for every round that produced an outlier.
    pub rounds: Vec<(usize, RoundStats)>,
    pub final_report: ScoreReport,
    /// Wall-clock time of each `synthesize_batch` call.
    pub synth_ms: Vec<f64>,
}

impl RunArtifacts {
    pub fn mean_synth_ms(&self) -> f64 {
        self.synth_ms.iter().sum::<f64>() / self.synth_ms.len().max(1) as f64
    }
}

struct OutputFiles {
    dir: PathBuf,
    metrics: csv::Writer<File>,
    rounds: csv::Writer<File>,
    timings: csv::Writer<File>,
    trace: Option<BufWriter<File>>,
}

impl OutputFiles {
    fn create(dir: &Path, cfg: &BenchConfig) -> Result<Self> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), cfg.to_json()?)?;
        let mut metrics = csv::Writer::from_path(dir.join("metrics.csv"))?;
        metrics.write_record([
            "iteration", "outliers", "skipped_pairs", "mh_acceptance", "acceptance", "ood_disc", "l_disp", "l_comp",
            "objective", "fpr95", "auroc", "aupr", "outlier_score_mean",
        ])?;
        let mut rounds = csv::Writer::from_path(dir.join("rounds.csv"))?;
        rounds.write_record(["iteration", "round", "count", "mean", "std", "min", "max"])?;
        let mut timings = csv::Writer::from_path(dir.join("timings.csv"))?;
        timings.write_record(["iteration", "synth_ms"])?;
        let trace = if cfg.trace {
            Some(BufWriter::new(File::create(dir.join("trace.jsonl"))?))
        } else {
            None
        };
        Ok(OutputFiles {
            dir: dir.to_path_buf(),
            metrics,
            rounds,
            timings,
            trace,
        })
    }

    fn record(&mut self, rec: &IterationRecord, batch: &OutlierBatch, rounds: &[RoundStats], ms: f64) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        self.metrics.write_record([
            rec.iteration.to_string(),
            rec.outliers.to_string(),
            rec.skipped_pairs.to_string(),
            rec.mh_acceptance.to_string(),
            rec.acceptance.to_string(),
            opt(rec.ood_disc),
            rec.l_disp.to_string(),
            rec.l_comp.to_string(),
            rec.objective.to_string(),
            rec.fpr95.to_string(),
            rec.auroc.to_string(),
            rec.aupr.to_string(),
            opt(rec.outlier_score_mean),
        ])?;
        self.metrics.flush()?;
        for s in rounds {
            self.rounds.write_record([
                rec.iteration.to_string(),
                s.round.to_string(),
                s.count.to_string(),
                s.mean.to_string(),
                s.std.to_string(),
                s.min.to_string(),
                s.max.to_string(),
            ])?;
        }
        self.rounds.flush()?;
        self.timings.write_record([rec.iteration.to_string(), format!("{ms:.3}")])?;
        self.timings.flush()?;
        batch.write_csv(File::create(self.dir.join(format!("batch_{:03}.csv", rec.iteration)))?)?;
        if let Some(trace) = self.trace.as_mut() {
            batch.write_trace(&mut *trace)?;
            trace.flush()?;
        }
        Ok(())
    }

    fn finish(self, report: &ScoreReport) -> Result<()> {
        report.write_csv(File::create(self.dir.join("report.csv"))?)?;
        let mut scores = csv::Writer::from_path(self.dir.join("scores.csv"))?;
        scores.write_record(["set", "score"])?;
        for (set, values) in [("id", &report.id_scores), ("ood", &report.ood_scores)] {
            for s in values.iter() {
                scores.write_record([set, &s.to_string()])?;
            }
        }
        scores.flush()?;
        Ok(())
    }
}

/// Runs the full loop of `cfg.iterations` steps and, when `cfg.output_dir` is
/// set, writes every artifact there as it is produced.
///
/// Iteration `t` (1-based) synthesizes with seed `cfg.synthesis.hmc.seed + t`.
pub fn run_experiment(cfg: &BenchConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let mut store = generate_synthetic_id(cfg)?;
    let test = held_out_test_set(cfg)?;
    let centers = true_prototypes(cfg);
    let tau = cfg.temperature()?;
    let base = cfg.effective_synthesis();
    let test_id: Vec<UnitVector> = test.id.iter().map(|(z, _)| z.clone()).collect();

    let mut out = match &cfg.output_dir {
        Some(dir) => Some(OutputFiles::create(dir, cfg)?),
        None => None,
    };
    let mut iterations = Vec::new();
    let mut batches = Vec::new();
    let mut all_rounds = Vec::new();
    let mut synth_ms = Vec::new();
    let mut final_report = None;

    for t in 1..=cfg.iterations {
        let fresh: Vec<(UnitVector, usize)> = centers
            .iter()
            .enumerate()
            .flat_map(|(c, mu)| {
                let mut rng = stream_rng(cfg.seed, STREAM_FRESH, (t * cfg.num_classes + c) as u64);
                draw_class(mu, cfg.class_kappa, cfg.fresh_per_class, &mut rng)
                    .into_iter()
                    .map(move |z| (z, c))
            })
            .collect();
        let labelled: Vec<(usize, UnitVector)> = fresh.iter().map(|(z, c)| (*c, z.clone())).collect();
        store.insert_batch(&labelled)?;

        let mut syn = base.clone();
        syn.hmc.seed = base.hmc.seed.wrapping_add(t as u64);
        let started = Instant::now();
        let batch = synthesize_batch(&store, &syn)?;
        let ms = started.elapsed().as_secs_f64() * 1e3;

        let prototypes = store.prototypes()?;
        let positions = batch.positions();
        let ood_disc = if positions.is_empty() {
            None
        } else {
            Some(ood_discernment_loss(&positions, &prototypes, tau)?)
        };
        let (l_disp, l_comp) = cider_losses(&fresh, &prototypes, tau)?;
        let objective = combined_objective(0.0, l_disp + COMPACTNESS_WEIGHT * l_comp, ood_disc.unwrap_or(0.0), cfg.lambda_d);

        let scorer = KnnScorer::new(&store.all_embeddings(), cfg.k_detect)?;
        let report = ScoreReport::new(scorer.scores(&test_id), scorer.scores(&test.ood))?;
        let rounds = round_wise_scores(&batch, &scorer);
        let outlier_score_mean = if positions.is_empty() {
            None
        } else {
            Some(scorer.scores(&positions).iter().sum::<f64>() / positions.len() as f64)
        };

        let rec = IterationRecord {
            iteration: t,
            outliers: batch.len(),
            skipped_pairs: batch.skipped.len(),
            mh_acceptance: batch.mh_acceptance_rate(),
            acceptance: batch.acceptance_rate(),
            ood_disc,
            l_disp,
            l_comp,
            objective,
            fpr95: report.fpr95,
            auroc: report.auroc,
            aupr: report.aupr,
            outlier_score_mean,
        };
        if let Some(out) = out.as_mut() {
            out.record(&rec, &batch, &rounds, ms)?;
        }
        iterations.push(rec);
        all_rounds.extend(rounds.into_iter().map(|s| (t, s)));
        batches.push(batch);
        synth_ms.push(ms);
        final_report = Some(report);
    }

    let final_report = match final_report {
        Some(r) => r,
        None => {
            let scorer = KnnScorer::new(&store.all_embeddings(), cfg.k_detect)?;
            ScoreReport::new(scorer.scores(&test_id), scorer.scores(&test.ood))?
        }
    };
    if let Some(out) = out {
        out.finish(&final_report)?;
    }
    Ok(RunArtifacts {
        config: cfg.clone(),
        iterations,
        batches,
        rounds: all_rounds,
        final_report,
        synth_ms,
    })
}

/// Config field varied by [`ablation_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LambdaD,
    K,
    Delta,
    LeapfrogSteps,
    StepSize,
    NAdj,
    Rounds,
    Variant,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::LambdaD => "lambda_d",
            SweepAxis::K => "k",
            SweepAxis::Delta => "delta",
            SweepAxis::LeapfrogSteps => "leapfrog_steps",
            SweepAxis::StepSize => "step_size",
            SweepAxis::NAdj => "n_adj",
            SweepAxis::Rounds => "rounds",
            SweepAxis::Variant => "variant",
        }
    }

    /// Copy of `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &BenchConfig, value: &str) -> Result<BenchConfig> {
        fn parse<T: std::str::FromStr>(axis: SweepAxis, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::BadConfig(format!("invalid value {v:?} for axis {}", axis.name())))
        }
        let mut out = cfg.clone();
        let s = &mut out.synthesis;
        match self {
            SweepAxis::LambdaD => out.lambda_d = parse(self, value)?,
            SweepAxis::K => s.k = parse(self, value)?,
            SweepAxis::Delta => s.delta = parse(self, value)?,
            SweepAxis::LeapfrogSteps => s.hmc.leapfrog_steps = parse(self, value)?,
            SweepAxis::StepSize => s.hmc.step_size = parse(self, value)?,
            SweepAxis::NAdj => s.n_adj = parse(self, value)?,
            SweepAxis::Rounds => s.hmc.rounds = parse(self, value)?,
            SweepAxis::Variant => {
                s.hmc.variant = Variant::ALL
                    .into_iter()
                    .find(|v| v.name() == value.trim())
                    .ok_or_else(|| Error::BadConfig(format!("unknown variant {value:?}")))?
            }
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub report: ScoreReport,
    pub outliers: usize,
    pub mh_acceptance: f64,
    pub mean_synth_ms: f64,
}

/// One run per value with a shared seed. Each run writes into
/// `<output_dir>/<axis>_<value>`, and the merged table goes to `sweep.csv`
/// (timings in `sweep_timings.csv`).
pub fn ablation_sweep(cfg: &BenchConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::BadConfig("sweep needs at least one value".into()));
    }
    let configs: Vec<BenchConfig> = values
        .iter()
        .map(|v| {
            let mut c = axis.apply(cfg, v)?;
            c.output_dir = cfg.output_dir.as_ref().map(|d| d.join(format!("{}_{}", axis.name(), v.trim())));
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<SweepRow> = configs
        .par_iter()
        .zip(values)
        .map(|(c, v)| {
            let art = run_experiment(c)?;
            let outliers = art.iterations.iter().map(|r| r.outliers).sum();
            let mh = art.iterations.iter().map(|r| r.mh_acceptance).sum::<f64>() / art.iterations.len().max(1) as f64;
            Ok(SweepRow {
                value: v.trim().to_string(),
                mean_synth_ms: art.mean_synth_ms(),
                report: art.final_report,
                outliers,
                mh_acceptance: mh,
            })
        })
        .collect::<Result<_>>()?;
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        w.write_record(["axis", "value", "fpr95", "auroc", "aupr", "outliers", "mh_acceptance"])?;
        let mut tw = csv::Writer::from_path(dir.join("sweep_timings.csv"))?;
        tw.write_record(["axis", "value", "synth_ms"])?;
        for r in &rows {
            w.write_record([
                axis.name().to_string(),
                r.value.clone(),
                r.report.fpr95.to_string(),
                r.report.auroc.to_string(),
                r.report.aupr.to_string(),
                r.outliers.to_string(),
                r.mh_acceptance.to_string(),
            ])?;
            tw.write_record([axis.name().to_string(), r.value.clone(), format!("{:.3}", r.mean_synth_ms)])?;
        }
        w.flush()?;
        tw.flush()?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityResult {
    pub count: usize,
    pub synthesized_std: f64,
    pub baseline_std: f64,
}

/// Score spread of one synthesized batch against an equally sized Gaussian
/// baseline at `sigma = step_size`. The baseline draws `rounds` points per
/// pair and is subsampled to the synthesized count.
pub fn diversity_comparison(store: &IdStore, cfg: &SynthesisConfig, k_detect: usize) -> Result<DiversityResult> {
    let batch = synthesize_batch(store, cfg)?;
    let baseline = gaussian_baseline_batch(store, cfg.hmc.step_size, cfg.hmc.rounds, cfg)?;
    let pool = baseline.positions();
    let mut rng = stream_rng(cfg.hmc.seed, STREAM_SUBSAMPLE, 0);
    let chosen: Vec<UnitVector> = pool.choose_multiple(&mut rng, batch.len().min(pool.len())).cloned().collect();
    let scorer = KnnScorer::new(&store.all_embeddings(), k_detect)?;
    Ok(DiversityResult {
        count: batch.len(),
        synthesized_std: score_std(&batch.positions(), &scorer),
        baseline_std: score_std(&chosen, &scorer),
    })
}

/// Every ordered pair of distinct classes, for callers that want to iterate
/// over all midpoints rather than the adjacency-limited set.
pub fn all_pairs(num_classes: usize) -> Vec<ClusterPair> {
    (0..num_classes)
        .flat_map(|u| (0..num_classes).filter(move |&v| v != u).map(move |v| ClusterPair { u, v }))
        .collect()
}
