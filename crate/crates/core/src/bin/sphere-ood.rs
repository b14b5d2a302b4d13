use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sphere_ood::bench::{ablation_sweep, generate_synthetic_id, run_experiment, BenchConfig, SweepAxis};
use sphere_ood::energy::GradientMode;
use sphere_ood::metrics::ScoreReport;
use sphere_ood::samplers::Variant;
use sphere_ood::store::{read_binary, read_json, write_binary, write_json};
use sphere_ood::synthesis::synthesize_batch;
use sphere_ood::{Error, IdStore, Result};

#[derive(Parser)]
#[command(name = "sphere-ood", version, about = "Synthesize and score virtual outliers on the unit hypersphere")]
struct Cli {
    /// JSON file with any subset of the bench config fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ID store.
    Gen {
        /// Output path; `.bin` selects the binary format, anything else JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize one outlier batch.
    Synth {
        /// Store to read instead of generating one.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write per-transition JSON lines here.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Run the full experiment loop into the output directory.
    Run,
    /// Run one experiment per value of a config field.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Compute FPR95, AUROC and AUPR from two files of scores, one per line.
    Score {
        #[arg(long)]
        id: PathBuf,
        #[arg(long)]
        ood: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    classes: Option<usize>,
    #[arg(long, global = true)]
    points_per_class: Option<usize>,
    #[arg(long, global = true)]
    class_kappa: Option<f64>,
    #[arg(long, global = true)]
    capacity: Option<usize>,
    #[arg(long, global = true)]
    ema_factor: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    prototype_seed: Option<u64>,
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    k_detect: Option<usize>,
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    kappa: Option<f64>,
    #[arg(long, global = true)]
    lambda_d: Option<f64>,
    #[arg(long, global = true)]
    n_adj: Option<usize>,
    #[arg(long, global = true)]
    leapfrog_steps: Option<usize>,
    #[arg(long, global = true)]
    step_size: Option<f64>,
    #[arg(long, global = true)]
    rounds: Option<usize>,
    #[arg(long, global = true, value_enum)]
    variant: Option<Variant>,
    #[arg(long, global = true)]
    history_len: Option<usize>,
    #[arg(long, global = true)]
    hmc_seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    gradient_mode: Option<GradientMode>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    fresh_per_class: Option<usize>,
    #[arg(long, global = true)]
    trace: bool,
    #[arg(long, short = 'o', global = true)]
    output_dir: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut BenchConfig) {
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set! {
            dim => cfg.dim,
            classes => cfg.num_classes,
            points_per_class => cfg.points_per_class,
            class_kappa => cfg.class_kappa,
            capacity => cfg.capacity,
            ema_factor => cfg.ema_factor,
            seed => cfg.seed,
            prototype_seed => cfg.prototype_seed,
            k => cfg.synthesis.k,
            k_detect => cfg.k_detect,
            delta => cfg.synthesis.delta,
            kappa => cfg.synthesis.kappa,
            lambda_d => cfg.lambda_d,
            n_adj => cfg.synthesis.n_adj,
            leapfrog_steps => cfg.synthesis.hmc.leapfrog_steps,
            step_size => cfg.synthesis.hmc.step_size,
            rounds => cfg.synthesis.hmc.rounds,
            variant => cfg.synthesis.hmc.variant,
            history_len => cfg.synthesis.hmc.history_len,
            hmc_seed => cfg.synthesis.hmc.seed,
            gradient_mode => cfg.synthesis.gradient_mode,
            iterations => cfg.iterations,
            fresh_per_class => cfg.fresh_per_class,
        }
        if self.trace {
            cfg.trace = true;
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = Some(dir.clone());
        }
    }
}

fn load_config(cli: &Cli) -> Result<BenchConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::BadConfig(format!("cannot read {}: {e}", path.display())))?;
            BenchConfig::from_json(&text)?
        }
        None => BenchConfig::default(),
    };
    cli.overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

fn load_store(path: &Path) -> Result<IdStore> {
    let reader = BufReader::new(File::open(path)?);
    if is_binary(path) {
        read_binary(reader)
    } else {
        read_json(reader)
    }
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| Error::Format(format!("{}: not a number: {l:?}", path.display())))
        })
        .collect()
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Gen { out } => {
            let store = generate_synthetic_id(&cfg)?;
            let w = BufWriter::new(File::create(out)?);
            if is_binary(out) {
                write_binary(&store, w)?;
            } else {
                write_json(&store, w)?;
            }
            println!("wrote {} embeddings in {} classes to {}", store.total_len(), store.num_classes(), out.display());
        }
        Command::Synth { store, out, trace_out } => {
            let store = match store {
                Some(path) => load_store(path)?,
                None => generate_synthetic_id(&cfg)?,
            };
            let mut syn = cfg.effective_synthesis();
            syn.k = syn.k.min(store.min_len()).max(1);
            syn.n_adj = cfg.synthesis.n_adj.min(store.num_classes().saturating_sub(1)).max(1);
            let batch = synthesize_batch(&store, &syn)?;
            batch.write_csv(BufWriter::new(File::create(out)?))?;
            if let Some(path) = trace_out {
                batch.write_trace(BufWriter::new(File::create(path)?))?;
            }
            println!(
                "{} outliers from {} chains ({} skipped), MH acceptance {:.3}",
                batch.len(),
                batch.chains.len(),
                batch.skipped.len(),
                batch.mh_acceptance_rate()
            );
        }
        Command::Run => {
            let mut cfg = cfg;
            cfg.output_dir.get_or_insert_with(|| PathBuf::from("run_out"));
            let art = run_experiment(&cfg)?;
            let r = &art.final_report;
            println!(
                "{} iterations, FPR95 {:.4}, AUROC {:.4}, AUPR {:.4}, mean synthesis {:.1} ms",
                art.iterations.len(),
                r.fpr95,
                r.auroc,
                r.aupr,
                art.mean_synth_ms()
            );
        }
        Command::Sweep { axis, values } => {
            let mut cfg = cfg;
            cfg.output_dir.get_or_insert_with(|| PathBuf::from("sweep_out"));
            let rows = ablation_sweep(&cfg, *axis, values)?;
            let mut out = io::stdout().lock();
            writeln!(out, "{}\tfpr95\tauroc\taupr\toutliers", axis.name())?;
            for r in rows {
                writeln!(
                    out,
                    "{}\t{:.4}\t{:.4}\t{:.4}\t{}",
                    r.value, r.report.fpr95, r.report.auroc, r.report.aupr, r.outliers
                )?;
            }
        }
        Command::Score { id, ood, out } => {
            let report = ScoreReport::new(read_scores(id)?, read_scores(ood)?)?;
            match out {
                Some(path) => report.write_csv(File::create(path)?)?,
                None => report.write_csv(io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
