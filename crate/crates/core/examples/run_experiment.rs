//! The full loop: refresh the store, synthesize, compute losses and score a
//! held-out set each iteration. Pass a directory to also write the CSVs.

use sphere_ood::bench::{run_experiment, BenchConfig};
use sphere_ood::Result;

fn main() -> Result<()> {
    let cfg = BenchConfig {
        num_classes: 5,
        points_per_class: 300,
        capacity: 300,
        iterations: 4,
        output_dir: std::env::args().nth(1).map(Into::into),
        ..BenchConfig::default()
    };
    let art = run_experiment(&cfg)?;
    println!("iter  outliers  mh_acc  ood_loss  objective   fpr95   auroc");
    for r in &art.iterations {
        println!(
            "{:>4}  {:>8}  {:>6.3}  {:>8}  {:>9.4}  {:>6.4}  {:>6.4}",
            r.iteration,
            r.outliers,
            r.mh_acceptance,
            r.ood_disc.map_or("-".into(), |v| format!("{v:.4}")),
            r.objective,
            r.fpr95,
            r.auroc
        );
    }
    println!("mean synthesis time {:.1} ms", art.mean_synth_ms());
    Ok(())
}
