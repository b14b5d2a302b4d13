//! Vary one setting at a time with everything else fixed.

use sphere_ood::bench::{ablation_sweep, BenchConfig, SweepAxis};
use sphere_ood::samplers::Variant;
use sphere_ood::Result;

fn main() -> Result<()> {
    let cfg = BenchConfig {
        num_classes: 5,
        points_per_class: 300,
        capacity: 300,
        iterations: 2,
        ..BenchConfig::default()
    };
    let variants: Vec<String> = Variant::ALL.iter().map(|v| v.name().to_string()).collect();
    let steps: Vec<String> = ["0.01", "0.05", "0.1", "0.3", "0.5"].map(String::from).to_vec();
    for (axis, values) in [(SweepAxis::Variant, variants), (SweepAxis::StepSize, steps)] {
        println!("{:>12}  fpr95   auroc   aupr    outliers  mh_acc", axis.name());
        for r in ablation_sweep(&cfg, axis, &values)? {
            println!(
                "{:>12}  {:.4}  {:.4}  {:.4}  {:>8}  {:.3}",
                r.value, r.report.fpr95, r.report.auroc, r.report.aupr, r.outliers, r.mh_acceptance
            );
        }
        println!();
    }
    Ok(())
}
