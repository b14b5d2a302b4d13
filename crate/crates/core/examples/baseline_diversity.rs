//! Compare the score spread of sampled outliers against Gaussian noise
//! around class midpoints.

use sphere_ood::bench::{diversity_comparison, generate_synthetic_id, BenchConfig};
use sphere_ood::synthesis::{gaussian_baseline_batch, SynthesisConfig};
use sphere_ood::Result;

fn main() -> Result<()> {
    let bench = BenchConfig {
        num_classes: 6,
        points_per_class: 400,
        capacity: 400,
        ..BenchConfig::default()
    };
    let store = generate_synthetic_id(&bench)?;
    let cfg = SynthesisConfig::default();

    let baseline = gaussian_baseline_batch(&store, 0.01, 5, &cfg)?;
    let worst = baseline
        .samples
        .iter()
        .map(|s| store.midpoint(s.pair).map(|m| s.position.angle(&m).to_degrees()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    println!("sigma 0.01 baseline: {} points, farthest {worst:.2} degrees from its midpoint", baseline.len());

    for seed in 0..3 {
        let mut seeded = cfg.clone();
        seeded.hmc.seed = seed;
        let d = diversity_comparison(&store, &seeded, 50)?;
        println!(
            "seed {seed}: {} points each, score std sampled {:.4} vs baseline {:.4}",
            d.count, d.synthesized_std, d.baseline_std
        );
    }
    Ok(())
}
