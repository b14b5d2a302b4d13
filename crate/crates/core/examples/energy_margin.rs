//! OOD-ness potential between two classes and the density-based margin.

use sphere_ood::bench::{generate_synthetic_id, BenchConfig};
use sphere_ood::energy::{hard_margin_threshold, id_prob, id_surprise, EnergyContext, GradientMode};
use sphere_ood::{ClusterPair, Result};

fn main() -> Result<()> {
    let cfg = BenchConfig {
        dim: 8,
        num_classes: 4,
        points_per_class: 200,
        capacity: 200,
        ..BenchConfig::default()
    };
    let store = generate_synthetic_id(&cfg)?;
    let pair = ClusterPair::new(0, store.adjacent_clusters(0, 1)?[0])?;
    let ctx = EnergyContext::new(&store, pair, 50, 2.0)?;
    let t_minus = hard_margin_threshold(&store, pair, 2.0, 0.1)?;
    println!("pair {pair:?}, margin threshold {t_minus:.4}");

    let mid = store.midpoint(pair)?;
    let inside = store.prototype(0)?.clone();
    for (name, z) in [("midpoint", &mid), ("prototype 0", &inside)] {
        let grad = ctx.grad_potential(z, GradientMode::Analytic)?;
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let probs = id_prob(&store, z, 2.0)?;
        println!(
            "{name:>12}: P = {:.4}, U = {:.4}, |grad U| = {norm:.4}, surprise {:.4}, top class prob {:.3}",
            ctx.ood_prob(z)?,
            ctx.potential(z)?,
            id_surprise(&store, z.as_slice(), 2.0)?,
            probs.iter().copied().fold(0.0, f64::max),
        );
    }
    Ok(())
}
