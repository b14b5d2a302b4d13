//! Synthesize one batch of virtual outliers between neighboring classes and
//! watch their kNN distance grow over the rounds.

use std::io;

use sphere_ood::bench::{generate_synthetic_id, BenchConfig};
use sphere_ood::metrics::KnnScorer;
use sphere_ood::synthesis::{round_wise_scores, synthesize_batch, SynthesisConfig};
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
    let batch = synthesize_batch(&store, &cfg)?;
    println!(
        "{} outliers from {} chains, MH acceptance {:.3}, accepted with margin {:.3}",
        batch.len(),
        batch.chains.len(),
        batch.mh_acceptance_rate(),
        batch.acceptance_rate()
    );

    let scorer = KnnScorer::new(&store.all_embeddings(), 50)?;
    for r in round_wise_scores(&batch, &scorer) {
        println!("round {}: {:>3} samples, mean kNN distance {:.4} (std {:.4})", r.round, r.count, r.mean, r.std);
    }

    println!("\nfirst rows of the batch CSV:");
    let mut csv = Vec::new();
    batch.write_csv(&mut csv)?;
    for line in String::from_utf8_lossy(&csv).lines().take(4) {
        println!("{line}");
    }
    if let Some(first) = batch.chains[0].records.first() {
        println!("\nfirst transition of chain 0 as JSON:");
        serde_json::to_writer(io::stdout(), first).map_err(io::Error::from)?;
        println!();
    }
    Ok(())
}
