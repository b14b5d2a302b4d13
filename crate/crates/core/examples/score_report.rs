//! Score held-out ID and OOD points with the kNN detector and summarize.

use sphere_ood::bench::{generate_synthetic_id, held_out_test_set, BenchConfig};
use sphere_ood::metrics::{hypersphere_quality, KnnScorer, ScoreReport};
use sphere_ood::{Result, UnitVector};

fn main() -> Result<()> {
    let cfg = BenchConfig {
        num_classes: 5,
        points_per_class: 400,
        capacity: 400,
        ..BenchConfig::default()
    };
    let store = generate_synthetic_id(&cfg)?;
    let test = held_out_test_set(&cfg)?;
    let id: Vec<UnitVector> = test.id.iter().map(|(z, _)| z.clone()).collect();

    let scorer = KnnScorer::new(&store.all_embeddings(), cfg.k_detect)?;
    let report = ScoreReport::new(scorer.scores(&id), scorer.scores(&test.ood))?;
    for (name, value) in report.rows() {
        println!("{name:>9}: {value:.4}");
    }

    let q = hypersphere_quality(&test.ood, &test.id, &store.prototypes()?)?;
    println!(
        "angles in degrees: separation {:.1}, dispersion {:.1}, compactness {:.1}",
        q.separation, q.dispersion, q.compactness
    );
    Ok(())
}
