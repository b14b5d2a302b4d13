//! Fill a class-conditional store, query neighbors and adjacent classes, and
//! round-trip it through both file formats.

use std::fs::File;
use std::io::{BufReader, BufWriter};

use sphere_ood::bench::{generate_synthetic_id, BenchConfig};
use sphere_ood::store::{read_binary, read_json, write_binary, write_json};
use sphere_ood::{normalize, Result};

fn main() -> Result<()> {
    let cfg = BenchConfig {
        dim: 8,
        num_classes: 5,
        points_per_class: 200,
        capacity: 200,
        ..BenchConfig::default()
    };
    let mut store = generate_synthetic_id(&cfg)?;
    println!("{} classes, {} embeddings", store.num_classes(), store.total_len());

    let query = normalize(&[1.0, 0.5, 0.0, 0.0, -0.2, 0.0, 0.1, 0.0])?;
    for k in [1, 10, 100] {
        let (dist, _) = store.knn_distance(0, &query, k)?;
        println!("class 0, k = {k:>3}: distance {dist:.4}");
    }
    println!("classes nearest to 0: {:?}", store.adjacent_clusters(0, 3)?);

    // The buffer is FIFO: inserting past capacity evicts the oldest rows.
    for _ in 0..50 {
        store.insert(0, &query)?;
    }
    println!("after 50 inserts class 0 still holds {} rows", store.len(0));

    let dir = std::env::temp_dir();
    let bin = dir.join("sphere_ood_example_store.bin");
    let json = dir.join("sphere_ood_example_store.json");
    write_binary(&store, BufWriter::new(File::create(&bin)?))?;
    write_json(&store, BufWriter::new(File::create(&json)?))?;
    let from_bin = read_binary(BufReader::new(File::open(&bin)?))?;
    let from_json = read_json(BufReader::new(File::open(&json)?))?;
    println!(
        "binary {} bytes, json {} bytes, reloaded sizes {} / {}",
        std::fs::metadata(&bin)?.len(),
        std::fs::metadata(&json)?.len(),
        from_bin.total_len(),
        from_json.total_len()
    );
    std::fs::remove_file(bin)?;
    std::fs::remove_file(json)?;
    Ok(())
}
