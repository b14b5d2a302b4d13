//! Drives the command-line binary and checks outputs and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--dim", "6", "--classes", "3", "--points-per-class", "60", "--capacity", "60", "--k", "20", "--n-adj", "2",
    "--iterations", "1", "--fresh-per-class", "10",
];

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sphere-ood"))
        .current_dir(dir)
        .args(args)
        .args(SMALL)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn gen_then_synth_from_both_store_formats() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["store.bin", "store.json"] {
        let out = run(dir.path(), &["gen", "--out", name]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let synth = run(dir.path(), &["synth", "--store", name, "--out", "batch.csv", "--trace-out", "trace.jsonl"]);
        assert_eq!(code(&synth), 0, "{}", String::from_utf8_lossy(&synth.stderr));
        assert!(fs::read_to_string(dir.path().join("batch.csv")).unwrap().lines().count() >= 1);
        assert!(!fs::read_to_string(dir.path().join("trace.jsonl")).unwrap().is_empty());
    }
    assert_eq!(&fs::read(dir.path().join("store.bin")).unwrap()[..8], b"SPHOOD01");
}

#[test]
fn run_and_sweep_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["run", "-o", "r"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "metrics.csv", "report.csv", "batch_001.csv"] {
        assert!(dir.path().join("r").join(f).exists(), "missing {f}");
    }
    let out = run(dir.path(), &["sweep", "--axis", "variant", "--values", "hmc,random_walk", "-o", "s"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);
    assert!(dir.path().join("s/sweep.csv").exists());
}

#[test]
fn score_reports_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let lines = |r: std::ops::RangeInclusive<i32>| r.map(|x| format!("{x}\n")).collect::<String>();
    fs::write(dir.path().join("id.txt"), lines(21..=40)).unwrap();
    fs::write(dir.path().join("ood.txt"), lines(1..=20)).unwrap();
    let out = run(dir.path(), &["score", "--id", "id.txt", "--ood", "ood.txt", "--out", "report.csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let field = |name: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(&format!("{name},"))).unwrap();
        line.split(',').nth(1).unwrap().parse().unwrap()
    };
    assert_eq!((field("fpr95"), field("auroc"), field("aupr")), (0.0, 1.0, 1.0));

    fs::write(dir.path().join("few.txt"), "1\n3\n").unwrap();
    assert_eq!(code(&run(dir.path(), &["score", "--id", "few.txt", "--ood", "ood.txt"])), 3);
}

#[test]
fn exit_codes_for_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["gen", "--out", "s.bin", "--dim", "1"])), 2);
    fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(code(&run(dir.path(), &["--config", "bad.json", "gen", "--out", "s.bin"])), 2);
    assert_eq!(code(&run(dir.path(), &["--config", "absent.json", "gen", "--out", "s.bin"])), 2);

    assert_eq!(code(&run(dir.path(), &["synth", "--store", "absent.bin", "--out", "b.csv"])), 3);
    fs::write(dir.path().join("junk.bin"), b"NOTASTORE").unwrap();
    assert_eq!(code(&run(dir.path(), &["synth", "--store", "junk.bin", "--out", "b.csv"])), 3);
    fs::write(dir.path().join("id.txt"), "1\nabc\n").unwrap();
    fs::write(dir.path().join("ood.txt"), "2\n").unwrap();
    assert_eq!(code(&run(dir.path(), &["score", "--id", "id.txt", "--ood", "ood.txt"])), 3);
}
