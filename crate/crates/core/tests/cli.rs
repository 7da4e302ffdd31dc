use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ccma::feature_store::{save_cache, EmbeddingTable, LabelVector};
use ccma::harness::{read_manifest, SEED_CSV_HEADER};

fn engine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_engine")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_run_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"num_classes": 4, "n_train": 120, "n_test": 80, "d_student": 6, "d_teacher": 5}"#).unwrap();
    let data = dir.path().join("data");
    ok(&engine(&["synth", "--spec", path(&spec), "--out", path(&data)]));

    let config = dir.path().join("cfg.json");
    let cfg = serde_json::json!({
        "dataset": { "cache_dir": data },
        "rounds": 3,
        "seeds": [1, 2],
        "train": { "epochs": 5 },
        "timings": false,
    });
    fs::write(&config, cfg.to_string()).unwrap();
    let out = dir.path().join("out");
    let stdout = ok(&engine(&["run", "--config", path(&config), "--out", path(&out)]));
    assert!(stdout.starts_with("AULC"));

    let csv = fs::read_to_string(out.join("seed_1.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(SEED_CSV_HEADER));
    assert_eq!(csv.lines().count(), 4);
    let manifest = read_manifest(&out).unwrap();
    assert_eq!(manifest.seeds.len(), 2);
    assert_eq!(manifest.config.batch_size, Some(4));

    // A second run into the same directory needs --force.
    let again = engine(&["run", "--config", path(&config), "--out", path(&out)]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("not empty"));
    ok(&engine(&["run", "--config", path(&config), "--out", path(&out), "--force"]));
    assert_eq!(fs::read_to_string(out.join("seed_1.csv")).unwrap(), csv);

    let report: serde_json::Value =
        serde_json::from_str(&ok(&engine(&["report", "--in", path(&out), "--target-acc", "0.1,1.01"]))).unwrap();
    assert_eq!(report["aulc_mean"].as_f64(), Some(manifest.aulc_mean));
    let labels = report["labels_to_accuracy"].as_array().unwrap();
    assert_eq!(labels.len(), 2);
    assert_eq!(labels[0]["labels"].as_u64(), Some(4));
    assert!(labels[1]["labels"].is_null());
}

#[test]
fn calibrate_reports_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<Vec<f32>> = (0..200)
        .map(|i| {
            let mut r = vec![0.05f32; 5];
            r[i % 5] = 0.8;
            r
        })
        .collect();
    let labels = LabelVector::new((0..200).map(|i| (i % 5) as u32).collect());
    let file = dir.path().join("post.embc");
    save_cache(&EmbeddingTable::from_rows(&rows).unwrap(), Some(&labels), &file).unwrap();

    let size: serde_json::Value =
        serde_json::from_str(&ok(&engine(&["calibrate", "--posteriors", path(&file), "--target", "1"]))).unwrap();
    assert_eq!(size["mode"], "size_target");
    assert_eq!(size["mean_size"].as_f64(), Some(1.0));
    assert_eq!(size["coverage"].as_f64(), Some(1.0));

    let cov: serde_json::Value = serde_json::from_str(&ok(&engine(&[
        "calibrate", "--posteriors", path(&file), "--mode", "coverage", "--alpha", "0.2",
    ])))
    .unwrap();
    assert_eq!(cov["n_cal"].as_u64(), Some(100));
    assert_eq!(cov["coverage"].as_f64(), Some(1.0));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.embc");
    let out = engine(&["calibrate", "--posteriors", path(&missing)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let config = dir.path().join("cfg.json");
    fs::write(&config, r#"{"rounds": 2, "bogus": 1}"#).unwrap();
    let out = engine(&["run", "--config", path(&config), "--out", path(dir.path())]);
    assert!(!out.status.success());
}
