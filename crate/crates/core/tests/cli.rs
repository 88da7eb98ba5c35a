use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bayes_smooth::smoothing::read_labels_csv;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bayes-smooth"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Marker-only corpus where every post names its class, small model.
const SEPARABLE: &str = r#"{
  "schema_version": 1,
  "corpus": {"synthetic": {"users": 500, "agreement": 1.0, "marker_strength": 1.0,
                           "markers_per_class": 1, "min_tokens": 8, "max_tokens": 16}},
  "model": {"max_len": 20},
  "train": {"learning_rate": 0.2},
  "conditions": [{"mode": "hard"}],
  "seeds": [1]
}"#;

const SMALL: &str = r#"{
  "schema_version": 1,
  "corpus": {"synthetic": {"users": 60, "min_tokens": 6, "max_tokens": 12}},
  "model": {"max_len": 12, "emb_dim": 4, "conv1_filters": 4, "conv2_filters": 4},
  "train": {"epochs": 2, "learning_rate": 0.1},
  "conditions": [{"mode": "hard"}, {"mode": "uniform", "alpha": 0.1},
                 {"mode": "bayesian", "alpha": 0.1, "passes": 10}],
  "seeds": [1, 2]
}"#;

#[test]
fn experiment_writes_results_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("results");
    let o = run(&["experiment", "--config", arg(&cfg), "--out", arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("condition,seed,accuracy,weighted_balanced_accuracy,macro_precision,macro_recall,micro_precision")
    );
    assert_eq!(lines.count(), 6);
    for f in ["summary.csv", "label_fidelity.csv", "model_hard_seed1.ckpt", "labels_bayesian_0.1_seed2.csv", "vocab_seed1.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let single = dir.path().join("single");
    let o = run(&["experiment", "--config", arg(&cfg), "--seed", "7", "--out", arg(&single)]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(single.join("results.csv")).unwrap().lines().count(), 4);
}

#[test]
fn smoothed_rows_are_distributions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("labels.csv");
    let o = run(&["smooth", "--config", arg(&cfg), "--seed", "3", "--out", arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_labels_csv(fs::read(&out).unwrap().as_slice()).unwrap();
    assert_eq!(rows.len(), 60);
    for (_, p) in rows {
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn perfect_fit_checkpoint_evaluates_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, SEPARABLE).unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let synth = dir.path().join("synth.json");
    fs::write(&synth, r#"{"users": 500, "agreement": 1.0, "marker_strength": 1.0, "markers_per_class": 1, "min_tokens": 8, "max_tokens": 16}"#).unwrap();
    let o = run(&["generate", "--config", arg(&synth), "--seed", "1", "--out", arg(&corpus)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let trained = dir.path().join("trained");
    let o = run(&["train", "--config", arg(&cfg), "--out", arg(&trained)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = run(&[
        "evaluate",
        "--checkpoint",
        arg(&trained.join("model.ckpt")),
        "--vocab",
        arg(&trained.join("vocab.txt")),
        "--corpus",
        arg(&corpus),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["accuracy"], 1.0, "{report}");
}

#[test]
fn unknown_flag_prints_usage() {
    let o = run(&["experiment", "--frobnicate"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    let o = run(&["transmogrify"]);
    assert!(!o.status.success());
}

#[test]
fn failures_are_one_line_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["experiment", "--config", arg(&dir.path().join("missing.json")), "--out", arg(dir.path())]);
    assert!(!o.status.success());
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    let v: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(v["error"], "config");

    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"user_id\":\"a\",\"text\":\"x\",\"label\":\"ZZ\"}\n").unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, format!(r#"{{"schema_version":1,"corpus":{{"path":{:?}}},"model":{{"max_len":8}}}}"#, arg(&bad))).unwrap();
    let o = run(&["train", "--config", arg(&cfg), "--out", arg(&dir.path().join("t"))]);
    assert!(!o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(v["error"], "ingestion");
}
