use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn nailguard(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nailguard"))
        .args(args)
        .env_remove("NAILGUARD_DATA")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn nailguard")
}

fn ok(args: &[&str]) -> Output {
    let out = nailguard(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn index(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn synth(dir: &Path, per_category: usize) -> PathBuf {
    let data = dir.join("data");
    ok(&["synth-data", "--out", s(&data), "--per-category", &per_category.to_string()]);
    data
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(nailguard(&[]).status.code(), Some(2));
    assert_eq!(nailguard(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(nailguard(&["split"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = nailguard(&["ingest", "--data", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn ingest_and_split_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 6);
    let mut indexes = Vec::new();
    for run in ["a", "b"] {
        let ing = dir.path().join(format!("ingest-{run}"));
        ok(&["ingest", "--data", s(&data), "--out", s(&ing)]);
        let sp = dir.path().join(format!("split-{run}"));
        ok(&["split", "--manifest", s(&ing.join("dataset_manifest.json")), "--out", s(&sp)]);
        indexes.push((index(&ing), index(&sp)));
    }
    let (a, b) = (&indexes[0], &indexes[1]);
    assert_eq!(a.0["outputs"], b.0["outputs"]);
    assert_eq!(a.1["outputs"], b.1["outputs"]);
    // Defaults are recorded even though no --seed was passed.
    assert_eq!(a.1["flags"]["seed"], 42);
    assert_eq!(a.1["command"], "split");
    assert!(a.1["outputs"]["split.json"].as_str().unwrap().len() == 64);
}

#[test]
fn train_evaluate_explain_compare() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 10);
    let train = dir.path().join("train");
    ok(&["train", "--data", s(&data), "--max-epochs", "1", "--out", s(&train)]);
    let ix = index(&train);
    assert_eq!(ix["flags"]["train"]["max_epochs"], 1);
    assert_eq!(ix["flags"]["train"]["batch_size"], 32);
    assert_eq!(ix["flags"]["data"]["split_seed"], 42);
    for f in ["history.csv", "split.json", "test/report.json"] {
        assert!(ix["outputs"][f].is_string(), "{f} missing from index");
    }
    let ckpt = train.join("checkpoint");
    assert!(ckpt.is_dir());

    let eval = dir.path().join("eval");
    ok(&["evaluate", "--data", s(&data), "--checkpoint", s(&ckpt), "--out", s(&eval)]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["total"], 6);

    let image = std::fs::read_dir(data.join("pitting")).unwrap().next().unwrap().unwrap().path();
    for method in ["gradcam", "shapley"] {
        let out = dir.path().join(format!("explain-{method}"));
        ok(&["explain", "--checkpoint", s(&ckpt), "--image", s(&image), "--method", method, "--out", s(&out)]);
        let export: Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("explanation.json")).unwrap()).unwrap();
        assert!(export.is_object());
        assert!(out.join("overlay.png").is_file());
    }
    let bad = nailguard(&["explain", "--checkpoint", s(&dir.path().join("missing")), "--image", s(&image)]);
    assert_eq!(bad.status.code(), Some(1));

    let cmp = dir.path().join("compare");
    let pair = format!("tiny={}", s(&eval.join("report.json")));
    ok(&["compare", "--report", &pair, "--out", s(&cmp)]);
    let csv = std::fs::read_to_string(cmp.join("comparison.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("tiny,")), "{csv}");
}
