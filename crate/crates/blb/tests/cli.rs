use std::process::{Command, Output};

fn blb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blb")).args(args).output().unwrap()
}

#[test]
fn usage_mistakes_exit_with_two() {
    assert_eq!(blb(&["demo-mask", "--bogus"]).status.code(), Some(2));
    assert_eq!(blb(&["fusion-plan", "--model", "bert-block", "--graph", "g.txt"]).status.code(), Some(2));
}

#[test]
fn bad_values_are_rejected_before_any_work() {
    let out = blb(&["bench-matmul", "--l", "8", "--d", "6", "--heads", "4"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(blb(&["demo-mask", "--n", "1000"]).status.code(), Some(1));
}

#[test]
fn config_errors_name_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ini");
    std::fs::write(&path, "[model]\nsize = 3\n").unwrap();
    let out = blb(&["run-block", "--config", path.to_str().unwrap(), "--report", dir.path().join("r.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.ini") && err.contains("size"), "{err}");
}

#[test]
fn shipped_config_runs_on_the_plain_engine() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.ini");
    let out = blb(&["run-block", "--config", cfg, "--engine", "plain", "--report", report.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
    assert_eq!(r["seed"], 7);
    assert_eq!(r["blocks"].as_array().unwrap().len(), 5);
    assert!(r["totals"]["output_mse"].as_f64().unwrap() < 1e-4);
}
