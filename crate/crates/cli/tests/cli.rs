//! End-to-end runs of the binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_rarebound");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).arg("--out-dir").arg(dir).args(args).output().unwrap()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn design_fit_crossval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(d, &["--seed", "3", "design", "--n", "20", "--evaluate", "--budget", "20"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(d.join("design.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
    assert!(csv.lines().next().unwrap().ends_with('y'));

    let design = d.join("design.csv");
    let out = run(d, &["fit", "--design", design.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(d, "model.json")["schema_version"], 1);

    let model = d.join("model.json");
    let out = run(d, &["crossval", "--model", model.to_str().unwrap()]);
    assert!(out.status.success());
    let loo = json(d, "crossval.json");
    assert_eq!(loo["schema_version"], 1);
    assert_eq!(loo["residuals"].as_array().unwrap().len(), 20);
}

#[test]
fn crude_bound_and_budget_exit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(d, &["--budget", "100", "bound", "crude"]);
    assert!(out.status.success());
    let rep = json(d, "bound.json");
    assert_eq!(rep["schema_version"], 1);
    assert_eq!(rep["method"], "crude-mc");
    assert_eq!(rep["trials"], 100);

    let out = run(d, &["--budget", "10", "bound", "crude", "--n", "50"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn oracle_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(d, &["oracle", "--samples", "1000000"]);
    assert!(out.status.success());
    let rep = json(d, "oracle.json");
    assert_eq!(rep["schema_version"], 1);
    let pi = rep["pi"].as_f64().unwrap();
    let se = rep["std_error"].as_f64().unwrap();
    assert!((pi - 4.72e-4).abs() < 5.0 * se, "{pi} +- {se}");
}

#[test]
fn precondition_exits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("bad.toml");
    std::fs::write(&cfg, "rho = \"low\"\n").unwrap();
    let out = run(d, &["--config", cfg.to_str().unwrap(), "oracle"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(d, &["oracle", "--samples", "10"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(d, &["crossval", "--model", "/nonexistent/model.json"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn numerical_exit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // collinear inputs cannot identify a linear trend
    std::fs::write(d.join("line.csv"), "x1,x2,y\n-1,-1,0.5\n0,0,0.1\n1,1,0.7\n2,2,0.2\n").unwrap();
    std::fs::write(d.join("cfg.toml"), "trend = \"linear\"\n").unwrap();
    let cfg = d.join("cfg.toml");
    let design = d.join("line.csv");
    let out = run(d, &["--config", cfg.to_str().unwrap(), "fit", "--design", design.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn classify_synthetic_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.toml");
    std::fs::write(
        &cfg,
        "rho = 0.0\nbudget = 60\nn = 40\nm = 20\nm_mean = 100000\nm_region = 100000\nanneal_iterations = 500\n\n[objective]\nkind = \"synthetic\"\ndim = 4\nshift = 3.0\nseed = 1\n",
    )
    .unwrap();
    let out = run(d, &["--config", cfg.to_str().unwrap(), "classify"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let c = json(d, "classification.json");
    assert_eq!(c["schema_version"], 1);
    assert!(c["budget_used"].as_u64().unwrap() <= 60);
    assert!(["totally-safe", "relatively-safe", "unsafe"].contains(&c["verdict"].as_str().unwrap()));
}
