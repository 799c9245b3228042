//! End-to-end runs of the `hjb` binary on the shipped configs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hjb_cli::config::ExperimentConfig;
use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn hjb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjb")).args(args).output().expect("spawn hjb")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn shipped_configs_round_trip() {
    for name in ["minimal", "quadratic", "mollified"] {
        let cfg = ExperimentConfig::load(&configs().join(format!("{name}.json"))).unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back, "{name}");
        assert_eq!(cfg.hash(), back.hash(), "{name}");
    }
}

#[test]
fn constant_terminal_data_gives_a_constant_value() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("minimal.json");
    let o = hjb(&["--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap(), "run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.path().join("report.json"));
    assert_eq!(report["v"].as_f64().unwrap(), 0.5);
    assert_eq!(report["J"].as_f64().unwrap(), 0.5);
    assert_eq!(report["gap"].as_f64().unwrap(), 0.0);
    let manifest = read_json(&out.path().join("manifest.json"));
    assert_eq!(manifest["command"], "run");
    assert_eq!(manifest["seed"], 7);
    let names: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for a in ["model.csv", "field.json", "windows.csv", "report.json"] {
        assert!(names.contains(&a), "{a} missing from {names:?}");
        assert!(out.path().join(a).exists());
    }
}

#[test]
fn quadratic_config_reports_the_exact_comparison() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("quadratic.json");
    let o = hjb(&["--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap(), "run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.path().join("report.json"));
    let c = &report["comparison"];
    let hc = c["hopf_cole"].as_f64().unwrap();
    assert!(c["picard_error"].as_f64().unwrap() < 2e-2);
    assert!(c["bsde_error"].as_f64().unwrap() < 2e-2);
    assert!((report["v"].as_f64().unwrap() - hc).abs() < 2e-2);
    assert!(out.path().join("bsde_diagnostics.csv").exists());

    let tables = tempfile::tempdir().unwrap();
    let field = out.path().join("field.json");
    let bsde = out.path().join("bsde.json");
    let o = hjb(&[
        "--out",
        tables.path().to_str().unwrap(),
        "report",
        field.to_str().unwrap(),
        bsde.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tables.path().join("bsde_ladder.csv").exists());
}

#[test]
fn control_reuses_a_saved_field() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("quadratic.json");
    let (cfg, dir) = (cfg.to_str().unwrap(), out.path().to_str().unwrap());
    assert!(hjb(&["--config", cfg, "--out", dir, "solve-picard"]).status.success());
    let field = out.path().join("field.json");
    let o = hjb(&["--config", cfg, "--out", dir, "control", "--field", field.to_str().unwrap(), "--policy", "zero"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.path().join("report.json"));
    assert_eq!(report["policy"], "zero");
    assert!(report["gap"].as_f64().unwrap() > 0.0);
}

#[test]
fn errors_are_reported_with_context() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().to_str().unwrap();
    let o = hjb(&["--out", dir, "report", "no/such/artifact.json"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing artifact"));
    let o = hjb(&["--out", dir, "verify", "--suite", "nonsense"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown suite"));

    let bad = out.path().join("bad.json");
    std::fs::write(&bad, r#"{"model":{"preset":"heat","L":1,"N":2,"noise":{"rule":"white","sigma2":1}},"hamiltonian":{"q":3},"terminal":{"family":"constant","c":0}}"#).unwrap();
    let o = hjb(&["--config", bad.to_str().unwrap(), "--out", dir, "model"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("hamiltonian"));
}
