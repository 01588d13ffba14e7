use std::process::{Command, Output};

use serde_json::Value;

fn flowlab(dir: &std::path::Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = flowlab(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("density"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(flowlab(dir.path(), &["density", "--bogus"]).status.code(), Some(1));
    assert_eq!(flowlab(dir.path(), &["density", "--field", "no-such-field"]).status.code(), Some(1));
    assert_eq!(flowlab(dir.path(), &["flow", "--tau", "-1"]).status.code(), Some(1));
    std::fs::write(dir.path().join("bad.json"), r#"{"tol": 1e-8, "mystery": 3}"#).unwrap();
    assert_eq!(flowlab(dir.path(), &["norms", "--config", "bad.json"]).status.code(), Some(1));
}

#[test]
fn blown_up_particles_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = flowlab(
        dir.path(),
        &["flow", "--field", "blowup", "--tol", "1e-3", "--particles", "10", "--seed-points", "1e6;1e7", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(2));
    // outputs are still written for inspection
    assert!(dir.path().join("o/flow.jsonl").exists());
}

#[test]
fn density_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = flowlab(
        dir.path(),
        &["density", "--field", "linear-contraction", "--tau", "0.5", "--alpha", "0.5", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("o/density.jsonl")).unwrap();
    let records: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records[0]["config"]["experiment"], "density");
    let by = |q: &'static str| records.iter().filter(move |r| r["quantity"] == q);
    let mass = by("mass").next().unwrap()["value"].as_f64().unwrap();
    assert!((mass - 1.0).abs() < 1e-8, "mass {mass}");
    // E[K^p] = e^{pτ} / sqrt(1 + p(e^{2τ} - 1)) for the contraction
    let tau: f64 = 0.5;
    let mut moments = 0;
    for r in by("lp_moment") {
        let p = r["param"].as_f64().unwrap();
        let closed = (p * tau).exp() / (1.0 + p * ((2.0 * tau).exp() - 1.0)).sqrt();
        let got = r["value"].as_f64().unwrap();
        assert!((got - closed).abs() < 1e-6 * closed, "p={p}: {got} vs {closed}");
        moments += 1;
    }
    assert_eq!(moments, 2);
    let csv = std::fs::read_to_string(dir.path().join("o/density.csv")).unwrap();
    assert!(csv.starts_with("# config="));
}

#[test]
fn config_file_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"experiment": "norms", "field": {"name": "zero", "dim": 1}, "out": "from-file"}"#;
    std::fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let out = flowlab(dir.path(), &["norms", "--config", "cfg.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("from-file/norms.jsonl")).unwrap();
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["config"]["field"]["name"], "zero");
}
