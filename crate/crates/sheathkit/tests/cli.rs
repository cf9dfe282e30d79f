use std::path::PathBuf;
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sheathkit"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn stationary_reports_and_writes_profile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("stationary.toml");
    let out = run(&["stationary", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let k = v["bohm_integral"].as_f64().unwrap();
    assert!(k > 0.0 && k < 1.0);
    assert!(dir.path().join("stationary.csv").exists());
}

#[test]
fn missing_config_is_a_config_error() {
    let out = run(&["stationary", "--config", "/nonexistent/sheath.toml"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(configs().join("stationary.toml")).unwrap() + "\n[extra]\nvalue = 1\n";
    std::fs::write(&path, text).unwrap();
    let out = run(&["stationary", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unsolvable_sheath_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bohm.toml");
    let text = std::fs::read_to_string(configs().join("stationary.toml"))
        .unwrap()
        .replace("u_infty = -2.0", "u_infty = -1.0");
    std::fs::write(&path, text).unwrap();
    let out = run(&["stationary", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Bohm"));
}

#[test]
fn select_constants_writes_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("select_constants.toml");
    let out = run(&[
        "select-constants",
        "--config",
        cfg.to_str().unwrap(),
        "--mode",
        "ii",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["u_infty"].as_f64(), Some(-8.0));
    assert!(v["margin"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("verdict.json").exists());
}

#[test]
fn select_constants_needs_epsilon() {
    let out = run(&[
        "select-constants",
        "--config",
        configs().join("stationary.toml").to_str().unwrap(),
        "--mode",
        "i",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn check_elliptic_holds_on_the_stationary_sheath() {
    let cfg = configs().join("stationary.toml");
    let out = run(&["check-elliptic", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["bounds"]["holds"].as_bool(), Some(true));
}
