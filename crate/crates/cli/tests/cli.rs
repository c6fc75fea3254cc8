use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

fn ugnn(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ugnn"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .output()
        .unwrap()
}

const PAIR: &str = r#""pairs": [{"synthetic": {"nodes": 30, "feature_dim": 4, "seed": 1}}]"#;

#[test]
fn unknown_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{{{PAIR}, \"bogus\": 1}}"));
    let out = ugnn(&["theorem-check"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"pairs": [{"source_dir": "/nonexistent/a", "target_dir": "/nonexistent/b"}]}"#,
    );
    let out = ugnn(&["train"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn injected_cascade_violation_exits_with_verification_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(r#"{{{PAIR}, "theorem": {{"trials": 2, "max_nodes": 10, "inject_violation": true}}}}"#),
    );
    let out = ugnn(&["theorem-check"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(dir.path().join("theorem_check.csv").exists());
}

#[test]
fn injected_gradient_fault_exits_with_verification_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(r#"{{{PAIR}, "gradcheck": {{"seeds": [0], "inject_fault": true}}}}"#),
    );
    let out = ugnn(&["gradcheck"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn clean_theorem_check_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(r#"{{{PAIR}, "theorem": {{"trials": 3, "max_nodes": 10}}}}"#),
    );
    let out = ugnn(&["theorem-check"], &cfg, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("theorem_check.csv")).unwrap();
    assert!(csv.lines().next().unwrap().ends_with("config_hash"));
}
