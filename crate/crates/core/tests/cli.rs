use std::path::Path;
use std::process::{Command, Output};

fn powinst(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_powinst"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn invalid_parameter_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = powinst(&["certify", "--schedule", "64,32"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("schedule"), "{err}");
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn malformed_config_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, "{\n  \"window\": 16,\n  \"epsilon\": oops\n}").unwrap();
    let out = powinst(&["analyze", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn missing_config_file_exits_with_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = powinst(&["analyze", "--config", missing.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn csv_format_writes_only_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let out = powinst(
        &["certify", "--format", "csv", "--window", "16", "--schedule", "16,32,64", "--no-timestamp"],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(!dir.path().join("report.json").exists());
    let growth = std::fs::read_to_string(dir.path().join("growth.csv")).unwrap();
    assert!(growth.starts_with("m,n,g\n"));
    assert_eq!(growth.lines().count(), 1 + 17 * 18 / 2);
    assert!(dir.path().join("evidence.csv").exists());
}

#[test]
fn system_file_and_config_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("sys.json");
    std::fs::write(&sys, r#"{"kind": "explicit", "coeffs": [[[2.0, 1.0], [0.0, 3.0]], [[1.0, 0.0], [1.0, 2.0]]], "extension": "periodic"}"#).unwrap();
    let out = powinst(
        &["analyze", "--system-file", sys.to_str().unwrap(), "--window", "16", "--schedule", "16,32,48", "--no-timestamp"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["system"]["kind"], "dense");

    // rerunning from the embedded configuration reproduces the report
    let cfg = dir.path().join("embedded.json");
    std::fs::write(&cfg, serde_json::to_string(&report["config"]).unwrap()).unwrap();
    let out = powinst(&["analyze", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    assert_eq!(read_json(&dir.path().join("report.json")), report);
}

#[test]
fn sweep_refuses_bisection_without_a_sign_change() {
    let dir = tempfile::tempdir().unwrap();
    let out = powinst(
        &["sweep", "--param", "c", "--concept", "PIS", "--bisect", "1.5,3.0,0.1", "--no-timestamp"],
        dir.path(),
    );
    assert!(out.status.success());
    let sweep = &read_json(&dir.path().join("report.json"))["sweep"];
    assert!(sweep["boundary"].is_null());
    assert!(sweep["bisection_refused"].is_string());
}
