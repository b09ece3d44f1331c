//! The `rcm-lab` binary: subcommands, determinism and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn rcm_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcm-lab"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const ONDIAG: &str = r#"{
  "experiment": "ondiag",
  "lattice": {"d": 2, "side": 12},
  "law": {"kind": "uniform_elliptic", "c": 2.0},
  "times": {"log": {"start": 0.5, "end": 8.0, "points": 8}},
  "ensemble": {"n_env": 3},
  "seed": 1
}"#;

#[test]
fn run_is_reproducible_and_summarizable() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), ONDIAG);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let out = rcm_lab(&[
            "run",
            &config,
            "--out",
            dir.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let csv_a = std::fs::read(a.join("ondiag.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("ondiag.csv")).unwrap());

    let other = tmp.path().join("c");
    let out = rcm_lab(&[
        "run",
        &config,
        "--out",
        other.to_str().unwrap(),
        "--seed",
        "2",
    ]);
    assert!(out.status.success());
    assert_ne!(csv_a, std::fs::read(other.join("ondiag.csv")).unwrap());

    let csv = a.join("ondiag.csv");
    let out = rcm_lab(&["fit", csv.to_str().unwrap(), "--window", "1:8"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let fit: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(fit["slope"].as_f64().unwrap() < 0.0);

    let out = rcm_lab(&["summarize", tmp.path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("ondiag"), "{text}");
}

#[test]
fn bad_configs_exit_with_status_2() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = write_config(tmp.path(), &ONDIAG.replace("ondiag", "no-such-experiment"));
    assert_eq!(rcm_lab(&["run", &unknown]).status.code(), Some(2));
    let invalid = write_config(tmp.path(), &ONDIAG.replace("\"c\": 2.0", "\"c\": 0.5"));
    let out = rcm_lab(&[
        "run",
        &invalid,
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(
        rcm_lab(&["fit", "missing.csv", "--window", "oops"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn resource_limits_exit_with_status_3() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        r#"{"experiment": "ondiag", "lattice": {"d": 1, "side": 4},
            "law": {"kind": "uniform_elliptic", "c": 1.0},
            "times": {"values": [1e8]}, "seed": 0}"#,
    );
    let out = rcm_lab(&[
        "run",
        &config,
        "--out",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn missing_files_are_runtime_errors() {
    let out = rcm_lab(&["run", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(1));
}
