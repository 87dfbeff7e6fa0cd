//! End-to-end tests of the `exitprob` binary.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_exitprob"))
}

const SPEC: &str = r#"
name = "cli-test"

[model]
kind = "linear"
c = 1.0
sigma_bar = 1.0

[domain]
kind = "two-sided"
a1 = -1.0
a2 = 1.0

[scheme]
kind = "mollified-linear"
m = 4.0
xhat = 1.0

[grid]
eps = [0.2, 0.13]
horizons = [1.0, 2.5]
n = 2000
dt = 1e-3
seed = 20260824
"#;

fn write_spec(dir: &Path, contents: &str) -> std::path::PathBuf {
    let path = dir.join("spec.toml");
    std::fs::write(&path, contents).unwrap();
    path
}

#[test]
fn estimate_prints_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    let out = bin()
        .args(["estimate", "--spec"])
        .arg(&spec)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("estimate"));
    assert!(text.contains("rel error"));
}

#[test]
fn table_writes_all_artifacts_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    let out_dir = dir.path().join("out");
    let out = bin()
        .args(["table", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["estimates.csv", "rel_errors.csv", "cells.csv", "manifest.json"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }

    // The long CSV parses and its estimates match the table CSV exactly.
    let mut rdr = csv::Reader::from_path(out_dir.join("cells.csv")).unwrap();
    let mut long: Vec<(f64, f64, f64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        long.push((
            rec[0].parse().unwrap(),
            rec[1].parse().unwrap(),
            rec[4].parse().unwrap(),
        ));
    }
    assert_eq!(long.len(), 4);
    let table = std::fs::read_to_string(out_dir.join("estimates.csv")).unwrap();
    let mut lines = table.lines();
    let horizons: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .skip(1)
        .map(|s| s.parse().unwrap())
        .collect();
    let mut k = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let eps: f64 = fields[0].parse().unwrap();
        for (j, f) in fields[1..].iter().enumerate() {
            let est: f64 = f.parse().unwrap();
            assert_eq!((eps, horizons[j], est), long[k]);
            k += 1;
        }
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["effective"]["seed"], 20260824);
    assert_eq!(manifest["cells"].as_array().unwrap().len(), 4);
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SPEC);
    let run = |seed: &str| {
        let out_dir = dir.path().join(format!("out-{seed}"));
        let out = bin()
            .args(["table", "--spec"])
            .arg(&spec)
            .arg("--out")
            .arg(&out_dir)
            .args(["--seed", seed])
            .output()
            .unwrap();
        assert!(out.status.success());
        std::fs::read_to_string(out_dir.join("estimates.csv")).unwrap()
    };
    let a = run("1");
    let b = run("1");
    let c = run("2");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn bad_specs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    // Unparseable TOML.
    let broken = write_spec(dir.path(), "this is not toml [");
    let out = bin()
        .args(["table", "--spec"])
        .arg(&broken)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    // Valid TOML, empty horizon list.
    let empty = dir.path().join("empty.toml");
    std::fs::write(&empty, SPEC.replace("horizons = [1.0, 2.5]", "horizons = []")).unwrap();
    let out = bin()
        .args(["estimate", "--spec"])
        .arg(&empty)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    // Missing file.
    let out = bin()
        .args(["estimate", "--spec", "/nonexistent/spec.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_passes_on_reference_config() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(
        dir.path(),
        &SPEC
            .replace("eps = [0.2, 0.13]", "eps = [0.1]")
            .replace("horizons = [1.0, 2.5]", "horizons = [5.0]"),
    );
    let out = bin()
        .args(["verify", "--spec"])
        .arg(&spec)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("certification: PASS"), "{text}");
}

#[test]
fn selfcheck_passes() {
    let out = bin().arg("selfcheck").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches("pass").count(), 3, "{text}");
}
