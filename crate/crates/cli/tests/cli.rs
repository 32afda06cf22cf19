use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dyadic_core::GridFunction;

fn dyadic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyadic"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/v.json")
        .display()
        .to_string()
}

fn read_grid(path: &Path) -> GridFunction {
    GridFunction::from_json(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn split_writes_pieces_and_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let run = dyadic(&[
        "decompose",
        "--method",
        "split",
        "--input",
        &fixture(),
        "--n",
        "3",
        "--out-dir",
        &out,
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let v = read_grid(Path::new(&fixture()));
    let g = read_grid(&dir.path().join("g.json"));
    let h = read_grid(&dir.path().join("h.json"));
    assert_eq!(g.add(&h).unwrap(), v);
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("cert.json")).unwrap()).unwrap();
    assert_eq!(cert["version"], "1");
    assert_eq!(cert["reconstructs"], true);
    assert!(cert["constants"]["length_ratio"].as_f64().unwrap() <= 0.5);
    assert!(
        cert["constants"]["thickness_product_ratio"]
            .as_f64()
            .unwrap()
            <= 8.0 * (1.0 + 1e-9)
    );
}

#[test]
fn content_reports_value() {
    let run = dyadic(&[
        "content",
        "--op",
        "length",
        "--input",
        &fixture(),
        "--n",
        "3",
    ]);
    assert!(run.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(doc["version"], "1");
    assert_eq!(doc["value"].as_f64().unwrap(), 0.75);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(dyadic(&["--bogus"]).status.code(), Some(1));
    assert_eq!(dyadic(&[]).status.code(), Some(1));
    assert_eq!(
        dyadic(&["content", "--op", "volume", "--input", "x", "--n", "1"])
            .status
            .code(),
        Some(1)
    );
    let missing = dyadic(&[
        "content",
        "--op",
        "length",
        "--input",
        "/nonexistent.json",
        "--n",
        "1",
    ]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent.json"));
    assert_eq!(dyadic(&["selftest", "--only", "99"]).status.code(), Some(1));
    assert_eq!(dyadic(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"k_range": [2, 0]}"#).unwrap();
    let run = dyadic(&[
        "harness",
        "--suite",
        "weaktype",
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("k_range"));
}

#[test]
fn harness_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"resolution": 5, "k_range": [-2, 0], "js": [0, 2, 4], "samples": 40}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for (i, workers) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        for suite in ["weaktype", "convergence"] {
            let run = dyadic(&[
                "--workers",
                workers,
                "harness",
                "--suite",
                suite,
                "--config",
                cfg.to_str().unwrap(),
                "--out-dir",
                out.to_str().unwrap(),
            ]);
            assert!(
                run.status.success(),
                "{}",
                String::from_utf8_lossy(&run.stderr)
            );
        }
        outputs.push(
            ["weaktype.csv", "convergence.csv", "summary.json"]
                .map(|f| fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn operator_writes_field_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("field.json");
    let diag = dir.path().join("diag.csv");
    let run = dyadic(&[
        "op",
        "--kind",
        "maximal",
        "--input",
        &fixture(),
        "--krange",
        "0:0",
        "--out",
        field.to_str().unwrap(),
        "--diagnostics",
        diag.to_str().unwrap(),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&field).unwrap()).unwrap();
    let m: GridFunction = serde_json::from_value(doc["field"].clone()).unwrap();
    assert!(m.is_nonnegative() && !m.is_zero());
    let csv = fs::read_to_string(&diag).unwrap();
    assert!(csv.starts_with("version,k,"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn selftest_subset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("st.json");
    let run = dyadic(&[
        "selftest",
        "--only",
        "2,7",
        "--json",
        json.to_str().unwrap(),
    ]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stdout)
    );
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.contains("[PASS]  2") && stdout.contains("[PASS]  7"));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(doc["results"].as_array().unwrap().len(), 2);
}

#[test]
fn stopping_reads_tagged_pieces() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("pieces.json");
    fs::write(
        &input,
        r#"[{"scale": 0, "b": {"dimension": 1, "root": {"level": -1, "coords": [0]}, "resolution": 1,
             "cells": [[[0], 1.0], [[1], -1.0]]}}]"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = dyadic(&[
        "decompose",
        "--method",
        "stopping",
        "--input",
        input.to_str().unwrap(),
        "--n",
        "1",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let cert: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("cert.json")).unwrap()).unwrap();
    assert!(cert["max_length_ratio"].as_f64().unwrap() <= 1.0);
    assert!(cert["max_thickness_ratio"].as_f64().unwrap() <= 1.0);
}
