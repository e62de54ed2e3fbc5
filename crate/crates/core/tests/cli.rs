//! The `quicfed` binary: output files, exit codes and reproducibility.

use std::path::Path;
use std::process::{Command, Output};

use quicfed::traffic::{read_features_file, FEATURE_NAMES};

fn quicfed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quicfed"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn extract_writes_the_feature_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    assert!(quicfed(&["synth", "--duration", "60", "--seed", "4", "--out", out]).status.success());
    let trace = dir.path().join("trace.csv");
    let run = quicfed(&["extract", "--trace", path(&trace), "--out", out]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let csv = std::fs::read_to_string(dir.path().join("features.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, format!("{},label_quic,label_service", FEATURE_NAMES.join(",")));
    let rows = read_features_file(dir.path().join("features.csv")).unwrap();
    assert!(!rows.is_empty() && rows.len() <= 60);

    // extracting the synthetic trace directly gives the same rows
    let direct = tempfile::tempdir().unwrap();
    let run = quicfed(&["extract", "--set", "duration=60", "--seed", "4", "--out", path(direct.path())]);
    assert!(run.status.success());
    assert_eq!(read_features_file(direct.path().join("features.csv")).unwrap(), rows);
}

#[test]
fn input_and_usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path());
    let run = quicfed(&["extract", "--trace", "/missing/trace.csv", "--out", out]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("/missing/trace.csv"));

    assert_eq!(quicfed(&["select", "--methods", "lasso", "--out", out]).status.code(), Some(2));
    assert_eq!(quicfed(&["select", "--k", "10", "--out", out]).status.code(), Some(2));
    assert_eq!(quicfed(&["federate", "--mode", "XR", "--out", out]).status.code(), Some(2));
    assert_eq!(quicfed(&["nonsense"]).status.code(), Some(2));
    // no command may leave output behind on failure
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn select_reports_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let run = quicfed(&["select", "--set", "duration=1500", "--set", "epochs=10", "--out", path(dir.path())]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let table = std::fs::read_to_string(dir.path().join("rmse.csv")).unwrap();
    let methods: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["all", "ce", "mrmr", "cmim", "disr", "anova"]);
    for line in table.lines().skip(1).filter(|l| !l.starts_with("ce,")) {
        let n: usize = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(n == 5 || line.starts_with("all,"));
    }
    let selection = std::fs::read_to_string(dir.path().join("selection.csv")).unwrap();
    assert_eq!(selection.lines().count(), 1 + 5 * FEATURE_NAMES.len());
}

#[test]
fn federate_writes_reports_and_is_reproducible() {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &runs {
        for mode in ["CR", "RFR"] {
            let run = quicfed(&[
                "federate",
                "--mode",
                mode,
                "--gateways",
                "3",
                "--seed",
                "2",
                "--set",
                "duration=900",
                "--out",
                path(dir.path()),
            ]);
            assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
            assert!(String::from_utf8_lossy(&run.stdout).starts_with(&format!("mode={mode} ")));
        }
    }
    let cr: serde_json::Value =
        serde_json::from_slice(&std::fs::read(runs[0].path().join("report_cr.json")).unwrap()).unwrap();
    assert_eq!(cr["rounds"].as_array().unwrap().len(), 1);
    let rfr: serde_json::Value =
        serde_json::from_slice(&std::fs::read(runs[0].path().join("report_rfr.json")).unwrap()).unwrap();
    assert!(rfr["totals"]["traffic_mb"]["federation"].as_f64().unwrap() > 0.0);
    assert!(rfr["totals"]["traffic_mb"]["feature_selection"].as_f64().unwrap() > 0.0);
    for name in ["report_cr.json", "rounds_cr.csv", "report_rfr.json", "rounds_rfr.csv"] {
        let a = std::fs::read(runs[0].path().join(name)).unwrap();
        let b = std::fs::read(runs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}
