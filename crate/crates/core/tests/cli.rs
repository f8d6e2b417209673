use std::fs;
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hypoparam"))
}

#[test]
fn help_lists_every_subcommand() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["kolmogorov", "scaling", "uniqueness", "solve", "mollify", "centering"] {
        assert!(text.contains(sub), "{sub} missing:\n{text}");
    }
}

#[test]
fn unknown_subcommand_is_a_one_line_parse_error() {
    let out = bin().arg("integrate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.contains("integrate"));
}

#[test]
fn unknown_flag_is_rejected() {
    let out = bin().args(["centering", "--bogus", "3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn kolmogorov_origin_row_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["kolmogorov", "--alpha", "1", "--s", "1", "--paths", "200000", "--seed", "7", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("kolmogorov.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "closed_form_density").unwrap();
    let origin = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|r| r[2].parse::<f64>().unwrap() == 0.0 && r[3].parse::<f64>().unwrap() == 0.0)
        .expect("origin row");
    let v: f64 = origin[col].parse().unwrap();
    assert!((v - 3f64.sqrt() / std::f64::consts::PI).abs() < 1e-15, "{v}");

    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("kolmogorov.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["config"]["paths"], 200000);
    assert_eq!(summary["config"]["seed"], 7);
    assert_eq!(summary["pass"], true);
    assert!(summary["tolerances"]["kolmogorov.hist_l1"].is_number());
}

#[test]
fn tolerance_breach_exits_one_and_still_writes() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["centering", "--tol", "centering.residual=1e-12", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("centering.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pass"], false);
    assert_eq!(summary["tolerances"]["centering.residual"], 1e-12);
    assert!(dir.path().join("centering.csv").exists());
}

#[test]
fn experiment_error_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin().args(["uniqueness", "--levels", "1", "--out"]).arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("uniqueness.summary.json")).unwrap()).unwrap();
    assert!(summary["error"].as_str().unwrap().contains("two levels"));
}
