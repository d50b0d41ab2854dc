mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::fixture;

fn cvtmle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvtmle")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn estimate_prints_one_json_line_per_method() {
    let input = fixture("micro20.csv");
    let args = ["--mode", "estimate", "--input", input.to_str().unwrap(), "--seed", "5"];
    let first = cvtmle(&args);
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let text = String::from_utf8(first.stdout.clone()).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["method"], "tmle");
    assert_eq!(lines[1]["method"], "cvtmle_q");
    for l in &lines {
        assert_eq!(l["master_seed"], 5);
        assert_eq!(l["n"], 20);
        let ate = l["ate"].as_f64().unwrap();
        let ci = l["ci"].as_array().unwrap();
        assert!(ci[0].as_f64().unwrap() <= ate && ate <= ci[1].as_f64().unwrap());
        assert!(l["epsilon"]["epsilon0"].is_f64());
        assert!(l["diagnostics"]["q_weights"].is_array());
    }
    assert_eq!(cvtmle(&args).stdout, first.stdout);
}

#[test]
fn estimate_rejects_single_exposure_level() {
    let dir = tempfile::tempdir().unwrap();
    let rows: String = (0..20).map(|i| format!("{},1,{}\n", i as f64 * 0.1, i % 2)).collect();
    let input = write(dir.path(), "a1.csv", &format!("w1,a,y\n{rows}"));
    let o = cvtmle(&["--mode", "estimate", "--input", &input]);
    assert_eq!(code(&o), 3);
    assert!(o.stdout.is_empty());
}

#[test]
fn estimate_reports_malformed_row() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "bad.csv", "w1,a,y\n0.1,1,0\n0.2,0,1\n0.3,x,1\n");
    let o = cvtmle(&["--mode", "estimate", "--input", &input]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("row 3"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&cvtmle(&["--prevalence", "63"])), 2);
    assert_eq!(
        code(&cvtmle(&["--scenario", "n=200,prev=63,extrap=high", "--n-reps", "1"])),
        2
    );
    assert_eq!(code(&cvtmle(&["--mode", "bogus"])), 2);
    assert_eq!(code(&cvtmle(&["--mode", "estimate"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"n_reps": 2, "colour": "red"}"#);
    let o = cvtmle(&["--config", &cfg]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

fn reduced_run(out: &Path, workers: &str) -> Output {
    cvtmle(&[
        "--scenario",
        "n=200,prev=50,extrap=none",
        "--methods",
        "tmle,cvtmle_q",
        "--n-reps",
        "3",
        "--k-sl",
        "5",
        "--k-outer",
        "3",
        "--seed",
        "11",
        "--workers",
        workers,
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn simulate_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let runs = [("a", "1"), ("b", "1"), ("c", "4")];
    for (name, workers) in runs {
        let o = reduced_run(&dir.path().join(name), workers);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["reps.csv", "summary.json", "figure.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f} rerun");
        assert_eq!(a, std::fs::read(dir.path().join("c").join(f)).unwrap(), "{f} workers");
    }
    let reps = std::fs::read_to_string(dir.path().join("a").join("reps.csv")).unwrap();
    assert!(reps.starts_with("# master_seed=11\n"));
    assert_eq!(reps.lines().count(), 2 + 6);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a").join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["results"]["n200_p50_xnone"]["tmle"]["n_reps"], 3);
}

#[test]
fn unwritable_output_fails_before_computing() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = write(dir.path(), "file", "");
    let start = std::time::Instant::now();
    let o = cvtmle(&["--n-reps", "1000", "--out", &format!("{blocker}/sub")]);
    assert_ne!(code(&o), 0);
    assert!(start.elapsed().as_secs() < 5);
    assert!(!stderr(&o).contains("[1/"));
}

#[test]
fn diagnostics_mode_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = cvtmle(&[
        "--mode",
        "diagnostics",
        "--scenario",
        "n=200,prev=50,extrap=none;n=200,prev=50,extrap=high",
        "--n-reps",
        "20",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("ps_diagnostics.csv")).unwrap();
    // One cell (the two scenarios share n and prevalence), two exposure groups.
    assert_eq!(table.lines().count(), 1 + 1 + 2);
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 2);
}
