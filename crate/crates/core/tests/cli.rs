//! End-to-end runs of the `sgdreg` binary.

use std::path::Path;
use std::process::{Command, Output};

fn sgdreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgdreg")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn theory_prints_the_n_asymptote() {
    let out = ok(&sgdreg(&["theory", "--chi", "1", "--lambda", "100", "--r", "0"]));
    let mut lines = out.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let n = row[header.iter().position(|h| *h == "n").unwrap()];
    assert!((n * 1e4 / 0.25 - 1.0).abs() < 0.02, "n lambda^2 = {}", n * 1e4);
}

#[test]
fn theory_grid_is_a_product() {
    let out = ok(&sgdreg(&["theory", "--chi", "0", "--lambda", "0,1,2", "--r", "0,0.5"]));
    assert_eq!(out.lines().count(), 1 + 6);
}

#[test]
fn errors_map_to_exit_codes() {
    let unknown = sgdreg(&["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("error kind=usage"));

    let bad_chi = sgdreg(&["theory", "--chi", "-2", "--lambda", "1", "--r", "0"]);
    assert_eq!(bad_chi.status.code(), Some(1));

    let both = sgdreg(&["train", "--temperature", "2", "--eta", "16", "--batch", "8", "--max-steps", "1"]);
    assert_eq!(both.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let missing = sgdreg(&["fit", "--dir", p(&dir.path().join("nothing")), "--analysis", "auto"]);
    assert_eq!(missing.status.code(), Some(3));

    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"base": {"chi": 1.0, "d": 8, "p": 64, "kappa": 0.1, "eta": 1.0, "batch": 4},
            "axes": {"batch": [1, 2, 4, 8]}, "seeds_per_cell": 5, "budget": {"max_runs": 10}}"#,
    )
    .unwrap();
    let over = sgdreg(&["sweep", "--spec", p(&spec), "--out", p(&dir.path().join("s"))]);
    assert_eq!(over.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&over.stderr).contains("kind=budget"));
}

#[test]
fn train_writes_record_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(&sgdreg(&[
        "train", "--chi", "1", "--d", "16", "--p", "256", "--kappa", "0.05", "--eta", "2", "--batch", "4",
        "--max-steps", "5000", "--seed", "3", "--out", p(&out),
    ]));
    let csv = std::fs::read_to_string(out.join("record.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    for col in ["step", "t", "w1", "w_perp_norm", "train_loss", "n_train", "test_error"] {
        assert!(header.split(',').any(|h| h == col), "missing {col} in {header}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["params"]["seed"], 3);
    assert_eq!(manifest["config"]["params"]["batch"], 4);

    let multi = dir.path().join("multi");
    ok(&sgdreg(&[
        "train", "--chi", "1", "--d", "16", "--p", "256", "--kappa", "0.05", "--eta", "2", "--batch", "4",
        "--max-steps", "500", "--seeds", "2", "--out", p(&multi),
    ]));
    assert!(multi.join("seed_0/record.csv").exists() && multi.join("seed_1/record.csv").exists());
}

#[test]
fn sample_dump_round_trips_through_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    ok(&sgdreg(&["sample", "--chi", "0.5", "--d", "8", "--p", "100", "--seed", "4", "--out", p(&out)]));
    let file = out.join("dataset.bin");
    let data = sgdreg::io::read_dataset(&file).unwrap();
    let direct = sgdreg::Dataset::generate(sgdreg::DataDistribution::new(0.5, 8).unwrap(), 100, 4).unwrap();
    assert_eq!(data.rows(), direct.rows());
}

#[test]
fn ode_writes_trajectory_and_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ode");
    ok(&sgdreg(&[
        "ode", "--chi", "1", "--d", "128", "--p", "8192", "--temperature", "2", "--batch", "8", "--points", "50",
        "--out", p(&out),
    ]));
    let csv = std::fs::read_to_string(out.join("ode.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    let pred: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("prediction.json")).unwrap()).unwrap();
    assert!(pred["t_hat"].as_f64().unwrap() > 0.0);
}

#[test]
fn interrupted_sweep_resumes_to_the_same_result() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"base": {"chi": 1.0, "d": 16, "p": 256, "kappa": 0.05, "eta": 1.0, "batch": 4, "max_steps": 20000},
            "axes": {"temperature": [0.25, 0.5, 1.0]}, "seeds_per_cell": 3, "master_seed": 9}"#,
    )
    .unwrap();
    let full = dir.path().join("full");
    ok(&sgdreg(&["sweep", "--spec", p(&spec), "--out", p(&full)]));

    // drop the aggregate and a third of the per-job results, then rerun
    let partial = dir.path().join("partial");
    ok(&sgdreg(&["sweep", "--spec", p(&spec), "--out", p(&partial)]));
    std::fs::remove_file(partial.join("cells.csv")).unwrap();
    let mut jobs: Vec<_> = std::fs::read_dir(partial.join("jobs")).unwrap().map(|e| e.unwrap().path()).collect();
    jobs.sort();
    for job in jobs.iter().step_by(3) {
        std::fs::remove_file(job).unwrap();
    }
    ok(&sgdreg(&["sweep", "--spec", p(&spec), "--out", p(&partial)]));
    assert_eq!(
        std::fs::read(full.join("cells.csv")).unwrap(),
        std::fs::read(partial.join("cells.csv")).unwrap()
    );

    let fit = ok(&sgdreg(&["fit", "--dir", p(&full), "--analysis", "auto"]));
    assert!(!fit.is_empty());
}
