use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use nalgebra::{DMatrix, DVector};
use serde_json::Value;
use tempfile::TempDir;

use tpca::calibrate::GaussianSource;
use tpca::corrcore::CorrelationMatrix;
use tpca::rng::seeded;

fn tpca() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tpca"));
    c.env_remove("TPCA_THREADS");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    tpca().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_csv(path: &Path, data: &DMatrix<f64>, header: bool) {
    let mut text = String::new();
    if header {
        let names: Vec<String> = (0..data.ncols()).map(|j| format!("s{j}")).collect();
        text.push_str(&names.join(","));
        text.push('\n');
    }
    for r in 0..data.nrows() {
        let row: Vec<String> = data.row(r).iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn gaussian(corr: &CorrelationMatrix, rows: usize, seed: u64) -> DMatrix<f64> {
    let src = GaussianSource::new(DVector::zeros(corr.dim()), corr.matrix()).unwrap();
    src.sample(rows, &mut seeded(seed))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().expect("error line")).expect("JSON error line")
}

/// Training set, selection and calibration for a `dim`-stream problem.
struct Fixture {
    dir: TempDir,
    corr: CorrelationMatrix,
}

impl Fixture {
    fn new(dim: usize) -> Self {
        let dir = TempDir::new().unwrap();
        let corr = CorrelationMatrix::equicorrelation(dim, 0.5).unwrap();
        write_csv(&dir.path().join("train.csv"), &gaussian(&corr, 200, 1), true);
        Self { dir, corr }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        run(self.dir.path(), args)
    }

    fn tailor(&self) {
        let out = self.run(&["tailor", "--training", "train.csv", "--draws", "2000", "-o", "sel.json"]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }

    fn calibrate(&self) {
        self.tailor();
        let out = self.run(&[
            "calibrate", "--training", "train.csv", "--selection", "sel.json", "--alpha", "0.05", "-n", "50",
            "--replicates", "500", "-o", "cal.json",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn tailor_reruns_are_byte_identical() {
    let f = Fixture::new(4);
    f.tailor();
    let first = fs::read(f.path("sel.json")).unwrap();
    f.tailor();
    assert_eq!(first, fs::read(f.path("sel.json")).unwrap());
    let doc = read_json(&f.path("sel.json"));
    assert_eq!(doc["schema"], "tpca.selection/1");
    assert_eq!(doc["config"]["cutoff"], 0.9);
    assert_eq!(doc["config"]["draws"], 2000);
    assert!(doc["version"].is_string());
}

#[test]
fn zero_cutoff_selects_one_axis() {
    let f = Fixture::new(4);
    let out = f.run(&["tailor", "--training", "train.csv", "--cutoff", "0", "--draws", "500", "-o", "sel.json"]);
    assert_eq!(code(&out), 0);
    assert_eq!(read_json(&f.path("sel.json"))["selection"]["axes"].as_array().unwrap().len(), 1);
}

#[test]
fn mean_only_tailoring_picks_least_varying_axis() {
    let f = Fixture::new(2);
    fs::write(f.path("spec.json"), r#"{"schema": "tpca.change_spec/1", "type_probs": [1, 0, 0]}"#).unwrap();
    let out = f.run(&["tailor", "--training", "train.csv", "--change-spec", "spec.json", "-o", "sel.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&f.path("sel.json"));
    let probs = doc["selection"]["argmax_probs"].as_array().unwrap();
    assert!(probs[1].as_f64().unwrap() > 0.99);
    assert_eq!(doc["selection"]["axes"][0]["index"], 1);
}

#[test]
fn too_few_replicates_are_rejected() {
    let f = Fixture::new(3);
    f.tailor();
    let out = f.run(&[
        "calibrate", "--training", "train.csv", "--selection", "sel.json", "--alpha", "0.01", "--replicates", "100",
    ]);
    assert_eq!(code(&out), 2);
    let err = stderr_line(&out);
    assert_eq!(err["exit_code"], 2);
    assert!(err["message"].as_str().unwrap().contains("5"), "{err}");
}

#[test]
fn uncertifiable_alpha_exits_four() {
    let f = Fixture::new(3);
    f.tailor();
    let out = f.run(&[
        "calibrate", "--training", "train.csv", "--selection", "sel.json", "--alpha", "0.01", "--replicates", "500",
        "--confidence", "0.999", "-n", "20",
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn block_mode_records_default_block_length() {
    let f = Fixture::new(3);
    f.tailor();
    let out = f.run(&[
        "calibrate", "--training", "train.csv", "--selection", "sel.json", "--alpha", "0.05", "-n", "30",
        "--replicates", "200", "--mode", "block", "-o", "cal.json",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&f.path("cal.json"));
    assert_eq!(doc["result"]["config"]["block_len"], 25);
    assert_eq!(doc["result"]["config"]["mode"], "block_bootstrap");
}

#[test]
fn constant_stream_at_training_mean_never_alarms() {
    let f = Fixture::new(3);
    f.calibrate();
    let train = read_json(&f.path("sel.json"));
    let mean: Vec<String> = train["model"]["mean"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| format!("{:?}", v.as_f64().unwrap()))
        .collect();
    let rows = vec![mean.join(","); 60].join("\n");
    fs::write(f.path("const.csv"), rows + "\n").unwrap();
    let out = f.run(&["monitor", "--stream", "const.csv", "--selection", "sel.json", "--calibration", "cal.json"]);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["schema"], "tpca.alarms/1");
    let summary = &lines.last().unwrap()["summary"];
    assert_eq!(summary["steps"], 60);
    assert!(summary["first_alarm"].is_null());
    assert!(summary["warnings"].as_u64().unwrap() > 0);
}

#[test]
fn large_shift_alarms_quickly_and_replays_identically() {
    let f = Fixture::new(10);
    f.calibrate();
    let mut stream = gaussian(&f.corr, 80, 7);
    for r in 40..80 {
        stream[(r, 3)] += 5.0;
    }
    write_csv(&f.path("stream.csv"), &stream, false);
    let args = ["monitor", "--stream", "stream.csv", "--selection", "sel.json", "--calibration", "cal.json"];
    let out = f.run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let summary: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    let first = summary["summary"]["first_alarm"].as_u64().expect("an alarm");
    assert!((41..=45).contains(&first), "first alarm at {first}");
    assert_eq!(f.run(&args).stdout, out.stdout);

    let piped = tpca()
        .current_dir(f.dir.path())
        .args(["monitor", "--selection", "sel.json", "--calibration", "cal.json"])
        .stdin(Stdio::from(fs::File::open(f.path("stream.csv")).unwrap()))
        .output()
        .unwrap();
    assert_eq!(code(&piped), 0);
    let piped_text = String::from_utf8(piped.stdout).unwrap();
    assert_eq!(piped_text.lines().skip(1).collect::<Vec<_>>(), text.lines().skip(1).collect::<Vec<_>>());
}

#[test]
fn dimension_mismatch_is_an_input_error() {
    let f = Fixture::new(3);
    f.calibrate();
    fs::write(f.path("bad.csv"), "0.1,0.2\n0.3,0.4\n").unwrap();
    let out = f.run(&["monitor", "--stream", "bad.csv", "--selection", "sel.json", "--calibration", "cal.json"]);
    assert_eq!(code(&out), 2);
    assert_eq!(stderr_line(&out)["kind"], "input");
}

#[test]
fn missing_values_are_input_errors() {
    let f = Fixture::new(3);
    fs::write(f.path("holes.csv"), "a,b,c\n1,2,3\n4,,6\n").unwrap();
    let out = f.run(&["tailor", "--training", "holes.csv"]);
    assert_eq!(code(&out), 2);
    assert!(stderr_line(&out)["message"].as_str().unwrap().contains("line 3"));
}

const H0_GRID: &str = r#"{
  "schema": "tpca.grid/1", "seed": 5, "dim": 4, "m": 60, "alpha_d": 1.0, "n": 30, "window": 50,
  "replicates": 100, "threshold": "inf",
  "detectors": [{"kind": "max_pca", "count": 2}, {"kind": "raw_mixture", "p0": 0.5}],
  "cells": [{"change_type": null}]
}"#;

#[test]
fn infinite_threshold_gives_zero_false_alarms() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("grid.json"), H0_GRID).unwrap();
    let out = run(dir.path(), &["simulate", "--grid", "grid.json", "-o", "res.csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("res.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let pfa = headers.iter().position(|h| h == "pfa").unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[pfa].parse::<f64>().unwrap() == 0.0));
    let manifest = read_json(&dir.path().join("res.csv.manifest.json"));
    assert_eq!(manifest["schema"], "tpca.simulation/1");
    assert_eq!(manifest["config"]["replicates"], 100);

    let first = fs::read(dir.path().join("res.csv")).unwrap();
    let again = run(dir.path(), &["simulate", "--grid", "grid.json", "-o", "res2.csv"]);
    assert_eq!(code(&again), 0);
    assert_eq!(first, fs::read(dir.path().join("res2.csv")).unwrap());
}

#[test]
fn unknown_grid_fields_are_rejected() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("grid.json"), r#"{"replicate": 10}"#).unwrap();
    let out = run(dir.path(), &["simulate", "--grid", "grid.json"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn props_exclude_the_one_variance_boundary() {
    let dir = TempDir::new().unwrap();
    let rho = format!("{:?}", 3f64.sqrt() / 2.0);
    let out = run(dir.path(), &["verify-props", "--rho", &rho, "--rho", &format!("-{rho}"), "-o", "props.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&dir.path().join("props.json"));
    assert_eq!(doc["report"]["total_violations"], 0);
    let checks = doc["report"]["checks"].as_array().unwrap();
    let one = checks.iter().find(|c| c["name"] == "one_variance").unwrap();
    let boundary = 3f64.sqrt() / 2.0;
    let excluded = one["excluded_points"].as_array().unwrap();
    assert!(excluded
        .iter()
        .any(|p| (p["rho"].as_f64().unwrap().abs() - boundary).abs() < 1e-12));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("grid.json"), H0_GRID.replace("\"inf\"", "\"calibrate\"")).unwrap();
    let one = tpca()
        .current_dir(dir.path())
        .args(["--threads", "1", "simulate", "--grid", "grid.json", "-o", "a.csv"])
        .output()
        .unwrap();
    assert_eq!(code(&one), 0, "{}", String::from_utf8_lossy(&one.stderr));
    let two = tpca()
        .current_dir(dir.path())
        .args(["--threads", "3", "simulate", "--grid", "grid.json", "-o", "b.csv"])
        .output()
        .unwrap();
    assert_eq!(code(&two), 0);
    assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());
}
