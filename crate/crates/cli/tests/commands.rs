//! Runs the `drdetect` binary on small synthetic datasets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drdetect::dataio::{load_drset, save_drset, ImageSet};
use drdetect::numerics::RngStream;
use rand::Rng;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_drdetect"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin().current_dir(dir).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

/// Noisy stripe patterns, two classes, `channels × 4 × 4`.
fn stripes(n: usize, channels: usize, seed: u64) -> ImageSet {
    let mut rng = RngStream::new(seed, 0);
    let d = channels * 16;
    let mut pixels = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        for p in 0..d {
            let on = (p % 4 < 2) == (class == 0);
            let base = if on { 0.75 } else { 0.25 };
            pixels.push((base + rng.random_range(-0.25..0.25)) as f32);
        }
        labels.push(class);
    }
    ImageSet::new(channels, 4, 4, pixels, labels).unwrap()
}

/// A temp dir holding `real.drset`, `other.drset` (same distribution) and a
/// trained `model/model.drmlp`.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    save_drset(&stripes(200, 1, 1), &dir.path().join("real.drset")).unwrap();
    save_drset(&stripes(200, 1, 2), &dir.path().join("other.drset")).unwrap();
    let out = run(
        dir.path(),
        &[
            "train", "--data", "real.drset", "--classes", "2", "--hidden", "12", "--epochs", "20", "--lr", "0.3",
            "--batch-size", "16", "--out-dir", "model",
        ],
    );
    assert!(out.status.success());
    dir
}

#[test]
fn train_writes_model_and_metrics() {
    let ws = workspace();
    let m = json(ws.path().join("model/train_metrics.json"));
    assert_eq!(m["command"], "train");
    assert_eq!(m["config"]["seed"], 42);
    assert_eq!(m["dims"], serde_json::json!([16, 12, 2]));
    assert!(m["train_accuracy"].as_f64().unwrap() > 0.9);
    assert!(m["test_accuracy"].is_null());
    assert_eq!(m["loss_trace"].as_array().unwrap().len(), 20);
    assert_eq!(m["model_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn zero_epochs_keeps_initialization() {
    let ws = workspace();
    let args = |out: &'static str| {
        [
            "train", "--data", "real.drset", "--classes", "2", "--epochs", "0", "--seed", "9", "--out-dir", out,
        ]
    };
    assert!(run(ws.path(), &args("a")).status.success());
    assert!(run(ws.path(), &args("b")).status.success());
    let a = fs::read(ws.path().join("a/model.drmlp")).unwrap();
    assert_eq!(a, fs::read(ws.path().join("b/model.drmlp")).unwrap());
    assert_eq!(json(ws.path().join("a/train_metrics.json"))["loss_trace"], serde_json::json!([]));
}

#[test]
fn missing_inputs_exit_with_usage_code() {
    let ws = workspace();
    let out = run(ws.path(), &["train", "--data", "nope.drset"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot open"));

    let out = run(ws.path(), &["train", "--data", "mnist:no/such/dir"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fetch-mnist.sh"));

    let out = run(ws.path(), &["attack", "--data", "real.drset", "--method", "fgsm", "--epsilon", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn attack_validation_and_identity() {
    let ws = workspace();
    let model = "model/model.drmlp";
    let out = run(ws.path(), &["attack", "--model", model, "--data", "real.drset", "--method", "jsma"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--gamma"));

    let out = run(
        ws.path(),
        &["attack", "--model", model, "--data", "real.drset", "--method", "fgsm", "--epsilon", "0", "--out-dir", "e0"],
    );
    assert!(out.status.success());
    let adv = load_drset(&ws.path().join("e0/adversarial.drset")).unwrap();
    assert_eq!(adv, load_drset(&ws.path().join("real.drset")).unwrap());
    let meta = json(ws.path().join("e0/adversarial.json"));
    assert_eq!(meta["attack"]["method"], "fgsm");
    assert_eq!(meta["clean_accuracy"], meta["adversarial_accuracy"]);
    let model_json = json(ws.path().join("model/train_metrics.json"));
    assert_eq!(meta["model_sha256"], model_json["model_sha256"]);
}

#[test]
fn detect_reports_and_shape_checks() {
    let ws = workspace();
    let model = "model/model.drmlp";
    assert!(run(
        ws.path(),
        &["attack", "--model", model, "--data", "real.drset", "--method", "fgsm", "--epsilon", "0.3", "--out-dir", "f"],
    )
    .status
    .success());

    let common = ["--real", "real.drset", "--t", "20", "--m", "40", "--no-timestamp"];
    let out = run(ws.path(), &[&["detect", "--suspect", "f/adversarial.drset", "--out-dir", "adv"], &common[..]].concat());
    assert!(out.status.success());
    let rep = json(ws.path().join("adv/detect_report.json"));
    assert_eq!(rep["verdict"], "Adversarial");
    assert_eq!(rep["summary"], "single_channel");
    assert_eq!(rep["reports"][0]["r1_values"].as_array().unwrap().len(), 20);
    let csv = fs::read_to_string(ws.path().join("adv/detect_replicates.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("replicate,channel,r1,r2"));
    assert_eq!(csv.lines().count(), 21);

    let out = run(ws.path(), &[&["detect", "--suspect", "other.drset", "--out-dir", "null"], &common[..]].concat());
    assert!(out.status.success());
    assert_eq!(json(ws.path().join("null/detect_report.json"))["verdict"], "NotAdversarial");

    let out = run(
        ws.path(),
        &[&["detect", "--suspect", "f/adversarial.drset", "--m-suspect", "1", "--out-dir", "one"], &common[..]].concat(),
    );
    assert!(out.status.success());
    let one = json(ws.path().join("one/detect_report.json"));
    assert_eq!(one["reports"][0]["inflated_baseline"], true);
    assert!(String::from_utf8_lossy(&out.stdout).contains("inflated"));

    save_drset(&stripes(50, 3, 3), &ws.path().join("rgb.drset")).unwrap();
    let out = run(ws.path(), &["detect", "--real", "real.drset", "--suspect", "rgb.drset"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape mismatch"));
}

#[test]
fn three_channel_detection_combines_channels() {
    let dir = tempfile::tempdir().unwrap();
    save_drset(&stripes(120, 3, 4), &dir.path().join("a.drset")).unwrap();
    save_drset(&stripes(120, 3, 5), &dir.path().join("b.drset")).unwrap();
    let out = run(
        dir.path(),
        &["detect", "--real", "a.drset", "--suspect", "b.drset", "--t", "5", "--m", "30", "--combined"],
    );
    assert!(out.status.success());
    let rep = json(dir.path().join("out/detect_report.json"));
    assert_eq!(rep["channels"], 3);
    assert_eq!(rep["summary"], "combined");
    assert_eq!(rep["reports"].as_array().unwrap().len(), 3);
    let combined = rep["combined"]["r1_values"].as_array().unwrap();
    for (i, v) in combined.iter().enumerate() {
        let parts: Vec<f64> = (0..3)
            .map(|c| rep["reports"][c]["r1_values"][i].as_f64().unwrap())
            .collect();
        assert_eq!(v.as_f64().unwrap(), (parts[0] + parts[1] + parts[2]) / 3.0);
    }
    let csv = fs::read_to_string(dir.path().join("out/detect_replicates.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains(",combined,")).count(), 5);
}

#[test]
fn craft_single_iteration_and_infeasible() {
    let ws = workspace();
    let base = ["craft", "--model", "model/model.drmlp", "--data", "real.drset", "--t", "5", "--m", "40"];
    let out = run(ws.path(), &[&base[..], &["--tolerance", "1e6", "--out-dir", "c1"]].concat());
    assert!(out.status.success());
    let trace = json(ws.path().join("c1/craft_trace.json"));
    assert_eq!(trace["status"], "converged");
    assert_eq!(trace["iterations"], 1);
    assert!((trace["final_epsilon"].as_f64().unwrap() - 0.30).abs() < 1e-12);
    assert!(load_drset(&ws.path().join("c1/crafted.drset")).is_ok());

    let out = run(
        ws.path(),
        &[&base[..], &["--epsilon-init", "0.05", "--epsilon-step", "0.05", "--tolerance", "1e-9", "--out-dir", "c2"]].concat(),
    );
    assert_eq!(out.status.code(), Some(3));
    let trace = json(ws.path().join("c2/craft_trace.json"));
    assert_eq!(trace["status"], "no_feasible_epsilon");
    assert!(!ws.path().join("c2/crafted.drset").exists());
}

#[test]
fn synth_oracle_passes_and_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["synth", "--seeds", "5"]);
    assert!(out.status.success());
    let rep = json(dir.path().join("out/synth_report.json"));
    assert_eq!(rep["pass"], true);
    assert_eq!(rep["estimates"].as_array().unwrap().len(), 5);

    let out = run(dir.path(), &["synth", "--seeds", "5", "--dim", "8", "--shift", "0"]);
    assert!(out.status.success());

    let out = run(dir.path(), &["synth", "--seeds", "3", "--tolerance", "1e-9"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"n": 100, "seeds": 2, "seed": 5}"#).unwrap();
    let out = run(dir.path(), &["synth", "--config", "cfg.json", "--seeds", "3", "--no-timestamp"]);
    assert!(out.status.success());
    let rep = json(dir.path().join("out/synth_report.json"));
    assert_eq!(rep["config"]["n"], 100);
    assert_eq!(rep["config"]["seeds"], 3);
    assert_eq!(rep["config"]["seed"], 5);
    assert!(rep.get("timestamp_unix").is_none());

    let out = run(dir.path(), &["synth", "--config", "cfg.json", "--seed", "6", "--out-dir", "s6"]);
    assert!(out.status.success());
    let rep = json(dir.path().join("s6/synth_report.json"));
    assert_eq!(rep["config"]["seed"], 6);
    assert!(rep["timestamp_unix"].is_u64());

    fs::write(dir.path().join("bad.json"), r#"{"bogus": 1}"#).unwrap();
    let out = run(dir.path(), &["synth", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reports_are_identical_across_thread_counts() {
    let ws = workspace();
    let detect = |threads: &str, out: &str| {
        let args = [
            "detect", "--real", "real.drset", "--suspect", "other.drset", "--t", "8", "--m", "40", "--no-timestamp",
            "--threads", threads, "--out-dir", out,
        ];
        assert!(run(ws.path(), &args).status.success());
        (
            fs::read(ws.path().join(out).join("detect_report.json")).unwrap(),
            fs::read(ws.path().join(out).join("detect_replicates.csv")).unwrap(),
        )
    };
    let one = detect("1", "t1");
    assert_eq!(one, detect("3", "t3"));
    assert_eq!(one, detect("1", "again"));
}
