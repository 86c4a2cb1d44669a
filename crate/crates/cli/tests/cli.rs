//! End-to-end runs of the `deeprff` binary on tiny configurations.

use std::path::Path;
use std::process::{Command, Output};

fn deeprff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deeprff"))
        .args(args)
        .env_remove("DEEPRFF_SEED")
        .env_remove("DEEPRFF_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = deeprff(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TINY: [&str; 12] = [
    "--dim", "2", "--n-train", "120", "--n-test", "60", "--replicas", "2", "--iterations", "8", "--seed", "11",
];

fn tiny(cmd: &[&str], out: &Path) -> Vec<String> {
    let mut v: Vec<String> = cmd.iter().map(|s| s.to_string()).collect();
    v.extend(TINY.iter().map(|s| s.to_string()));
    v.push("--out".into());
    v.push(out.to_str().unwrap().into());
    v
}

fn run_tiny(cmd: &[&str], out: &Path) -> String {
    let args = tiny(cmd, out);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_tiny(&["train", "--method", "1", "--kl", "8", "--layers", "2", "--save-models"], &a);
    run_tiny(&["train", "--method", "1", "--kl", "8", "--layers", "2", "--save-models"], &b);
    for f in ["results.csv", "summary.csv", "manifest.json"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    let ra = std::fs::read(a.join("results.csv")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("results.csv")).unwrap());
    let text = String::from_utf8(ra).unwrap();
    assert_eq!(text.lines().next(), Some("method,d,K,L,KL,replica,seed,error"));
    assert_eq!(text.lines().count(), 3);
    assert!(a.join("models/method1_L2_KL8_r0.json").exists());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["kl"], 8);
    assert_eq!(manifest["config"]["seed"], 11);
    assert!(manifest["build"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
}

#[test]
fn saved_model_evaluates_to_its_test_error() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let data = dir.path().join("data");
    run_tiny(&["train", "--method", "1", "--kl", "6", "--save-models"], &run);
    run_tiny(&["data", "gen", "--replica", "1"], &data);

    let results = std::fs::read_to_string(run.join("results.csv")).unwrap();
    let row = results.lines().nth(2).unwrap();
    let want: f64 = row.rsplit(',').next().unwrap().parse().unwrap();

    let model = run.join("models/method1_L1_KL6_r1.json");
    let preds = dir.path().join("pred.csv");
    let stdout = ok(&[
        "eval",
        "--model",
        model.to_str().unwrap(),
        "--data",
        data.join("test.csv").to_str().unwrap(),
        "--predictions",
        preds.to_str().unwrap(),
    ]);
    let got: f64 = stdout.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((got - want).abs() <= 1e-6 * want, "eval {got} vs train {want}");
    assert_eq!(std::fs::read_to_string(preds).unwrap().lines().count(), 61);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"dim": 5, "kl": 4, "layers": 2, "seed": 99}"#).unwrap();
    let out = dir.path().join("o");
    run_tiny(&["train", "--config", cfg.to_str().unwrap(), "--kl", "6", "--layers", "1"], &out);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    // --dim and --seed from the flag list beat the file
    assert_eq!(manifest["config"]["dim"], 2);
    assert_eq!(manifest["config"]["seed"], 11);
    assert_eq!(manifest["config"]["kl"], 6);
}

#[test]
fn seed_comes_from_environment_when_not_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let status = Command::new(env!("CARGO_BIN_EXE_deeprff"))
        .args(["train", "--dim", "1", "--kl", "2", "--n-train", "20", "--n-test", "5"])
        .args(["--replicas", "1", "--iterations", "2", "--out", out.to_str().unwrap()])
        .env("DEEPRFF_SEED", "1234")
        .status()
        .unwrap();
    assert!(status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 1234);
}

#[test]
fn compare_writes_paired_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let stdout = run_tiny(&["compare", "--methods", "2,3", "--kl", "4", "--layers", "2", "--n-pre", "60", "--epochs", "2"], &out);
    assert!(stdout.contains("wins"));
    let paired = std::fs::read_to_string(out.join("paired.csv")).unwrap();
    assert_eq!(paired.lines().next(), Some("replica,seed,error_method2,error_method3,winner"));
    assert_eq!(paired.lines().count(), 3);
    assert!(out.join("epochs/method3_L2_KL4_r0.csv").exists());
}

#[test]
fn sweep_reports_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let stdout = run_tiny(&["sweep", "--sweep", "2,4,8"], &out);
    assert!(stdout.contains("log-log slope"));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["slope"].is_f64());
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = deeprff(&["train", "--method", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_pre"));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"metropolis": {"iterations": 5, "gama": 2}}"#).unwrap();
    let out = deeprff(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("metropolis"));
}

#[test]
fn verify_theory_passes_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("theory.json");
    let stdout = ok(&["verify-theory", "--json", json.to_str().unwrap()]);
    assert!(stdout.contains("0 failed"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(summary["failed"], 0);
    assert!(summary["checks"].as_array().unwrap().len() >= 10);
}
