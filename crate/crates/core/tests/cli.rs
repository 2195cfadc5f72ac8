use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use bn_sharp::cli::cmd_measure;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bn-sharp"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_fails_and_names_the_path() {
    let out = run(&["measure", "--config", "/nonexistent/run.toml"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/run.toml"), "{err}");
}

#[test]
fn unknown_config_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[train]\nlearnig_rate = 0.1\n").unwrap();
    let out = run(&["train", "--config", s(&path), "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learnig_rate"));
}

#[test]
fn smoke_train_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = config("smoke.toml");
    let start = Instant::now();
    ok(&["train", "--config", s(&cfg), "--out", s(&a)]);
    assert!(start.elapsed() < Duration::from_secs(10));
    ok(&["train", "--config", s(&cfg), "--out", s(&b)]);
    for name in ["metrics.csv", "checkpoint.json", "config.toml"] {
        let x = fs::read(a.join(name)).unwrap();
        assert!(!x.is_empty(), "{name} is empty");
        assert_eq!(x, fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,step,train_loss,train_acc,test_acc,bn_sharpness,lambda,lr,wall_ms"
    );
    assert_eq!(lines.count(), 1);
}

#[test]
fn resolved_config_reloads() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["train", "--config", s(&config("smoke.toml")), "--out", s(dir.path())]);
    let again = dir.path().join("again");
    ok(&["train", "--config", s(&dir.path().join("config.toml")), "--out", s(&again)]);
    assert_eq!(
        fs::read(dir.path().join("metrics.csv")).unwrap(),
        fs::read(again.join("metrics.csv")).unwrap()
    );
}

#[test]
fn corrupt_checkpoint_is_diagnosed() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("checkpoint.json");
    fs::write(&ck, "{\"blocks\": [[1.0, 2.0]], \"n1\": 5}").unwrap();
    let out = run(&["measure", "--config", s(&config("smoke.toml")), "--checkpoint", s(&ck)]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("checkpoint"), "{err}");
    fs::write(&ck, "not json").unwrap();
    let out = run(&["measure", "--config", s(&config("smoke.toml")), "--checkpoint", s(&ck)]);
    assert!(!out.status.success());
}

#[test]
fn constant_loss_measures_zero() {
    let text = ok(&["measure", "--config", s(&config("constant.toml"))]);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["bn_sharpness"], 0.0);
    assert_eq!(v["lp_mc"]["value"], 0.0);
    assert_eq!(v["trace"]["estimate"], 0.0);
}

#[test]
fn measure_matches_the_library_and_trained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("smoke.toml");
    ok(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    let ck = dir.path().join("checkpoint.json");
    let out = dir.path().join("m");
    let text = ok(&["measure", "--config", s(&cfg), "--checkpoint", s(&ck), "--out", s(&out)]);
    assert_eq!(fs::read_to_string(out.join("report.json")).unwrap(), text);
    let report = cmd_measure(&cfg, Some(&ck)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["bn_sharpness"].as_f64().unwrap(), report.bn_sharpness);
    assert_eq!(v["trace"]["estimate"].as_f64().unwrap(), report.trace.estimate);
    // The training log measured the same quantity on the same batch at the
    // final parameters.
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let last: f64 = metrics.lines().last().unwrap().split(',').nth(5).unwrap().parse().unwrap();
    assert_eq!(last, report.bn_sharpness);
}

#[test]
fn approx_check_is_exact_on_linear_loss() {
    let text = ok(&["approx-check", "--config", s(&config("linear.toml"))]);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "delta,h1_rel_err,h2_rel_err,h1_second_diff_rel_err");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for r in rows {
        assert!(r[1] <= 1e-9 && r[2] <= 1e-9, "{r:?}");
    }
}

#[test]
fn invariance_reports_unit_ratio_for_bn_sharpness() {
    let text = ok(&["invariance", "--config", s(&config("invariance.toml")), "--scale", "collapse"]);
    let row = text.lines().find(|l| l.starts_with("bn_sharpness,")).unwrap();
    let ratio: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!((ratio - 1.0).abs() <= 1e-3, "{ratio}");
    let bad = run(&["invariance", "--config", s(&config("invariance.toml")), "--scale", "1,2,3"]);
    assert!(!bad.status.success());
}

#[test]
fn compare_with_one_seed_writes_two_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["compare", "--config", s(&config("smoke.toml")), "--seeds", "1", "--out", s(dir.path())]);
    let text = fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "algo,seed,final_test_acc,final_bn_sharpness");
    let data: Vec<&str> = lines[1..].iter().filter(|l| !l.contains(",mean,") && !l.contains(",std,")).copied().collect();
    assert_eq!(data.len(), 2);
    assert!(data[0].starts_with("sgd,0,") && data[1].starts_with("sgds,0,"));
    for algo in ["sgd", "sgds"] {
        let row = data.iter().find(|l| l.starts_with(&format!("{algo},"))).unwrap();
        let mean = lines.iter().find(|l| l.starts_with(&format!("{algo},mean,"))).unwrap();
        assert_eq!(row.split(',').nth(2), mean.split(',').nth(2));
    }
}

#[test]
fn compare_rejects_zero_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["compare", "--config", s(&config("smoke.toml")), "--seeds", "0", "--out", s(dir.path())]);
    assert!(!out.status.success());
}
