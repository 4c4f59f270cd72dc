use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn emcomm(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emcomm"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

const TINY: &[&str] = &[
    "--set",
    "rounds=300",
    "--set",
    "eval_period=100",
    "--set",
    "n_train=40",
    "--set",
    "n_test=10",
    "--set",
    "budget=10",
    "--set",
    "pretrain_sentences=50",
    "--set",
    "pretrain_epochs=1",
];

fn train_tiny(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--oracle", "--out", out];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    emcomm(&args, dir)
}

#[test]
fn smoke_config_writes_ten_metric_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = smoke_config();
    let out = emcomm(&["train", "--config", cfg.to_str().unwrap(), "--oracle", "--out", "run"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("run");
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(csv.lines().count() >= 11, "{csv}");
    assert!(run.join("manifest.json").is_file());
    assert!(run.join("annotations.jsonl").is_file());
    assert!(std::fs::read_dir(run.join("checkpoints")).unwrap().count() >= 10);
}

#[test]
fn same_seed_gives_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = train_tiny(tmp.path(), name, &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(tmp.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn manifest_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(train_tiny(tmp.path(), "a", &["--seed", "4", "--set", "speaker.hidden=24"]).status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    let out = emcomm(&["train", "--config", "a/manifest.json", "--oracle", "--out", "b"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(tmp.path().join("a/metrics.csv")).unwrap(),
        std::fs::read(tmp.path().join("b/metrics.csv")).unwrap()
    );
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = train_tiny(tmp.path(), "x", &["--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
    assert!(!tmp.path().join("x").exists());

    let out = train_tiny(tmp.path(), "y", &["--set", "batch_size=0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));
}

#[test]
fn existing_run_directory_is_never_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir(tmp.path().join("taken")).unwrap();
    std::fs::write(tmp.path().join("taken/keep.txt"), "x").unwrap();
    let out = train_tiny(tmp.path(), "taken", &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(std::fs::read_to_string(tmp.path().join("taken/keep.txt")).unwrap(), "x");
}

#[test]
fn unbindable_serve_address_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap().to_string();
    let mut args = vec!["train", "--serve", addr.as_str(), "--out", "s"];
    args.extend_from_slice(TINY);
    let out = emcomm(&args, tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = emcomm(&["train", "--serve", "not-an-address", "--out", "t"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn provider_flags_are_exclusive() {
    let tmp = tempfile::tempdir().unwrap();
    let out = emcomm(&["train", "--out", "r"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let out = emcomm(&["train", "--oracle", "--serve", "127.0.0.1:0", "--out", "r"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_and_prune_curve_read_a_run() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(train_tiny(tmp.path(), "run", &[]).status.success());

    let out = emcomm(&["eval", "--run", "run"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["checkpoint"], "round_0000300");
    assert!(v["success_rate"].as_f64().unwrap() <= 1.0);

    let out = emcomm(&["eval", "--run", "run", "--checkpoint", "100"], tmp.path());
    assert!(out.status.success());
    let out = emcomm(&["eval", "--run", "run", "--checkpoint", "150"], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    let out = emcomm(&["prune-curve", "--run", "run", "--cutoffs", "0,0.1,median"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("run/pruning_curve.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "cutoff,mean_length,success_rate");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("median,"));

    let again = emcomm(&["prune-curve", "--run", "run"], tmp.path());
    assert_eq!(again.status.code(), Some(2));
    let bad = emcomm(&["prune-curve", "--run", "run", "--cutoffs", "0.5,0.1", "--out", "p.csv"], tmp.path());
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn pretrain_writes_checkpoint_and_losses() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["pretrain", "--out", "lm"];
    args.extend_from_slice(TINY);
    let out = emcomm(&args, tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("lm/pretrain.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(tmp.path().join("lm/checkpoints/pretrained.json").is_file());
}

#[test]
fn ablate_and_thresholds_write_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["ablate", "--modes", "full,mi_only", "--seeds", "1", "--out", "abl"];
    args.extend_from_slice(TINY);
    let out = emcomm(&args, tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(tmp.path().join("abl/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(tmp.path().join("abl/mi_only/seed_0/metrics.csv").is_file());

    let mut args = vec!["thresholds", "--values", "1,3", "--out", "thr"];
    args.extend_from_slice(TINY);
    let out = emcomm(&args, tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = std::fs::read_to_string(tmp.path().join("thr/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);

    let mut args = vec!["ablate", "--modes", "full,bogus", "--out", "abl2"];
    args.extend_from_slice(TINY);
    assert_eq!(emcomm(&args, tmp.path()).status.code(), Some(2));
}
