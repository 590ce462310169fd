//! End-to-end runs of the `tacmamba` binary.

use std::path::Path;
use std::process::{Command, Output};

use tacmamba::bench::{latency_ratio, read_latency_csv, strictly_increasing, BenchKind};
use tacmamba::runtime::read_report;

const QUICK: &str = r#"
seed = 1
[dataset]
trajectories = 6
[scenario]
duration_s = 4.0
presses = 2
[encoder]
d_model = 16
layers = 2
[stage1]
steps = 4
eval_every = 2
[stage2]
steps = 10
eval_every = 5
[runtime]
duration_s = 2.0
"#;

fn tacmamba(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tacmamba"))
        .args(args)
        .current_dir(dir)
        .env("TACMAMBA_OUT", dir.join("out"))
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = tacmamba(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

/// Asserts the exit code and the one-line JSON error on stderr.
fn fails_with(dir: &Path, args: &[&str], code: i32, class: &str) {
    let o = tacmamba(dir, args);
    assert_eq!(o.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["code"], code);
    assert_eq!(v["error"], class);
}

fn quick_checkpoint(dir: &Path) -> std::path::PathBuf {
    std::fs::write(dir.join("quick.toml"), QUICK).unwrap();
    ok(dir, &["--config", "quick.toml", "pretrain", "-o", "s1"]);
    dir.join("s1/pretrain.tacw")
}

#[test]
fn gen_twice_is_byte_identical_and_records_seed() {
    let d = tempfile::tempdir().unwrap();
    let args = |o: &'static str| ["gen", "--scenario", "sequential_buttons", "--presses", "3", "--seed", "7", "-o", o];
    ok(d.path(), &args("a"));
    ok(d.path(), &args("b"));
    for f in ["traj_0000.tacm", "traj_0000.json", "config.toml"] {
        assert_eq!(std::fs::read(d.path().join("a").join(f)).unwrap(), std::fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
    let cfg = std::fs::read_to_string(d.path().join("a/config.toml")).unwrap();
    assert!(cfg.starts_with("seed = 7\n"), "{cfg}");
    assert!(cfg.contains("kind = \"sequential_buttons\""));
}

#[test]
fn out_root_comes_from_environment() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "--count", "2"]);
    assert!(d.path().join("out/gen/traj_0001.tacm").exists());
}

#[test]
fn segment_recall_on_generated_data() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["gen", "--count", "20", "--seed", "11", "-o", "data"]);
    let stdout = ok(d.path(), &["segment", "data", "-o", "seg"]);
    assert!(stdout.contains("onset recall"), "{stdout}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("seg/segment_report.json")).unwrap()).unwrap();
    // the simulator's labeled contact onsets are the oracle
    assert_eq!(report["labeled_onsets"], 40);
    assert!(report["recall"].as_f64().unwrap() >= 0.95, "{report}");
    assert!(d.path().join("seg/traj_0019.segments.json").exists());
}

#[test]
fn pretrain_finetune_run_async_inspect() {
    let d = tempfile::tempdir().unwrap();
    let ck = quick_checkpoint(d.path());
    assert!(d.path().join("s1/metrics.jsonl").exists());
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("s1/summary.json")).unwrap()).unwrap();
    assert!((summary["initial_loss"].as_f64().unwrap() - 3f64.ln()).abs() <= 0.1);

    let ck = ck.to_str().unwrap();
    ok(d.path(), &["--config", "quick.toml", "finetune", "--checkpoint", ck, "--sampler", "uniform", "-o", "s2"]);
    let info: serde_json::Value = serde_json::from_str(&ok(d.path(), &["inspect", "s2/finetune.tacw"])).unwrap();
    assert_eq!(info["format"], "TACW");
    assert_eq!(info["meta"]["stage"], 2);
    assert_eq!(info["meta"]["sampler"], "uniform");
    assert!(info["tensors"].as_array().unwrap().iter().any(|t| t["name"].as_str().unwrap().starts_with("head/")));
    let resolved = std::fs::read_to_string(d.path().join("s2/config.toml")).unwrap();
    assert!(resolved.contains("d_model = 16"), "finetune records the checkpoint encoder");

    ok(d.path(), &["--config", "quick.toml", "run-async", "--checkpoint", ck, "-o", "rt"]);
    let report = read_report(d.path().join("rt/run_report.json")).unwrap();
    assert_eq!((report.steps, report.slow_queries), (200, 2));
    let hist = std::fs::read_to_string(d.path().join("rt/latency_histogram.csv")).unwrap();
    assert!(hist.starts_with("bucket_us,count\n"));
    let info: serde_json::Value = serde_json::from_str(&ok(d.path(), &["inspect", "rt/run_report.json"])).unwrap();
    assert_eq!(info["format"], "run-report");
    let info: serde_json::Value = serde_json::from_str(&ok(d.path(), &["inspect", "s1/metrics.jsonl"])).unwrap();
    assert_eq!(info["records"], 4);
}

#[test]
fn bench_latency_trend_through_cli() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("b.toml"), "[latency]\nstreaming_reps = 300\nfull_budget_s = 0.3\n").unwrap();
    ok(d.path(), &["--config", "b.toml", "bench-latency", "--kinds", "tacmamba", "--lengths", "100,5000", "-o", "t"]);
    ok(d.path(), &["--config", "b.toml", "bench-latency", "--kinds", "attn_full", "--lengths", "100,500,1000", "-o", "a"]);
    let t = read_latency_csv(d.path().join("t/latency.csv")).unwrap();
    let ratio = latency_ratio(&t, BenchKind::Tacmamba, 5000, 100).unwrap();
    assert!(ratio <= 1.5, "tacmamba 5000/100 = {ratio}");
    assert!(t.iter().all(|r| r.peak_bytes > 0));
    let a = read_latency_csv(d.path().join("a/latency.csv")).unwrap();
    assert!(strictly_increasing(&a, BenchKind::AttnFull), "{a:?}");
}

#[test]
fn bench_accuracy_writes_both_rows() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("a.toml"),
        "[accuracy]\ntrajectories = 4\n[accuracy.scenario]\nduration_s = 3.0\npresses = 1\n[accuracy.stage1]\nsteps = 2\neval_every = 1\n",
    )
    .unwrap();
    ok(d.path(), &["--config", "a.toml", "bench-accuracy", "-o", "acc"]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("acc/accuracy.json")).unwrap()).unwrap();
    let kinds: Vec<&str> = v["rows"].as_array().unwrap().iter().map(|r| r["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["tacmamba", "lstm_single"]);
}

#[test]
fn errors_have_distinct_codes_and_one_line() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fails_with(p, &["no-such-command"], 2, "usage");
    fails_with(p, &["gen", "--presses", "many"], 2, "usage");
    std::fs::write(p.join("bad.toml"), "[encoder]\nd_modle = 8\n").unwrap();
    fails_with(p, &["--config", "bad.toml", "gen"], 3, "schema");
    fails_with(p, &["--config", "missing.toml", "gen"], 4, "missing_file");
    fails_with(p, &["inspect", "missing.tacm"], 4, "missing_file");
    fails_with(p, &["segment", "missing_dir"], 4, "missing_file");

    let ck = quick_checkpoint(p);
    let bytes = std::fs::read(&ck).unwrap();
    let mut newer = bytes.clone();
    newer[4] = 2;
    std::fs::write(p.join("newer.tacw"), &newer).unwrap();
    fails_with(p, &["finetune", "--checkpoint", "newer.tacw"], 5, "version");
    std::fs::write(p.join("short.tacw"), &bytes[..bytes.len() / 2]).unwrap();
    fails_with(p, &["finetune", "--checkpoint", "short.tacw"], 6, "corrupt");
    fails_with(p, &["inspect", "short.tacw"], 6, "corrupt");

    std::fs::write(p.join("slow.toml"), "[runtime]\nduration_s = 1.0\n[runtime.latency]\nbase_us = 20000.0\njitter_us = 0.0\n").unwrap();
    fails_with(p, &["--config", "slow.toml", "run-async"], 7, "deadline");
}
