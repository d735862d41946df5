use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn wsrnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsrnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = wsrnet(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn rayleigh_without_user_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = wsrnet(dir.path(), &["gen-data", "--scenario", "weak", "--N", "10"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--K"));
    assert!(!dir.path().join("dataset.json").exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(wsrnet(dir.path(), &["train", "--frobnicate"]).status.code(), Some(2));
}

#[test]
fn pipeline_produces_report_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--scenario", "strong", "--K", "3", "--N", "40", "--seed", "1", "--out", "train.json"]);
    ok(d, &["gen-data", "--scenario", "strong", "--K", "3", "--N", "20", "--seed", "2", "--out", "test.json"]);
    ok(d, &["label", "--data", "train.json", "--count", "8", "--restarts", "2", "--out", "labels.json"]);
    for (mode, dir_name) in [("ul", "runs/ul"), ("ssl", "runs/ssl"), ("sl", "runs/sl")] {
        ok(
            d,
            &[
                "train", "--data", "train.json", "--labels", "labels.json", "--mode", mode, "--optimizer", "rmsprop",
                "--hidden", "12,8", "--batch-norm", "--iters", "50", "--batch", "8", "--out-dir", dir_name,
            ],
        );
        for f in ["checkpoint.json", "trace.csv", "trace.json", "resolved_config.json", "run.json"] {
            assert!(d.join(dir_name).join(f).exists(), "{dir_name}/{f} missing");
        }
        ok(d, &["eval", "--checkpoint", &format!("{dir_name}/checkpoint.json"), "--data", "test.json"]);
    }
    ok(d, &["eval", "--wmmse", "--data", "test.json", "--out", "runs/wmmse/eval.json"]);

    let rec = json(d.join("runs/ssl/eval.json"));
    assert_eq!(rec["method"], "ssl");
    assert_eq!(rec["labeled"], 8);
    assert_eq!(rec["snapshots"], 20);
    let nats = rec["mean_nats"].as_f64().unwrap();
    assert!((rec["mean_bits"].as_f64().unwrap() - nats / std::f64::consts::LN_2).abs() < 1e-12);

    ok(d, &["report", "--runs", "runs", "--out-dir", "report", "--table1", "--fig1"]);
    let table = fs::read_to_string(d.join("report/table1.csv")).unwrap();
    let mut lines = table.lines();
    let header = lines.next().unwrap();
    assert!(header.contains("mean_nats") && header.contains("mean_bits"));
    let methods: Vec<&str> = lines.map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(methods, ["sl", "ssl", "ul", "wmmse"]);
    assert!(d.join("report/fig1.csv").exists());
    assert!(!d.join("report/fig3.csv").exists());
}

#[test]
fn training_is_reproducible_from_its_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--scenario", "weak", "--K", "2", "--N", "30", "--seed", "4"]);
    let args = |out: &'static str| {
        vec![
            "train", "--data", "dataset.json", "--optimizer", "rmsprop", "--hidden", "8", "--iters", "40", "--batch",
            "10", "--seed", "5", "--out-dir", out,
        ]
    };
    ok(d, &args("a"));
    ok(d, &args("b"));
    let a = fs::read(d.join("a/checkpoint.json")).unwrap();
    let b = fs::read(d.join("b/checkpoint.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn toy_landscape_suite_passes_with_expected_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = wsrnet(d, &["verify", "--suite", "claim1", "--f", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(d.join("verdict.json"));
    assert_eq!(v["passed"], true);
    let argmax = &v["checks"][0]["detail"]["argmax"];
    assert_eq!(argmax, &serde_json::json!([[0.0, 1.0], [1.0, 0.0]]));
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), r#"{"scenario": "strong", "K": 2, "N": 5, "seed": 9}"#).unwrap();
    ok(d, &["gen-data", "--config", "cfg.json", "--N", "7", "--out", "ds.json"]);
    let ds = json(d.join("ds.json"));
    let resolved = json(d.join("ds.resolved.json"));
    assert_eq!(resolved["config"]["N"], 7);
    assert_eq!(resolved["config"]["K"], 2);
    assert_eq!(resolved["config"]["scenario"], "strong");
    assert_eq!(ds["seed"], 9);

    fs::write(d.join("bad.json"), "[1, 2]").unwrap();
    assert_eq!(wsrnet(d, &["gen-data", "--config", "bad.json"]).status.code(), Some(2));
}
