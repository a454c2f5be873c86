mod common;

use std::path::Path;
use std::process::{Command, Output};

fn stratsearch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stratsearch"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_config(dir: &Path, body: serde_json::Value) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

fn small(evaluator: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "search_space": [
            {"name": "learning_rate", "min": 0.0001, "max": 0.01},
            {"name": "p_smooth", "min": 0, "max": 1, "kind": "augmentation_probability"}
        ],
        "evaluator": evaluator,
        "run": {"max_epoch": 12, "initial_jobs": 3, "workers": 2, "max_consecutive_failures": 3}
    })
}

fn sphere() -> serde_json::Value {
    serde_json::json!({"type": "synthetic", "surface": "sphere"})
}

#[test]
fn search_then_report_then_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), small(sphere()));
    let out_dir = tmp.path().join("run");
    let out = out_dir.to_str().unwrap();

    let o = stratsearch(&[
        "search",
        "--config",
        &config,
        "--out",
        out,
        "--seed",
        "5",
        "--workers",
        "1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out_dir.join("trials.jsonl").exists());
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("config.json")).unwrap())
            .unwrap();
    assert_eq!(saved["run"]["master_seed"], 5);
    assert_eq!(saved["run"]["workers"], 1);

    let text = stratsearch(&["report", out]);
    assert_eq!(code(&text), 0);
    assert!(String::from_utf8_lossy(&text.stdout).contains("best reward"));
    let json = stratsearch(&["report", out, "--format", "json"]);
    assert_eq!(code(&json), 0);
    let doc: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(doc["succeeded"], 12);
    assert_eq!(doc["reward_curve"].as_array().unwrap().len(), 12);

    let before = std::fs::read(out_dir.join("trials.jsonl")).unwrap();
    assert_eq!(code(&stratsearch(&["resume", out])), 0);
    assert_eq!(std::fs::read(out_dir.join("trials.jsonl")).unwrap(), before);

    // A second search into the same directory must not clobber it.
    let again = stratsearch(&["search", "--config", &config, "--out", out]);
    assert_eq!(code(&again), 3);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut body = small(sphere());
    body["run"]["max_epochs"] = serde_json::json!(5);
    let config = write_config(tmp.path(), body);
    let out = tmp.path().join("run");
    let o = stratsearch(&[
        "search",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_epochs"));
    assert!(!out.join("trials.jsonl").exists());

    let missing = stratsearch(&[
        "search",
        "--config",
        "/nonexistent.json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&missing), 2);

    let config = write_config(
        tmp.path(),
        small(serde_json::json!({"type": "synthetic", "surface": "ackley"})),
    );
    let o = stratsearch(&["eval-once", "--config", &config, "--strategy", "[0.5, 0.5]"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn aborted_run_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        small(serde_json::json!({"type": "external", "command": "exit 1"})),
    );
    let out = tmp.path().join("run");
    let o = stratsearch(&[
        "search",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("consecutive"));
}

#[test]
fn baseline_logs_every_evaluation() {
    for mode in ["discrete", "continuous"] {
        let tmp = tempfile::tempdir().unwrap();
        let config = write_config(tmp.path(), small(sphere()));
        let out = tmp.path().join("run");
        let o = stratsearch(&[
            "baseline",
            "--config",
            &config,
            "--mode",
            mode,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let log = std::fs::read_to_string(out.join("trials.jsonl")).unwrap();
        let records: Vec<serde_json::Value> = log
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(records[0]["kind"], "baseline");
        let launched = records
            .iter()
            .filter(|r| r["event"] == "trial_launched")
            .count();
        let finished = records
            .iter()
            .filter(|r| r["event"] == "trial_finished")
            .count();
        assert!(launched > 1);
        assert_eq!(launched, finished);
        assert_eq!(records[1]["strategy"], serde_json::json!([0.5, 0.5]));
        assert!(records
            .iter()
            .all(|r| r["origin"].is_null() || r["origin"] == "baseline"));
        let report = stratsearch(&["report", out.to_str().unwrap()]);
        assert_eq!(code(&report), 0);
    }
}

#[test]
fn eval_once_prints_result() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        small(serde_json::json!({"type": "synthetic", "surface": "sphere", "optimum": [0.5, 0.5]})),
    );
    let o = stratsearch(&["eval-once", "--config", &config, "--strategy", "[0.5, 0.5]"]);
    assert_eq!(code(&o), 0);
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["reward"], 1.0);

    let bad = stratsearch(&["eval-once", "--config", &config, "--strategy", "[1.5, 0.5]"]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn shipped_configs_are_valid() {
    for name in [
        "sim_trainer_d6.json",
        "toy_segmentation.json",
        "external.json",
    ] {
        let path = common::configs_dir().join(name);
        let config = stratsearch::RunConfig::load(&path).unwrap();
        if name != "external.json" {
            config.validate().unwrap();
        }
    }
}

#[test]
fn report_of_missing_run_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = stratsearch(&["report", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("trials.jsonl"));
}
