//! End-to-end behaviour of the `genz` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn genz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genz"))
        .args(args)
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .env_remove("GENZ_API_BASE")
        .output()
        .expect("genz binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn invalid_config_lists_every_problem_and_exits_2() {
    let o = genz(&[
        "run",
        "--set", "experiment=hedonic",
        "--set", "data.source=items_json",
        "--set", "data.path=/nonexistent/items.json",
        "--set", "oracle.backend=replay",
        "--set", "discovery.k_add=0",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("/nonexistent/items.json"), "{err}");
    assert!(err.contains("transcript"), "{err}");
    assert!(err.contains("k_add"), "{err}");
}

#[test]
fn unknown_config_key_exits_2() {
    let o = genz(&["run", "--set", "discovery.k_addd=3"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn binary_toy_recovers_nine_features() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    let o = genz(&[
        "run",
        "--set", "experiment=binary_toy",
        "--set", "data.source=integers",
        "--set", "data.count=512",
        "--out", path_arg(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let features: Vec<Value> = serde_json::from_str(&fs::read_to_string(out.join("features.json")).unwrap()).unwrap();
    assert_eq!(features.len(), 9);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["train_metric"].as_f64().unwrap() < 1e-6, "{summary}");
    for name in ["config.json", "metrics.jsonl", "events.jsonl", "bound_trace.jsonl", "learning_curve.csv"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
}

#[test]
fn replay_miss_exits_3_and_resume_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("hedonic_linear.config.json");
    let full = fs::read_to_string(fixture("hedonic_linear.transcript.jsonl")).unwrap();

    let reference = dir.path().join("reference");
    let o = genz(&["run", "--config", path_arg(&config), "--out", path_arg(&reference)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let transcript = dir.path().join("partial.jsonl");
    let lines: Vec<&str> = full.lines().collect();
    fs::write(&transcript, lines[..lines.len() * 2 / 3].join("\n") + "\n").unwrap();
    let interrupted = dir.path().join("interrupted");
    let o = genz(&[
        "run",
        "--config", path_arg(&config),
        "--transcript", path_arg(&transcript),
        "--out", path_arg(&interrupted),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
    assert!(!interrupted.join("summary.json").exists());

    fs::write(&transcript, &full).unwrap();
    let o = genz(&["resume", path_arg(&interrupted)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read_to_string(reference.join("metrics.jsonl")).unwrap(),
        fs::read_to_string(interrupted.join("metrics.jsonl")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(reference.join("features.json")).unwrap(),
        fs::read_to_string(interrupted.join("features.json")).unwrap()
    );
}

#[test]
fn zero_shot_replay_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("zs");
    let o = genz(&["run", "--config", path_arg(&fixture("zero_shot.config.json")), "--out", path_arg(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("zero_shot.json")).unwrap()).unwrap();
    assert!(report.is_object());
    assert!(String::from_utf8_lossy(&o.stdout).contains("relative error"));
}

#[test]
fn cold_start_simulation_writes_a_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cs");
    let o = genz(&[
        "run",
        "--set", "experiment=coldstart_sim",
        "--set", r#"data={"source":"synthetic_ratings","users":300,"items":80,"rank":4,"density":0.2,"seed":1}"#,
        "--set", "embedding.k=4",
        "--set", "cold_start.n_items=10",
        "--set", "cold_start.n_trials=3",
        "--set", "cold_start.schedule=[0,1,5,20]",
        "--out", path_arg(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("cold_start.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "{csv}");
}

#[test]
fn report_on_a_missing_run_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = genz(&["report", path_arg(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("summary.json"), "{}", stderr(&o));
}

#[test]
fn transcript_record_requires_a_transcript() {
    let o = genz(&["transcript-record", "--set", "experiment=binary_toy", "--set", "data.source=integers"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
