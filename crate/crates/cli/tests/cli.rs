use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn cerberus(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cerberus"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn run_config(dir: &Path, cmd: &str, name: &str, body: &str) -> Output {
    std::fs::write(dir.join(name), body).unwrap();
    cerberus(dir, &[cmd, "--config", name])
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const GEN: &str = r#"{"seed": 1, "out": "data", "preset": "desk_benchmark", "num_train": 30, "num_dev": 10, "num_test": 10, "candidates_per_question": 5}"#;
const TEACHER: &str = r#"{"seed": 2, "out": "teacher", "data": "data", "id": "T", "encoder": {"hidden_dim": 16, "num_layers": 2, "num_attention_heads": 2, "feedforward_dim": 16}, "train": {"max_iterations": 30, "validate_every": 10, "patience_validations": 2, "batch_size": 8}}"#;

fn with_teacher() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&run_config(dir.path(), "generate-data", "gen.json", GEN));
    ok(&run_config(
        dir.path(),
        "train-teacher",
        "teacher.json",
        TEACHER,
    ));
    dir
}

#[test]
fn generate_data_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    ok(&run_config(dir.path(), "generate-data", "gen.json", GEN));
    let first = std::fs::read(dir.path().join("data/train.jsonl")).unwrap();
    ok(&cerberus(
        dir.path(),
        &["generate-data", "--config", "gen.json", "--out", "again"],
    ));
    assert_eq!(
        first,
        std::fs::read(dir.path().join("again/train.jsonl")).unwrap()
    );
    ok(&cerberus(
        dir.path(),
        &[
            "generate-data",
            "--config",
            "gen.json",
            "--seed",
            "9",
            "--out",
            "other",
        ],
    ));
    assert_ne!(
        first,
        std::fs::read(dir.path().join("other/train.jsonl")).unwrap()
    );
    let resolved = read_json(&dir.path().join("other/resolved_config.json"));
    assert_eq!(resolved["seed"], 9);
}

#[test]
fn missing_seed_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(
        dir.path(),
        "generate-data",
        "gen.json",
        r#"{"out": "data"}"#,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("seed"), "{}", stderr(&out));
}

#[test]
fn unknown_fields_and_missing_files_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(
        dir.path(),
        "generate-data",
        "gen.json",
        r#"{"seed": 1, "out": "d", "sed": 2}"#,
    );
    assert_eq!(out.status.code(), Some(2));
    let out = cerberus(dir.path(), &["generate-data", "--config", "nope.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    ok(&run_config(dir.path(), "generate-data", "gen.json", GEN));
    let out = run_config(
        dir.path(),
        "evaluate",
        "eval.json",
        r#"{"seed": 0, "out": "eval", "data": "data", "model": "absent/model.ckpt"}"#,
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn strategy_and_architecture_mismatch_is_rejected() {
    let dir = with_teacher();
    let out = run_config(
        dir.path(),
        "distill",
        "d.json",
        r#"{"seed": 3, "out": "s", "data": "data", "strategy": "per_head_heterogeneous", "teachers": [{"id": "T", "cache": "teacher/teacher_logits.jsonl"}], "student": {"hidden_dim": 16, "num_layers": 2, "num_attention_heads": 2, "feedforward_dim": 16}, "train": {"max_iterations": 10, "validate_every": 5, "patience_validations": 2}}"#,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cerberus"), "{}", stderr(&out));
}

#[test]
fn evaluate_reproduces_the_best_dev_map_of_distill() {
    let dir = with_teacher();
    ok(&run_config(
        dir.path(),
        "distill",
        "d.json",
        r#"{"seed": 3, "out": "s", "data": "data", "strategy": "single_teacher", "teachers": [{"id": "T", "checkpoint": "teacher/model.ckpt"}], "student": {"hidden_dim": 8, "num_layers": 2, "num_attention_heads": 2, "feedforward_dim": 16}, "train": {"max_iterations": 30, "validate_every": 10, "patience_validations": 2, "batch_size": 8}}"#,
    ));
    let trained = read_json(&dir.path().join("s/report.json"));
    ok(&run_config(
        dir.path(),
        "evaluate",
        "e.json",
        r#"{"seed": 0, "out": "e", "data": "data", "model": "s/model.ckpt", "split": "dev"}"#,
    ));
    let evaluated = read_json(&dir.path().join("e/report.json"));
    let a = trained["best_dev_map"].as_f64().unwrap();
    let b = evaluated["pooled"]["map"].as_f64().unwrap();
    assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    let lines = std::fs::read_to_string(dir.path().join("s/train_log.jsonl")).unwrap();
    assert!(lines
        .lines()
        .all(|l| serde_json::from_str::<Value>(l).is_ok()));
}

#[test]
fn evaluate_writes_per_head_metrics_and_agreement() {
    let dir = with_teacher();
    ok(&run_config(
        dir.path(),
        "distill",
        "d.json",
        r#"{"seed": 3, "out": "c", "data": "data", "strategy": "per_head_homogeneous", "teachers": [{"id": "T", "cache": "teacher/teacher_logits.jsonl"}, {"id": "T2", "checkpoint": "teacher/model.ckpt"}], "student": {"hidden_dim": 8, "num_layers": 3, "num_attention_heads": 2, "feedforward_dim": 16}, "cerberus": {"body_depth": 2, "num_heads": 2, "head_depth": 1}, "train": {"max_iterations": 20, "validate_every": 10, "patience_validations": 2, "batch_size": 8}}"#,
    ));
    ok(&run_config(
        dir.path(),
        "evaluate",
        "e.json",
        r#"{"seed": 0, "out": "e", "data": "data", "model": "c/model.ckpt", "split": "test", "teachers": [{"id": "T", "checkpoint": "teacher/model.ckpt"}]}"#,
    ));
    let report = read_json(&dir.path().join("e/report.json"));
    let heads = report["heads"].as_object().unwrap();
    assert_eq!(heads.len(), 2);
    assert!(heads.contains_key("head0") && heads.contains_key("head1"));
    let csv = std::fs::read_to_string(dir.path().join("e/agreement.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
