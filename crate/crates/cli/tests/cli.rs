use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn design() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../designs/default.json")
}

fn agdl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agdl"))
        .args(args)
        .env_remove("AGDL_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = agdl(args);
    assert!(
        out.status.success(),
        "agdl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Settle, walk out from under the platform, then run both ways and jump
/// standing and running, three times.
fn script() -> String {
    let mut lines = vec!["-"; 40];
    lines.extend(std::iter::repeat_n("R", 60));
    lines.extend(std::iter::repeat_n("-", 15));
    for _ in 0..3 {
        for (tok, n) in [
            ("R", 24),
            ("-", 20),
            ("L", 24),
            ("-", 20),
            ("A", 4),
            ("-", 40),
            ("R", 16),
            ("R A", 4),
            ("-", 44),
            ("L", 16),
            ("L A", 4),
            ("-", 44),
        ] {
            lines.extend(std::iter::repeat_n(tok, n));
        }
    }
    lines.join("\n") + "\n"
}

/// Simulates the script and learns a model; returns (dir, trace, model).
fn learned() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let script_path = dir.path().join("play.txt");
    fs::write(&script_path, script()).unwrap();
    let trace = dir.path().join("t.jsonl");
    let model = dir.path().join("m.json");
    ok(&[
        "simulate",
        "--design",
        s(&design()),
        "--inputs",
        &format!("script:{}", s(&script_path)),
        "--out",
        s(&trace),
    ]);
    ok(&["learn", "--trace", s(&trace), "--out", s(&model)]);
    (dir, trace, model)
}

#[test]
fn learn_without_trace_is_a_usage_error() {
    let out = agdl(&["learn", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());
}

#[test]
fn unknown_subcommand_and_bad_specs_exit_1() {
    assert_eq!(agdl(&["fly"]).status.code(), Some(1));
    let out = agdl(&["simulate", "--design", s(&design()), "--inputs", "random:x:3", "--out", "t"]);
    assert_eq!(out.status.code(), Some(1));
    let out = agdl(&["export", "dot-fsm:", "--model", "m.json", "--out", "-"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_files_are_data_errors() {
    let out = agdl(&["learn", "--trace", "/nonexistent/t.jsonl", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn learn_and_eval_end_to_end() {
    let (dir, trace, model) = learned();
    let before = fs::read(&trace).unwrap();
    let metrics = dir.path().join("metrics.json");
    ok(&["eval", "--model", s(&model), "--truth", s(&design()), "--out", s(&metrics)]);
    assert_eq!(fs::read(&trace).unwrap(), before, "inputs are not modified");

    let v: Value = serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    for key in [
        "player_identified",
        "state_count_delta",
        "state_errors",
        "transition_f1",
        "solidity_precision",
        "solidity_recall",
        "rooms_isomorphic",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["player_identified"], true);
    assert_eq!(v["learned_states"], 4);
    assert_eq!(v["transition_precision"], 1.0);
    assert!(v["state_errors"].as_array().unwrap().iter().all(|e| {
        e["ax_error"].as_f64().unwrap() <= 0.01 && e["ay_error"].as_f64().unwrap() <= 0.01
    }));
}

#[test]
fn learn_is_byte_identical_across_runs_and_threads() {
    let (dir, trace, model) = learned();
    let again = dir.path().join("again.json");
    let out = Command::new(env!("CARGO_BIN_EXE_agdl"))
        .args(["learn", "--trace", s(&trace), "--out", s(&again)])
        .env("AGDL_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn flags_override_config_file() {
    let (dir, trace, _) = learned();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"eps": 0.3, "min_support": 3}"#).unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&["learn", "--trace", s(&trace), "--config", s(&cfg), "--out", s(&a)]);
    ok(&["learn", "--trace", s(&trace), "--config", s(&cfg), "--min-support", "2", "--eps", "0.1", "--out", s(&b)]);
    let digest = |p: &Path| {
        let v: Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        v["provenance"]["config_digest"].as_str().unwrap().to_string()
    };
    let default = dir.path().join("m.json");
    assert_ne!(digest(&a), digest(&default));
    assert_eq!(digest(&b), digest(&default));
}

#[test]
fn dot_exports() {
    let (dir, _, model) = learned();
    let out = ok(&["export", "dot-fsm:player", "--model", s(&model), "--out", "-"]);
    let dot = String::from_utf8(out.stdout).unwrap();
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("pressed(A)"));
    let again = ok(&["export", "dot-fsm:player", "--model", s(&model), "--out", "-"]);
    assert_eq!(dot.as_bytes(), again.stdout.as_slice());

    let missing = agdl(&["export", "dot-fsm:nobody", "--model", s(&model), "--out", "-"]);
    assert_eq!(missing.status.code(), Some(2));

    // a model with no rooms still gives a valid, empty digraph
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&model).unwrap()).unwrap();
    v["room_graph"] = serde_json::json!({ "nodes": [], "edges": [] });
    let empty = dir.path().join("empty.json");
    fs::write(&empty, serde_json::to_string(&v).unwrap()).unwrap();
    let out = ok(&["export", "dot-rooms", "--model", s(&empty), "--out", "-"]);
    let dot = String::from_utf8(out.stdout).unwrap();
    assert!(dot.starts_with("digraph rooms {") && dot.trim_end().ends_with('}'));
    assert!(!dot.contains("->") && !dot.contains("r0"));
}

#[test]
fn jump_table_and_corpus_exports() {
    let (dir, _, model) = learned();
    let table = dir.path().join("jumps.csv");
    ok(&["export", "jump-table", "--model", s(&model), "--out", s(&table)]);
    let csv = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "game,gravity_up,gravity_down,jump_height,hang_time,asymmetry");
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells[0], "m");
    assert!((cells[1].parse::<f64>().unwrap() - 0.5).abs() <= 0.01);

    let text = ok(&["export", "jump-table", "--model", s(&model), "--format", "text", "--out", "-"]);
    assert!(String::from_utf8(text.stdout).unwrap().starts_with("game"));

    let corpus = dir.path().join("corpus");
    ok(&["export", "corpus", "--model", s(&model), "--out", s(&corpus)]);
    assert!(corpus.join("legend.json").exists());
    assert!(corpus.join("room_000.txt").exists());
}

#[test]
fn probes_from_saved_state() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("state.json");
    ok(&[
        "simulate",
        "--design",
        s(&design()),
        "--inputs",
        "random:2:120",
        "--out",
        s(&dir.path().join("t.jsonl")),
        "--save-state",
        s(&state),
    ]);
    let out = ok(&["probe", "player", "--design", s(&design()), "--state", s(&state), "--out", "-"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["probe"], "player");
    let out = ok(&["probe", "gravity", "--design", s(&design()), "--state", s(&state), "--out", "-"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["gravity"], true);

    let mut st: Value = serde_json::from_str(&fs::read_to_string(&state).unwrap()).unwrap();
    st["player"] = Value::Null;
    let dead = dir.path().join("dead.json");
    fs::write(&dead, st.to_string()).unwrap();
    let out = agdl(&["probe", "player", "--design", s(&design()), "--state", s(&dead), "--out", "-"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("inconclusive"));
}
