use std::path::Path;
use std::process::{Command, Output};

fn qrqa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrqa"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn synthetic() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = qrqa(dir.path(), &["synthetic", "--out", "."]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = qrqa(dir.path(), &["index", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--no-such-flag"));
}

#[test]
fn help_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = qrqa(dir.path(), &["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "index",
        "train-qr",
        "rewrite",
        "retrieve",
        "rerank",
        "train-reranker",
        "train-reader",
        "read",
        "eval-qr",
        "eval-retrieval",
        "eval-extractive",
        "breakdown",
        "pipeline",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn original_rewrites_are_all_copies() {
    let dir = synthetic();
    let out = qrqa(dir.path(), &["-c", "pipeline.toml", "rewrite", "--qr", "original"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/rewrites-original.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 80);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["was_copied"], true, "{line}");
    }
}

#[test]
fn missing_artifact_names_producer() {
    let dir = synthetic();
    qrqa(dir.path(), &["-c", "pipeline.toml", "rewrite", "--qr", "human"]);
    let out = qrqa(dir.path(), &["-c", "pipeline.toml", "retrieve", "--qr", "human"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `index` first"));

    assert!(qrqa(dir.path(), &["-c", "pipeline.toml", "index"]).status.success());
    let out = qrqa(dir.path(), &["-c", "pipeline.toml", "retrieve", "--qr", "kdt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run `rewrite` first"));
}

#[test]
fn flags_override_config() {
    let dir = synthetic();
    let out = qrqa(dir.path(), &["-c", "pipeline.toml", "--output-dir", "elsewhere", "rewrite", "--qr", "kdt"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("elsewhere/rewrites-kdt.jsonl").exists());
    assert!(!dir.path().join("out/rewrites-kdt.jsonl").exists());
}

#[test]
fn bad_config_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[retrieval]\nk1 = -1.0\n").unwrap();
    let out = qrqa(dir.path(), &["-c", "bad.toml", "index"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bm25_stages_chain() {
    let dir = synthetic();
    for args in [
        &["index"][..],
        &["rewrite", "--qr", "human"],
        &["retrieve", "--qr", "human"],
        &["--no-rerank", "eval-retrieval", "--qr", "human"],
    ] {
        let mut full = vec!["-c", "pipeline.toml"];
        full.extend_from_slice(args);
        let out = qrqa(dir.path(), &full);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/eval-retrieval-human.json")).unwrap())
            .unwrap();
    assert_eq!(report["mrr"], 1.0);
    assert!(dir.path().join("out/pr-human.csv").exists());
}
