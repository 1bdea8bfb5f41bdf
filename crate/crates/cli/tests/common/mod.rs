//! Helpers for driving the `engagekit` binary from tests.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn engagekit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_engagekit")).args(args).output().expect("binary runs")
}

/// Runs a command that must succeed, returning its stdout.
pub fn ok(args: &[&str]) -> String {
    let out = engagekit(args);
    assert!(
        out.status.success(),
        "engagekit {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn code(args: &[&str]) -> i32 {
    engagekit(args).status.code().expect("exited normally")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// synth -> aggregate -> fit-norm -> report -> train -> predict -> eval, all
/// under `dir`. Training uses a small model; `iterations` sets its length.
pub fn pipeline(dir: &Path, n_videos: usize, iterations: u64) {
    let d = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let n = n_videos.to_string();
    let it = iterations.to_string();
    let corpus = d("corpus");
    ok(&["synth", "--out", &corpus, "--n-videos", &n, "--seed", "3"]);
    let c = |name: &str| format!("{corpus}/{name}");
    ok(&["aggregate", "--events", &c("events.jsonl"), "--metas", &c("metas.jsonl"), "--out", &d("records.jsonl"),
        "--min-views", "100", "--shards", "4"]);
    ok(&["fit-norm", "--records", &d("records.jsonl"), "--out-envelope", &d("envelope.json"),
        "--out-records", &d("nawp.jsonl"), "--min-bin-count", "10"]);
    ok(&["report", "--records", &d("nawp.jsonl"), "--out", &d("report.json")]);
    ok(&["train", "--manifest", &c("manifest.jsonl"), "--out", &d("model"), "--iterations", &it,
        "--d-model", "8", "--batch-size", "4", "--eval-interval", "5"]);
    ok(&["predict", "--manifest", &c("manifest.jsonl"), "--model", &d("model"), "--out", &d("predictions.jsonl")]);
    ok(&["eval", "--predictions", &d("predictions.jsonl"), "--manifest", &c("manifest.jsonl"), "--out", &d("eval.json"),
        "--group-width", "10"]);
}
