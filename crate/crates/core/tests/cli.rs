use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn f1_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/f1/config.json")
}

fn mixtrail(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixtrail")).args(args).output().expect("binary runs")
}

fn stdout_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn build_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = f1_config();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let run = mixtrail(&["build", "--config", path_str(&cfg), "--out", path_str(out)]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    }
    for name in ["nodes.jsonl", "edges.jsonl", "bm25.json", "validation.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let bm25: Value = serde_json::from_slice(&std::fs::read(a.join("bm25.json")).unwrap()).unwrap();
    assert_eq!(bm25["k1"], 1.2);
    let validation: Value = serde_json::from_slice(&std::fs::read(a.join("validation.json")).unwrap()).unwrap();
    assert_eq!(validation["isolated"], serde_json::json!([]));
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.jsonl");
    let run = mixtrail(&["build", "--nodes", path_str(&missing), "--out", path_str(dir.path())]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("missing input"));
    let run = mixtrail(&["build", "--out", path_str(dir.path())]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn malformed_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let nodes = dir.path().join("nodes.jsonl");
    std::fs::write(&nodes, "{\"id\": \"x\"}\n").unwrap();
    let run = mixtrail(&["build", "--nodes", path_str(&nodes), "--out", path_str(dir.path())]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn bad_config_is_a_usage_error() {
    let cfg = f1_config();
    assert_eq!(mixtrail(&["build", "--config", path_str(&cfg), "--set", "traversal.nope=1"]).status.code(), Some(2));
    assert_eq!(mixtrail(&["retrieve", "--config", path_str(&cfg), "--set", "reranker.enabled=true"]).status.code(), Some(2));
    assert_eq!(mixtrail(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn retrieve_ranks_p1_first() {
    let cfg = f1_config();
    let run = mixtrail(&["retrieve", "--config", path_str(&cfg), "--workers", "2"]);
    assert!(run.status.success());
    let lines = stdout_lines(&run);
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["query_id"], "f1");
    assert_eq!(lines[0]["fallback"], false);
    assert_eq!(lines[0]["hits"][0]["id"], "P1");
    let steps: Vec<&str> = lines[0]["hits"][0]["trajectory"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["id"].as_str().unwrap())
        .collect();
    assert_eq!(steps, ["I1", "A1", "P1"]);

    let one = stdout_lines(&mixtrail(&["retrieve", "--config", path_str(&cfg), "--k", "1"]));
    assert!(one.iter().all(|l| l["hits"].as_array().unwrap().len() == 1));
}

#[test]
fn invalid_plan_sets_fallback_flag() {
    let cfg = f1_config();
    let run = mixtrail(&["retrieve", "--config", path_str(&cfg), "--query", "stellar populations", "--plan", "Paper -> -> Author"]);
    assert!(run.status.success());
    let line = &stdout_lines(&run)[0];
    assert_eq!(line["fallback"], true);
    assert_eq!(line["fallback_reason"], "invalid_plan");
    assert!(!line["hits"].as_array().unwrap().is_empty());
}

#[test]
fn template_planner_from_config() {
    let cfg = f1_config();
    let run = mixtrail(&["plan", "--config", path_str(&cfg), "--set", "planner.mode=template"]);
    assert!(run.status.success());
    let lines = stdout_lines(&run);
    assert_eq!(lines[1]["status"], "valid");
    assert_eq!(lines[1]["plan"], "Author<Bob Jones> -> Paper<graph neural networks>");
    let run = mixtrail(&["plan", "--config", path_str(&cfg), "--set", "planner.mode=template", "--query", "hello"]);
    assert_eq!(stdout_lines(&run)[0]["status"], "invalid");
}

#[test]
fn eval_oracle_recalls_everything() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = f1_config();
    let run = mixtrail(&["eval", "--config", path_str(&cfg), "--oracle", "--out", path_str(dir.path())]);
    assert!(run.status.success());
    let report: Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["mean"]["recall20"], 1.0);
    assert!(std::fs::read_to_string(dir.path().join("report.txt")).unwrap().contains("R@20"));
}

fn synth_into(dir: &Path) {
    let run = mixtrail(&[
        "synth",
        "--out",
        path_str(dir),
        "--seed",
        "5",
        "--set",
        "synth.train_queries=12",
        "--set",
        "synth.test_queries=8",
        "--set",
        "synth.categories[0]",
    ]);
    assert_eq!(run.status.code(), Some(2), "indexing into lists is not an override path");
    let cfg = dir.join("small.json");
    let mut synth = mixtrail::eval::SynthConfig::scaled(600);
    synth.train_queries = 12;
    synth.test_queries = 8;
    std::fs::write(&cfg, serde_json::json!({ "synth": synth }).to_string()).unwrap();
    let run = mixtrail(&["synth", "--config", path_str(&cfg), "--out", path_str(dir), "--seed", "5"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
}

fn small_run_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("run.json");
    let text = serde_json::json!({
        "kb": {"nodes": "nodes.jsonl", "edges": "edges.jsonl"},
        "queries": "queries.jsonl",
        "train_queries": "train_queries.jsonl",
        "reranker": {"model": {"embed_dim": 8, "hidden": 4}, "train": {"epochs": 3}},
        "eval": {"variants": ["full", "no_rerank"], "masks": [{"tf": true, "sf": true, "ti": true}, {"tf": true, "sf": false, "ti": false}]}
    });
    std::fs::write(&cfg, text.to_string()).unwrap();
    cfg
}

#[test]
fn synth_train_eval_ablate() {
    let dir = tempfile::tempdir().unwrap();
    synth_into(dir.path());
    let again = tempfile::tempdir().unwrap();
    synth_into(again.path());
    for name in ["nodes.jsonl", "edges.jsonl", "train_queries.jsonl", "queries.jsonl"] {
        assert_eq!(
            std::fs::read(dir.path().join(name)).unwrap(),
            std::fs::read(again.path().join(name)).unwrap(),
            "{name}"
        );
    }

    let cfg = small_run_config(dir.path());
    let out_a = dir.path().join("train-a");
    let out_b = dir.path().join("train-b");
    for out in [&out_a, &out_b] {
        let run = mixtrail(&["train", "--config", path_str(&cfg), "--out", path_str(out)]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    }
    let ckpt = std::fs::read(out_a.join("reranker.json")).unwrap();
    assert_eq!(ckpt, std::fs::read(out_b.join("reranker.json")).unwrap());
    let training: Value = serde_json::from_slice(&std::fs::read(out_a.join("training.json")).unwrap()).unwrap();
    assert_eq!(training["loss_curve"].as_array().unwrap().len(), 4);

    let model = out_a.join("reranker.json");
    let run = mixtrail(&["eval", "--config", path_str(&cfg), "--model", path_str(&model), "--out", path_str(&out_a)]);
    assert!(run.status.success());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with(|c: char| c.is_whitespace()));

    let run = mixtrail(&["ablate", "--config", path_str(&cfg), "--out", path_str(dir.path())]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let mut names: Vec<String> = std::fs::read_dir(dir.path().join("ablation"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["full-tf+sf+ti.json", "full-tf.json", "no_rerank.json", "summary.txt"]);
}
