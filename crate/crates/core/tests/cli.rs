mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

use curate::model::{Document, Source};
use curate::pairs::{self, whitespace_counter, Chunk, ChunkKind};

fn curate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curate"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&curate(&["--help"])), 0);
    assert_eq!(code(&curate(&["clean", "--input"])), 1);
    assert_eq!(code(&curate(&["no-such-stage"])), 1);
}

#[test]
fn invalid_parameters_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    common::write_corpus(&input, &common::corpus(5, 1));
    let out = dir.path().join("out.jsonl");
    let run = curate(&["dedup-fuzzy", "--input", p(&input), "--output", p(&out), "--tau", "1.5"]);
    assert_eq!(code(&run), 1);
    let run = curate(&["filter-semantic", "--input", p(&input), "--output", p(&out), "--threshold", "0"]);
    assert_eq!(code(&run), 1);
}

#[test]
fn missing_input_is_a_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.jsonl");
    let run = curate(&["clean", "--input", "/nonexistent/in.jsonl", "--output", p(&out)]);
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("in.jsonl"));
}

#[test]
fn bad_stage_order_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "seed": 1, "input": "in.jsonl", "output_dir": "out",
        "stages": [{"stage": "dedup-exact"}, {"stage": "clean"}]
    });
    let path = common::stage_run(dir.path(), &common::corpus(5, 1), &cfg);
    assert_eq!(code(&curate(&["run", "--config", p(&path)])), 1);

    let cfg = json!({"seed": 1, "input": "in.jsonl", "output_dir": "out", "stages": [{"stage": "clean", "bogus": 3}]});
    fs::write(&path, cfg.to_string()).unwrap();
    assert_eq!(code(&curate(&["run", "--config", p(&path)])), 1);
}

#[test]
fn failing_stage_leaves_marker_and_earlier_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "seed": 1, "input": "in.jsonl", "output_dir": "out",
        "stages": [
            {"stage": "clean"},
            {"stage": "filter-quality", "classifier": "http", "endpoint": "http://127.0.0.1:9/classify"}
        ]
    });
    let path = common::stage_run(dir.path(), &common::corpus(20, 2), &cfg);
    let run = curate(&["run", "--config", p(&path)]);
    assert_eq!(code(&run), 2, "{}", String::from_utf8_lossy(&run.stderr));
    let out = dir.path().join("out");
    let marker = fs::read_to_string(out.join("FAILED")).unwrap();
    assert!(marker.contains("filter-quality"), "{marker}");
    assert!(out.join("01-clean.jsonl").exists());
    assert!(out.join("01-clean.jsonl.manifest.json").exists());
    assert!(!out.join("02-filter-quality.jsonl").exists());
}

#[test]
fn clean_only_run_matches_standalone_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"seed": 9, "input": "in.jsonl", "output_dir": "out", "stages": [{"stage": "clean"}]});
    let path = common::stage_run(dir.path(), &common::corpus(40, 3), &cfg);
    assert_eq!(code(&curate(&["run", "--config", p(&path)])), 0);

    let standalone = dir.path().join("standalone.jsonl");
    let run = curate(&["clean", "--input", p(&dir.path().join("in.jsonl")), "--output", p(&standalone)]);
    assert_eq!(code(&run), 0);
    assert_eq!(
        fs::read(dir.path().join("out/01-clean.jsonl")).unwrap(),
        fs::read(&standalone).unwrap()
    );
}

#[test]
fn rerun_from_a_stage_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::stage_run(dir.path(), &common::corpus(60, 4), &common::full_config(11, None));
    let run = curate(&["run", "--config", p(&path)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let out = dir.path().join("out");
    let before = common::snapshot(&out);

    for name in before.keys().filter(|n| n.starts_with("04-") || n.starts_with("05-")) {
        fs::remove_file(out.join(name)).unwrap();
    }
    let run = curate(&["run", "--config", p(&path), "--from", "dedup-fuzzy"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(common::snapshot(&out), before);
}

#[test]
fn from_requires_earlier_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::stage_run(dir.path(), &common::corpus(10, 5), &common::full_config(1, None));
    let run = curate(&["run", "--config", p(&path), "--from", "dedup-fuzzy"]);
    assert_ne!(code(&run), 0);
}

#[test]
fn stats_counts_documents() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("docs.jsonl");
    let ten = ["tok"; 10].join(" ");
    let docs: Vec<Document> = (1..=3).map(|i| Document::new(i, Source::PileGeneral, ten.clone())).collect();
    common::write_corpus(&input, &docs);
    let run = curate(&["stats", "--input", p(&input)]);
    assert_eq!(code(&run), 0);
    let stats: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(stats["records"], 3);
    assert_eq!(stats["total_tokens"], 30);
    assert_eq!(stats["per_source"]["pile_general"], 3);
}

#[test]
fn stats_on_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.jsonl");
    fs::write(&input, "").unwrap();
    let run = curate(&["stats", "--input", p(&input)]);
    assert_eq!(code(&run), 0);
    let stats: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(stats["records"], 0);
    assert_eq!(stats["total_tokens"], 0);
}

#[test]
fn stats_counts_pairs_from_eight_chunks() {
    let dir = tempfile::tempdir().unwrap();
    let chunks: Vec<Chunk> = (0..8)
        .map(|i| Chunk { index: i, text: format!("c{i}"), tokens: 1, kind: ChunkKind::Prose, oversize: false })
        .collect();
    let doc = Document::new(1, Source::PileRelevant, "x");
    let pairs = pairs::pair_pile(&doc, &chunks, &whitespace_counter()).unwrap();
    let input = dir.path().join("pairs.jsonl");
    let mut w = curate::model::JsonlWriter::create(&input).unwrap();
    for pair in &pairs {
        w.write(pair).unwrap();
    }
    w.finish().unwrap();
    let run = curate(&["stats", "--input", p(&input)]);
    assert_eq!(code(&run), 0);
    let stats: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(stats["records"], 2);
    assert_eq!(stats["pairs_per_strategy"]["pile_chunks"], 2);
}

#[test]
fn stats_rejects_mixed_records() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("mixed.jsonl");
    let doc = r#"{"id":1,"source":"pile_general","text":"a b c"}"#;
    let pair = r#"{"doc_id":1,"pair_index":0,"source":"pile_general","strategy":"pile_chunks","input_chunks":[0],"output_chunks":[1],"tokens_in":1,"tokens_out":1,"input":"a","output":"b"}"#;
    fs::write(&input, format!("{doc}\n{pair}\n")).unwrap();
    assert_eq!(code(&curate(&["stats", "--input", p(&input)])), 2);
}

#[test]
fn emit_queries_writes_builtin_topics() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("queries.jsonl");
    assert_eq!(code(&curate(&["filter-semantic", "--emit-queries", p(&path)])), 0);
    let written = curate::semantic::read_queries(&path).unwrap();
    assert_eq!(written, curate::semantic::default_queries());
}

#[test]
fn mix_from_spec_file() {
    let dir = tempfile::tempdir().unwrap();
    let docs = common::corpus(30, 6);
    let input = dir.path().join("in.jsonl");
    common::write_corpus(&input, &docs);
    let pairs_out = dir.path().join("pairs.jsonl");
    let run = curate(&[
        "make-pairs", "--input", p(&input), "--output", p(&pairs_out),
        "--chunk-budget", "40", "--max-paragraph", "200", "--side-target", "150",
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let spec = json!({
        "seed": 3, "total": "exhaust",
        "entries": [{"source": "all", "weight": 1.0, "path": p(&pairs_out)}]
    });
    let spec_path = dir.path().join("spec.json");
    fs::write(&spec_path, spec.to_string()).unwrap();
    let mixed = dir.path().join("mixed.jsonl");
    assert_eq!(code(&curate(&["mix", "--spec", p(&spec_path), "--output", p(&mixed)])), 0);
    assert_eq!(fs::read(&mixed).unwrap(), fs::read(&pairs_out).unwrap());
}

#[test]
fn shipped_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let cfg = curate::pipeline::PipelineConfig::load(root.join("pipeline.json")).unwrap();
    cfg.validate().unwrap();
    assert_eq!(cfg.stages.len(), 7);
    let spec = curate::mix::MixSpec::load(root.join("mix.json")).unwrap();
    assert!(spec.entries.iter().all(|e| e.path.starts_with(&root)));
}

#[test]
fn mix_spec_paths_resolve_beside_the_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = json!({"seed": 1, "total": "exhaust", "entries": [{"source": "a", "weight": 1.0, "path": "a.jsonl"}]});
    fs::write(dir.path().join("spec.json"), spec.to_string()).unwrap();
    fs::write(dir.path().join("a.jsonl"), "").unwrap();
    let spec = curate::mix::MixSpec::load(dir.path().join("spec.json")).unwrap();
    assert_eq!(spec.entries[0].path, dir.path().join("a.jsonl"));
    let missing = curate(&["mix", "--spec", "/nonexistent/spec.json", "--output", p(&dir.path().join("o.jsonl"))]);
    assert_eq!(code(&missing), 1);
}

#[test]
fn ingest_then_clean() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.jsonl");
    let text = "Grid storage smooths the demand curve for wind power. ".repeat(6);
    fs::write(&raw, format!("{}\n{}\n", json!({"text": text}), json!({"text": text, "source": "pile_general"}))).unwrap();
    let docs = dir.path().join("docs.jsonl");
    let run = curate(&["ingest", "--input", p(&raw), "--output", p(&docs), "--source", "scientific_papers"]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let loaded = curate::model::load_documents(&docs).unwrap();
    assert_eq!(loaded.iter().map(|d| d.id).collect::<Vec<_>>(), vec![1, 2]);
    let cleaned = dir.path().join("clean.jsonl");
    assert_eq!(code(&curate(&["clean", "--input", p(&docs), "--output", p(&cleaned)])), 0);
}
