#![allow(dead_code)]

#[path = "../../../core/tests/common/stub.rs"]
pub mod stub;

use std::io::Write;
use std::path::{Path, PathBuf};

use quadrag_core::synthetic::planted_task;
use serde_json::json;

/// Planted-task inputs written as a layered export, a dataset, a manifest and a config.
pub struct Fixture {
    pub dir: PathBuf,
    pub layered: PathBuf,
    pub dataset: PathBuf,
    pub manifest: PathBuf,
    pub config: PathBuf,
}

pub fn write_lines(path: &Path, lines: impl IntoIterator<Item = serde_json::Value>) {
    let mut f = std::fs::File::create(path).unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
}

pub fn planted_fixture(dir: &Path, endpoint: Option<&str>) -> Fixture {
    let task = planted_task(0);
    let g = &task.graph;
    let nodes = g
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| json!({"kind": "node", "layer": n.kind.as_str(), "id": format!("n{i}"), "text": n.text}));
    let edges = g.edges().iter().map(|e| {
        json!({"kind": "edge", "src": format!("n{}", e.src), "rel": g.relations()[e.rel as usize].name, "dst": format!("n{}", e.dst)})
    });
    let layered = dir.join("graph.jsonl");
    write_lines(&layered, nodes.chain(edges).collect::<Vec<_>>());

    let dataset = dir.join("dataset.jsonl");
    write_lines(
        &dataset,
        task.queries.iter().map(|q| {
            json!({"query_id": q.query_id, "query": q.query, "answers": [q.answer_text], "supporting_docs": q.docs, "evidence": [q.bridge, q.answer]})
        }),
    );
    let manifest = dir.join("manifest.jsonl");
    write_lines(
        &manifest,
        task.queries.iter().map(|q| {
            json!({"query_id": q.query_id, "query": q.query, "graph": "out/graph.qg", "positives": q.positives(), "seeds": [q.seed]})
        }),
    );
    let config = dir.join("config.json");
    let mut cfg = json!({
        "paths": {"out_dir": dir.join("out"), "dataset": dataset, "manifest": manifest},
        "train": {"layers": 2, "dim": 32, "epochs": 2},
        "llm": {"backoff_ms": 10, "timeout_s": 10.0, "model": "stub"},
        "seed": 3,
    });
    if let Some(url) = endpoint {
        cfg["llm"]["endpoint"] = json!(url);
    }
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    Fixture {
        dir: dir.to_path_buf(),
        layered,
        dataset,
        manifest,
        config,
    }
}

pub fn run(args: &[&str]) -> i32 {
    quadrag_cli::run_command(std::iter::once("quadrag").chain(args.iter().copied()))
}

/// Runs ingest, train, retrieve, answer and eval; returns the parsed reports in order.
pub fn pipeline(f: &Fixture) -> Vec<serde_json::Value> {
    let cfg = f.config.to_str().unwrap();
    let layered = f.layered.to_str().unwrap();
    let steps: Vec<Vec<&str>> = vec![
        vec!["ingest", "--format", "layered", "--input", layered, "--config", cfg],
        vec!["train", "--config", cfg],
        vec!["retrieve", "--config", cfg],
        vec!["answer", "--config", cfg],
        vec!["eval", "--config", cfg],
    ];
    let mut reports = Vec::new();
    for argv in steps {
        let cli = <quadrag_cli::Cli as clap::Parser>::try_parse_from(std::iter::once("quadrag").chain(argv.clone())).unwrap();
        let (report, path) = quadrag_cli::run(&cli).unwrap_or_else(|e| panic!("{argv:?}: {e:#}"));
        let on_disk: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
        assert_eq!(on_disk, serde_json::to_value(&report).unwrap());
        reports.push(on_disk);
    }
    reports
}

/// A report with its timing fields removed.
pub fn without_timing(mut report: serde_json::Value) -> serde_json::Value {
    let m = report.as_object_mut().unwrap();
    m.remove("started_at");
    m.remove("wall_time_s");
    report
}
