//! One function per subcommand.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use quadrag_core::embed::{load_embeddings, node_key, query_key, relation_key, EmbeddingProvider, EmbeddingTable, ProviderKind};
use quadrag_core::gfm::{load_checkpoint, save_checkpoint, GfmParams};
use quadrag_core::numerics::ParamBlocks;
use quadrag_core::partition::{distributed_forward, estimate_workers, partition_graph, plan_stats, PartitionPlan};
use quadrag_core::quadgraph::{graph_stats, ingest_kg_docs, ingest_quad_layers, load_graph, save_graph, QuadGraph};
use quadrag_core::reason::{
    answer_all, build_prompt_with, evaluate_run, load_dataset, topk_per_type, AnswerRecord, EvalExample, LlmClient,
    RetrievalResult,
};
use quadrag_core::train::{fit, load_manifest, select_seed_nodes, PreparedGraph};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{Command, IngestFormat};

pub struct Outcome {
    pub result: Value,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn new(result: Value) -> Self {
        Self {
            result,
            warnings: Vec::new(),
        }
    }
}

/// One line of a retrievals file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalLine {
    pub query_id: String,
    pub seeds: Vec<u32>,
    pub retrieval: RetrievalResult,
}

fn existing<'a>(path: &'a Path, what: &str) -> Result<&'a Path> {
    ensure!(path.exists(), "{what} not found: {}", path.display());
    Ok(path)
}

fn required(path: &Option<PathBuf>, what: &str, flag: &str) -> Result<PathBuf> {
    let p = path.clone().with_context(|| format!("no {what} given (use {flag} or the config file)"))?;
    existing(&p, what)?;
    Ok(p)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path, what: &str) -> Result<Vec<T>> {
    let f = File::open(existing(path, what)?)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn graph(config: &RunConfig) -> Result<QuadGraph> {
    let path = config.graph_path();
    load_graph(existing(&path, "graph")?).with_context(|| format!("loading graph {}", path.display()))
}

fn dataset(config: &RunConfig) -> Result<Vec<EvalExample>> {
    let path = required(&config.paths.dataset, "dataset", "--dataset")?;
    load_dataset(&path).with_context(|| format!("loading dataset {}", path.display()))
}

fn provider(config: &RunConfig) -> Result<EmbeddingProvider> {
    Ok(match config.embed.provider {
        ProviderKind::Hash => EmbeddingProvider::Hash {
            dim: config.embed_dim(),
            seed: config.embed.hash_seed,
        },
        ProviderKind::File => {
            let path = config.embeddings_path();
            let table = load_embeddings(existing(&path, "embedding table")?)
                .with_context(|| format!("loading embeddings {}", path.display()))?;
            EmbeddingProvider::File(table)
        }
    })
}

pub fn execute(command: &Command, config: &RunConfig) -> Result<Outcome> {
    match command {
        Command::Ingest {
            format,
            input,
            triples,
            docs,
            links,
            out,
        } => {
            let g = match format {
                IngestFormat::Layered => {
                    let input = input.as_ref().context("--input is required for --format layered")?;
                    ingest_quad_layers(existing(input, "layered file")?)?
                }
                IngestFormat::Kg => {
                    let t = triples.as_ref().context("--triples is required")?;
                    let d = docs.as_ref().context("--docs is required")?;
                    let l = links.as_ref().context("--links is required")?;
                    ingest_kg_docs(existing(t, "triples file")?, existing(d, "documents file")?, existing(l, "links file")?)?
                }
            };
            let path = out.clone().unwrap_or_else(|| config.graph_path());
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            save_graph(&g, &path)?;
            let stats = graph_stats(&g);
            println!("{}", serde_json::to_string(&stats)?);
            Ok(Outcome::new(json!({"graph": path, "stats": stats})))
        }
        Command::Embed { manifest, out, .. } => embed(config, manifest.as_deref(), out.clone()),
        Command::Train { .. } => train(config),
        Command::Partition { out, .. } => {
            let g = graph(config)?;
            let plan = partition_graph(&g, config.workers, config.seed)?;
            let path = out.clone().unwrap_or_else(|| config.plan_path());
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            plan.save(&path)?;
            let stats = plan_stats(&plan);
            println!("{}", serde_json::to_string(&stats)?);
            Ok(Outcome::new(json!({"plan": path, "stats": stats})))
        }
        Command::Retrieve { out, .. } => retrieve(config, out.clone()),
        Command::Answer { out, .. } => answer(config, out.clone()),
        Command::Eval { .. } => {
            let data = dataset(config)?;
            let retrievals: Vec<RetrievalLine> = read_jsonl(&config.retrievals_path(), "retrievals file")?;
            let answers: Vec<AnswerRecord> = read_jsonl(&config.answers_path(), "answers file")?;
            let pairs: Vec<(String, RetrievalResult)> =
                retrievals.into_iter().map(|r| (r.query_id, r.retrieval)).collect();
            let metrics = evaluate_run(&data, &pairs, &answers, &[config.k])?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            Ok(Outcome::new(json!({ "metrics": metrics })))
        }
        Command::Estimate { nodes, dim, mem } => {
            let n = estimate_workers(*nodes, *dim, *mem)?;
            println!("{n}");
            Ok(Outcome::new(json!({"nodes": nodes, "dim": dim, "mem_gb": mem, "workers": n})))
        }
    }
}

fn embed(config: &RunConfig, manifest: Option<&Path>, out: Option<PathBuf>) -> Result<Outcome> {
    let g = graph(config)?;
    let provider = provider(config)?;
    let view = quadrag_core::gfm::augment_with_inverses(&g);
    let mut queries: Vec<(String, String)> = Vec::new();
    if config.paths.dataset.is_some() {
        queries.extend(dataset(config)?.into_iter().map(|e| (e.query_id, e.query)));
    }
    if let Some(m) = manifest {
        let m = load_manifest(existing(m, "manifest")?)?;
        queries.extend(m.samples.into_iter().map(|s| (s.query_id, s.query)));
    }

    let nodes = provider.node_embeddings(&g)?;
    let relations = provider.relation_embeddings(view.relation_names())?;
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for i in 0..g.n_nodes() {
        pairs.push((node_key(i as u32), nodes.row(i).to_vec()));
    }
    for (i, name) in view.relation_names().iter().enumerate() {
        pairs.push((relation_key(name), relations.row(i).to_vec()));
    }
    for (qid, text) in &queries {
        if seen.insert(qid.clone()) {
            pairs.push((query_key(qid), provider.encode_query(qid, text)?));
        }
    }
    let rows = pairs.len();
    let normalized = matches!(provider, EmbeddingProvider::Hash { .. });
    let table = EmbeddingTable::from_pairs(pairs, normalized)?;

    let mut outcome = Outcome::new(json!({}));
    let path = match (&provider, out) {
        (_, Some(p)) => p,
        (EmbeddingProvider::Hash { .. }, None) => config.embeddings_path(),
        (EmbeddingProvider::File(_), None) => {
            outcome.warnings.push("file provider: table checked, nothing written".into());
            outcome.result = json!({"rows": rows, "dim": table.dim()});
            println!("{}", outcome.result);
            return Ok(outcome);
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    table.save(&path)?;
    outcome.result = json!({"embeddings": path, "rows": rows, "dim": table.dim()});
    println!("{}", outcome.result);
    Ok(outcome)
}

fn train(config: &RunConfig) -> Result<Outcome> {
    let manifest_path = required(&config.paths.manifest, "manifest", "--manifest")?;
    let manifest = load_manifest(&manifest_path).with_context(|| format!("loading {}", manifest_path.display()))?;
    let graphs = manifest
        .graphs
        .iter()
        .map(|p| load_graph(existing(p, "graph")?).with_context(|| format!("loading graph {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let provider = provider(config)?;
    let checkpoint = config.checkpoint_path();
    if let Some(dir) = checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let out = fit(&manifest.samples, &graphs, config.training(), &provider, Some(&checkpoint))?;
    save_checkpoint(&out.params, &checkpoint)?;
    for (epoch, l) in out.history.iter().enumerate() {
        println!("epoch {:>3}  loss {:.6}  nll {:.6}  kl {:.6}  rank {:.6}", epoch + 1, l.total, l.nll, l.kl, l.ranking);
    }
    Ok(Outcome::new(json!({
        "checkpoint": checkpoint,
        "samples": manifest.samples.len(),
        "graphs": manifest.graphs,
        "n_params": out.params.n_params(),
        "history": out.history,
    })))
}

fn load_params(config: &RunConfig, dim: usize) -> Result<GfmParams<f32>> {
    let path = config.checkpoint_path();
    let params = load_checkpoint(existing(&path, "checkpoint")?).with_context(|| format!("loading {}", path.display()))?;
    ensure!(
        params.dim == dim,
        "checkpoint {} has dimension {} but the embeddings have {}",
        path.display(),
        params.dim,
        dim
    );
    Ok(params)
}

fn retrieve(config: &RunConfig, out: Option<PathBuf>) -> Result<Outcome> {
    let g = graph(config)?;
    let data = dataset(config)?;
    let provider = provider(config)?;
    let params = load_params(config, provider.dim())?;
    let prepared = PreparedGraph::new(&g, &provider)?;
    let mode = config.precision.mode();
    let plan = if config.workers > 1 {
        Some(match &config.paths.plan {
            Some(p) => PartitionPlan::load(existing(p, "partition plan")?, &g)?,
            None => partition_graph(&g, config.workers, config.seed)?,
        })
    } else {
        None
    };

    let mut lines = Vec::with_capacity(data.len());
    for ex in &data {
        let q = provider.encode_query(&ex.query_id, &ex.query)?;
        let seeds = select_seed_nodes(&ex.query, &q, &g, &prepared.nodes, config.train.seed_top_m)?;
        let scores = match &plan {
            Some(plan) => distributed_forward(&prepared.view, plan, prepared.inputs(&q, &seeds), &params, mode)?,
            None => prepared.score(&params, &q, &seeds, mode)?,
        };
        lines.push(RetrievalLine {
            query_id: ex.query_id.clone(),
            seeds,
            retrieval: topk_per_type(&scores, &g, config.k)?,
        });
    }
    let path = out.unwrap_or_else(|| config.retrievals_path());
    write_jsonl(&path, &lines)?;
    println!("{} retrievals written to {}", lines.len(), path.display());
    Ok(Outcome::new(json!({
        "retrievals": path,
        "queries": lines.len(),
        "k": config.k,
        "workers": config.workers,
    })))
}

fn answer(config: &RunConfig, out: Option<PathBuf>) -> Result<Outcome> {
    let g = graph(config)?;
    let data = dataset(config)?;
    let retrievals: Vec<RetrievalLine> = read_jsonl(&config.retrievals_path(), "retrievals file")?;
    let by_id: std::collections::HashMap<&str, &RetrievalLine> =
        retrievals.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let mut prompts = Vec::with_capacity(data.len());
    for ex in &data {
        let r = by_id
            .get(ex.query_id.as_str())
            .with_context(|| format!("no retrieval for query {}", ex.query_id))?;
        let p = build_prompt_with(&ex.query, &r.retrieval, &g, config.extra_sections)?;
        prompts.push((ex.query_id.clone(), p.text));
    }
    let client = LlmClient::new(&config.llm)?;
    let results = answer_all(&prompts, &client);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for ((qid, _), r) in prompts.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push(format!("{qid}: {e}")),
        }
    }
    let path = out.unwrap_or_else(|| config.answers_path());
    write_jsonl(&path, &records)?;
    if !failures.is_empty() {
        bail!("{} of {} queries failed: {}", failures.len(), prompts.len(), failures.join("; "));
    }
    let unparsed = records.iter().filter(|r| !r.parsed).count();
    println!("{} answers written to {}", records.len(), path.display());
    let mut outcome = Outcome::new(json!({"answers": path, "queries": records.len(), "unparsed": unparsed}));
    if unparsed > 0 {
        outcome.warnings.push(format!("{unparsed} answer(s) had no \"Answer:\" marker"));
    }
    Ok(outcome)
}
