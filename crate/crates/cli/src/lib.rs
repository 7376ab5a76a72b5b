//! Command-line driver: ingest graphs, train, partition, retrieve, answer
//! and evaluate.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

pub use config::{load_config, RunConfig};
pub use report::{write_report, RunReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "quadrag", version, about = "Graph-model retrieval over four-layer knowledge graphs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Ignore unknown configuration keys instead of failing.
    #[arg(long, global = true)]
    pub lax: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub precision: Option<config::Precision>,
    #[arg(long, global = true)]
    pub graph: Option<PathBuf>,
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IngestFormat {
    /// Triples + documents + entity-document links (three JSONL files).
    Kg,
    /// One JSONL file of typed nodes and edges.
    Layered,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Import a graph export into the binary graph format.
    Ingest {
        #[arg(long, value_enum)]
        format: IngestFormat,
        /// Layered JSONL file.
        #[arg(long, required_if_eq("format", "layered"))]
        input: Option<PathBuf>,
        #[arg(long, required_if_eq("format", "kg"))]
        triples: Option<PathBuf>,
        #[arg(long, required_if_eq("format", "kg"))]
        docs: Option<PathBuf>,
        #[arg(long, required_if_eq("format", "kg"))]
        links: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export or check the embedding table for a graph.
    Embed {
        #[arg(long, value_parser = ["hash", "file"])]
        provider: Option<String>,
        #[arg(long)]
        dim: Option<usize>,
        /// Also embed the queries of this training manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the graph model on a query manifest.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Split the graph into balanced parts.
    Partition {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every node for each dataset query and keep the top k per type.
    Retrieve {
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Partitioned inference with this many workers.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build prompts from retrievals and ask the LLM endpoint.
    Answer {
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        retrievals: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score answers and retrievals against the dataset.
    Eval {
        #[arg(long)]
        retrievals: Option<PathBuf>,
        #[arg(long)]
        answers: Option<PathBuf>,
    },
    /// Workers needed to hold a graph's node states in memory.
    Estimate {
        #[arg(long)]
        nodes: u64,
        #[arg(long)]
        dim: u64,
        /// Memory per worker in GB.
        #[arg(long)]
        mem: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Embed { .. } => "embed",
            Command::Train { .. } => "train",
            Command::Partition { .. } => "partition",
            Command::Retrieve { .. } => "retrieve",
            Command::Answer { .. } => "answer",
            Command::Eval { .. } => "eval",
            Command::Estimate { .. } => "estimate",
        }
    }
}

fn path_value(p: &Option<PathBuf>) -> Option<Value> {
    p.as_ref().map(|p| json!(p))
}

/// Flags that map onto configuration keys.
pub fn overrides(cli: &Cli) -> Value {
    let g = &cli.global;
    let mut pairs: Vec<(&str, Option<Value>)> = vec![
        ("seed", g.seed.map(|s| json!(s))),
        ("paths.out_dir", path_value(&g.out_dir)),
        ("precision", g.precision.map(|p| json!(p))),
        ("paths.graph", path_value(&g.graph)),
        ("paths.embeddings", path_value(&g.embeddings)),
        ("paths.dataset", path_value(&g.dataset)),
    ];
    match &cli.command {
        Command::Embed { provider, dim, .. } => {
            pairs.push(("embed.provider", provider.as_ref().map(|p| json!(p))));
            pairs.push(("embed.dim", dim.map(|d| json!(d))));
        }
        Command::Train {
            manifest,
            epochs,
            layers,
            dim,
            lambda,
            checkpoint,
        } => {
            pairs.push(("paths.manifest", path_value(manifest)));
            pairs.push(("train.epochs", epochs.map(|v| json!(v))));
            pairs.push(("train.layers", layers.map(|v| json!(v))));
            pairs.push(("train.dim", dim.map(|v| json!(v))));
            pairs.push(("train.lambda", lambda.map(|v| json!(v))));
            pairs.push(("paths.checkpoint", path_value(checkpoint)));
        }
        Command::Partition { n, .. } => pairs.push(("workers", n.map(|v| json!(v)))),
        Command::Retrieve {
            k,
            checkpoint,
            workers,
            plan,
            ..
        } => {
            pairs.push(("k", k.map(|v| json!(v))));
            pairs.push(("paths.checkpoint", path_value(checkpoint)));
            pairs.push(("workers", workers.map(|v| json!(v))));
            pairs.push(("paths.plan", path_value(plan)));
        }
        Command::Answer {
            endpoint,
            model,
            retrievals,
            ..
        } => {
            pairs.push(("llm.endpoint", endpoint.as_ref().map(|v| json!(v))));
            pairs.push(("llm.model", model.as_ref().map(|v| json!(v))));
            pairs.push(("paths.retrievals", path_value(retrievals)));
        }
        Command::Eval { retrievals, answers } => {
            pairs.push(("paths.retrievals", path_value(retrievals)));
            pairs.push(("paths.answers", path_value(answers)));
        }
        Command::Ingest { .. } | Command::Estimate { .. } => {}
    }
    let set: Vec<(&str, Value)> = pairs.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect();
    config::overrides_from(&set)
}

/// Parses `argv` (program name first), runs the subcommand and writes its
/// report. Returns the process exit code: 0 success, 1 domain error, 2 usage error.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DOMAIN
        }
    }
}

/// Runs a parsed command; returns the report and where it was written.
pub fn run(cli: &Cli) -> anyhow::Result<(RunReport, PathBuf)> {
    let (config, mut warnings) = load_config(cli.global.config.as_deref(), overrides(cli), cli.global.lax)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let started_at = chrono::Utc::now().to_rfc3339();
    let start = Instant::now();
    let outcome = commands::execute(&cli.command, &config)?;
    warnings.extend(outcome.warnings);
    let report = RunReport {
        command: cli.command.name().to_string(),
        started_at,
        wall_time_s: start.elapsed().as_secs_f64(),
        config: config.clone(),
        result: outcome.result,
        warnings,
    };
    let path = write_report(&report, &config.paths.out_dir.join("reports"))?;
    log::info!("report written to {}", path.display());
    Ok((report, path))
}
