//! Run configuration: defaults, then a JSON file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use quadrag_core::embed::ProviderKind;
use quadrag_core::numerics::NumericMode;
use quadrag_core::reason::LlmConfig;
use quadrag_core::train::TrainingConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub graph: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    pub retrievals: Option<PathBuf>,
    pub answers: Option<PathBuf>,
    /// Default home for every artifact not given explicitly, and for reports.
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Fast,
    /// Exactly rounded sums; bitwise reproducible across worker counts.
    Deterministic,
    /// bfloat16 storage with 32-bit accumulation.
    Half,
}

impl Precision {
    pub fn mode(self) -> NumericMode {
        match self {
            Precision::Fast => NumericMode::FAST,
            Precision::Deterministic => NumericMode::DETERMINISTIC,
            Precision::Half => NumericMode::HALF_STORAGE,
        }
    }
}

/// Optimisation settings; the seed and numeric mode come from the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub layers: usize,
    pub dim: usize,
    pub ranking: bool,
    pub n_negatives: usize,
    pub seed_top_m: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            lambda: t.lambda,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: t.epochs,
            layers: t.layers,
            dim: t.dim,
            ranking: t.ranking,
            n_negatives: t.n_negatives,
            seed_top_m: t.seed_top_m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedSection {
    pub provider: ProviderKind,
    /// Defaults to the model dimension.
    pub dim: Option<usize>,
    pub hash_seed: u64,
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Hash,
            dim: None,
            hash_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub train: TrainSection,
    pub embed: EmbedSection,
    pub llm: LlmConfig,
    /// Nodes retrieved per type.
    pub k: usize,
    /// Workers for partitioned inference; 1 runs the single-worker pass.
    pub workers: usize,
    pub precision: Precision,
    /// Drives initialisation, negative sampling and partitioning.
    pub seed: u64,
    /// Render attribute and community retrievals in the prompt too.
    pub extra_sections: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths {
                out_dir: PathBuf::from("runs"),
                ..Paths::default()
            },
            train: TrainSection::default(),
            embed: EmbedSection::default(),
            llm: LlmConfig::default(),
            k: 5,
            workers: 1,
            precision: Precision::Fast,
            seed: 0,
            extra_sections: false,
        }
    }
}

impl RunConfig {
    pub fn training(&self) -> TrainingConfig {
        let t = &self.train;
        TrainingConfig {
            lambda: t.lambda,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: t.epochs,
            layers: t.layers,
            dim: t.dim,
            ranking: t.ranking,
            n_negatives: t.n_negatives,
            seed_top_m: t.seed_top_m,
            seed: self.seed,
            mode: self.precision.mode(),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embed.dim.unwrap_or(self.train.dim)
    }

    /// An explicit path, or `name` inside the output directory.
    pub fn artifact(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.paths.out_dir.join(name))
    }

    pub fn graph_path(&self) -> PathBuf {
        self.artifact(&self.paths.graph, "graph.qg")
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.artifact(&self.paths.embeddings, "embeddings.emb")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.artifact(&self.paths.checkpoint, "model.gfm")
    }

    pub fn plan_path(&self) -> PathBuf {
        self.artifact(&self.paths.plan, "plan.json")
    }

    pub fn retrievals_path(&self) -> PathBuf {
        self.artifact(&self.paths.retrievals, "retrievals.jsonl")
    }

    pub fn answers_path(&self) -> PathBuf {
        self.artifact(&self.paths.answers, "answers.jsonl")
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            bail!("k must be at least 1");
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.llm.max_in_flight == 0 {
            bail!("llm.max_in_flight must be at least 1");
        }
        self.training().validate()?;
        Ok(())
    }
}

/// Dotted paths of keys in `value` that `template` does not have.
fn unknown_keys(value: &Value, template: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(v), Value::Object(t)) = (value, template) else { return };
    for (k, child) in v {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match t.get(k) {
            None => out.push(path),
            Some(tc) => unknown_keys(child, tc, &path, out),
        }
    }
}

fn remove_path(value: &mut Value, path: &str) {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().expect("non-empty key path");
    let mut cur = value;
    for p in parts {
        match cur.get_mut(p) {
            Some(next) => cur = next,
            None => return,
        }
    }
    if let Value::Object(m) = cur {
        m.remove(last);
    }
}

/// Recursive merge; objects merge key by key, anything else replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Builds a nested object from dotted-key overrides.
pub fn overrides_from(pairs: &[(&str, Value)]) -> Value {
    let mut root = Value::Object(Map::new());
    for (key, v) in pairs {
        let mut patch = v.clone();
        for part in key.rsplit('.') {
            let mut m = Map::new();
            m.insert(part.to_string(), patch);
            patch = Value::Object(m);
        }
        merge(&mut root, patch);
    }
    root
}

/// Effective configuration plus any warnings raised while loading it.
///
/// Unknown keys in the file are errors unless `lax`, in which case they are
/// dropped with a warning.
pub fn load_config(path: Option<&Path>, overrides: Value, lax: bool) -> Result<(RunConfig, Vec<String>)> {
    let mut value = serde_json::to_value(RunConfig::default())?;
    let template = value.clone();
    let mut warnings = Vec::new();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut file: Value = if text.trim().is_empty() {
            Value::Object(Map::new())
        } else {
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        };
        if !file.is_object() {
            bail!("config {} must be a JSON object", path.display());
        }
        let mut unknown = Vec::new();
        unknown_keys(&file, &template, "", &mut unknown);
        if !unknown.is_empty() {
            if !lax {
                bail!("unknown config key(s) in {}: {}", path.display(), unknown.join(", "));
            }
            for key in &unknown {
                warnings.push(format!("ignoring unknown config key {key}"));
                remove_path(&mut file, key);
            }
        }
        merge(&mut value, file);
    }
    merge(&mut value, overrides);
    let config: RunConfig = serde_json::from_value(value).context("invalid config value")?;
    config.validate()?;
    Ok((config, warnings))
}
