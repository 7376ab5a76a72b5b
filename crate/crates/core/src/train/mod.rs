//! Training objective and loop.
//!
//! The minimised loss for one query is
//! `−Σ_{v ∈ V+} log p(v) + λ·KL(p_teacher ‖ p) + ranking`, where the ranking
//! term is the mean `softplus(logit p(neg) − logit p(pos))` over sampled pairs.

mod fit;
mod manifest;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{clamp_prob, teacher_scores, EmbedError};
use crate::gfm::GfmError;
use crate::numerics::{sigmoid, softplus, Matrix, NumericMode, Real};
use crate::quadgraph::{GraphError, NodeType, QuadGraph};

pub use fit::{fit, FitOutput, PreparedGraph, Trainer};
pub use manifest::{load_manifest, read_manifest, Manifest, ManifestLine};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Gfm(#[from] GfmError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("sample {query_id:?} has no positive nodes")]
    EmptyPositives { query_id: String },
    #[error("every node is a positive; no negatives to sample")]
    NoNegatives,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("node {node} out of range for {n_nodes} nodes")]
    NodeOutOfRange { node: u32, n_nodes: usize },
    #[error("sample {query_id:?} refers to graph {graph}, but only {n_graphs} graphs were given")]
    UnknownGraph {
        query_id: String,
        graph: usize,
        n_graphs: usize,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss in epoch {epoch} on sample {query_id:?}")]
    NonFinite { epoch: usize, query_id: String },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// One query paired with a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySample {
    pub query_id: String,
    pub query: String,
    /// Index into the graph list passed to the trainer.
    pub graph: usize,
    /// Explicit `V_q`; when absent, [`select_seed_nodes`] is used.
    pub seeds: Option<Vec<u32>>,
    /// `V+_q`. Empty marks an unlabeled sample that only receives the KL term.
    pub positives: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub layers: usize,
    pub dim: usize,
    pub ranking: bool,
    pub n_negatives: usize,
    /// `m` in the seed rule: how many top teacher-scored nodes join `V_q`.
    pub seed_top_m: usize,
    pub seed: u64,
    pub mode: NumericMode,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            lr: 5e-4,
            weight_decay: 0.0,
            batch_size: 2,
            epochs: 10,
            layers: 6,
            dim: 1024,
            ranking: true,
            n_negatives: 32,
            seed_top_m: 5,
            seed: 0,
            mode: NumericMode::FAST,
        }
    }
}

impl TrainingConfig {
    /// Small model for CPU runs and tests: `d = 64`, `L = 4`.
    pub fn desk() -> Self {
        Self {
            layers: 4,
            dim: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.lambda >= 0.0) {
            return bad("lambda must be >= 0");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.layers == 0 || self.dim == 0 {
            return bad("layers and dim must be >= 1");
        }
        if self.seed_top_m == 0 {
            return bad("seed_top_m must be >= 1");
        }
        Ok(())
    }
}

/// Loss components for one sample, or means over an epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// `−Σ log p(v)` over positives.
    pub nll: f64,
    /// Unweighted Bernoulli KL; `total` includes `λ·kl`.
    pub kl: f64,
    pub ranking: f64,
    pub grad_norm: f64,
}

impl LossBreakdown {
    fn add_scaled(&mut self, other: &LossBreakdown, s: f64) {
        self.total += s * other.total;
        self.nll += s * other.nll;
        self.kl += s * other.kl;
        self.ranking += s * other.ranking;
        self.grad_norm += s * other.grad_norm;
    }
}

fn check_ids(positives: &[u32], n: usize) -> Result<()> {
    match positives.iter().find(|&&v| v as usize >= n) {
        Some(&node) => Err(TrainError::NodeOutOfRange { node, n_nodes: n }),
        None => Ok(()),
    }
}

/// `Σ_{v ∈ V+} log p(v)` on clamped probabilities.
pub fn positive_loglik<T: Real>(scores: &[T], positives: &[u32]) -> Result<f64> {
    if positives.is_empty() {
        return Err(TrainError::EmptyPositives { query_id: String::new() });
    }
    check_ids(positives, scores.len())?;
    Ok(positives
        .iter()
        .map(|&v| clamp_prob(scores[v as usize].as_f64()).ln())
        .sum())
}

/// `Σ_v KL(Bernoulli(p_teacher(v)) ‖ Bernoulli(p_student(v)))` after clamping both.
pub fn bernoulli_kl<T: Real>(p_teacher: &[T], p_student: &[T]) -> Result<f64> {
    if p_teacher.len() != p_student.len() {
        return Err(TrainError::LengthMismatch(p_teacher.len(), p_student.len()));
    }
    Ok(p_teacher
        .iter()
        .zip(p_student)
        .map(|(&t, &s)| kl_term(clamp_prob(t.as_f64()), clamp_prob(s.as_f64())))
        .sum())
}

fn kl_term(t: f64, s: f64) -> f64 {
    if t == s {
        return 0.0;
    }
    t * (t / s).ln() + (1.0 - t) * ((1.0 - t) / (1.0 - s)).ln()
}

fn logit(p: f64) -> f64 {
    let p = clamp_prob(p);
    (p / (1.0 - p)).ln()
}

/// `n_negatives` pairs `(positive, negative)` per positive; negatives are drawn
/// uniformly with replacement from the non-positive nodes.
pub fn sample_pairs(n: usize, positives: &[u32], n_negatives: usize, rng: &mut impl Rng) -> Result<Vec<(u32, u32)>> {
    check_ids(positives, n)?;
    let mut is_pos = vec![false; n];
    for &v in positives {
        is_pos[v as usize] = true;
    }
    let negatives: Vec<u32> = (0..n as u32).filter(|&v| !is_pos[v as usize]).collect();
    if negatives.is_empty() {
        return Err(TrainError::NoNegatives);
    }
    let mut pairs = Vec::with_capacity(positives.len() * n_negatives);
    for &p in positives {
        for _ in 0..n_negatives {
            pairs.push((p, negatives[rng.gen_range(0..negatives.len())]));
        }
    }
    Ok(pairs)
}

/// Mean `softplus(logit p(neg) − logit p(pos))` over the given pairs.
pub fn ranking_loss_pairs<T: Real>(scores: &[T], pairs: &[(u32, u32)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let sum: f64 = pairs
        .iter()
        .map(|&(p, n)| softplus(logit(scores[n as usize].as_f64()) - logit(scores[p as usize].as_f64())))
        .sum();
    sum / pairs.len() as f64
}

pub fn ranking_loss<T: Real>(scores: &[T], positives: &[u32], n_negatives: usize, rng: &mut impl Rng) -> Result<f64> {
    let pairs = sample_pairs(scores.len(), positives, n_negatives, rng)?;
    Ok(ranking_loss_pairs(scores, &pairs))
}

/// Loss for one sample together with `∂loss/∂p(v)` for every node.
///
/// Unlabeled samples (no positives) contribute only `λ·KL`.
pub fn loss_and_grad<T: Real>(
    scores: &[T],
    teacher: &[T],
    positives: &[u32],
    config: &TrainingConfig,
    rng: &mut impl Rng,
) -> Result<(LossBreakdown, Vec<T>)> {
    let n = scores.len();
    if teacher.len() != n {
        return Err(TrainError::LengthMismatch(teacher.len(), n));
    }
    check_ids(positives, n)?;
    let p: Vec<f64> = scores.iter().map(|s| clamp_prob(s.as_f64())).collect();
    let mut grad = vec![0.0f64; n];
    let mut out = LossBreakdown::default();

    for &v in positives {
        let pv = p[v as usize];
        out.nll -= pv.ln();
        grad[v as usize] -= 1.0 / pv;
    }

    let lambda = config.lambda;
    for (v, &t) in teacher.iter().enumerate() {
        let (t, s) = (clamp_prob(t.as_f64()), p[v]);
        out.kl += kl_term(t, s);
        if lambda != 0.0 {
            grad[v] += lambda * ((1.0 - t) / (1.0 - s) - t / s);
        }
    }

    if config.ranking && !positives.is_empty() {
        let pairs = sample_pairs(n, positives, config.n_negatives, rng)?;
        out.ranking = ranking_loss_pairs(scores, &pairs);
        let w = 1.0 / pairs.len().max(1) as f64;
        for &(pos, neg) in &pairs {
            let (pp, pn) = (p[pos as usize], p[neg as usize]);
            let g = w * sigmoid(logit(pn) - logit(pp));
            grad[neg as usize] += g / (pn * (1.0 - pn));
            grad[pos as usize] -= g / (pp * (1.0 - pp));
        }
    }
    out.total = out.nll + lambda * out.kl + out.ranking;
    Ok((out, grad.into_iter().map(T::from_f64).collect()))
}

/// [`loss_and_grad`] without the gradient; errors on empty positives.
pub fn total_loss<T: Real>(
    scores: &[T],
    teacher: &[T],
    sample: &QuerySample,
    config: &TrainingConfig,
    rng: &mut impl Rng,
) -> Result<LossBreakdown> {
    if sample.positives.is_empty() {
        return Err(TrainError::EmptyPositives {
            query_id: sample.query_id.clone(),
        });
    }
    Ok(loss_and_grad(scores, teacher, &sample.positives, config, rng)?.0)
}

/// `V_q`: entities whose text occurs in the query (case-insensitive) plus
/// the `m` nodes with the highest teacher score, ties to the lower id.
/// Returned sorted and deduplicated.
pub fn select_seed_nodes(
    query: &str,
    query_embedding: &[f32],
    graph: &QuadGraph,
    nodes: &Matrix<f32>,
    m: usize,
) -> Result<Vec<u32>> {
    let lower = query.to_lowercase();
    let mut seeds: Vec<u32> = graph
        .nodes_of_type(NodeType::Entity)
        .filter(|&v| {
            let t = graph.node(v).text.to_lowercase();
            !t.trim().is_empty() && lower.contains(t.as_str())
        })
        .collect();
    let teacher = teacher_scores(nodes, query_embedding)?;
    let mut order: Vec<u32> = (0..teacher.len() as u32).collect();
    order.sort_by(|&a, &b| teacher[b as usize].total_cmp(&teacher[a as usize]).then(a.cmp(&b)));
    seeds.extend(order.into_iter().take(m));
    seeds.sort_unstable();
    seeds.dedup();
    Ok(seeds)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}
