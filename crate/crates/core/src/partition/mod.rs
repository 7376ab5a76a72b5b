//! Balanced partitioning and partitioned (multi-worker) inference.

mod distributed;
mod multilevel;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gfm::GfmError;
use crate::quadgraph::QuadGraph;

pub use distributed::{build_shards, distributed_forward, WorkerShard};

/// Allowed excess of the largest part over `ceil(n / N)`.
pub const IMBALANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("cannot split {n_nodes} nodes into {n_parts} parts")]
    TooManyParts { n_parts: usize, n_nodes: usize },
    #[error("the number of parts must be at least 1")]
    ZeroParts,
    #[error("plan covers {plan} nodes but the graph has {graph}")]
    PlanMismatch { plan: usize, graph: usize },
    #[error("node {node} assigned to part {part}, but there are only {n_parts} parts")]
    InvalidAssignment { node: usize, part: u32, n_parts: usize },
    #[error("invalid estimator input: {0}")]
    InvalidEstimate(String),
    #[error(transparent)]
    Gfm(#[from] GfmError),
    #[error("malformed plan file: {0}")]
    Format(String),
    #[error("worker thread panicked")]
    Worker,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = PartitionError> = std::result::Result<T, E>;

/// Node → part assignment plus the derived cut and size statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub n_parts: usize,
    pub assignment: Vec<u32>,
    pub seed: u64,
    pub part_sizes: Vec<usize>,
    /// Graph edges whose endpoints lie in different parts.
    pub edge_cut: usize,
    /// Cut edge ids grouped by `(assignment(src), assignment(dst))`.
    pub boundary_edges: BTreeMap<(u32, u32), Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    n_parts: usize,
    assignment: Vec<u32>,
    seed: u64,
}

/// Largest part size allowed for `n` nodes in `n_parts` parts.
pub fn max_part_size(n: usize, n_parts: usize) -> usize {
    (n.div_ceil(n_parts) as f64 * (1.0 + IMBALANCE)).floor() as usize
}

impl PartitionPlan {
    /// Validates an assignment against `graph` and derives the statistics.
    pub fn new(graph: &QuadGraph, n_parts: usize, assignment: Vec<u32>, seed: u64) -> Result<Self> {
        if n_parts == 0 {
            return Err(PartitionError::ZeroParts);
        }
        if assignment.len() != graph.n_nodes() {
            return Err(PartitionError::PlanMismatch {
                plan: assignment.len(),
                graph: graph.n_nodes(),
            });
        }
        let mut part_sizes = vec![0usize; n_parts];
        for (node, &part) in assignment.iter().enumerate() {
            if part as usize >= n_parts {
                return Err(PartitionError::InvalidAssignment { node, part, n_parts });
            }
            part_sizes[part as usize] += 1;
        }
        let mut boundary_edges: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
        for (i, e) in graph.edges().iter().enumerate() {
            let (a, b) = (assignment[e.src as usize], assignment[e.dst as usize]);
            if a != b {
                boundary_edges.entry((a, b)).or_default().push(i as u32);
            }
        }
        let edge_cut = boundary_edges.values().map(Vec::len).sum();
        Ok(Self {
            n_parts,
            assignment,
            seed,
            part_sizes,
            edge_cut,
            boundary_edges,
        })
    }

    pub fn part_of(&self, node: u32) -> u32 {
        self.assignment[node as usize]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = PlanFile {
            n_parts: self.n_parts,
            assignment: self.assignment.clone(),
            seed: self.seed,
        };
        let json = serde_json::to_string(&file).map_err(|e| PartitionError::Format(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    /// Reads a plan file and validates it against `graph`.
    pub fn load(path: &Path, graph: &QuadGraph) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: PlanFile = serde_json::from_str(&text).map_err(|e| PartitionError::Format(e.to_string()))?;
        Self::new(graph, file.n_parts, file.assignment, file.seed)
    }
}

/// Splits the nodes into `n_parts` parts of at most
/// `floor(ceil(n / N) · 1.05)` nodes, keeping the edge-cut low.
pub fn partition_graph(graph: &QuadGraph, n_parts: usize, seed: u64) -> Result<PartitionPlan> {
    let n = graph.n_nodes();
    if n_parts == 0 {
        return Err(PartitionError::ZeroParts);
    }
    if n_parts > n {
        return Err(PartitionError::TooManyParts { n_parts, n_nodes: n });
    }
    let g = multilevel::WGraph::from_edges(n, graph.edges().iter().map(|e| (e.src, e.dst)), vec![1; n]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = multilevel::multilevel(&g, n_parts, max_part_size(n, n_parts) as u64, &mut rng);
    PartitionPlan::new(graph, n_parts, assignment, seed)
}

/// Balanced assignment with nodes dealt to parts in a random order; the
/// baseline the partitioner is compared against.
pub fn random_balanced_plan(graph: &QuadGraph, n_parts: usize, seed: u64) -> Result<PartitionPlan> {
    let mut order: Vec<usize> = (0..graph.n_nodes()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0u32; order.len()];
    for (i, &v) in order.iter().enumerate() {
        assignment[v] = (i % n_parts.max(1)) as u32;
    }
    PartitionPlan::new(graph, n_parts, assignment, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub n_parts: usize,
    pub edge_cut: usize,
    /// Largest part over `n / N`.
    pub balance: f64,
    pub part_sizes: Vec<usize>,
    /// Messages crossing from part `src` to part `dst` per layer, counting both
    /// directions of every cut edge (the model adds inverse edges).
    pub boundary_messages: Vec<((u32, u32), usize)>,
}

pub fn plan_stats(plan: &PartitionPlan) -> PlanStats {
    let n: usize = plan.part_sizes.iter().sum();
    let ideal = n as f64 / plan.n_parts as f64;
    let largest = plan.part_sizes.iter().copied().max().unwrap_or(0) as f64;
    let mut counts: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (&(a, b), ids) in &plan.boundary_edges {
        *counts.entry((a, b)).or_default() += ids.len();
        *counts.entry((b, a)).or_default() += ids.len();
    }
    PlanStats {
        n_parts: plan.n_parts,
        edge_cut: plan.edge_cut,
        balance: if ideal > 0.0 { largest / ideal } else { 1.0 },
        part_sizes: plan.part_sizes.clone(),
        boundary_messages: counts.into_iter().collect(),
    }
}

/// Workers needed for full-graph execution:
/// `ceil(n_nodes · d · 10⁻⁶ / 2.56 / mem_gb)`, at least 1.
pub fn estimate_workers(n_nodes: u64, dim: u64, mem_gb: f64) -> Result<u64> {
    if n_nodes == 0 || dim == 0 || !(mem_gb > 0.0) || !mem_gb.is_finite() {
        return Err(PartitionError::InvalidEstimate(format!(
            "nodes={n_nodes}, dim={dim}, mem={mem_gb} (all must be positive)"
        )));
    }
    // one division keeps exact cases exact: 800000·8192 / (2.56e6·80) = 32
    let raw = (n_nodes as f64 * dim as f64) / (2.56e6 * mem_gb);
    Ok((raw.ceil() as u64).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_cases() {
        assert_eq!(estimate_workers(800_000, 8192, 80.0).unwrap(), 32);
        assert_eq!(estimate_workers(100_000, 1024, 80.0).unwrap(), 1);
        assert_eq!(estimate_workers(1, 1, 80.0).unwrap(), 1);
        assert!(estimate_workers(0, 1, 80.0).is_err());
        assert!(estimate_workers(1, 1, 0.0).is_err());
        assert!(estimate_workers(1, 1, -3.0).is_err());
    }

    #[test]
    fn max_size_bound() {
        assert_eq!(max_part_size(100, 4), 26);
        assert_eq!(max_part_size(100, 1), 105);
        assert_eq!(max_part_size(100, 2), 52);
    }
}
