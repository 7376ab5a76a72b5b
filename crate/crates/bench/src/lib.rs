//! Seeded workloads shared by the benches in `benches/`.

use quadrag_core::gfm::{GfmInputs, GfmParams};
use quadrag_core::quadgraph::QuadGraph;
use quadrag_core::synthetic::random_graph;
use quadrag_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_ids(len: usize, bound: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(0..bound as u32)).collect()
}

/// A random graph with embeddings and parameters for a forward pass.
pub struct Workload {
    pub graph: QuadGraph,
    pub nodes: Matrix<f32>,
    pub relations: Matrix<f32>,
    pub query: Vec<f32>,
    pub seeds: Vec<u32>,
    pub params: GfmParams<f32>,
}

impl Workload {
    pub fn new(n_nodes: usize, n_edges: usize, layers: usize, dim: usize, seed: u64) -> Self {
        let graph = random_graph(n_nodes, n_edges, seed);
        let nodes = random_matrix(n_nodes, dim, seed + 1);
        let relations = random_matrix(2 * graph.n_relations(), dim, seed + 2);
        let query = random_matrix(1, dim, seed + 3).as_slice().to_vec();
        let seeds = random_ids(n_nodes / 20 + 1, n_nodes, seed + 4);
        let params = GfmParams::new(layers, dim, seed + 5).unwrap();
        Self { graph, nodes, relations, query, seeds, params }
    }

    pub fn inputs(&self) -> GfmInputs<'_, f32> {
        GfmInputs {
            nodes: &self.nodes,
            relations: &self.relations,
            query: &self.query,
            seeds: &self.seeds,
        }
    }
}
