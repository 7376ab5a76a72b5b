use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss_and_grad, select_seed_nodes, LossBreakdown, QuerySample, Result, TrainError, TrainingConfig};
use crate::embed::{teacher_scores, EmbeddingProvider};
use crate::gfm::{augment_with_inverses, backward, forward, save_checkpoint, GfmInputs, GfmParams, ModelView};
use crate::numerics::{adamw_step, AdamWConfig, AdamWState, Matrix, NumericMode};
use crate::quadgraph::QuadGraph;

/// A graph's model view with its node and relation embeddings.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub view: ModelView,
    pub nodes: Matrix<f32>,
    pub relations: Matrix<f32>,
}

impl PreparedGraph {
    pub fn new(graph: &QuadGraph, provider: &EmbeddingProvider) -> Result<Self> {
        let view = augment_with_inverses(graph);
        let nodes = provider.node_embeddings(graph)?;
        let relations = provider.relation_embeddings(view.relation_names())?;
        Ok(Self { view, nodes, relations })
    }

    pub fn inputs<'a>(&'a self, query: &'a [f32], seeds: &'a [u32]) -> GfmInputs<'a, f32> {
        GfmInputs {
            nodes: &self.nodes,
            relations: &self.relations,
            query,
            seeds,
        }
    }

    /// Relevance of every node to one query.
    pub fn score(&self, params: &GfmParams<f32>, query: &[f32], seeds: &[u32], mode: NumericMode) -> Result<Vec<f32>> {
        Ok(forward(&self.view, self.inputs(query, seeds), params, mode)?.0)
    }
}

#[derive(Debug, Clone)]
struct PreparedSample {
    query: Vec<f32>,
    teacher: Vec<f32>,
    seeds: Vec<u32>,
}

/// Parameters, optimizer state and pre-encoded samples for one training run.
pub struct Trainer {
    config: TrainingConfig,
    graphs: Vec<PreparedGraph>,
    samples: Vec<QuerySample>,
    prepared: Vec<PreparedSample>,
    params: GfmParams<f32>,
    optimizer: AdamWState<f32>,
    rng: ChaCha8Rng,
    history: Vec<LossBreakdown>,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub params: GfmParams<f32>,
    pub history: Vec<LossBreakdown>,
}

impl Trainer {
    pub fn new(
        samples: &[QuerySample],
        graphs: &[QuadGraph],
        config: TrainingConfig,
        provider: &EmbeddingProvider,
    ) -> Result<Self> {
        config.validate()?;
        if provider.dim() != config.dim {
            return Err(TrainError::InvalidConfig(format!(
                "embedding dim {} does not match model dim {}",
                provider.dim(),
                config.dim
            )));
        }
        let prepared_graphs = graphs
            .iter()
            .map(|g| PreparedGraph::new(g, provider))
            .collect::<Result<Vec<_>>>()?;
        let mut prepared = Vec::with_capacity(samples.len());
        for s in samples {
            let Some(graph) = graphs.get(s.graph) else {
                return Err(TrainError::UnknownGraph {
                    query_id: s.query_id.clone(),
                    graph: s.graph,
                    n_graphs: graphs.len(),
                });
            };
            let pg = &prepared_graphs[s.graph];
            let n = graph.n_nodes();
            if let Some(&node) = s.positives.iter().chain(s.seeds.iter().flatten()).find(|&&v| v as usize >= n) {
                return Err(TrainError::NodeOutOfRange { node, n_nodes: n });
            }
            let query = provider.encode_query(&s.query_id, &s.query)?;
            let seeds = match &s.seeds {
                Some(seeds) => seeds.clone(),
                None => select_seed_nodes(&s.query, &query, graph, &pg.nodes, config.seed_top_m)?,
            };
            let teacher = teacher_scores(&pg.nodes, &query)?;
            prepared.push(PreparedSample { query, teacher, seeds });
        }
        let params = GfmParams::new(config.layers, config.dim, config.seed)?;
        let optimizer = AdamWState::new(
            &params,
            AdamWConfig {
                lr: config.lr,
                weight_decay: config.weight_decay,
                ..AdamWConfig::default()
            },
        );
        Ok(Self {
            config,
            graphs: prepared_graphs,
            samples: samples.to_vec(),
            prepared,
            params,
            optimizer,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            history: Vec::new(),
        })
    }

    pub fn params(&self) -> &GfmParams<f32> {
        &self.params
    }

    pub fn history(&self) -> &[LossBreakdown] {
        &self.history
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    /// Seeds actually used for sample `i`.
    pub fn seeds(&self, i: usize) -> &[u32] {
        &self.prepared[i].seeds
    }

    /// Teacher distribution for sample `i`.
    pub fn teacher(&self, i: usize) -> &[f32] {
        &self.prepared[i].teacher
    }

    /// Current model scores for sample `i`.
    pub fn scores(&self, i: usize) -> Result<Vec<f32>> {
        let p = &self.prepared[i];
        self.graphs[self.samples[i].graph].score(&self.params, &p.query, &p.seeds, self.config.mode)
    }

    /// One pass over the shuffled samples; returns the epoch's mean losses.
    pub fn run_epoch(&mut self) -> Result<LossBreakdown> {
        let epoch = self.history.len();
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut self.rng);
        let mut mean = LossBreakdown::default();
        let n_batches = order.len().div_ceil(self.config.batch_size);
        for batch in order.chunks(self.config.batch_size) {
            let mut grads = self.params.zeros_like();
            let w = 1.0 / batch.len() as f32;
            for &i in batch {
                let sample = &self.samples[i];
                let p = &self.prepared[i];
                let pg = &self.graphs[sample.graph];
                let (scores, trace) = forward(&pg.view, pg.inputs(&p.query, &p.seeds), &self.params, self.config.mode)?;
                let (loss, d_scores) = loss_and_grad(&scores, &p.teacher, &sample.positives, &self.config, &mut self.rng)?;
                if !loss.total.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        query_id: sample.query_id.clone(),
                    });
                }
                let g = backward(&trace, &d_scores, &self.params)?;
                grads.add_scaled(&g.params, w);
                mean.add_scaled(&loss, 1.0 / self.samples.len() as f64);
            }
            let norm = grads.l2_norm();
            if !norm.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    query_id: self.samples[batch[0]].query_id.clone(),
                });
            }
            mean.grad_norm += norm / n_batches as f64;
            adamw_step(&mut self.params, &grads, &mut self.optimizer).map_err(crate::gfm::GfmError::from)?;
        }
        self.history.push(mean);
        Ok(mean)
    }

    pub fn into_output(self) -> FitOutput {
        FitOutput {
            params: self.params,
            history: self.history,
        }
    }
}

/// Runs `config.epochs` epochs. When `checkpoint` is given the parameters are
/// written there after every epoch.
pub fn fit(
    samples: &[QuerySample],
    graphs: &[QuadGraph],
    config: TrainingConfig,
    provider: &EmbeddingProvider,
    checkpoint: Option<&Path>,
) -> Result<FitOutput> {
    let mut trainer = Trainer::new(samples, graphs, config, provider)?;
    for epoch in 0..config.epochs {
        let loss = trainer.run_epoch()?;
        log::info!("epoch {epoch}: loss {:.6} (nll {:.6}, kl {:.6}, ranking {:.6})", loss.total, loss.nll, loss.kl, loss.ranking);
        if let Some(path) = checkpoint {
            save_checkpoint(trainer.params(), path)?;
        }
    }
    Ok(trainer.into_output())
}
