//! The query-dependent graph model.
//!
//! Node states start from `InitMLP([h_v ; 1{v ∈ V_q}·h_q])`, go through `L`
//! rounds of DistMult message passing over the graph plus inverse edges, and
//! end in one linear predictor per node type.

mod checkpoint;
mod forward;
mod view;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Mlp, ParamBlocks, Real, ShapeError};
use crate::quadgraph::NodeType;

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use forward::{
    backward, forward, init_node_states, predict_scores, propagate_layer, relation_embed_layer, ForwardTrace,
    GfmGradients, GfmInputs,
};
pub use view::{augment_with_inverses, inverse_name, ModelView};
pub(crate) use forward::{check_inputs, init_rows, seed_mask, stored_inputs, update_rows};

#[derive(Debug, Error)]
pub enum GfmError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("the model needs at least one layer and a positive dimension (got L={layers}, d={dim})")]
    InvalidSize { layers: usize, dim: usize },
    #[error("layer {layer} out of range 1..={layers}")]
    LayerOutOfRange { layer: usize, layers: usize },
    #[error("seed node {node} out of range for {n_nodes} nodes")]
    SeedOutOfRange { node: u32, n_nodes: usize },
    #[error("{what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("trace does not belong to these parameters")]
    StaleTrace,
    #[error("checkpoint is for L={got_layers}, d={got_dim}; expected L={layers}, d={dim}")]
    CheckpointMismatch {
        layers: usize,
        dim: usize,
        got_layers: usize,
        got_dim: usize,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GfmError> = std::result::Result<T, E>;

/// All trainable weights of the model.
///
/// The relation MLPs are `d → d → d`, update MLPs `2d → d → d`, the init
/// layer `2d → d` and each predictor `3d → 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GfmParams<T> {
    pub layers: usize,
    pub dim: usize,
    pub seed: u64,
    pub init: Mlp<T>,
    pub relation: Vec<Mlp<T>>,
    pub update: Vec<Mlp<T>>,
    /// Indexed by [`NodeType::index`].
    pub predictors: Vec<Mlp<T>>,
}

/// Exact number of scalars in a model with `layers` layers of width `dim`.
pub fn param_count(layers: usize, dim: usize) -> usize {
    let d = dim;
    let init = 2 * d * d + d;
    let predictors = 4 * (3 * d + 1);
    let relation = 2 * (d * d + d);
    let update = (2 * d * d + d) + (d * d + d);
    init + predictors + layers * (relation + update)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub layers: usize,
    pub dim: usize,
}

impl<T: Real> GfmParams<T> {
    /// Kaiming-uniform weights and zero biases drawn from `seed`.
    pub fn new(layers: usize, dim: usize, seed: u64) -> Result<Self> {
        if layers == 0 || dim == 0 {
            return Err(GfmError::InvalidSize { layers, dim });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dim;
        let init = Mlp::kaiming(&[2 * d, d], &mut rng);
        let mut relation = Vec::with_capacity(layers);
        let mut update = Vec::with_capacity(layers);
        for _ in 0..layers {
            relation.push(Mlp::kaiming(&[d, d, d], &mut rng));
            update.push(Mlp::kaiming(&[2 * d, d, d], &mut rng));
        }
        let predictors = NodeType::ALL
            .iter()
            .map(|_| Mlp::kaiming(&[3 * d, 1], &mut rng))
            .collect();
        Ok(Self {
            layers,
            dim,
            seed,
            init,
            relation,
            update,
            predictors,
        })
    }

    /// Same layout, every value zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers,
            dim: self.dim,
            seed: self.seed,
            init: self.init.zeros_like(),
            relation: self.relation.iter().map(Mlp::zeros_like).collect(),
            update: self.update.iter().map(Mlp::zeros_like).collect(),
            predictors: self.predictors.iter().map(Mlp::zeros_like).collect(),
        }
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            layers: self.layers,
            dim: self.dim,
        }
    }

    pub fn cast<U: Real>(&self) -> GfmParams<U> {
        GfmParams {
            layers: self.layers,
            dim: self.dim,
            seed: self.seed,
            init: self.init.cast(),
            relation: self.relation.iter().map(Mlp::cast).collect(),
            update: self.update.iter().map(Mlp::cast).collect(),
            predictors: self.predictors.iter().map(Mlp::cast).collect(),
        }
    }

    /// Copy with every value passed through the storage format of `mode`.
    pub fn stored(&self, mode: crate::numerics::NumericMode) -> Self {
        Self {
            layers: self.layers,
            dim: self.dim,
            seed: self.seed,
            init: self.init.stored(mode),
            relation: self.relation.iter().map(|m| m.stored(mode)).collect(),
            update: self.update.iter().map(|m| m.stored(mode)).collect(),
            predictors: self.predictors.iter().map(|m| m.stored(mode)).collect(),
        }
    }

    fn mlps(&self) -> Vec<(String, &Mlp<T>)> {
        let mut out = vec![("init".to_string(), &self.init)];
        for l in 0..self.layers {
            out.push((format!("relation{}", l + 1), &self.relation[l]));
            out.push((format!("update{}", l + 1), &self.update[l]));
        }
        for (t, p) in NodeType::ALL.iter().zip(&self.predictors) {
            out.push((format!("predictor.{}", t.as_str()), p));
        }
        out
    }

    /// `self += scale · other`, block by block.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for b in self.blocks_mut() {
            for x in b {
                *x *= s;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|&x| Real::as_f64(x) * Real::as_f64(x))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Hash of every parameter bit; used to detect stale forward traces.
    pub(crate) fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.blocks() {
            for x in b {
                h ^= Real::as_f64(*x).to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
            h = h.rotate_left(7);
        }
        h
    }
}

impl<T: Real> ParamBlocks<T> for GfmParams<T> {
    fn block_names(&self) -> Vec<String> {
        self.mlps()
            .into_iter()
            .flat_map(|(prefix, m)| m.block_names().into_iter().map(move |n| format!("{prefix}.{n}")))
            .collect()
    }

    fn blocks(&self) -> Vec<&[T]> {
        let mut out = self.init.blocks();
        for l in 0..self.layers {
            out.extend(self.relation[l].blocks());
            out.extend(self.update[l].blocks());
        }
        for p in &self.predictors {
            out.extend(p.blocks());
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.init.blocks_mut();
        for (r, u) in self.relation.iter_mut().zip(self.update.iter_mut()) {
            out.extend(r.blocks_mut());
            out.extend(u.blocks_mut());
        }
        for p in &mut self.predictors {
            out.extend(p.blocks_mut());
        }
        out
    }
}
