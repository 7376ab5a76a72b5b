//! Retrieval over four-layer knowledge graphs with a query-dependent
//! relational GNN.
//!
//! The crate is organised bottom-up:
//!
//! - [`quadgraph`]: the typed graph, importers, splitting and the binary format
//! - [`embed`]: text embeddings and teacher pseudo-labels
//! - [`numerics`]: dense kernels with exact gradients, AdamW, gradient checks
//! - [`gfm`]: the graph model (forward, backward, checkpoints)
//! - [`train`]: objective, seed selection and the training loop
//! - [`partition`]: balanced partitioning and multi-worker inference
//! - [`reason`]: top-k retrieval, prompting, LLM calls and QA metrics
//! - [`synthetic`]: generated graphs, including the planted two-hop task

pub mod embed;
pub mod gfm;
pub mod numerics;
pub mod partition;
pub mod quadgraph;
pub mod reason;
pub mod synthetic;
pub mod train;

pub use gfm::{GfmParams, ModelView};
pub use numerics::{Matrix, NumericMode, Real};
pub use quadgraph::{Edge, NodeType, QuadGraph};
pub use partition::PartitionPlan;
pub use reason::{Metrics, RetrievalResult};
pub use train::TrainingConfig;
