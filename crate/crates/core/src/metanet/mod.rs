//! Weight-space models over KAN-graphs: the WS-KAN message-passing
//! network, a DeepSets baseline over edge features, and a flat MLP over
//! the checkpoint vector.
//!
//! WS-KAN layers run four steps on node states `v` and edge states `e`:
//! forward messages `MLP(v_src, e)` summed into destinations and merged by
//! `MLP(v, agg)`; the same against edge direction into sources (replaced by
//! zeros when not bidirectional); an edge update `MLP(v_src, v_dst, e)`;
//! and a node update `MLP(v, v_fwd, v_bwd)`.

mod batch;
mod config;
mod mlp;
mod model;
mod train;


pub use batch::GraphBatch;
pub use config::{Aggregation, MetaConfig, ModelKind, Pool, Readout};
pub use mlp::Mlp;
pub use model::{MetaModel, Norm, WsKanStates, META_MAGIC, META_VERSION};
pub use train::{evaluate_loss, train_meta, LossKind, Sample, TrainHistory, TrainSettings};
