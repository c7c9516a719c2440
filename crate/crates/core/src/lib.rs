//! Dual GNN semi-supervised node classification.
//!
//! A primary GCN classifies nodes on the input graph. A clustering head on
//! its embeddings produces fine-grained soft assignments; thresholded Pearson
//! correlation between assignment rows yields a second graph, on which an
//! auxiliary GCN classifies the same nodes. Everything trains jointly on the
//! sum of both cross-entropies and a relaxed min-cut clustering loss.
//!
//! Modules, bottom-up: [`diffmath`] (reverse-mode autodiff), [`graphdata`]
//! (graphs, file format, corruption protocols), [`models`], [`losses`],
//! [`train`], and [`expcli`] (experiment grids and result files).

pub mod diffmath;
pub mod expcli;
pub mod graphdata;
pub mod losses;
pub mod models;
pub mod train;

pub use diffmath::{Matrix, SparseMatrix, Tape, Tensor};
pub use graphdata::{Graph, Seed};
pub use models::{DualModelParams, ModelConfig};
pub use train::{Mode, RunRecord, TrainConfig};
