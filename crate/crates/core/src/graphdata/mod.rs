//! Graph instances: data model, on-disk format, normalization operators,
//! corruption and label-subsampling protocols, synthetic generation.

mod corrupt;
mod format;
mod graph;
mod normalize;
mod sbm;
mod seed;

pub use corrupt::{drop_edges, subsample_labels};
pub use format::{load_graph, parse_graph, save_graph, write_graph, FORMAT_MAGIC};
pub use graph::{Graph, NodeMask};
pub use normalize::{degree_vector, normalize_sym, renormalize};
pub use sbm::{generate_sbm, SbmConfig};
pub use seed::Seed;

use thiserror::Error;

use crate::diffmath::SparseError;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("adjacency: {0}")]
    Adjacency(#[from] SparseError),
    #[error("adjacency must be binary with zero diagonal: entry ({row}, {col}) = {weight}")]
    NotBinary { row: usize, col: usize, weight: f64 },
    #[error("node {node} is in both the {first} and {second} masks")]
    MaskOverlap { node: usize, first: &'static str, second: &'static str },
    #[error("node {node} in the {mask} mask has no valid label")]
    MissingLabel { node: usize, mask: &'static str },
    #[error("label {label} of node {node} is outside 0..{num_classes}")]
    LabelOutOfRange { node: usize, label: usize, num_classes: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("negative weight {weight} at ({row}, {col})")]
    NegativeWeight { row: usize, col: usize, weight: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("class {class} has {available} training nodes, {requested} requested")]
    NotEnoughLabels { class: usize, available: usize, requested: usize },
}
