//! Experiment grids over label rates, edge corruption, cluster counts and
//! correlation thresholds; aggregation and result files.

mod emit;
mod grid;
mod run;

use thiserror::Error;

use crate::graphdata::GraphError;

pub use emit::{emit_results, write_csv, OutputFormat, CSV_HEADER};
pub use grid::{Cell, DatasetSource, ExperimentSpec};
pub use run::{aggregate, run_experiment, run_experiment_on, CellResult, CellRun, ExperimentResult, RunFailure};

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("dataset: {0}")]
    Dataset(#[from] GraphError),
    #[error("aggregate of an empty list")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config file: {0}")]
    Config(#[from] toml::de::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}
