use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{uses_full_split, Cell, ExperimentSpec};
use super::ExpError;
use crate::graphdata::{drop_edges, subsample_labels, Graph};
use crate::models::ModelConfig;
use crate::train::{train, RunRecord, TrainConfig};

/// One finished run of a cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub structure: usize,
    pub repeat: usize,
    pub record: RunRecord,
}

/// A run that errored; the message names the cause.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub cell: usize,
    pub structure: usize,
    pub repeat: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    /// Successful runs, ordered by structure then repeat.
    pub runs: Vec<CellRun>,
    /// Mean and population std of the reported test accuracy; absent when
    /// every run failed.
    pub mean_acc: Option<f64>,
    pub std_acc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub cells: Vec<CellResult>,
    pub failures: Vec<RunFailure>,
}

/// Arithmetic mean and population standard deviation, two-pass.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64), ExpError> {
    if values.is_empty() {
        return Err(ExpError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

struct Job {
    cell: usize,
    structure: usize,
    repeat: usize,
}

/// The graph a run trains on: label subset and corruption for structure `i`.
fn structure_graph(spec: &ExperimentSpec, g: &Graph, cell: &Cell, i: usize) -> Result<Graph, ExpError> {
    let mut out = match cell.labels_per_class {
        Some(l) if !uses_full_split(Some(l), g) => subsample_labels(g, l, spec.label_seed(l, i))?,
        _ => g.clone(),
    };
    if cell.edge_drop > 0.0 {
        out = drop_edges(&out, cell.edge_drop, spec.drop_seed(cell.edge_drop, i))?;
    }
    Ok(out)
}

fn model_config(spec: &ExperimentSpec, cell: &Cell) -> ModelConfig {
    ModelConfig { clusters: cell.clusters, alpha: cell.alpha, ..spec.model.clone() }
}

fn run_one(spec: &ExperimentSpec, g: &Graph, cell: &Cell, job: &Job) -> Result<RunRecord, String> {
    let graph = structure_graph(spec, g, cell, job.structure).map_err(|e| e.to_string())?;
    let model_cfg = model_config(spec, cell);
    let train_cfg =
        TrainConfig { mode: cell.mode, seed: spec.train_seed(cell, job.structure, job.repeat), ..spec.train.clone() };
    train(&graph, &model_cfg, &train_cfg).map_err(|e| e.to_string())
}

/// Runs every cell of the grid on `spec.workers` threads. Failed runs are
/// collected rather than aborting the grid; results come back in grid order
/// whatever the scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, ExpError> {
    spec.validate()?;
    let g = spec.dataset_source()?.load()?;
    run_experiment_on(spec, &g)
}

/// As [`run_experiment`] on an already loaded graph.
pub fn run_experiment_on(spec: &ExperimentSpec, g: &Graph) -> Result<ExperimentResult, ExpError> {
    spec.validate()?;
    spec.train.validate().map_err(|e| ExpError::InvalidSpec(e.to_string()))?;
    let cells = spec.cells(g.num_classes());
    for cell in &cells {
        model_config(spec, cell).validate(g.num_classes()).map_err(|e| ExpError::InvalidSpec(e.to_string()))?;
        if let Some(l) = cell.labels_per_class {
            // surface shortfalls once, up front, instead of in every run
            structure_graph(spec, g, &Cell { edge_drop: 0.0, ..cell.clone() }, 0)
                .map_err(|e| ExpError::InvalidSpec(format!("{l} labels per class: {e}")))?;
        }
    }

    let jobs: Vec<Job> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, cell)| {
            let structures = spec.structures_for(cell, g);
            (0..structures).flat_map(move |s| (0..spec.repeats).map(move |r| Job { cell: c, structure: s, repeat: r }))
        })
        .collect();
    log::info!("{} cells, {} runs, {} workers", cells.len(), jobs.len(), spec.workers);

    let pool = rayon::ThreadPoolBuilder::new().num_threads(spec.workers).build()?;
    let outcomes: Vec<Result<RunRecord, String>> =
        pool.install(|| jobs.par_iter().map(|job| run_one(spec, g, &cells[job.cell], job)).collect());

    let mut results: Vec<CellResult> =
        cells.into_iter().map(|cell| CellResult { cell, runs: Vec::new(), mean_acc: None, std_acc: None }).collect();
    let mut failures = Vec::new();
    for (job, outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(record) => results[job.cell].runs.push(CellRun { structure: job.structure, repeat: job.repeat, record }),
            Err(message) => {
                log::error!("cell {} structure {} repeat {}: {message}", job.cell, job.structure, job.repeat);
                failures.push(RunFailure { cell: job.cell, structure: job.structure, repeat: job.repeat, message });
            }
        }
    }
    for cell in &mut results {
        let accs: Vec<f64> = cell.runs.iter().map(|r| r.record.final_test_accuracy).collect();
        if let Ok((mean, std)) = aggregate(&accs) {
            cell.mean_acc = Some(mean);
            cell.std_acc = Some(std);
        }
    }
    Ok(ExperimentResult { spec: spec.clone(), cells: results, failures })
}
