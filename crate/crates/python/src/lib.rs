//! Python bindings. Configs and results cross the boundary as plain dicts
//! with the same keys as the TOML/JSON forms used by the CLI.

use std::fmt::Display;

use dualgnn::expcli::{emit_results, run_experiment_on, ExperimentSpec, OutputFormat};
use dualgnn::graphdata::{self, SbmConfig};
use dualgnn::models::build_adjacency;
use dualgnn::{Matrix, ModelConfig, Seed, TrainConfig};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn from_dict<T: DeserializeOwned + Default>(d: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let Some(d) = d else { return Ok(T::default()) };
    let text: String = d.py().import("json")?.call_method1("dumps", (d,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A node-classification graph: features, undirected adjacency, labels and
/// train/val/test masks.
#[pyclass(module = "dualgnn_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Graph(graphdata::Graph);

#[pymethods]
impl Graph {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        graphdata::load_graph(path).map(Graph).map_err(err)
    }

    /// Samples a stochastic block model; keyword arguments override
    /// `SbmConfig` fields.
    #[staticmethod]
    #[pyo3(signature = (seed = 0, **config))]
    fn sbm(seed: u64, config: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let cfg: SbmConfig = from_dict(config)?;
        graphdata::generate_sbm(&cfg, Seed(seed)).map(Graph).map_err(err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        graphdata::save_graph(&self.0, path).map_err(err)
    }

    fn drop_edges(&self, rate: f64, seed: u64) -> PyResult<Self> {
        graphdata::drop_edges(&self.0, rate, Seed(seed)).map(Graph).map_err(err)
    }

    fn subsample_labels(&self, per_class: usize, seed: u64) -> PyResult<Self> {
        graphdata::subsample_labels(&self.0, per_class, Seed(seed)).map(Graph).map_err(err)
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.0.num_nodes()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.0.num_edges()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.0.feature_dim()
    }

    fn features(&self) -> Vec<Vec<f64>> {
        let f = self.0.features();
        (0..f.rows()).map(|r| f.row(r).to_vec()).collect()
    }

    /// Undirected edges as `(i, j)` with `i < j`.
    fn edges(&self) -> Vec<(usize, usize)> {
        self.0.adjacency().upper_pairs()
    }

    fn labels(&self) -> Vec<Option<usize>> {
        self.0.labels().to_vec()
    }

    fn train_nodes(&self) -> Vec<usize> {
        self.0.train_mask().indices()
    }

    fn val_nodes(&self) -> Vec<usize> {
        self.0.val_mask().indices()
    }

    fn test_nodes(&self) -> Vec<usize> {
        self.0.test_mask().indices()
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(nodes={}, edges={}, classes={}, features={})",
            self.0.num_nodes(),
            self.0.num_edges(),
            self.0.num_classes(),
            self.0.feature_dim()
        )
    }
}

/// Trains one model and returns its run record as a dict.
#[pyfunction]
#[pyo3(signature = (graph, mode = "dual", seed = 0, epochs = None, model = None, train = None))]
fn train<'py>(
    py: Python<'py>,
    graph: &Graph,
    mode: &str,
    seed: u64,
    epochs: Option<usize>,
    model: Option<&Bound<'py, PyDict>>,
    train: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let model_cfg: ModelConfig = from_dict(model)?;
    let mut train_cfg: TrainConfig = from_dict(train)?;
    train_cfg.mode = mode.parse().map_err(PyValueError::new_err)?;
    train_cfg.seed = Seed(seed);
    if let Some(e) = epochs {
        train_cfg.epochs = e;
    }
    let g = &graph.0;
    let record = py.detach(|| dualgnn::train::train(g, &model_cfg, &train_cfg)).map_err(err)?;
    to_py(py, &record)
}

/// Runs an experiment grid. `spec` uses the config-file keys; `graph`,
/// if given, is used instead of `spec["dataset"]`. With `out_dir`, result files are written
/// there too.
#[pyfunction]
#[pyo3(signature = (spec = None, graph = None, out_dir = None, format = "csv"))]
fn run_experiment<'py>(
    py: Python<'py>,
    spec: Option<&Bound<'py, PyDict>>,
    graph: Option<&Graph>,
    out_dir: Option<&str>,
    format: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let spec: ExperimentSpec = from_dict(spec)?;
    let format: OutputFormat = format.parse().map_err(err)?;
    let g = match graph {
        Some(g) => g.0.clone(),
        None => spec.dataset_source().and_then(|d| d.load()).map_err(err)?,
    };
    let result = py.detach(|| run_experiment_on(&spec, &g)).map_err(err)?;
    if let Some(dir) = out_dir {
        emit_results(&result, dir, format).map_err(err)?;
    }
    to_py(py, &result)
}

/// Thresholded Pearson graph of the rows of `s` as `(i, j, weight)`
/// triples, diagonal included.
#[pyfunction]
fn correlation_graph(s: Vec<Vec<f64>>, alpha: f64) -> PyResult<Vec<(usize, usize, f64)>> {
    let cols = s.first().map_or(0, Vec::len);
    let m = Matrix::from_vec(s.len(), cols, s.concat()).map_err(err)?;
    Ok(build_adjacency(&m, alpha).map_err(err)?.iter().collect())
}

#[pymodule]
fn dualgnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Graph>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_graph, m)?)?;
    Ok(())
}
