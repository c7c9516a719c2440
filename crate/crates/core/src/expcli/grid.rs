use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ExpError;
use crate::graphdata::{generate_sbm, load_graph, Graph, SbmConfig, Seed};
use crate::models::ModelConfig;
use crate::train::{Mode, TrainConfig};

/// Where the graph comes from: a file in the text graph format, or a named
/// SBM preset with an optional generator seed (`sbm:default`, `sbm:cliques:7`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetSource {
    File(PathBuf),
    Sbm { preset: String, seed: u64 },
}

impl DatasetSource {
    pub fn sbm_preset(name: &str) -> Option<SbmConfig> {
        match name {
            "default" => Some(SbmConfig::default()),
            // four disjoint cliques with nearly noiseless features
            "cliques" => Some(SbmConfig {
                blocks: 4,
                nodes_per_block: 20,
                p_intra: 1.0,
                q_inter: 0.0,
                feature_noise: 0.05,
                train_per_class: 5,
                val_size: 20,
                test_size: 40,
                ..SbmConfig::default()
            }),
            _ => None,
        }
    }

    pub fn load(&self) -> Result<Graph, ExpError> {
        match self {
            DatasetSource::File(p) => Ok(load_graph(p)?),
            DatasetSource::Sbm { preset, seed } => {
                let cfg = Self::sbm_preset(preset)
                    .ok_or_else(|| ExpError::InvalidSpec(format!("unknown SBM preset {preset:?}")))?;
                Ok(generate_sbm(&cfg, Seed(*seed))?)
            }
        }
    }
}

impl FromStr for DatasetSource {
    type Err = ExpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let Some(rest) = s.strip_prefix("sbm:") else {
            return Ok(DatasetSource::File(Path::new(s).to_path_buf()));
        };
        let (preset, seed) = match rest.split_once(':') {
            Some((p, seed)) => {
                let seed = seed.parse().map_err(|_| ExpError::InvalidSpec(format!("bad SBM seed {seed:?}")))?;
                (p, seed)
            }
            None => (rest, 0),
        };
        if Self::sbm_preset(preset).is_none() {
            return Err(ExpError::InvalidSpec(format!("unknown SBM preset {preset:?} (default, cliques)")));
        }
        Ok(DatasetSource::Sbm { preset: preset.to_string(), seed })
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::File(p) => write!(f, "{}", p.display()),
            DatasetSource::Sbm { preset, seed } => write!(f, "sbm:{preset}:{seed}"),
        }
    }
}

/// A grid of runs. Every combination of label rate, edge-drop rate, cluster
/// multiplier, threshold and mode is one cell; each cell trains on
/// `structures` random label subsets / corrupted graphs, `repeats` times
/// each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// `sbm:<preset>[:seed]` or a graph file path.
    pub dataset: String,
    pub modes: Vec<Mode>,
    /// Training labels kept per class. Empty means the dataset's own split.
    pub labels_per_class: Vec<usize>,
    /// Fractions of edges removed. Empty means the clean graph only.
    pub edge_drop: Vec<f64>,
    /// Cluster count as a multiple of the class count.
    pub k_mult: Vec<usize>,
    pub alpha: Vec<f64>,
    pub structures: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Parallel training runs; results do not depend on it.
    #[serde(skip_serializing)]
    pub workers: usize,
    /// Architecture settings. `clusters` and `alpha` are set per cell.
    pub model: ModelConfig,
    /// Optimizer settings. `mode` and `seed` are set per run.
    pub train: TrainConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            dataset: "sbm:default".into(),
            modes: vec![Mode::Baseline, Mode::Dual],
            labels_per_class: Vec::new(),
            edge_drop: Vec::new(),
            k_mult: vec![10],
            alpha: vec![0.7],
            structures: 10,
            repeats: 5,
            seed: 0,
            workers: 1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// One point of the grid. `labels_per_class` is `None` for the dataset's own
/// training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mode: Mode,
    pub labels_per_class: Option<usize>,
    pub edge_drop: f64,
    pub k_mult: usize,
    /// Cluster count `k_mult · C`.
    pub clusters: usize,
    pub alpha: f64,
}

// Stream tags keeping the seed families apart.
const LABEL_STREAM: u64 = 1;
const DROP_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, ExpError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExpError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn dataset_source(&self) -> Result<DatasetSource, ExpError> {
        self.dataset.parse()
    }

    /// Checks everything that does not need the graph.
    pub fn validate(&self) -> Result<(), ExpError> {
        let bad = |m: String| Err(ExpError::InvalidSpec(m));
        self.dataset_source()?;
        if self.modes.is_empty() {
            return bad("no modes".into());
        }
        if self.labels_per_class.contains(&0) {
            return bad("labels per class must be at least 1".into());
        }
        if let Some(r) = self.edge_drop.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return bad(format!("edge drop rate {r} outside [0, 1]"));
        }
        if self.k_mult.is_empty() || self.k_mult.contains(&0) {
            return bad("k_mult needs at least one positive value".into());
        }
        if self.alpha.is_empty() {
            return bad("alpha needs at least one value".into());
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("alpha {a} outside (0, 1)"));
        }
        if self.structures * self.repeats == 0 {
            return bad("structures and repeats must both be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }

    fn label_settings(&self) -> Vec<Option<usize>> {
        if self.labels_per_class.is_empty() {
            vec![None]
        } else {
            self.labels_per_class.iter().map(|&l| Some(l)).collect()
        }
    }

    fn drop_settings(&self) -> Vec<f64> {
        if self.edge_drop.is_empty() {
            vec![0.0]
        } else {
            self.edge_drop.clone()
        }
    }

    /// Cells in output order: label rate, drop rate, K, α, then mode.
    pub fn cells(&self, num_classes: usize) -> Vec<Cell> {
        let mut out = Vec::new();
        for labels in self.label_settings() {
            for drop in self.drop_settings() {
                for &k_mult in &self.k_mult {
                    for &alpha in &self.alpha {
                        for &mode in &self.modes {
                            out.push(Cell {
                                mode,
                                labels_per_class: labels,
                                edge_drop: drop,
                                k_mult,
                                clusters: k_mult * num_classes,
                                alpha,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Number of random structures for a cell: one when the cell uses the
    /// whole training split on the clean graph, since there is nothing to
    /// randomize.
    pub fn structures_for(&self, cell: &Cell, g: &Graph) -> usize {
        if uses_full_split(cell.labels_per_class, g) && cell.edge_drop == 0.0 {
            1
        } else {
            self.structures
        }
    }

    /// Seed of the `i`-th label subset at a given rate. Shared by every cell
    /// with that rate, so the `i`-th subset is the same across drop rates,
    /// K, α and modes.
    pub fn label_seed(&self, per_class: usize, i: usize) -> Seed {
        Seed(self.seed).derive_path(&[LABEL_STREAM, per_class as u64, i as u64])
    }

    /// Seed of the `i`-th corrupted graph at a given drop rate.
    pub fn drop_seed(&self, rate: f64, i: usize) -> Seed {
        Seed(self.seed).derive_path(&[DROP_STREAM, rate.to_bits(), i as u64])
    }

    /// Seed of one training run. It depends on the structure but not on the
    /// mode, K or α: modes are compared on identical initializations, and
    /// settings a mode ignores leave its results unchanged.
    pub fn train_seed(&self, cell: &Cell, structure: usize, repeat: usize) -> Seed {
        let labels = cell.labels_per_class.map_or(u64::MAX, |l| l as u64);
        Seed(self.seed).derive_path(&[TRAIN_STREAM, labels, cell.edge_drop.to_bits(), structure as u64, repeat as u64])
    }
}

/// Whether subsampling at this rate would keep the whole training split.
pub(crate) fn uses_full_split(labels: Option<usize>, g: &Graph) -> bool {
    let Some(per_class) = labels else { return true };
    let mut counts = vec![0usize; g.num_classes()];
    for (_, y) in g.labelled(g.train_mask()) {
        counts[y] += 1;
    }
    counts.iter().all(|&c| c == per_class)
}
