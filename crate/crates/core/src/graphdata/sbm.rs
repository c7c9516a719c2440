//! Stochastic block model graphs with Gaussian class-conditional features.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Matrix, SparseMatrix};

use super::graph::{Graph, NodeMask};
use super::{GraphError, Seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmConfig {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_intra: f64,
    pub q_inter: f64,
    pub feature_dim: usize,
    pub feature_noise: f64,
    /// Training nodes drawn from each block.
    pub train_per_class: usize,
    /// Validation nodes drawn from the remainder, over all blocks.
    pub val_size: usize,
    /// Test nodes drawn from the remainder, over all blocks.
    pub test_size: usize,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            nodes_per_block: 100,
            p_intra: 0.05,
            q_inter: 0.005,
            feature_dim: 16,
            feature_noise: 1.0,
            train_per_class: 20,
            val_size: 80,
            test_size: 200,
        }
    }
}

impl SbmConfig {
    pub fn num_nodes(&self) -> usize {
        self.blocks * self.nodes_per_block
    }

    fn validate(&self) -> Result<(), GraphError> {
        let bad = |m: String| Err(GraphError::InvalidParameter(m));
        if self.blocks == 0 || self.nodes_per_block == 0 || self.feature_dim == 0 {
            return bad("blocks, nodes_per_block and feature_dim must be positive".into());
        }
        if !(0.0 <= self.q_inter && self.q_inter <= self.p_intra && self.p_intra <= 1.0) {
            return bad(format!("need 0 <= q_inter <= p_intra <= 1, got q={} p={}", self.q_inter, self.p_intra));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return bad(format!("feature_noise {} must be finite and >= 0", self.feature_noise));
        }
        if self.train_per_class > self.nodes_per_block {
            return bad(format!(
                "train_per_class {} exceeds nodes_per_block {}",
                self.train_per_class, self.nodes_per_block
            ));
        }
        let rest = self.num_nodes() - self.blocks * self.train_per_class;
        if self.val_size + self.test_size > rest {
            return bad(format!(
                "val_size + test_size = {} exceeds the {rest} nodes left after training",
                self.val_size + self.test_size
            ));
        }
        Ok(())
    }
}

/// Samples an SBM graph. Node `i` belongs to block `i / nodes_per_block`;
/// its feature row is the block's unit-norm mean direction plus iid
/// `N(0, feature_noise²)` noise.
pub fn generate_sbm(cfg: &SbmConfig, seed: Seed) -> Result<Graph, GraphError> {
    cfg.validate()?;
    let n = cfg.num_nodes();
    let block = |i: usize| i / cfg.nodes_per_block;

    let mut edge_rng = seed.derive(0).rng();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if block(i) == block(j) { cfg.p_intra } else { cfg.q_inter };
            if edge_rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let adjacency = SparseMatrix::from_undirected_edges(n, &edges)?;

    let mut feat_rng = seed.derive(1).rng();
    let means: Vec<Vec<f64>> = (0..cfg.blocks)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.feature_dim).map(|_| feat_rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut features = Matrix::zeros(n, cfg.feature_dim);
    for i in 0..n {
        let mean = &means[block(i)];
        for (x, &m) in features.row_mut(i).iter_mut().zip(mean) {
            let z: f64 = feat_rng.sample(StandardNormal);
            *x = m + cfg.feature_noise * z;
        }
    }

    let mut mask_rng = seed.derive(2).rng();
    let mut train = Vec::with_capacity(cfg.blocks * cfg.train_per_class);
    let mut rest = Vec::with_capacity(n);
    for b in 0..cfg.blocks {
        let mut members: Vec<usize> = (b * cfg.nodes_per_block..(b + 1) * cfg.nodes_per_block).collect();
        members.shuffle(&mut mask_rng);
        train.extend_from_slice(&members[..cfg.train_per_class]);
        rest.extend_from_slice(&members[cfg.train_per_class..]);
    }
    rest.sort_unstable();
    rest.shuffle(&mut mask_rng);
    let val = &rest[..cfg.val_size];
    let test = &rest[cfg.val_size..cfg.val_size + cfg.test_size];

    Graph::new(
        features,
        adjacency,
        (0..n).map(|i| Some(block(i))).collect(),
        cfg.blocks,
        NodeMask::from_indices(n, &train)?,
        NodeMask::from_indices(n, val)?,
        NodeMask::from_indices(n, test)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disjoint_cliques() {
        let cfg = SbmConfig { p_intra: 1.0, q_inter: 0.0, nodes_per_block: 10, ..SbmConfig::default() };
        let cfg = SbmConfig { train_per_class: 2, val_size: 8, test_size: 16, ..cfg };
        let g = generate_sbm(&cfg, Seed(1)).unwrap();
        assert_eq!(g.num_edges(), 4 * 45);
        for (r, c, _) in g.adjacency().iter() {
            assert_eq!(r / 10, c / 10);
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_sbm(&SbmConfig::default(), Seed(11)).unwrap();
        let b = generate_sbm(&SbmConfig::default(), Seed(11)).unwrap();
        assert_eq!(a.adjacency(), b.adjacency());
        assert_eq!(a.features(), b.features());
        assert_eq!(a.test_mask(), b.test_mask());
    }

    #[test]
    fn default_masks() {
        let g = generate_sbm(&SbmConfig::default(), Seed(2)).unwrap();
        assert_eq!(g.train_mask().count(), 80);
        assert_eq!(g.val_mask().count(), 80);
        assert_eq!(g.test_mask().count(), 200);
    }

    #[test]
    fn invalid_probabilities() {
        let cfg = SbmConfig { p_intra: 0.01, q_inter: 0.1, ..SbmConfig::default() };
        assert!(generate_sbm(&cfg, Seed(0)).is_err());
    }

    #[test]
    fn edge_count_within_five_sigma() {
        let cfg = SbmConfig::default();
        let k = cfg.nodes_per_block as f64;
        let c = cfg.blocks as f64;
        let intra_pairs = c * k * (k - 1.0) / 2.0;
        let n = c * k;
        let inter_pairs = n * (n - 1.0) / 2.0 - intra_pairs;
        let mean = intra_pairs * cfg.p_intra + inter_pairs * cfg.q_inter;
        let var = intra_pairs * cfg.p_intra * (1.0 - cfg.p_intra) + inter_pairs * cfg.q_inter * (1.0 - cfg.q_inter);
        for s in 0..5 {
            let g = generate_sbm(&cfg, Seed(s)).unwrap();
            let z = (g.num_edges() as f64 - mean).abs() / var.sqrt();
            assert!(z < 5.0, "seed {s}: {} edges, expected {mean}", g.num_edges());
        }
    }
}
