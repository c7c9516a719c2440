use rand::seq::index::sample;

use crate::diffmath::SparseMatrix;

use super::graph::{Graph, NodeMask};
use super::{GraphError, Seed};

/// Removes exactly `round(rate · |E|)` undirected edges, chosen uniformly
/// without replacement. Both directions of a removed edge disappear together.
pub fn drop_edges(g: &Graph, rate: f64, seed: Seed) -> Result<Graph, GraphError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(GraphError::InvalidParameter(format!("edge drop rate {rate} outside [0, 1]")));
    }
    let pairs = g.adjacency().upper_pairs();
    let n_drop = (rate * pairs.len() as f64).round() as usize;
    if n_drop == 0 {
        return Ok(g.clone());
    }
    let mut keep = vec![true; pairs.len()];
    let mut rng = seed.rng();
    for i in sample(&mut rng, pairs.len(), n_drop) {
        keep[i] = false;
    }
    let kept: Vec<(usize, usize)> = pairs.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p).collect();
    g.with_adjacency(SparseMatrix::from_undirected_edges(g.num_nodes(), &kept)?)
}

/// Keeps `per_class` training nodes of every class, sampled uniformly from the
/// current training mask. Validation and test masks are untouched.
pub fn subsample_labels(g: &Graph, per_class: usize, seed: Seed) -> Result<Graph, GraphError> {
    if per_class == 0 {
        return Err(GraphError::InvalidParameter("labels per class must be at least 1".into()));
    }
    let mut by_class = vec![Vec::new(); g.num_classes()];
    for (node, label) in g.labelled(g.train_mask()) {
        by_class[label].push(node);
    }
    let mut rng = seed.rng();
    let mut chosen = Vec::with_capacity(per_class * g.num_classes());
    for (class, nodes) in by_class.iter().enumerate() {
        if nodes.len() < per_class {
            return Err(GraphError::NotEnoughLabels { class, available: nodes.len(), requested: per_class });
        }
        chosen.extend(sample(&mut rng, nodes.len(), per_class).into_iter().map(|i| nodes[i]));
    }
    g.with_train_mask(NodeMask::from_indices(g.num_nodes(), &chosen)?)
}
