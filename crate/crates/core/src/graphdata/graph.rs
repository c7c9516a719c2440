use crate::diffmath::{Matrix, SparseMatrix};

use super::GraphError;

/// Boolean node-membership vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeMask(Vec<bool>);

impl NodeMask {
    pub fn new(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self, GraphError> {
        let mut flags = vec![false; n];
        for &i in indices {
            if i >= n {
                return Err(GraphError::Shape(format!("mask index {i} outside 0..{n}")));
            }
            flags[i] = true;
        }
        Ok(Self(flags))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.get(i).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Member indices in increasing order.
    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }
}

/// A transductive node-classification instance.
///
/// Invariants, checked by [`Graph::new`]: the adjacency is symmetric, binary,
/// and has no self-loops; the three masks are disjoint; every node in any
/// mask carries a label in `0..num_classes`.
#[derive(Clone, Debug)]
pub struct Graph {
    features: Matrix,
    adjacency: SparseMatrix,
    labels: Vec<Option<usize>>,
    num_classes: usize,
    train: NodeMask,
    val: NodeMask,
    test: NodeMask,
}

impl Graph {
    pub fn new(
        features: Matrix,
        adjacency: SparseMatrix,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        train: NodeMask,
        val: NodeMask,
        test: NodeMask,
    ) -> Result<Self, GraphError> {
        let n = features.rows();
        if adjacency.n() != n || labels.len() != n {
            return Err(GraphError::Shape(format!(
                "{n} feature rows, {}x{} adjacency, {} labels",
                adjacency.n(),
                adjacency.n(),
                labels.len()
            )));
        }
        for m in [&train, &val, &test] {
            if m.len() != n {
                return Err(GraphError::Shape(format!("mask of length {} for {n} nodes", m.len())));
            }
        }
        for (r, c, w) in adjacency.iter() {
            if r == c || w != 1.0 {
                return Err(GraphError::NotBinary { row: r, col: c, weight: w });
            }
        }
        for (node, label) in labels.iter().enumerate() {
            if let Some(l) = *label {
                if l >= num_classes {
                    return Err(GraphError::LabelOutOfRange { node, label: l, num_classes });
                }
            }
        }
        let named = [("train", &train), ("val", &val), ("test", &test)];
        for (i, label) in labels.iter().enumerate() {
            let members: Vec<&'static str> =
                named.iter().filter(|(_, m)| m.contains(i)).map(|(name, _)| *name).collect();
            if members.len() > 1 {
                return Err(GraphError::MaskOverlap { node: i, first: members[0], second: members[1] });
            }
            if let Some(mask) = members.first() {
                if label.is_none() {
                    return Err(GraphError::MissingLabel { node: i, mask });
                }
            }
        }
        Ok(Self { features, adjacency, labels, num_classes, train, val, test })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn train_mask(&self) -> &NodeMask {
        &self.train
    }

    pub fn val_mask(&self) -> &NodeMask {
        &self.val
    }

    pub fn test_mask(&self) -> &NodeMask {
        &self.test
    }

    /// `(node, label)` pairs of a mask, in node order.
    pub fn labelled(&self, mask: &NodeMask) -> Vec<(usize, usize)> {
        mask.indices().into_iter().filter_map(|i| self.labels[i].map(|l| (i, l))).collect()
    }

    /// Copy with a different edge set; everything else unchanged.
    pub fn with_adjacency(&self, adjacency: SparseMatrix) -> Result<Self, GraphError> {
        Self::new(
            self.features.clone(),
            adjacency,
            self.labels.clone(),
            self.num_classes,
            self.train.clone(),
            self.val.clone(),
            self.test.clone(),
        )
    }

    /// Copy with a different training mask.
    pub fn with_train_mask(&self, train: NodeMask) -> Result<Self, GraphError> {
        Self::new(
            self.features.clone(),
            self.adjacency.clone(),
            self.labels.clone(),
            self.num_classes,
            train,
            self.val.clone(),
            self.test.clone(),
        )
    }
}
