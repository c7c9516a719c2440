//! Symmetric sparse matrices in compressed-row form.
//!
//! Every adjacency-like operator in the engine (input graph, its
//! normalizations, degree diagonals, the reconstructed correlation graph) is a
//! [`SparseMatrix`]. They are constants with respect to differentiation.

use super::matrix::Matrix;
use super::{ShapeError, SparseError};

/// Square `n × n` sparse matrix, stored CSR with column indices sorted inside
/// each row. Construction through the public API guarantees symmetry, finite
/// weights, and no duplicate coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn empty(n: usize) -> Self {
        Self { n, row_ptr: vec![0; n + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    /// Diagonal matrix with the given entries; zero entries are not stored.
    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (i, &d) in diag.iter().enumerate() {
            if d != 0.0 {
                col_idx.push(i);
                values.push(d);
            }
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx, values }
    }

    /// Builds from `(row, col, weight)` triplets. Both directions of every
    /// off-diagonal entry must be present with equal weight.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self, SparseError> {
        for &(r, c, w) in &triplets {
            if r >= n || c >= n {
                return Err(SparseError::OutOfBounds { row: r, col: c, n });
            }
            if !w.is_finite() {
                return Err(SparseError::NonFinite { row: r, col: c });
            }
        }
        triplets.sort_by_key(|t| (t.0, t.1));
        for pair in triplets.windows(2) {
            if (pair[0].0, pair[0].1) == (pair[1].0, pair[1].1) {
                return Err(SparseError::Duplicate { row: pair[0].0, col: pair[0].1 });
            }
        }
        let m = Self::from_sorted_unchecked(n, &triplets);
        for &(r, c, w) in &triplets {
            if m.get(c, r) != Some(w) {
                return Err(SparseError::Asymmetric { row: r, col: c });
            }
        }
        Ok(m)
    }

    /// Unit-weight symmetric matrix from undirected pairs. Each pair is stored
    /// in both directions; self-pairs are stored once.
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, SparseError> {
        let mut triplets = Vec::with_capacity(edges.len() * 2);
        for &(i, j) in edges {
            triplets.push((i, j, 1.0));
            if i != j {
                triplets.push((j, i, 1.0));
            }
        }
        Self::from_triplets(n, triplets)
    }

    /// Caller guarantees sorted, unique, in-bounds triplets forming a
    /// symmetric matrix.
    pub(crate) fn from_sorted_unchecked(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut row_ptr = vec![0usize; n + 1];
        for &(r, _, _) in triplets {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = triplets.iter().map(|t| t.1).collect();
        let values = triplets.iter().map(|t| t.2).collect();
        Self { n, row_ptr, col_idx, values }
    }

    /// Caller guarantees the CSR arrays describe a symmetric matrix with
    /// sorted column indices per row.
    pub(crate) fn from_csr_unchecked(n: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(row_ptr.len(), n + 1);
        debug_assert_eq!(col_idx.len(), values.len());
        Self { n, row_ptr, col_idx, values }
    }

    /// Same sparsity pattern, new values (one per stored entry, CSR order).
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self { n: self.n, row_ptr: self.row_ptr.clone(), col_idx: self.col_idx.clone(), values }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries (both directions counted).
    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub(crate) fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub(crate) fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        if r >= self.n {
            return None;
        }
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).ok().map(|k| vals[k])
    }

    /// All stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &w)| (r, c, w))
        })
    }

    /// Undirected pairs `(i, j)` with `i < j`.
    pub fn upper_pairs(&self) -> Vec<(usize, usize)> {
        self.iter().filter(|&(r, c, _)| r < c).map(|(r, c, _)| (r, c)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for (r, c, w) in self.iter() {
            m[(r, c)] = w;
        }
        m
    }

    /// `self · dense`.
    pub fn mul_dense(&self, dense: &Matrix) -> Result<Matrix, ShapeError> {
        if dense.rows() != self.n {
            return Err(ShapeError::new("spmm", (self.n, self.n), dense.shape()));
        }
        let d = dense.cols();
        let mut out = Matrix::zeros(self.n, d);
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            let out_row = out.row_mut(r);
            for (&c, &w) in cols.iter().zip(vals) {
                for (o, &x) in out_row.iter_mut().zip(dense.row(c)) {
                    *o += w * x;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · dense`; equals [`Self::mul_dense`] for symmetric matrices but
    /// is computed by scattering so it does not rely on that.
    pub fn t_mul_dense(&self, dense: &Matrix) -> Result<Matrix, ShapeError> {
        if dense.rows() != self.n {
            return Err(ShapeError::new("spmm_t", (self.n, self.n), dense.shape()));
        }
        let d = dense.cols();
        let mut out = Matrix::zeros(self.n, d);
        for r in 0..self.n {
            let (cols, vals) = self.row(r);
            let src = dense.row(r).to_vec();
            for (&c, &w) in cols.iter().zip(vals) {
                for (o, &x) in out.row_mut(c).iter_mut().zip(&src) {
                    *o += w * x;
                }
            }
        }
        Ok(out)
    }
}
