use crate::diffmath::SparseMatrix;

use super::GraphError;

/// Row sums of `a`, i.e. the diagonal of its degree matrix.
pub fn degree_vector(a: &SparseMatrix) -> Vec<f64> {
    a.row_sums()
}

fn check_nonnegative(a: &SparseMatrix) -> Result<(), GraphError> {
    match a.iter().find(|&(_, _, w)| w < 0.0) {
        Some((row, col, weight)) => Err(GraphError::NegativeWeight { row, col, weight }),
        None => Ok(()),
    }
}

fn scale_by_inv_sqrt_degree(a: &SparseMatrix, deg: &[f64]) -> SparseMatrix {
    let inv: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let values = a.iter().map(|(r, c, w)| w * inv[r] * inv[c]).collect();
    a.with_values(values)
}

/// `D^{-1/2} A D^{-1/2}`. Nodes with zero degree keep zero rows and columns.
pub fn normalize_sym(a: &SparseMatrix) -> Result<SparseMatrix, GraphError> {
    check_nonnegative(a)?;
    let deg = degree_vector(a);
    Ok(scale_by_inv_sqrt_degree(a, &deg))
}

/// GCN propagation operator `D̂^{-1/2} (A + I) D̂^{-1/2}`, with `D̂` the degree
/// of `A + I`. A unit self-loop is added to every node that has none; an
/// existing diagonal entry keeps its weight.
pub fn renormalize(a: &SparseMatrix) -> Result<SparseMatrix, GraphError> {
    check_nonnegative(a)?;
    let n = a.n();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(a.nnz() + n);
    let mut values = Vec::with_capacity(a.nnz() + n);
    row_ptr.push(0);
    for r in 0..n {
        let (cols, vals) = a.row(r);
        let has_loop = cols.binary_search(&r).is_ok();
        let mut inserted = has_loop;
        for (&c, &w) in cols.iter().zip(vals) {
            if !inserted && c > r {
                col_idx.push(r);
                values.push(1.0);
                inserted = true;
            }
            col_idx.push(c);
            values.push(w);
        }
        if !inserted {
            col_idx.push(r);
            values.push(1.0);
        }
        row_ptr.push(col_idx.len());
    }
    let looped = SparseMatrix::from_csr_unchecked(n, row_ptr, col_idx, values);
    let deg = degree_vector(&looped);
    Ok(scale_by_inv_sqrt_degree(&looped, &deg))
}
