//! Reverse-mode differentiation over dense matrices, with constant sparse
//! operators.
//!
//! A [`Tape`] records every operation of a forward pass (define-by-run). Leaf
//! tensors created with [`Tape::param`] receive gradients when
//! [`Tape::backward`] is called on a scalar; leaves made with
//! [`Tape::constant`] and every [`SparseMatrix`] are treated as constants.

mod gradcheck;
mod matrix;
mod sparse;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use matrix::Matrix;
pub use sparse::SparseMatrix;
pub use tape::{CustomOp, Tape, Tensor};

pub(crate) use matrix::dot;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
pub struct ShapeError {
    pub op: &'static str,
    pub lhs: (usize, usize),
    pub rhs: (usize, usize),
}

impl ShapeError {
    pub fn new(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Self { op, lhs, rhs }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SparseError {
    #[error("entry ({row}, {col}) outside {n}x{n} matrix")]
    OutOfBounds { row: usize, col: usize, n: usize },
    #[error("duplicate entry ({row}, {col})")]
    Duplicate { row: usize, col: usize },
    #[error("entry ({row}, {col}) has no matching mirrored entry")]
    Asymmetric { row: usize, col: usize },
    #[error("entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TapeError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
}
