//! Training objectives: summed masked cross-entropy for each classifier, the
//! relaxed min-cut clustering loss, and their unweighted sum.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{Matrix, SparseMatrix, Tape, TapeError, Tensor};

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("cross-entropy over an empty node set")]
    EmptyMask,
    #[error("label {label} of node {node} is outside 0..{num_classes}")]
    LabelOutOfRange { node: usize, label: usize, num_classes: usize },
}

/// `Σ_i −log softmax(logits_i)[y_i]` over the `(node, label)` targets. Sum,
/// not mean.
pub fn cross_entropy_masked(tape: &mut Tape, logits: Tensor, targets: &[(usize, usize)]) -> Result<Tensor, LossError> {
    if targets.is_empty() {
        return Err(LossError::EmptyMask);
    }
    let c = tape.shape(logits).1;
    if let Some(&(node, label)) = targets.iter().find(|&&(_, l)| l >= c) {
        return Err(LossError::LabelOutOfRange { node, label, num_classes: c });
    }
    Ok(tape.cross_entropy(logits, targets.to_vec())?)
}

/// Handles for the two terms of the min-cut loss and their sum.
#[derive(Clone, Copy, Debug)]
pub struct MinCutTerms {
    /// `−Tr(SᵀÃS) / Tr(SᵀD̃S)`, in `[−1, 0]`.
    pub cut: Tensor,
    /// `‖SᵀS/‖SᵀS‖_F − I_K/√K‖_F`, in `[0, 2]`.
    pub orthogonality: Tensor,
    pub total: Tensor,
}

/// Relaxed min-cut loss of soft assignment `s` against the normalized input
/// adjacency `a_norm` and its degree diagonal `degree`. When `Tr(SᵀD̃S)` is
/// zero (no edges) the cut term is dropped and only the orthogonality
/// regularizer is returned.
pub fn mincut_loss(
    tape: &mut Tape,
    s: Tensor,
    a_norm: &Arc<SparseMatrix>,
    degree: &Arc<SparseMatrix>,
) -> Result<MinCutTerms, LossError> {
    let k = tape.shape(s).1;
    let num = tape.trace_quadratic(s, a_norm)?;
    let den = tape.trace_quadratic(s, degree)?;
    let cut = if tape.value(den).item() > 0.0 {
        let ratio = tape.div_scalar(num, den)?;
        tape.scale(ratio, -1.0)?
    } else {
        log::warn!("min-cut loss: Tr(SᵀD̃S) = 0, graph has no edges; using regularizer only");
        tape.constant(Matrix::scalar(0.0))?
    };

    let st = tape.transpose(s)?;
    let gram = tape.matmul(st, s)?;
    let gram_norm = tape.frobenius_norm(gram)?;
    let unit_gram = tape.div_scalar(gram, gram_norm)?;
    let target = tape.constant(Matrix::identity(k).scaled(1.0 / (k as f64).sqrt()))?;
    let diff = tape.sub(unit_gram, target)?;
    let orthogonality = tape.frobenius_norm(diff)?;
    let total = tape.add(cut, orthogonality)?;
    Ok(MinCutTerms { cut, orthogonality, total })
}

/// Scalar values of the joint objective's terms from one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ce: f64,
    pub l_ce_aux: f64,
    pub l_sc: f64,
    pub total: f64,
}

/// The joint objective over whichever terms are present; missing terms
/// count as zero. The total is always `(l_ce + l_ce_aux) + l_sc`.
pub fn joint_loss(
    tape: &mut Tape,
    ce: Option<Tensor>,
    ce_aux: Option<Tensor>,
    sc: Option<Tensor>,
) -> Result<(Tensor, LossBreakdown), LossError> {
    let mut total = None;
    for term in [ce, ce_aux, sc].into_iter().flatten() {
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Matrix::scalar(0.0))?,
    };
    let val = |t: Option<Tensor>| t.map_or(0.0, |t| tape.value(t).item());
    let breakdown =
        LossBreakdown { l_ce: val(ce), l_ce_aux: val(ce_aux), l_sc: val(sc), total: tape.value(total).item() };
    Ok((total, breakdown))
}
