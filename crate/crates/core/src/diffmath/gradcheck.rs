use super::{Matrix, Tape, TapeError, Tensor};

/// Central-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-3;

/// Result of comparing analytic and numeric gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param index, flat element index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares the tape's gradient of the scalar built by `f` against central
/// finite differences with step [`FD_STEP`], for every element of every
/// parameter. The relative error of one entry is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &[Matrix]) -> Result<GradCheckReport, TapeError>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor, TapeError>,
{
    let eval = |ps: &[Matrix]| -> Result<f64, TapeError> {
        let mut tape = Tape::new();
        let handles = ps.iter().map(|p| tape.constant(p.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut tape, &handles)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let handles = params.iter().map(|p| tape.param(p.clone())).collect::<Result<Vec<_>, _>>()?;
    let loss = f(&mut tape, &handles)?;
    tape.backward(loss)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None };
    let mut work: Vec<Matrix> = params.to_vec();
    for (pi, &h) in handles.iter().enumerate() {
        let analytic = tape.grad(h).cloned().unwrap_or_else(|| Matrix::zeros(params[pi].rows(), params[pi].cols()));
        for k in 0..params[pi].len() {
            let orig = params[pi].as_slice()[k];
            work[pi].as_mut_slice()[k] = orig + FD_STEP;
            let plus = eval(&work)?;
            work[pi].as_mut_slice()[k] = orig - FD_STEP;
            let minus = eval(&work)?;
            work[pi].as_mut_slice()[k] = orig;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.as_slice()[k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let err = (a - numeric).abs() / denom;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((pi, k, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
