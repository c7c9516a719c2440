use std::fmt;
use std::sync::Arc;

use super::matrix::Matrix;
use super::sparse::SparseMatrix;
use super::{ShapeError, TapeError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tensor {
    id: usize,
}

impl Tensor {
    pub fn id(self) -> usize {
        self.id
    }
}

/// An operation defined outside this module. The tape calls
/// [`CustomOp::backward`] with the forward inputs, the forward output and the
/// upstream gradient; it returns one optional gradient per input.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Matrix], output: &Matrix, grad: &Matrix) -> Vec<Option<Matrix>>;
}

enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    SpMM(Arc<SparseMatrix>, Tensor),
    AddRowVector(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Scale(Tensor, f64),
    Elu(Tensor),
    SoftmaxRows(Tensor),
    Transpose(Tensor),
    MulScalar(Tensor, Tensor),
    DivScalar(Tensor, Tensor),
    TraceQuadratic(Tensor, Arc<SparseMatrix>),
    FrobeniusNorm(Tensor),
    Sum(Tensor),
    CrossEntropy(Tensor, Vec<(usize, usize)>),
    Custom(Vec<Tensor>, Box<dyn CustomOp>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::SpMM(..) => "spmm",
            Op::AddRowVector(..) => "add_row_vector",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Elu(..) => "elu",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::Transpose(..) => "transpose",
            Op::MulScalar(..) => "mul_scalar",
            Op::DivScalar(..) => "div_scalar",
            Op::TraceQuadratic(..) => "trace_quadratic",
            Op::FrobeniusNorm(..) => "frobenius_norm",
            Op::Sum(..) => "sum",
            Op::CrossEntropy(..) => "cross_entropy",
            Op::Custom(_, f) => f.name(),
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
    grad: Option<Matrix>,
}

/// Define-by-run computation graph. Build a fresh tape per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

fn check_finite(op: &'static str, m: &Matrix) -> Result<(), TapeError> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(TapeError::NonFinite { op })
    }
}

fn expect_scalar(op: &'static str, m: &Matrix) -> Result<(), ShapeError> {
    if m.shape() == (1, 1) {
        Ok(())
    } else {
        Err(ShapeError::new(op, m.shape(), (1, 1)))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Result<Tensor, TapeError> {
        check_finite(op.name(), &value)?;
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Ok(Tensor { id })
    }

    fn rg(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    /// Leaf that accumulates a gradient.
    pub fn param(&mut self, value: Matrix) -> Result<Tensor, TapeError> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Result<Tensor, TapeError> {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, t: Tensor) -> &Matrix {
        &self.nodes[t.id].value
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        self.nodes[t.id].value.shape()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.rg(t)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, t: Tensor) -> Option<&Matrix> {
        self.nodes[t.id].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TapeError> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, t: Tensor) -> Result<Tensor, TapeError> {
        let v = s.mul_dense(self.value(t))?;
        let rg = self.rg(t);
        self.push(v, Op::SpMM(Arc::clone(s), t), rg)
    }

    /// Adds a `1 × k` row vector to every row of an `n × k` tensor.
    pub fn add_row_vector(&mut self, a: Tensor, bias: Tensor) -> Result<Tensor, TapeError> {
        let (am, bm) = (self.value(a), self.value(bias));
        if bm.rows() != 1 || bm.cols() != am.cols() {
            return Err(ShapeError::new("add_row_vector", am.shape(), bm.shape()).into());
        }
        let mut v = am.clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(bm.as_slice()) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        self.push(v, Op::AddRowVector(a, bias), rg)
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TapeError> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.shape() != bm.shape() {
            return Err(ShapeError::new("add", am.shape(), bm.shape()).into());
        }
        let mut v = am.clone();
        v.add_assign(bm);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor, TapeError> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.shape() != bm.shape() {
            return Err(ShapeError::new("sub", am.shape(), bm.shape()).into());
        }
        let mut v = am.clone();
        for (x, y) in v.as_mut_slice().iter_mut().zip(bm.as_slice()) {
            *x -= y;
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn scale(&mut self, a: Tensor, c: f64) -> Result<Tensor, TapeError> {
        let v = self.value(a).scaled(c);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    /// Exponential linear unit, `x` for `x > 0` and `eˣ − 1` otherwise.
    pub fn elu(&mut self, a: Tensor) -> Result<Tensor, TapeError> {
        let v = self.value(a).map(elu);
        let rg = self.rg(a);
        self.push(v, Op::Elu(a), rg)
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: Tensor) -> Result<Tensor, TapeError> {
        let v = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(v, Op::SoftmaxRows(a), rg)
    }

    pub fn transpose(&mut self, a: Tensor) -> Result<Tensor, TapeError> {
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(v, Op::Transpose(a), rg)
    }

    /// `a · s` for a scalar tensor `s`.
    pub fn mul_scalar(&mut self, a: Tensor, s: Tensor) -> Result<Tensor, TapeError> {
        expect_scalar("mul_scalar", self.value(s))?;
        let v = self.value(a).scaled(self.value(s).item());
        let rg = self.rg(a) || self.rg(s);
        self.push(v, Op::MulScalar(a, s), rg)
    }

    /// `a / s` for a scalar tensor `s`.
    pub fn div_scalar(&mut self, a: Tensor, s: Tensor) -> Result<Tensor, TapeError> {
        expect_scalar("div_scalar", self.value(s))?;
        let d = self.value(s).item();
        let v = self.value(a).map(|x| x / d);
        let rg = self.rg(a) || self.rg(s);
        self.push(v, Op::DivScalar(a, s), rg)
    }

    /// Scalar `Tr(sᵀ · m · s)`.
    pub fn trace_quadratic(&mut self, s: Tensor, m: &Arc<SparseMatrix>) -> Result<Tensor, TapeError> {
        let sv = self.value(s);
        let ms = m.mul_dense(sv)?;
        let tr = super::dot(sv.as_slice(), ms.as_slice());
        let rg = self.rg(s);
        self.push(Matrix::scalar(tr), Op::TraceQuadratic(s, Arc::clone(m)), rg)
    }

    pub fn frobenius_norm(&mut self, a: Tensor) -> Result<Tensor, TapeError> {
        let v = Matrix::scalar(self.value(a).frobenius_norm());
        let rg = self.rg(a);
        self.push(v, Op::FrobeniusNorm(a), rg)
    }

    pub fn sum(&mut self, a: Tensor) -> Result<Tensor, TapeError> {
        let v = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(v, Op::Sum(a), rg)
    }

    /// Summed cross-entropy `Σ −log softmax(logits_i)[class_i]` over the
    /// given `(row, class)` targets, fused with the log-softmax.
    pub fn cross_entropy(&mut self, logits: Tensor, targets: Vec<(usize, usize)>) -> Result<Tensor, TapeError> {
        let lm = self.value(logits);
        let mut total = 0.0;
        for &(r, c) in &targets {
            if r >= lm.rows() || c >= lm.cols() {
                return Err(ShapeError::new("cross_entropy", lm.shape(), (r, c)).into());
            }
            let row = lm.row(r);
            total += log_sum_exp(row) - row[c];
        }
        let rg = self.rg(logits);
        self.push(Matrix::scalar(total), Op::CrossEntropy(logits, targets), rg)
    }

    /// Records an externally defined operation whose forward value has
    /// already been computed.
    pub fn custom(&mut self, inputs: Vec<Tensor>, output: Matrix, op: Box<dyn CustomOp>) -> Result<Tensor, TapeError> {
        let rg = inputs.iter().any(|&t| self.rg(t));
        self.push(output, Op::Custom(inputs, op), rg)
    }

    /// Back-propagates from a scalar `loss`, adding `d loss / d leaf` into
    /// the gradient of every [`Tape::param`] leaf it depends on. Gradients
    /// accumulate across calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Tensor) -> Result<(), TapeError> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TapeError::NonScalarLoss(shape));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (t, contrib) in self.local_grads(id, &g)? {
                match &mut grads[t.id] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, id: usize, g: &Matrix) -> Result<Vec<(Tensor, Matrix)>, TapeError> {
        let node = &self.nodes[id];
        let out = &node.value;
        let mut res = Vec::with_capacity(2);
        let val = |t: Tensor| &self.nodes[t.id].value;
        let rg = |t: Tensor| self.nodes[t.id].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if rg(*a) {
                    res.push((*a, g.matmul_t(val(*b))?));
                }
                if rg(*b) {
                    res.push((*b, val(*a).t_matmul(g)?));
                }
            }
            Op::SpMM(s, t) => {
                if rg(*t) {
                    res.push((*t, s.t_mul_dense(g)?));
                }
            }
            Op::AddRowVector(a, b) => {
                if rg(*a) {
                    res.push((*a, g.clone()));
                }
                if rg(*b) {
                    let mut colsum = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (s, x) in colsum.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *s += x;
                        }
                    }
                    res.push((*b, colsum));
                }
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    res.push((*a, g.clone()));
                }
                if rg(*b) {
                    res.push((*b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    res.push((*a, g.clone()));
                }
                if rg(*b) {
                    res.push((*b, g.scaled(-1.0)));
                }
            }
            Op::Scale(a, c) => res.push((*a, g.scaled(*c))),
            Op::Elu(a) => {
                let x = val(*a);
                let mut ga = g.clone();
                for (gv, &xv) in ga.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    *gv *= elu_derivative(xv);
                }
                res.push((*a, ga));
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Matrix::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (y, gr) = (out.row(r), g.row(r));
                    let inner = super::dot(y, gr);
                    for ((o, &yv), &gv) in ga.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *o = yv * (gv - inner);
                    }
                }
                res.push((*a, ga));
            }
            Op::Transpose(a) => res.push((*a, g.transpose())),
            Op::MulScalar(a, s) => {
                let sv = val(*s).item();
                if rg(*a) {
                    res.push((*a, g.scaled(sv)));
                }
                if rg(*s) {
                    let d = super::dot(g.as_slice(), val(*a).as_slice());
                    res.push((*s, Matrix::scalar(d)));
                }
            }
            Op::DivScalar(a, s) => {
                let sv = val(*s).item();
                if rg(*a) {
                    res.push((*a, g.map(|x| x / sv)));
                }
                if rg(*s) {
                    let d = super::dot(g.as_slice(), val(*a).as_slice());
                    res.push((*s, Matrix::scalar(-d / (sv * sv))));
                }
            }
            Op::TraceQuadratic(s, m) => {
                let gs = g.item();
                let sv = val(*s);
                let mut grad = m.mul_dense(sv)?;
                grad.add_assign(&m.t_mul_dense(sv)?);
                res.push((*s, grad.scaled(gs)));
            }
            Op::FrobeniusNorm(a) => {
                let norm = out.item();
                let ga = if norm > 0.0 {
                    val(*a).scaled(g.item() / norm)
                } else {
                    Matrix::zeros(val(*a).rows(), val(*a).cols())
                };
                res.push((*a, ga));
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                res.push((*a, Matrix::filled(r, c, g.item())));
            }
            Op::CrossEntropy(logits, targets) => {
                let lm = val(*logits);
                let gs = g.item();
                let mut gl = Matrix::zeros(lm.rows(), lm.cols());
                for &(r, c) in targets {
                    let row = lm.row(r);
                    let lse = log_sum_exp(row);
                    for (o, &x) in gl.row_mut(r).iter_mut().zip(row) {
                        *o += gs * (x - lse).exp();
                    }
                    gl[(r, c)] -= gs;
                }
                res.push((*logits, gl));
            }
            Op::Custom(inputs, f) => {
                let ins: Vec<&Matrix> = inputs.iter().map(|&t| val(t)).collect();
                let grads = f.backward(&ins, out, g);
                for (t, gr) in inputs.iter().zip(grads) {
                    if let (true, Some(gr)) = (rg(*t), gr) {
                        if gr.shape() != val(*t).shape() {
                            return Err(ShapeError::new(f.name(), gr.shape(), val(*t).shape()).into());
                        }
                        res.push((*t, gr));
                    }
                }
            }
        }
        Ok(res)
    }
}

#[inline]
pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of [`elu`]; equals 1 at exactly 0.
#[inline]
pub(crate) fn elu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        for x in row.iter_mut() {
            *x /= total;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(1.0), 1.0);
        assert_relative_eq!(elu(-1.0), -0.632_120_558_828_557_7, epsilon = 1e-15);
        assert_eq!(elu_derivative(0.0), 1.0);
    }

    #[test]
    fn softmax_symmetric_and_shift_invariant() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[[0.0, 0.0], [7.0, 7.0]])).unwrap();
        let y = tape.softmax_rows(x).unwrap();
        assert_eq!(tape.value(y).row(0), &[0.5, 0.5]);
        let z = tape.constant(Matrix::from_rows(&[[-3.0, -3.0, -3.0]])).unwrap();
        let p = tape.softmax_rows(z).unwrap();
        for &v in tape.value(p).as_slice() {
            assert_relative_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn sum_gives_all_ones_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]])).unwrap();
        let s = tape.sum(w).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn squared_norm_gradient_is_twice_w() {
        let w0 = Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]]);
        let mut tape = Tape::new();
        let w = tape.param(w0.clone()).unwrap();
        let n = tape.frobenius_norm(w).unwrap();
        let sq = tape.mul_scalar(n, n).unwrap();
        tape.backward(sq).unwrap();
        let g = tape.grad(w).unwrap();
        for (a, b) in g.as_slice().iter().zip(w0.as_slice()) {
            assert_relative_eq!(*a, 2.0 * b, epsilon = 1e-12);
        }
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let w = tape.param(Matrix::filled(1, 3, 2.0)).unwrap();
        let s = tape.sum(w).unwrap();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &Matrix::filled(1, 3, 2.0));
        tape.zero_grad();
        assert!(tape.grad(w).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(Matrix::zeros(2, 2)).unwrap();
        assert!(matches!(tape.backward(w), Err(TapeError::NonScalarLoss((2, 2)))));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::new();
        assert!(tape.param(Matrix::scalar(f64::NAN)).is_err());
        let a = tape.param(Matrix::scalar(1.0)).unwrap();
        let z = tape.constant(Matrix::scalar(0.0)).unwrap();
        assert!(matches!(tape.div_scalar(a, z), Err(TapeError::NonFinite { .. })));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::filled(2, 2, 1.0)).unwrap();
        let w = tape.param(Matrix::filled(2, 1, 1.0)).unwrap();
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).is_none());
        assert_eq!(tape.grad(w).unwrap(), &Matrix::filled(2, 1, 2.0));
    }

    #[test]
    fn cross_entropy_uniform_is_log_c() {
        let mut tape = Tape::new();
        let l = tape.param(Matrix::zeros(3, 7)).unwrap();
        let ce = tape.cross_entropy(l, vec![(1, 4)]).unwrap();
        assert_relative_eq!(tape.value(ce).item(), 7f64.ln(), epsilon = 1e-14);
    }
}
