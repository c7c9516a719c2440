//! The dual architecture: a primary GCN encoder and classifier on the input
//! graph, a soft-clustering head on the primary embedding, a correlation graph
//! rebuilt from the cluster assignments every forward pass, and an auxiliary
//! GCN encoder and classifier on that rebuilt graph.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{dot, CustomOp, Matrix, SparseMatrix, Tape, TapeError, Tensor};
use crate::graphdata::{renormalize, Graph, GraphError, Seed};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("pearson correlation needs at least 2 entries, got {0}")]
    TooShort(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub aux_hidden_dim: usize,
    pub aux_embed_dim: usize,
    /// Number of soft clusters `K`.
    pub clusters: usize,
    /// Correlation threshold for the rebuilt adjacency.
    pub alpha: f64,
    /// Treat the rebuilt adjacency as a constant (no gradient through its
    /// Pearson weights).
    pub detach_asc: bool,
    /// Apply ELU after the second message-passing layer as well.
    pub elu_after_last_layer: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 16,
            embed_dim: 16,
            aux_hidden_dim: 16,
            aux_embed_dim: 16,
            clusters: 70,
            alpha: 0.7,
            detach_asc: true,
            elu_after_last_layer: true,
        }
    }
}

impl ModelConfig {
    /// Defaults with `K = 10 × num_classes`.
    pub fn for_classes(num_classes: usize) -> Self {
        Self { clusters: 10 * num_classes, ..Self::default() }
    }

    pub fn validate(&self, num_classes: usize) -> Result<(), ModelError> {
        if self.clusters < num_classes || self.clusters < 2 {
            return Err(ModelError::Config(format!(
                "clusters K = {} must be >= max(2, C = {num_classes})",
                self.clusters
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ModelError::Config(format!("alpha = {} must lie in (0, 1)", self.alpha)));
        }
        if [self.hidden_dim, self.embed_dim, self.aux_hidden_dim, self.aux_embed_dim].contains(&0) {
            return Err(ModelError::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Learnable parameter groups, in a fixed order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    PrimaryEncoder,
    PrimaryClassifier,
    ClusterHead,
    AuxEncoder,
    AuxClassifier,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::PrimaryEncoder,
        ParamGroup::PrimaryClassifier,
        ParamGroup::ClusterHead,
        ParamGroup::AuxEncoder,
        ParamGroup::AuxClassifier,
    ];
}

/// Two-layer GCN weights (no bias).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnWeights {
    pub w1: Matrix,
    pub w2: Matrix,
}

/// Fully connected layer, `x · weight + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualModelParams {
    pub primary_encoder: GcnWeights,
    pub primary_classifier: Linear,
    pub cluster_head: Linear,
    pub aux_encoder: GcnWeights,
    pub aux_classifier: Linear,
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("sized")
}

fn linear<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Linear {
    Linear { weight: glorot(rng, fan_in, fan_out), bias: Matrix::zeros(1, fan_out) }
}

impl DualModelParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(feature_dim: usize, num_classes: usize, cfg: &ModelConfig, seed: Seed) -> Result<Self, ModelError> {
        cfg.validate(num_classes)?;
        let mut rng = seed.rng();
        let primary_encoder = GcnWeights {
            w1: glorot(&mut rng, feature_dim, cfg.hidden_dim),
            w2: glorot(&mut rng, cfg.hidden_dim, cfg.embed_dim),
        };
        let primary_classifier = linear(&mut rng, cfg.embed_dim, num_classes);
        let cluster_head = linear(&mut rng, cfg.embed_dim, cfg.clusters);
        let aux_encoder = GcnWeights {
            w1: glorot(&mut rng, cfg.embed_dim, cfg.aux_hidden_dim),
            w2: glorot(&mut rng, cfg.aux_hidden_dim, cfg.aux_embed_dim),
        };
        let aux_classifier = linear(&mut rng, cfg.aux_embed_dim, num_classes);
        Ok(Self { primary_encoder, primary_classifier, cluster_head, aux_encoder, aux_classifier })
    }

    /// All-zero parameters with the shapes `init` would produce.
    pub fn zeros(feature_dim: usize, num_classes: usize, cfg: &ModelConfig) -> Self {
        let lin = |i, o| Linear { weight: Matrix::zeros(i, o), bias: Matrix::zeros(1, o) };
        Self {
            primary_encoder: GcnWeights {
                w1: Matrix::zeros(feature_dim, cfg.hidden_dim),
                w2: Matrix::zeros(cfg.hidden_dim, cfg.embed_dim),
            },
            primary_classifier: lin(cfg.embed_dim, num_classes),
            cluster_head: lin(cfg.embed_dim, cfg.clusters),
            aux_encoder: GcnWeights {
                w1: Matrix::zeros(cfg.embed_dim, cfg.aux_hidden_dim),
                w2: Matrix::zeros(cfg.aux_hidden_dim, cfg.aux_embed_dim),
            },
            aux_classifier: lin(cfg.aux_embed_dim, num_classes),
        }
    }

    /// Matrices of one group, in binding order.
    pub fn group(&self, g: ParamGroup) -> [&Matrix; 2] {
        match g {
            ParamGroup::PrimaryEncoder => [&self.primary_encoder.w1, &self.primary_encoder.w2],
            ParamGroup::PrimaryClassifier => [&self.primary_classifier.weight, &self.primary_classifier.bias],
            ParamGroup::ClusterHead => [&self.cluster_head.weight, &self.cluster_head.bias],
            ParamGroup::AuxEncoder => [&self.aux_encoder.w1, &self.aux_encoder.w2],
            ParamGroup::AuxClassifier => [&self.aux_classifier.weight, &self.aux_classifier.bias],
        }
    }

    /// Mutable matrices of the selected groups, in [`ParamGroup::ALL`] order
    /// and binding order within a group.
    pub fn matrices_mut(&mut self, include: impl Fn(ParamGroup) -> bool) -> Vec<&mut Matrix> {
        let Self { primary_encoder, primary_classifier, cluster_head, aux_encoder, aux_classifier } = self;
        let all: [(ParamGroup, [&mut Matrix; 2]); 5] = [
            (ParamGroup::PrimaryEncoder, [&mut primary_encoder.w1, &mut primary_encoder.w2]),
            (ParamGroup::PrimaryClassifier, [&mut primary_classifier.weight, &mut primary_classifier.bias]),
            (ParamGroup::ClusterHead, [&mut cluster_head.weight, &mut cluster_head.bias]),
            (ParamGroup::AuxEncoder, [&mut aux_encoder.w1, &mut aux_encoder.w2]),
            (ParamGroup::AuxClassifier, [&mut aux_classifier.weight, &mut aux_classifier.bias]),
        ];
        all.into_iter().filter(|(g, _)| include(*g)).flat_map(|(_, m)| m).collect()
    }

    pub fn is_finite(&self) -> bool {
        ParamGroup::ALL.iter().all(|&g| self.group(g).iter().all(|m| m.is_finite()))
    }
}

/// Tape handles for a two-layer encoder.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub w1: Tensor,
    pub w2: Tensor,
}

/// Tape handles for a fully connected layer.
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub primary_encoder: EncoderVars,
    pub primary_classifier: LinearVars,
    pub cluster_head: LinearVars,
    pub aux_encoder: EncoderVars,
    pub aux_classifier: LinearVars,
}

impl ParamVars {
    /// Places every parameter on the tape; groups for which `trainable`
    /// returns false are recorded as constants.
    pub fn bind(
        tape: &mut Tape,
        params: &DualModelParams,
        trainable: impl Fn(ParamGroup) -> bool,
    ) -> Result<Self, TapeError> {
        let mut put = |g: ParamGroup| -> Result<[Tensor; 2], TapeError> {
            let [a, b] = params.group(g);
            if trainable(g) {
                Ok([tape.param(a.clone())?, tape.param(b.clone())?])
            } else {
                Ok([tape.constant(a.clone())?, tape.constant(b.clone())?])
            }
        };
        let [w1, w2] = put(ParamGroup::PrimaryEncoder)?;
        let [pw, pb] = put(ParamGroup::PrimaryClassifier)?;
        let [cw, cb] = put(ParamGroup::ClusterHead)?;
        let [aw1, aw2] = put(ParamGroup::AuxEncoder)?;
        let [qw, qb] = put(ParamGroup::AuxClassifier)?;
        Ok(Self {
            primary_encoder: EncoderVars { w1, w2 },
            primary_classifier: LinearVars { weight: pw, bias: pb },
            cluster_head: LinearVars { weight: cw, bias: cb },
            aux_encoder: EncoderVars { w1: aw1, w2: aw2 },
            aux_classifier: LinearVars { weight: qw, bias: qb },
        })
    }

    pub fn group(&self, g: ParamGroup) -> [Tensor; 2] {
        match g {
            ParamGroup::PrimaryEncoder => [self.primary_encoder.w1, self.primary_encoder.w2],
            ParamGroup::PrimaryClassifier => [self.primary_classifier.weight, self.primary_classifier.bias],
            ParamGroup::ClusterHead => [self.cluster_head.weight, self.cluster_head.bias],
            ParamGroup::AuxEncoder => [self.aux_encoder.w1, self.aux_encoder.w2],
            ParamGroup::AuxClassifier => [self.aux_classifier.weight, self.aux_classifier.bias],
        }
    }
}

/// `Â · elu(Â · X · W₁) · W₂`, optionally followed by ELU.
pub fn encode_primary(
    tape: &mut Tape,
    x: Tensor,
    a_hat: &Arc<SparseMatrix>,
    enc: &EncoderVars,
    elu_after_last_layer: bool,
) -> Result<Tensor, TapeError> {
    let xw = tape.matmul(x, enc.w1)?;
    let h1 = tape.spmm(a_hat, xw)?;
    let h1 = tape.elu(h1)?;
    let hw = tape.matmul(h1, enc.w2)?;
    let h = tape.spmm(a_hat, hw)?;
    if elu_after_last_layer {
        tape.elu(h)
    } else {
        Ok(h)
    }
}

/// Pre-softmax scores `h · W + b`.
pub fn linear_logits(tape: &mut Tape, h: Tensor, lin: &LinearVars) -> Result<Tensor, TapeError> {
    let z = tape.matmul(h, lin.weight)?;
    tape.add_row_vector(z, lin.bias)
}

/// Class probabilities; returns `(logits, probabilities)`.
pub fn classify(tape: &mut Tape, h: Tensor, lin: &LinearVars) -> Result<(Tensor, Tensor), TapeError> {
    let logits = linear_logits(tape, h, lin)?;
    let p = tape.softmax_rows(logits)?;
    Ok((logits, p))
}

/// Soft cluster assignment `S = softmax(h · W_s + b_s)`, `N × K`.
pub fn cluster_assign(tape: &mut Tape, h: Tensor, head: &LinearVars) -> Result<Tensor, TapeError> {
    let logits = linear_logits(tape, h, head)?;
    tape.softmax_rows(logits)
}

/// Mean-centered copy of `v` and the Euclidean norm of the centered vector.
fn center(v: &[f64]) -> (Vec<f64>, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let norm = dot(&c, &c).sqrt();
    (c, norm)
}

fn correlation(cu: &[f64], nu: f64, cv: &[f64], nv: f64) -> f64 {
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot(cu, cv) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Pearson correlation of two equal-length vectors. Zero when either has
/// zero variance.
pub fn pearson_rows(u: &[f64], v: &[f64]) -> Result<f64, ModelError> {
    if u.len() < 2 || u.len() != v.len() {
        return Err(ModelError::TooShort(u.len().min(v.len())));
    }
    let (cu, nu) = center(u);
    let (cv, nv) = center(v);
    Ok(correlation(&cu, nu, &cv, nv))
}

/// Rebuilt adjacency `A_sc` together with what the auxiliary encoder and its
/// backward pass need.
#[derive(Clone, Debug)]
pub struct CorrelationGraph {
    /// `A_sc`: Pearson weight `r ≥ α` off the diagonal, 1 on it.
    pub adjacency: SparseMatrix,
    /// GCN operator over `A_sc` (see [`renormalize`]).
    pub propagation: Arc<SparseMatrix>,
    degrees: Vec<f64>,
    centered: Matrix,
    norms: Vec<f64>,
}

impl CorrelationGraph {
    /// Thresholded pairwise Pearson correlation of the rows of `s`. Row means
    /// and norms are computed once; pairs are then scored row by row in
    /// `O(N² K)` time.
    pub fn build(s: &Matrix, alpha: f64) -> Result<Self, ModelError> {
        if s.cols() < 2 {
            return Err(ModelError::TooShort(s.cols()));
        }
        let n = s.rows();
        let mut centered = Matrix::zeros(n, s.cols());
        let mut norms = Vec::with_capacity(n);
        for i in 0..n {
            let (c, norm) = center(s.row(i));
            centered.row_mut(i).copy_from_slice(&c);
            norms.push(norm);
        }

        let mut neighbors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for i in 0..n {
            let ci = centered.row(i);
            for j in (i + 1)..n {
                let r = correlation(ci, norms[i], centered.row(j), norms[j]);
                if r >= alpha {
                    neighbors[i].push((j, r));
                    neighbors[j].push((i, r));
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (i, nb) in neighbors.iter_mut().enumerate() {
            nb.push((i, 1.0));
            nb.sort_unstable_by_key(|&(j, _)| j);
            for &(j, w) in nb.iter() {
                col_idx.push(j);
                values.push(w);
            }
            row_ptr.push(col_idx.len());
        }
        let adjacency = SparseMatrix::from_csr_unchecked(n, row_ptr, col_idx, values);
        let propagation = Arc::new(renormalize(&adjacency)?);
        let degrees = adjacency.row_sums();
        Ok(Self { adjacency, propagation, degrees, centered, norms })
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    /// Number of off-diagonal undirected edges.
    pub fn num_edges(&self) -> usize {
        (self.adjacency.nnz() - self.n()) / 2
    }
}

/// `A_sc` from cluster assignments: off-diagonal `(i, j)` kept iff
/// `r(S_i, S_j) ≥ α`, with weight `r`; unit diagonal.
pub fn build_adjacency(s: &Matrix, alpha: f64) -> Result<SparseMatrix, ModelError> {
    Ok(CorrelationGraph::build(s, alpha)?.adjacency)
}

/// Propagation `Â_sc · x` where the Pearson weights of `Â_sc` stay functions
/// of `S`. Inputs are `[S, x]`.
struct CorrelationPropagation {
    graph: Arc<CorrelationGraph>,
}

impl CustomOp for CorrelationPropagation {
    fn name(&self) -> &'static str {
        "correlation_propagation"
    }

    fn backward(&self, inputs: &[&Matrix], _output: &Matrix, grad: &Matrix) -> Vec<Option<Matrix>> {
        let x = inputs[1];
        let g = &*self.graph;
        let prop = &g.propagation;
        let n = g.n();
        let grad_x = prop.t_mul_dense(grad).expect("shapes checked in forward");

        // d loss / d Â_ij for every stored entry, and its pull on the degrees.
        let mut entry_grad = vec![0.0; prop.nnz()];
        let mut degree_grad = vec![0.0; n];
        let (row_ptr, col_idx, vals) = (prop.row_ptr(), prop.col_idx(), prop.values());
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                let j = col_idx[k];
                let c = dot(grad.row(i), x.row(j));
                entry_grad[k] = c;
                let t = c * vals[k];
                degree_grad[i] -= t / (2.0 * g.degrees[i]);
                degree_grad[j] -= t / (2.0 * g.degrees[j]);
            }
        }

        let mut grad_s = Matrix::zeros(n, g.centered.cols());
        let a = &g.adjacency;
        for i in 0..n {
            let span = a.row_ptr()[i]..a.row_ptr()[i + 1];
            for k in span {
                let j = a.col_idx()[k];
                if j <= i {
                    continue;
                }
                let r = a.values()[k];
                let kj = prop.row_ptr()[j] + prop.row(j).0.binary_search(&i).expect("symmetric pattern");
                let d_r = (entry_grad[k] + entry_grad[kj]) / (g.degrees[i] * g.degrees[j]).sqrt()
                    + degree_grad[i]
                    + degree_grad[j];
                let (ni, nj) = (g.norms[i], g.norms[j]);
                let (ci, cj) = (g.centered.row(i).to_vec(), g.centered.row(j).to_vec());
                for (q, (&u, &v)) in ci.iter().zip(&cj).enumerate() {
                    let (zi, zj) = (u / ni, v / nj);
                    grad_s[(i, q)] += d_r * (zj - r * zi) / ni;
                    grad_s[(j, q)] += d_r * (zi - r * zj) / nj;
                }
            }
        }
        vec![Some(grad_s), Some(grad_x)]
    }
}

/// Two GCN layers over the rebuilt graph, ELU after each (the second one
/// only when `elu_after_last_layer`). With `detach` the correlation weights
/// are constants; otherwise gradients flow through them into `s`.
pub fn encode_auxiliary(
    tape: &mut Tape,
    h: Tensor,
    s: Tensor,
    graph: &Arc<CorrelationGraph>,
    enc: &EncoderVars,
    detach: bool,
    elu_after_last_layer: bool,
) -> Result<Tensor, TapeError> {
    let propagate = |tape: &mut Tape, t: Tensor| -> Result<Tensor, TapeError> {
        if detach || !tape.requires_grad(s) {
            tape.spmm(&graph.propagation, t)
        } else {
            let out = graph.propagation.mul_dense(tape.value(t))?;
            tape.custom(vec![s, t], out, Box::new(CorrelationPropagation { graph: Arc::clone(graph) }))
        }
    };
    let hw = tape.matmul(h, enc.w1)?;
    let h1 = propagate(tape, hw)?;
    let h1 = tape.elu(h1)?;
    let hw2 = tape.matmul(h1, enc.w2)?;
    let out = propagate(tape, hw2)?;
    if elu_after_last_layer {
        tape.elu(out)
    } else {
        Ok(out)
    }
}

/// Graph-derived constants shared by every forward pass over one graph.
#[derive(Clone, Debug)]
pub struct GraphOperators {
    pub features: Matrix,
    /// `Â = D̂^{-1/2}(A + I)D̂^{-1/2}` for the GCN layers.
    pub propagation: Arc<SparseMatrix>,
    /// `Ã = D^{-1/2} A D^{-1/2}` for the clustering loss.
    pub normalized: Arc<SparseMatrix>,
    /// Degree diagonal of `Ã`.
    pub normalized_degree: Arc<SparseMatrix>,
}

impl GraphOperators {
    pub fn new(g: &Graph) -> Result<Self, GraphError> {
        let normalized = crate::graphdata::normalize_sym(g.adjacency())?;
        let degree = crate::graphdata::degree_vector(&normalized);
        Ok(Self {
            features: g.features().clone(),
            propagation: Arc::new(renormalize(g.adjacency())?),
            normalized: Arc::new(normalized),
            normalized_degree: Arc::new(SparseMatrix::diagonal(&degree)),
        })
    }
}

/// Which branches a forward pass evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Branches {
    pub primary_classifier: bool,
    pub clustering: bool,
    pub auxiliary: bool,
}

impl Branches {
    pub const ALL: Branches = Branches { primary_classifier: true, clustering: true, auxiliary: true };
}

#[derive(Clone, Debug)]
pub struct DualForward {
    pub h: Tensor,
    pub logits: Option<Tensor>,
    pub p: Option<Tensor>,
    pub s: Option<Tensor>,
    pub a_sc: Option<Arc<CorrelationGraph>>,
    pub h_aux: Option<Tensor>,
    pub logits_aux: Option<Tensor>,
    pub p_aux: Option<Tensor>,
}

/// One pass in training order: `H`, `P`, `S`, `A_sc`, `H̃`, `P̃`. The
/// auxiliary branch needs the clustering branch and turns it on.
pub fn forward_dual(
    tape: &mut Tape,
    ops: &GraphOperators,
    vars: &ParamVars,
    cfg: &ModelConfig,
    branches: Branches,
) -> Result<DualForward, ModelError> {
    let x = tape.constant(ops.features.clone())?;
    let h = encode_primary(tape, x, &ops.propagation, &vars.primary_encoder, cfg.elu_after_last_layer)?;
    let mut out =
        DualForward { h, logits: None, p: None, s: None, a_sc: None, h_aux: None, logits_aux: None, p_aux: None };
    if branches.primary_classifier {
        let (logits, p) = classify(tape, h, &vars.primary_classifier)?;
        out.logits = Some(logits);
        out.p = Some(p);
    }
    if branches.clustering || branches.auxiliary {
        let s = cluster_assign(tape, h, &vars.cluster_head)?;
        out.s = Some(s);
        if branches.auxiliary {
            let graph = Arc::new(CorrelationGraph::build(tape.value(s), cfg.alpha)?);
            let h_aux =
                encode_auxiliary(tape, h, s, &graph, &vars.aux_encoder, cfg.detach_asc, cfg.elu_after_last_layer)?;
            let (logits_aux, p_aux) = classify(tape, h_aux, &vars.aux_classifier)?;
            out.a_sc = Some(graph);
            out.h_aux = Some(h_aux);
            out.logits_aux = Some(logits_aux);
            out.p_aux = Some(p_aux);
        }
    }
    Ok(out)
}
