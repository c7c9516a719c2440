#![allow(dead_code)]

use std::sync::Arc;

use dualgnn::diffmath::{Matrix, SparseMatrix, Tape, TapeError, Tensor};
use dualgnn::graphdata::{Graph, NodeMask};
use dualgnn::losses::{cross_entropy_masked, joint_loss, mincut_loss, LossError};
use dualgnn::models::{
    classify, cluster_assign, encode_auxiliary, encode_primary, CorrelationGraph, EncoderVars, GraphOperators,
    LinearVars, ParamVars,
};
use dualgnn::{DualModelParams, ModelConfig, Seed};
use rand::Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Seed(seed).rng();
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Random symmetric sparse matrix with positive weights and no diagonal.
pub fn random_symmetric(n: usize, density: f64, seed: u64) -> SparseMatrix {
    let mut rng = Seed(seed).rng();
    let mut trips = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < density {
                let w = rng.random_range(0.1..2.0);
                trips.push((i, j, w));
                trips.push((j, i, w));
            }
        }
    }
    SparseMatrix::from_triplets(n, trips).unwrap()
}

/// Twelve nodes in two loosely bridged communities of six, four features,
/// two classes, two labelled training nodes per class.
pub fn toy_graph() -> Graph {
    let n = 12;
    let mut edges = Vec::new();
    for base in [0, 6] {
        for i in 0..6 {
            edges.push((base + i, base + (i + 1) % 6));
        }
        edges.push((base, base + 3));
    }
    edges.push((2, 8));
    let edges: Vec<(usize, usize)> = edges.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
    let adjacency = SparseMatrix::from_undirected_edges(n, &edges).unwrap();
    let mut features = random_matrix(n, 4, 77);
    for i in 0..n {
        features[(i, if i < 6 { 0 } else { 1 })] += 1.0;
    }
    let labels = (0..n).map(|i| Some(usize::from(i >= 6))).collect();
    Graph::new(
        features,
        adjacency,
        labels,
        2,
        NodeMask::from_indices(n, &[0, 1, 6, 7]).unwrap(),
        NodeMask::from_indices(n, &[2, 8]).unwrap(),
        NodeMask::from_indices(n, &[3, 4, 5, 9, 10, 11]).unwrap(),
    )
    .unwrap()
}

pub fn toy_config() -> ModelConfig {
    ModelConfig {
        hidden_dim: 5,
        embed_dim: 4,
        aux_hidden_dim: 3,
        aux_embed_dim: 4,
        clusters: 5,
        ..ModelConfig::default()
    }
}

pub fn flatten(p: &DualModelParams) -> Vec<Matrix> {
    vec![
        p.primary_encoder.w1.clone(),
        p.primary_encoder.w2.clone(),
        p.primary_classifier.weight.clone(),
        p.primary_classifier.bias.clone(),
        p.cluster_head.weight.clone(),
        p.cluster_head.bias.clone(),
        p.aux_encoder.w1.clone(),
        p.aux_encoder.w2.clone(),
        p.aux_classifier.weight.clone(),
        p.aux_classifier.bias.clone(),
    ]
}

pub fn vars_from(h: &[Tensor]) -> ParamVars {
    ParamVars {
        primary_encoder: EncoderVars { w1: h[0], w2: h[1] },
        primary_classifier: LinearVars { weight: h[2], bias: h[3] },
        cluster_head: LinearVars { weight: h[4], bias: h[5] },
        aux_encoder: EncoderVars { w1: h[6], w2: h[7] },
        aux_classifier: LinearVars { weight: h[8], bias: h[9] },
    }
}

fn tape_err(e: LossError) -> TapeError {
    match e {
        LossError::Tape(t) => t,
        other => panic!("{other}"),
    }
}

/// Cluster assignments of the toy model for the given parameters.
pub fn assignments(ops: &GraphOperators, cfg: &ModelConfig, params: &[Matrix]) -> Matrix {
    let mut tape = Tape::new();
    let h: Vec<Tensor> = params.iter().map(|p| tape.constant(p.clone()).unwrap()).collect();
    let vars = vars_from(&h);
    let x = tape.constant(ops.features.clone()).unwrap();
    let emb = encode_primary(&mut tape, x, &ops.propagation, &vars.primary_encoder, cfg.elu_after_last_layer).unwrap();
    let s = cluster_assign(&mut tape, emb, &vars.cluster_head).unwrap();
    tape.value(s).clone()
}

/// The joint objective over the toy graph, written out op by op. With
/// `frozen` the rebuilt graph is the given one regardless of the current
/// assignments; otherwise it is rebuilt from them on every call.
pub fn joint_objective(
    tape: &mut Tape,
    h: &[Tensor],
    g: &Graph,
    ops: &GraphOperators,
    cfg: &ModelConfig,
    frozen: Option<&Arc<CorrelationGraph>>,
) -> Result<Tensor, TapeError> {
    let vars = vars_from(h);
    let targets = g.labelled(g.train_mask());
    let x = tape.constant(ops.features.clone())?;
    let emb = encode_primary(tape, x, &ops.propagation, &vars.primary_encoder, cfg.elu_after_last_layer)?;
    let (logits, _) = classify(tape, emb, &vars.primary_classifier)?;
    let s = cluster_assign(tape, emb, &vars.cluster_head)?;
    let graph = match frozen {
        Some(gr) => Arc::clone(gr),
        None => Arc::new(CorrelationGraph::build(tape.value(s), cfg.alpha).unwrap()),
    };
    let h_aux = encode_auxiliary(tape, emb, s, &graph, &vars.aux_encoder, frozen.is_some(), cfg.elu_after_last_layer)?;
    let (logits_aux, _) = classify(tape, h_aux, &vars.aux_classifier)?;
    let ce = cross_entropy_masked(tape, logits, &targets).map_err(tape_err)?;
    let ce_aux = cross_entropy_masked(tape, logits_aux, &targets).map_err(tape_err)?;
    let sc = mincut_loss(tape, s, &ops.normalized, &ops.normalized_degree).map_err(tape_err)?;
    let (total, _) = joint_loss(tape, Some(ce), Some(ce_aux), Some(sc.total)).map_err(tape_err)?;
    Ok(total)
}

/// All pairwise Pearson correlations among the rows of `s`, brute force.
pub fn pairwise_r(s: &Matrix) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..s.rows() {
        for j in (i + 1)..s.rows() {
            out.push(brute_pearson(s.row(i), s.row(j)));
        }
    }
    out
}

/// Textbook two-pass Pearson correlation, zero for a constant vector.
pub fn brute_pearson(u: &[f64], v: &[f64]) -> f64 {
    let k = u.len() as f64;
    let mu = u.iter().sum::<f64>() / k;
    let mv = v.iter().sum::<f64>() / k;
    let mut num = 0.0;
    let mut su = 0.0;
    let mut sv = 0.0;
    for (a, b) in u.iter().zip(v) {
        num += (a - mu) * (b - mv);
        su += (a - mu) * (a - mu);
        sv += (b - mv) * (b - mv);
    }
    if su == 0.0 || sv == 0.0 {
        return 0.0;
    }
    (num / (su.sqrt() * sv.sqrt())).clamp(-1.0, 1.0)
}

/// `‖t − C‖_F` for a fixed random `C`, so every output entry matters.
pub fn probe(tape: &mut Tape, t: Tensor, seed: u64) -> Result<Tensor, TapeError> {
    let (r, c) = tape.shape(t);
    let target = tape.constant(random_matrix(r, c, seed))?;
    let d = tape.sub(t, target)?;
    tape.frobenius_norm(d)
}

type Report = dualgnn::diffmath::GradCheckReport;

fn check<F>(f: F, params: &[Matrix]) -> Report
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor, TapeError>,
{
    dualgnn::diffmath::grad_check(f, params).unwrap()
}

/// Finite-difference reports for every differentiable tape op.
pub fn elementary_grad_reports() -> Vec<(&'static str, Report)> {
    let a = Arc::new(random_symmetric(6, 0.5, 3));
    let m34 = [random_matrix(3, 4, 5), random_matrix(3, 4, 6)];
    let row = random_matrix(1, 4, 7);
    let elu_in = [random_matrix(3, 4, 8).map(|x| x * 2.0 + 0.01)];
    let mm = [random_matrix(4, 3, 1), random_matrix(3, 5, 2)];
    let tall = [random_matrix(6, 3, 4)];
    let scal = [random_matrix(3, 4, 10), Matrix::scalar(1.7), Matrix::scalar(-0.6)];
    let logits = [random_matrix(5, 3, 11).scaled(3.0)];
    let targets = vec![(0, 2), (1, 0), (3, 1), (4, 1)];
    vec![
        (
            "matmul",
            check(
                |t, h| {
                    let m = t.matmul(h[0], h[1])?;
                    probe(t, m, 9)
                },
                &mm,
            ),
        ),
        (
            "transpose",
            check(
                |t, h| {
                    let m = t.transpose(h[0])?;
                    probe(t, m, 9)
                },
                &mm[..1],
            ),
        ),
        (
            "spmm",
            check(
                |t, h| {
                    let m = t.spmm(&a, h[0])?;
                    probe(t, m, 9)
                },
                &tall,
            ),
        ),
        ("trace_quadratic", check(|t, h| t.trace_quadratic(h[0], &a), &tall)),
        (
            "add",
            check(
                |t, h| {
                    let m = t.add(h[0], h[1])?;
                    probe(t, m, 9)
                },
                &m34,
            ),
        ),
        (
            "sub",
            check(
                |t, h| {
                    let m = t.sub(h[0], h[1])?;
                    probe(t, m, 9)
                },
                &m34,
            ),
        ),
        (
            "scale",
            check(
                |t, h| {
                    let m = t.scale(h[0], -2.5)?;
                    probe(t, m, 9)
                },
                &m34[..1],
            ),
        ),
        (
            "add_row_vector",
            check(
                |t, h| {
                    let m = t.add_row_vector(h[0], h[1])?;
                    probe(t, m, 9)
                },
                &[m34[0].clone(), row.clone()],
            ),
        ),
        (
            "elu",
            check(
                |t, h| {
                    let m = t.elu(h[0])?;
                    probe(t, m, 9)
                },
                &elu_in,
            ),
        ),
        (
            "softmax_rows",
            check(
                |t, h| {
                    let m = t.softmax_rows(h[0])?;
                    probe(t, m, 9)
                },
                &m34[..1],
            ),
        ),
        ("sum", check(|t, h| t.sum(h[0]), &scal[..1])),
        ("frobenius_norm", check(|t, h| t.frobenius_norm(h[0]), &scal[..1])),
        (
            "mul_scalar",
            check(
                |t, h| {
                    let m = t.mul_scalar(h[0], h[2])?;
                    probe(t, m, 9)
                },
                &scal,
            ),
        ),
        (
            "div_scalar",
            check(
                |t, h| {
                    let m = t.div_scalar(h[0], h[1])?;
                    probe(t, m, 9)
                },
                &scal,
            ),
        ),
        ("cross_entropy", check(|t, h| t.cross_entropy(h[0], targets.clone()), &logits)),
    ]
}

/// Threshold in the widest gap of the pairwise correlations, so that finite
/// difference steps never add or remove an edge.
pub fn alpha_in_gap(s: &Matrix) -> f64 {
    let mut r: Vec<f64> = pairwise_r(s).into_iter().filter(|&x| (0.05..0.95).contains(&x)).collect();
    r.sort_by(f64::total_cmp);
    let (lo, hi) = r.windows(2).map(|w| (w[0], w[1])).max_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0))).unwrap();
    assert!(hi - lo > 0.02, "no usable gap: {lo}..{hi}");
    (lo + hi) / 2.0
}

/// Reports for the joint objective on the toy graph: with the rebuilt graph
/// detached (held fixed in the numeric evaluations too), and with gradients
/// flowing through its correlation weights.
pub fn joint_grad_reports() -> Vec<(&'static str, Report)> {
    let g = toy_graph();
    let ops = GraphOperators::new(&g).unwrap();
    let cfg = toy_config();
    let params = flatten(&DualModelParams::init(4, 2, &cfg, Seed(21)).unwrap());
    let graph = Arc::new(CorrelationGraph::build(&assignments(&ops, &cfg, &params), cfg.alpha).unwrap());
    assert!(graph.num_edges() > 0);
    let detached = check(|t, h| joint_objective(t, h, &g, &ops, &cfg, Some(&graph)), &params);

    let mut live = toy_config();
    live.detach_asc = false;
    live.alpha = alpha_in_gap(&assignments(&ops, &live, &params));
    assert!(CorrelationGraph::build(&assignments(&ops, &live, &params), live.alpha).unwrap().num_edges() > 0);
    let through = check(|t, h| joint_objective(t, h, &g, &ops, &live, None), &params);
    vec![("joint (detached graph)", detached), ("joint (through graph weights)", through)]
}

/// Brute-force thresholded correlation graph as a dense matrix.
pub fn oracle_adjacency(s: &Matrix, alpha: f64) -> Matrix {
    let n = s.rows();
    let mut a = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let r = brute_pearson(s.row(i), s.row(j));
                if r >= alpha {
                    a[(i, j)] = r;
                }
            }
        }
    }
    a
}

/// Random row-stochastic `N × K` matrix, `N ≤ 32`, with one duplicated row.
pub fn random_assignments(rng: &mut impl Rng) -> Matrix {
    let n = rng.random_range(2..=32);
    let k = rng.random_range(2..=12);
    let mut s = Matrix::zeros(n, k);
    for i in 0..n {
        let row: Vec<f64> = (0..k).map(|_| rng.random_range(0.0f64..3.0).exp()).collect();
        let total: f64 = row.iter().sum();
        for (c, v) in row.iter().enumerate() {
            s[(i, c)] = v / total;
        }
    }
    if n > 3 {
        let r0 = s.row(0).to_vec();
        s.row_mut(n - 1).copy_from_slice(&r0);
    }
    s
}

/// Compares `build_adjacency` with the oracle on 200 random assignment
/// matrices; every other case thresholds exactly at an observed correlation.
/// Returns the number of mismatching cases.
pub fn adjacency_oracle_mismatches() -> usize {
    let mut rng = Seed(2024).rng();
    let mut bad = 0;
    for case in 0..200 {
        let s = random_assignments(&mut rng);
        let alpha = if case % 2 == 0 {
            rng.random_range(0.05..0.95)
        } else {
            let rs = pairwise_r(&s);
            rs[rng.random_range(0..rs.len())].clamp(1e-6, 1.0 - 1e-6)
        };
        if dualgnn::models::build_adjacency(&s, alpha).unwrap().to_dense() != oracle_adjacency(&s, alpha) {
            bad += 1;
        }
    }
    bad
}

pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let max = m.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = m.row(r).iter().map(|x| (x - max).exp()).sum();
        for (o, x) in out.row_mut(r).iter_mut().zip(m.row(r)) {
            *o = (x - max).exp() / z;
        }
    }
    out
}

/// `(cut, orthogonality, total)` of the min-cut loss of `s` on `a`.
pub fn mincut_terms(s: &Matrix, a: &SparseMatrix) -> (f64, f64, f64) {
    let norm = dualgnn::graphdata::normalize_sym(a).unwrap();
    let deg = SparseMatrix::diagonal(&dualgnn::graphdata::degree_vector(&norm));
    let mut tape = Tape::new();
    let st = tape.constant(s.clone()).unwrap();
    let t = mincut_loss(&mut tape, st, &Arc::new(norm), &Arc::new(deg)).unwrap();
    (tape.value(t.cut).item(), tape.value(t.orthogonality).item(), tape.value(t.total).item())
}

/// Cut and orthogonality terms over 1000 random graphs and soft
/// assignments; returns the extreme values seen.
pub fn mincut_ranges() -> ((f64, f64), (f64, f64)) {
    let mut rng = Seed(99).rng();
    let (mut cut_range, mut orth_range) = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
    for case in 0..1000 {
        let n = rng.random_range(2..20);
        let k = rng.random_range(2..10);
        let a = random_symmetric(n, rng.random_range(0.0..1.0), 10_000 + case);
        let scale = rng.random_range(0.0..20.0);
        let s = softmax_rows(&random_matrix(n, k, 20_000 + case).scaled(scale));
        let (cut, orth, _) = mincut_terms(&s, &a);
        cut_range = (cut_range.0.min(cut), cut_range.1.max(cut));
        orth_range = (orth_range.0.min(orth), orth_range.1.max(orth));
    }
    (cut_range, orth_range)
}
