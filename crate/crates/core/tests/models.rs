mod common;

use std::sync::Arc;

use approx::assert_relative_eq;
use common::*;
use dualgnn::diffmath::{Matrix, Tape};
use dualgnn::graphdata::{generate_sbm, SbmConfig};
use dualgnn::losses::cross_entropy_masked;
use dualgnn::models::{
    build_adjacency, classify, cluster_assign, encode_auxiliary, encode_primary, forward_dual, pearson_rows, Branches,
    CorrelationGraph, EncoderVars, GraphOperators, ParamVars,
};
use dualgnn::{DualModelParams, ModelConfig, Seed};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn adjacency_matches_oracle_on_random_assignments() {
    assert_eq!(adjacency_oracle_mismatches(), 0);
}

#[test]
fn threshold_is_inclusive() {
    // centered rows (1,1,-1,-1) and (7,1,-1,-7) correlate at exactly 16/20
    let s = Matrix::from_rows(&[[11.0, 11.0, 9.0, 9.0], [17.0, 11.0, 9.0, 3.0]]);
    assert_eq!(pearson_rows(s.row(0), s.row(1)).unwrap(), 0.8);
    let a = build_adjacency(&s, 0.8).unwrap();
    assert_eq!(a.get(0, 1), Some(0.8));
    assert_eq!(a.get(1, 0), Some(0.8));
    let a = build_adjacency(&s, 0.8 + 1e-9).unwrap();
    assert_eq!(a.get(0, 1), None);
    assert_eq!(a.get(0, 0), Some(1.0));
}

#[test]
fn pearson_is_affine_invariant() {
    let mut rng = Seed(5).rng();
    for _ in 0..50 {
        let u: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (rng.random_range(0.1..10.0), rng.random_range(-5.0..5.0));
        let w: Vec<f64> = u.iter().map(|x| a * x + b).collect();
        assert_relative_eq!(pearson_rows(&w, &v).unwrap(), pearson_rows(&u, &v).unwrap(), epsilon = 1e-12);
        assert_relative_eq!(pearson_rows(&u, &v).unwrap(), brute_pearson(&u, &v), epsilon = 1e-15);
    }
    assert_eq!(pearson_rows(&[0.5, 0.5, 0.5], &[0.1, 0.2, 0.7]).unwrap(), 0.0);
}

fn s_strategy() -> impl Strategy<Value = Matrix> {
    (2usize..12, 2usize..8).prop_flat_map(|(n, k)| {
        proptest::collection::vec(0.01f64..1.0, n * k).prop_map(move |d| Matrix::from_vec(n, k, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_alpha_never_adds_edges(s in s_strategy(), a1 in 0.01f64..0.99, a2 in 0.01f64..0.99) {
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let dense = build_adjacency(&s, lo).unwrap();
        let sparse = build_adjacency(&s, hi).unwrap();
        for (i, j, w) in sparse.iter() {
            prop_assert_eq!(dense.get(i, j), Some(w));
        }
    }

    #[test]
    fn adjacency_is_symmetric_and_bounded(s in s_strategy(), alpha in 0.01f64..0.99) {
        let a = build_adjacency(&s, alpha).unwrap();
        for i in 0..a.n() {
            prop_assert_eq!(a.get(i, i), Some(1.0));
        }
        for (i, j, w) in a.iter() {
            prop_assert_eq!(a.get(j, i), Some(w));
            if i != j {
                prop_assert!(w >= alpha && w <= 1.0);
            }
        }
    }

    #[test]
    fn cluster_relabelling_keeps_the_graph(s in s_strategy(), alpha in 0.01f64..0.99, rot in 1usize..7) {
        let k = s.cols();
        let mut p = Matrix::zeros(s.rows(), k);
        for i in 0..s.rows() {
            for c in 0..k {
                p[(i, (c + rot) % k)] = s[(i, c)];
            }
        }
        let a = build_adjacency(&s, alpha).unwrap();
        let b = build_adjacency(&p, alpha).unwrap();
        let rs = pairwise_r(&s);
        let mut idx = 0;
        for i in 0..s.rows() {
            for j in (i + 1)..s.rows() {
                let r = rs[idx];
                idx += 1;
                if (r - alpha).abs() < 1e-12 {
                    continue;
                }
                match (a.get(i, j), b.get(i, j)) {
                    (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                    (None, None) => {}
                    other => prop_assert!(false, "edge ({}, {}) differs: {:?}", i, j, other),
                }
            }
        }
    }
}

#[test]
fn forward_equals_its_components() {
    let g = toy_graph();
    let cfg = toy_config();
    let ops = GraphOperators::new(&g).unwrap();
    let params = DualModelParams::init(4, 2, &cfg, Seed(8)).unwrap();

    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, &params, |_| true).unwrap();
    let out = forward_dual(&mut tape, &ops, &vars, &cfg, Branches::ALL).unwrap();

    let mut t2 = Tape::new();
    let v2 = ParamVars::bind(&mut t2, &params, |_| true).unwrap();
    let x = t2.constant(g.features().clone()).unwrap();
    let h = encode_primary(&mut t2, x, &ops.propagation, &v2.primary_encoder, true).unwrap();
    let (_, p) = classify(&mut t2, h, &v2.primary_classifier).unwrap();
    let s = cluster_assign(&mut t2, h, &v2.cluster_head).unwrap();
    let graph = Arc::new(CorrelationGraph::build(t2.value(s), cfg.alpha).unwrap());
    let h_aux = encode_auxiliary(&mut t2, h, s, &graph, &v2.aux_encoder, true, true).unwrap();
    let (_, p_aux) = classify(&mut t2, h_aux, &v2.aux_classifier).unwrap();

    assert_eq!(tape.value(out.h), t2.value(h));
    assert_eq!(tape.value(out.p.unwrap()), t2.value(p));
    assert_eq!(tape.value(out.s.unwrap()), t2.value(s));
    assert_eq!(out.a_sc.unwrap().adjacency, graph.adjacency);
    assert_eq!(tape.value(out.p_aux.unwrap()), t2.value(p_aux));
}

#[test]
fn outputs_are_distributions_on_sbm() {
    let g = generate_sbm(&SbmConfig::default(), Seed(1)).unwrap();
    let cfg = ModelConfig::for_classes(4);
    let ops = GraphOperators::new(&g).unwrap();
    let params = DualModelParams::init(g.feature_dim(), 4, &cfg, Seed(3)).unwrap();
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, &params, |_| false).unwrap();
    let out = forward_dual(&mut tape, &ops, &vars, &cfg, Branches::ALL).unwrap();
    for t in [out.p.unwrap(), out.p_aux.unwrap(), out.s.unwrap()] {
        let m = tape.value(t);
        assert!(m.is_finite());
        for r in 0..m.rows() {
            assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(m.row(r).iter().all(|&x| x > 0.0));
        }
    }
    assert_eq!(tape.value(out.s.unwrap()).shape(), (400, 40));
}

#[test]
fn classifier_argmax_survives_bias_shift() {
    let h = random_matrix(10, 4, 3);
    let w = random_matrix(4, 3, 4);
    let b = random_matrix(1, 3, 5);
    let mut tape = Tape::new();
    let ht = tape.constant(h).unwrap();
    let wt = tape.constant(w).unwrap();
    let lin = dualgnn::models::LinearVars { weight: wt, bias: tape.constant(b.clone()).unwrap() };
    let (_, p) = classify(&mut tape, ht, &lin).unwrap();
    let lin2 = dualgnn::models::LinearVars { weight: wt, bias: tape.constant(b.map(|x| x + 3.0)).unwrap() };
    let (_, q) = classify(&mut tape, ht, &lin2).unwrap();
    assert_eq!(tape.value(p).argmax_rows(), tape.value(q).argmax_rows());
}

#[test]
fn diagonal_graph_transforms_nodes_independently() {
    let h = random_matrix(5, 3, 6);
    // rows far apart so nothing passes the threshold
    let s = Matrix::from_rows(&[
        [0.9, 0.05, 0.05, 0.0],
        [0.0, 0.9, 0.05, 0.05],
        [0.05, 0.0, 0.9, 0.05],
        [0.05, 0.05, 0.0, 0.9],
        [0.3, 0.3, 0.1, 0.3],
    ]);
    let graph = Arc::new(CorrelationGraph::build(&s, 0.99).unwrap());
    assert_eq!(graph.num_edges(), 0);
    let w1 = random_matrix(3, 2, 7);
    let w2 = random_matrix(2, 3, 8);
    let mut tape = Tape::new();
    let (ht, st) = (tape.constant(h.clone()).unwrap(), tape.constant(s).unwrap());
    let enc = EncoderVars { w1: tape.constant(w1.clone()).unwrap(), w2: tape.constant(w2.clone()).unwrap() };
    let out = encode_auxiliary(&mut tape, ht, st, &graph, &enc, true, true).unwrap();
    let elu = |x: f64| if x > 0.0 { x } else { x.exp_m1() };
    let expected = h.matmul(&w1).unwrap().map(elu).matmul(&w2).unwrap().map(elu);
    for (a, b) in tape.value(out).as_slice().iter().zip(expected.as_slice()) {
        assert!((a - b).abs() < 1e-14);
    }
}

/// With the rebuilt graph detached, the auxiliary loss reaches the
/// clustering head only through the min-cut loss, i.e. not at all here.
#[test]
fn detached_graph_passes_no_gradient_to_cluster_head() {
    let g = toy_graph();
    let ops = GraphOperators::new(&g).unwrap();
    let targets = g.labelled(g.train_mask());
    let params = DualModelParams::init(4, 2, &toy_config(), Seed(2)).unwrap();
    for detach in [true, false] {
        let mut cfg = toy_config();
        cfg.detach_asc = detach;
        cfg.alpha = 0.3;
        let mut tape = Tape::new();
        let vars = ParamVars::bind(&mut tape, &params, |_| true).unwrap();
        let out = forward_dual(&mut tape, &ops, &vars, &cfg, Branches::ALL).unwrap();
        assert!(out.a_sc.as_ref().unwrap().num_edges() > 0);
        let loss = cross_entropy_masked(&mut tape, out.logits_aux.unwrap(), &targets).unwrap();
        tape.backward(loss).unwrap();
        let grad_norm = tape.grad(vars.cluster_head.weight).map_or(0.0, |m| m.frobenius_norm());
        if detach {
            assert_eq!(grad_norm, 0.0);
        } else {
            assert!(grad_norm > 0.0);
        }
        assert!(tape.grad(vars.primary_encoder.w1).unwrap().frobenius_norm() > 0.0);
    }
}

#[test]
fn zero_parameters() {
    let g = toy_graph();
    let cfg = toy_config();
    let ops = GraphOperators::new(&g).unwrap();
    let params = DualModelParams::zeros(4, 2, &cfg);
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, &params, |_| false).unwrap();
    let out = forward_dual(&mut tape, &ops, &vars, &cfg, Branches::ALL).unwrap();
    assert!(tape.value(out.h).as_slice().iter().all(|&x| x == 0.0));
    assert!(tape.value(out.h_aux.unwrap()).as_slice().iter().all(|&x| x == 0.0));
    for x in tape.value(out.p.unwrap()).as_slice() {
        assert_relative_eq!(*x, 0.5, epsilon = 1e-15);
    }
    for x in tape.value(out.s.unwrap()).as_slice() {
        assert_relative_eq!(*x, 0.2, epsilon = 1e-15);
    }
}
