//! Full-batch training: forward pass, joint loss, backward pass, Adam step
//! with coupled L2 and a step learning-rate schedule; final-epoch evaluation.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{Matrix, Tape, TapeError};
use crate::graphdata::{Graph, GraphError, NodeMask, Seed};
use crate::losses::{cross_entropy_masked, joint_loss, mincut_loss, LossBreakdown, LossError};
use crate::models::{
    forward_dual, Branches, DualModelParams, GraphOperators, ModelConfig, ModelError, ParamGroup, ParamVars,
};

/// Slack allowed on the analytic bounds of the min-cut terms.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("epoch {epoch}: non-finite value ({source}); run aborted")]
    Diverged { epoch: usize, source: TapeError },
    #[error("epoch {epoch}: {what} = {value} outside its analytic range")]
    Bounds { epoch: usize, what: &'static str, value: f64 },
    #[error("accuracy over an empty node set")]
    EmptyMask,
}

/// Which parts of the dual model are trained and scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    /// Primary GCN alone on its cross-entropy.
    #[serde(rename = "gcn")]
    Baseline,
    /// Both modules and the clustering loss.
    #[serde(rename = "dual")]
    Dual,
    /// Primary module plus the clustering loss; no auxiliary module.
    #[serde(rename = "prim-cluster")]
    PrimaryPlusCluster,
    /// Auxiliary module and clustering loss on top of the primary encoder,
    /// without the primary classifier.
    #[serde(rename = "aux-cluster")]
    AuxiliaryPlusCluster,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::Dual, Mode::PrimaryPlusCluster, Mode::AuxiliaryPlusCluster];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "gcn",
            Mode::Dual => "dual",
            Mode::PrimaryPlusCluster => "prim-cluster",
            Mode::AuxiliaryPlusCluster => "aux-cluster",
        }
    }

    pub fn trains(self, g: ParamGroup) -> bool {
        use ParamGroup::*;
        match self {
            Mode::Baseline => matches!(g, PrimaryEncoder | PrimaryClassifier),
            Mode::Dual => true,
            Mode::PrimaryPlusCluster => matches!(g, PrimaryEncoder | PrimaryClassifier | ClusterHead),
            Mode::AuxiliaryPlusCluster => matches!(g, PrimaryEncoder | ClusterHead | AuxEncoder | AuxClassifier),
        }
    }

    pub fn branches(self) -> Branches {
        match self {
            Mode::Baseline => Branches { primary_classifier: true, clustering: false, auxiliary: false },
            Mode::Dual => Branches::ALL,
            Mode::PrimaryPlusCluster => Branches { primary_classifier: true, clustering: true, auxiliary: false },
            Mode::AuxiliaryPlusCluster => Branches { primary_classifier: false, clustering: true, auxiliary: true },
        }
    }

    /// Whether reported accuracy comes from the auxiliary classifier.
    pub fn reports_auxiliary(self) -> bool {
        matches!(self, Mode::Dual | Mode::AuxiliaryPlusCluster)
    }

    /// Whether K and α influence this mode at all.
    pub fn uses_clustering(self) -> bool {
        self != Mode::Baseline
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gcn" | "baseline" => Ok(Mode::Baseline),
            "dual" => Ok(Mode::Dual),
            "prim-cluster" => Ok(Mode::PrimaryPlusCluster),
            "aux-cluster" => Ok(Mode::AuxiliaryPlusCluster),
            other => Err(format!("unknown mode {other:?} (expected gcn, dual, prim-cluster, aux-cluster)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Multiplicative decay `γ` applied every `lr_step` epochs.
    pub lr_decay: f64,
    pub lr_step: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub mode: Mode,
    pub seed: Seed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 1e-2,
            lr_decay: 0.5,
            lr_step: 50,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            mode: Mode::Dual,
            seed: Seed(0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be finite and >= 0", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay = {} must lie in (0, 1]", self.lr_decay));
        }
        if self.lr_step == 0 {
            return bad("lr_step must be >= 1".into());
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad(format!("weight_decay = {} must be >= 0", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.eps.is_nan()
            || self.eps <= 0.0
        {
            return bad("adam betas must lie in [0, 1) and eps must be > 0".into());
        }
        Ok(())
    }
}

/// Step schedule: `lr · γ^⌊epoch / lr_step⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * cfg.lr_decay.powi((epoch / cfg.lr_step) as i32)
}

/// Adam with bias correction. Weight decay is coupled: `weight_decay · p` is
/// added to the gradient before the moment updates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self { beta1, beta2, eps, weight_decay, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One update of `params` (always passed in the same order) given their
    /// gradients.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix], lr: f64) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let step_size = lr / bc1;
        let bc2_sqrt = bc2.sqrt();
        for (idx, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[idx].as_mut_slice();
            let v = self.v[idx].as_mut_slice();
            for (((pv, &gv), mv), vv) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                let grad = gv + self.weight_decay * *pv;
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * grad;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * grad * grad;
                let denom = vv.sqrt() / bc2_sqrt + self.eps;
                *pv -= step_size * *mv / denom;
            }
        }
    }
}

/// Fraction of `mask` nodes whose highest-probability class (lowest index on
/// ties) equals their label.
pub fn evaluate(p: &Matrix, g: &Graph, mask: &NodeMask) -> Result<f64, TrainError> {
    let targets = g.labelled(mask);
    if targets.is_empty() {
        return Err(TrainError::EmptyMask);
    }
    let pred = p.argmax_rows();
    let correct = targets.iter().filter(|&&(i, y)| pred[i] == y).count();
    Ok(correct as f64 / targets.len() as f64)
}

/// Outcome of one training run. Equality ignores the wall-clock time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: Mode,
    pub seed: Seed,
    /// Test accuracy of the reporting classifier (auxiliary for dual and
    /// aux-cluster, primary otherwise).
    pub final_test_accuracy: f64,
    pub final_val_accuracy: f64,
    pub primary_test_accuracy: Option<f64>,
    pub auxiliary_test_accuracy: Option<f64>,
    pub losses: Vec<LossBreakdown>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl PartialEq for RunRecord {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode
            && self.seed == other.seed
            && self.final_test_accuracy == other.final_test_accuracy
            && self.final_val_accuracy == other.final_val_accuracy
            && self.primary_test_accuracy == other.primary_test_accuracy
            && self.auxiliary_test_accuracy == other.auxiliary_test_accuracy
            && self.losses == other.losses
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub record: RunRecord,
    pub params: DualModelParams,
}

fn diverged(epoch: usize) -> impl Fn(TapeError) -> TrainError {
    move |source| TrainError::Diverged { epoch, source }
}

fn lift(epoch: usize) -> impl Fn(ModelError) -> TrainError {
    move |e| match e {
        ModelError::Tape(source) => TrainError::Diverged { epoch, source },
        other => TrainError::Model(other),
    }
}

fn lift_loss(epoch: usize) -> impl Fn(LossError) -> TrainError {
    move |e| match e {
        LossError::Tape(source) => TrainError::Diverged { epoch, source },
        other => TrainError::Loss(other),
    }
}

fn check_bound(epoch: usize, what: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), TrainError> {
    if value < lo - BOUND_SLACK || value > hi + BOUND_SLACK {
        return Err(TrainError::Bounds { epoch, what, value });
    }
    Ok(())
}

/// Trains from freshly initialized parameters (seeded by `train_cfg.seed`).
pub fn train(g: &Graph, model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<RunRecord, TrainError> {
    Ok(train_model(g, model_cfg, train_cfg)?.record)
}

/// Like [`train`], also returning the final parameters.
pub fn train_model(g: &Graph, model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<TrainedModel, TrainError> {
    model_cfg.validate(g.num_classes())?;
    let params = DualModelParams::init(g.feature_dim(), g.num_classes(), model_cfg, train_cfg.seed)?;
    train_from(g, params, model_cfg, train_cfg)
}

/// Runs the training loop starting from the given parameters.
pub fn train_from(
    g: &Graph,
    mut params: DualModelParams,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainedModel, TrainError> {
    train_cfg.validate()?;
    model_cfg.validate(g.num_classes())?;
    let started = Instant::now();
    let mode = train_cfg.mode;
    let ops = GraphOperators::new(g)?;
    let targets = g.labelled(g.train_mask());
    let branches = mode.branches();
    let groups: Vec<ParamGroup> = ParamGroup::ALL.into_iter().filter(|&pg| mode.trains(pg)).collect();
    let mut adam = Adam::from_config(train_cfg);
    let mut losses = Vec::with_capacity(train_cfg.epochs);

    for epoch in 0..train_cfg.epochs {
        let mut tape = Tape::new();
        let vars = ParamVars::bind(&mut tape, &params, |pg| mode.trains(pg)).map_err(diverged(epoch))?;
        let out = forward_dual(&mut tape, &ops, &vars, model_cfg, branches).map_err(lift(epoch))?;

        let ce = match (mode, out.logits) {
            (Mode::AuxiliaryPlusCluster, _) | (_, None) => None,
            (_, Some(logits)) => Some(cross_entropy_masked(&mut tape, logits, &targets).map_err(lift_loss(epoch))?),
        };
        let ce_aux = match out.logits_aux {
            Some(logits) => Some(cross_entropy_masked(&mut tape, logits, &targets).map_err(lift_loss(epoch))?),
            None => None,
        };
        let sc = match out.s {
            Some(s) => {
                let terms =
                    mincut_loss(&mut tape, s, &ops.normalized, &ops.normalized_degree).map_err(lift_loss(epoch))?;
                check_bound(epoch, "min-cut term", tape.value(terms.cut).item(), -1.0, 0.0)?;
                check_bound(epoch, "orthogonality term", tape.value(terms.orthogonality).item(), 0.0, 2.0)?;
                Some(terms.total)
            }
            None => None,
        };
        let (total, breakdown) = joint_loss(&mut tape, ce, ce_aux, sc).map_err(lift_loss(epoch))?;
        if !breakdown.total.is_finite() {
            return Err(TrainError::Diverged { epoch, source: TapeError::NonFinite { op: "joint_loss" } });
        }
        losses.push(breakdown);
        tape.backward(total).map_err(diverged(epoch))?;

        let grads: Vec<Matrix> = groups
            .iter()
            .flat_map(|&pg| {
                let handles = vars.group(pg);
                let tape = &tape;
                handles.into_iter().map(move |h| {
                    tape.grad(h).cloned().unwrap_or_else(|| {
                        let (r, c) = tape.shape(h);
                        Matrix::zeros(r, c)
                    })
                })
            })
            .collect();
        let grad_refs: Vec<&Matrix> = grads.iter().collect();
        let mut param_refs = params.matrices_mut(|pg| mode.trains(pg));
        adam.step(&mut param_refs, &grad_refs, lr_at(epoch, train_cfg));
        if !params.is_finite() {
            return Err(TrainError::Diverged { epoch, source: TapeError::NonFinite { op: "adam_step" } });
        }
    }

    let epoch = train_cfg.epochs;
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, &params, |_| false).map_err(diverged(epoch))?;
    let eval_branches = Branches {
        primary_classifier: branches.primary_classifier,
        clustering: branches.auxiliary,
        auxiliary: branches.auxiliary,
    };
    let out = forward_dual(&mut tape, &ops, &vars, model_cfg, eval_branches).map_err(lift(epoch))?;
    let primary = out.p.map(|p| tape.value(p).clone());
    let auxiliary = out.p_aux.map(|p| tape.value(p).clone());
    let report = if mode.reports_auxiliary() { auxiliary.as_ref() } else { primary.as_ref() }
        .expect("mode evaluates its reporting classifier");

    let record = RunRecord {
        mode,
        seed: train_cfg.seed,
        final_test_accuracy: evaluate(report, g, g.test_mask())?,
        final_val_accuracy: if g.val_mask().count() > 0 { evaluate(report, g, g.val_mask())? } else { 0.0 },
        primary_test_accuracy: primary.as_ref().map(|p| evaluate(p, g, g.test_mask())).transpose()?,
        auxiliary_test_accuracy: auxiliary.as_ref().map(|p| evaluate(p, g, g.test_mask())).transpose()?,
        losses,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainedModel { record, params })
}
