//! L-infinity attacks: FGSM, PGD, MIM, margin PGD and the NES black-box attack.
//!
//! Every attack keeps `x_adv` inside the epsilon ball around the input and inside
//! `[0, 1]`. White-box attacks need only a [`Classifier`].

mod nes;

pub use nes::{nes_attack, nes_gradient_estimate, NesConfig};

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;


/// Objective maximized by the white-box attacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    /// Negated margin `-max(z_y - max_{c != y} z_c, -kappa)`.
    CwMargin,
}

impl LossKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::CwMargin => "cw_margin",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" | "ce" => Ok(LossKind::CrossEntropy),
            "cw_margin" | "cw" => Ok(LossKind::CwMargin),
            _ => Err(Error::Config(format!("unknown loss kind `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttackMethod {
    Fgsm,
    Pgd,
    Mim,
    Cw,
}

impl AttackMethod {
    pub const ALL: [AttackMethod; 4] = [
        AttackMethod::Fgsm,
        AttackMethod::Pgd,
        AttackMethod::Mim,
        AttackMethod::Cw,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Pgd => "pgd",
            AttackMethod::Mim => "mim",
            AttackMethod::Cw => "cw",
        }
    }
}

impl fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown attack `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackConfig {
    pub method: AttackMethod,
    /// L-infinity budget in `[0, 1]` pixel units.
    pub epsilon: f32,
    pub step_size: f32,
    pub steps: usize,
    pub random_init: bool,
    pub restarts: usize,
    /// Momentum decay for MIM.
    pub decay: f32,
    pub loss_kind: LossKind,
    pub kappa: f32,
}

impl Default for AttackConfig {
    /// PGD-20 at 8/255 with step 2/255 and a random start.
    fn default() -> Self {
        Self {
            method: AttackMethod::Pgd,
            epsilon: 0.031,
            step_size: 2.0 / 255.0,
            steps: 20,
            random_init: true,
            restarts: 1,
            decay: 1.0,
            loss_kind: LossKind::CrossEntropy,
            kappa: 0.0,
        }
    }
}

impl AttackConfig {
    /// The evaluation setting for `method` at the default budget.
    pub fn for_method(method: AttackMethod) -> Self {
        let mut cfg = Self {
            method,
            ..Self::default()
        };
        match method {
            AttackMethod::Fgsm => {
                cfg.steps = 1;
                cfg.random_init = false;
                cfg.step_size = cfg.epsilon;
            }
            AttackMethod::Mim => cfg.random_init = false,
            AttackMethod::Cw => cfg.loss_kind = LossKind::CwMargin,
            AttackMethod::Pgd => {}
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.epsilon.is_finite() && (0.0..=1.0).contains(&self.epsilon)) {
            return bad(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        if self.method != AttackMethod::Fgsm {
            if self.steps == 0 {
                return bad("steps must be at least 1".into());
            }
            if !(self.step_size.is_finite() && self.step_size > 0.0) {
                return bad(format!("step_size must be positive, got {}", self.step_size));
            }
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        if !(self.decay.is_finite() && self.decay >= 0.0) {
            return bad(format!("decay must be non-negative, got {}", self.decay));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return bad(format!("kappa must be non-negative, got {}", self.kappa));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    pub adversarial: Tensor,
    /// Prediction on the adversarial sample differs from the true label.
    pub success: Vec<bool>,
    /// Model queries per sample (black-box attacks only; zero otherwise).
    pub queries: Vec<usize>,
    /// Number of batched input-gradient evaluations.
    pub gradient_calls: usize,
}

/// Anything that maps an input batch to logits and can differentiate an attack loss.
pub trait Classifier {
    fn logits(&self, x: &Tensor) -> Result<Tensor>;

    /// Per-sample attack losses and the gradient of their sum with respect to `x`.
    fn loss_and_grad(&self, x: &Tensor, labels: &[usize], kind: LossKind, kappa: f32) -> Result<(Vec<f32>, Tensor)>;
}

fn loss_node(g: &mut Graph, logits: Var, labels: &[usize], kind: LossKind, kappa: f32) -> Result<Var> {
    match kind {
        LossKind::CrossEntropy => g.cross_entropy_per_sample(logits, labels),
        LossKind::CwMargin => {
            let m = g.cw_margin(logits, labels, kappa)?;
            g.scale(m, -1.0)
        }
    }
}

/// Per-sample attack losses of precomputed logits.
pub fn attack_losses(logits: &Tensor, labels: &[usize], kind: LossKind, kappa: f32) -> Result<Vec<f32>> {
    let mut g = Graph::new();
    let z = g.constant(logits.clone());
    let l = loss_node(&mut g, z, labels, kind, kappa)?;
    Ok(g.value(l).data().to_vec())
}

/// Runs `build` on a fresh graph with `x` as the only differentiable leaf.
pub fn graph_loss_and_grad(
    x: &Tensor,
    labels: &[usize],
    kind: LossKind,
    kappa: f32,
    build: impl FnOnce(&mut Graph, Var) -> Result<Var>,
) -> Result<(Vec<f32>, Tensor)> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let logits = build(&mut g, xv)?;
    let per = loss_node(&mut g, logits, labels, kind, kappa)?;
    let total = g.sum(per)?;
    g.backward(total)?;
    let grad = g.grad_tensor(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));
    if !grad.all_finite() {
        return Err(Error::Numeric("non-finite input gradient".into()));
    }
    Ok((g.value(per).data().to_vec(), grad))
}

impl Classifier for Model {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x, false)
    }

    fn loss_and_grad(&self, x: &Tensor, labels: &[usize], kind: LossKind, kappa: f32) -> Result<(Vec<f32>, Tensor)> {
        graph_loss_and_grad(x, labels, kind, kappa, |g, xv| {
            let p = self.bind(g, false);
            Ok(self.forward_graph(g, &p, xv, false)?.0)
        })
    }
}

/// A model evaluated with batch statistics, as seen by the attacker during training.
/// Running statistics are never updated through this view.
pub struct TrainMode<'a>(pub &'a Model);

impl Classifier for TrainMode<'_> {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.0.forward(x, true)
    }

    fn loss_and_grad(&self, x: &Tensor, labels: &[usize], kind: LossKind, kappa: f32) -> Result<(Vec<f32>, Tensor)> {
        graph_loss_and_grad(x, labels, kind, kappa, |g, xv| {
            let p = self.0.bind(g, false);
            Ok(self.0.forward_graph(g, &p, xv, true)?.0)
        })
    }
}

/// Affine classifier `z = flatten(x) w + b` with `w: [D, C]`.
#[derive(Clone, Debug)]
pub struct LinearClassifier {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearClassifier {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::dim(format!(
                "linear classifier needs w [D, C] and b [C], got {:?} and {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    fn build(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let flat = g.flatten(x)?;
        let w = g.constant(self.weight.clone());
        let b = g.constant(self.bias.clone());
        g.linear(flat, w, b)
    }
}

impl Classifier for LinearClassifier {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let z = self.build(&mut g, xv)?;
        Ok(g.value(z).clone())
    }

    fn loss_and_grad(&self, x: &Tensor, labels: &[usize], kind: LossKind, kappa: f32) -> Result<(Vec<f32>, Tensor)> {
        graph_loss_and_grad(x, labels, kind, kappa, |g, xv| self.build(g, xv))
    }
}

fn sign(v: f64) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `clamp_ball(clamp01(x + step * dir))` elementwise around the clean input `x0`.
fn signed_step(x: &mut Tensor, x0: &Tensor, dir: &[f32], step: f32, eps: f32) {
    for ((v, &o), &d) in x.data_mut().iter_mut().zip(x0.data()).zip(dir) {
        let moved = (*v + step * d).clamp(0.0, 1.0);
        *v = moved.clamp(o - eps, o + eps);
    }
}

fn check_batch(x: &Tensor, labels: &[usize]) -> Result<()> {
    if x.rank() < 2 || x.shape()[0] != labels.len() {
        return Err(Error::dim(format!(
            "attack batch {:?} does not match {} labels",
            x.shape(),
            labels.len()
        )));
    }
    Ok(())
}

fn finish<C: Classifier + ?Sized>(
    model: &C,
    adv: Tensor,
    labels: &[usize],
    gradient_calls: usize,
) -> Result<AttackResult> {
    let pred = model.logits(&adv)?.argmax_rows();
    Ok(AttackResult {
        success: pred.iter().zip(labels).map(|(p, y)| p != y).collect(),
        queries: vec![0; labels.len()],
        adversarial: adv,
        gradient_calls,
    })
}

/// Shared iterate-and-select loop for PGD, MIM and margin PGD.
///
/// For every sample the returned point is the highest-loss candidate seen across
/// restarts, where candidates are the post-step iterates plus, with random
/// initialization, the random starting point.
fn iterate<C: Classifier + ?Sized, R: Rng + ?Sized>(
    model: &C,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    momentum: bool,
    rng: &mut R,
) -> Result<AttackResult> {
    cfg.validate()?;
    check_batch(x, labels)?;
    let n = labels.len();
    let item = x.item_len();
    let eps = cfg.epsilon;
    let mut best = x.clone();
    let mut best_loss = vec![f32::NEG_INFINITY; n];
    let mut calls = 0;
    let mut keep = |cand: &Tensor, losses: &[f32], best: &mut Tensor| {
        for i in 0..n {
            if losses[i] > best_loss[i] {
                best_loss[i] = losses[i];
                best.item_mut(i).copy_from_slice(cand.item(i));
            }
        }
    };
    for _ in 0..cfg.restarts {
        let mut cur = x.clone();
        if cfg.random_init && eps > 0.0 {
            for v in cur.data_mut() {
                *v = (*v + rng.random_range(-eps..=eps)).clamp(0.0, 1.0);
            }
        }
        let mut velocity = vec![0.0f64; x.len()];
        let mut dir = vec![0.0f32; x.len()];
        for step in 0..cfg.steps {
            let (losses, grad) = model.loss_and_grad(&cur, labels, cfg.loss_kind, cfg.kappa)?;
            calls += 1;
            if step > 0 || cfg.random_init {
                keep(&cur, &losses, &mut best);
            }
            let gd = grad.data();
            if momentum {
                for i in 0..n {
                    let gi = &gd[i * item..(i + 1) * item];
                    let l1: f64 = gi.iter().map(|&v| (v as f64).abs()).sum();
                    let vi = &mut velocity[i * item..(i + 1) * item];
                    for (v, &gv) in vi.iter_mut().zip(gi) {
                        let normed = if l1 > 0.0 { gv as f64 / l1 } else { 0.0 };
                        *v = cfg.decay as f64 * *v + normed;
                    }
                }
                for (d, &v) in dir.iter_mut().zip(&velocity) {
                    *d = sign(v);
                }
            } else {
                for (d, &v) in dir.iter_mut().zip(gd) {
                    *d = sign(v as f64);
                }
            }
            signed_step(&mut cur, x, &dir, cfg.step_size, eps);
        }
        let losses = attack_losses(&model.logits(&cur)?, labels, cfg.loss_kind, cfg.kappa)?;
        keep(&cur, &losses, &mut best);
    }
    finish(model, best, labels, calls)
}

/// One signed gradient step of size epsilon from the clean input.
pub fn fgsm<C: Classifier + ?Sized>(
    model: &C,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    AttackConfig {
        method: AttackMethod::Fgsm,
        ..cfg.clone()
    }
    .validate()?;
    check_batch(x, labels)?;
    let (_, grad) = model.loss_and_grad(x, labels, cfg.loss_kind, cfg.kappa)?;
    let dir: Vec<f32> = grad.data().iter().map(|&v| sign(v as f64)).collect();
    let mut adv = x.clone();
    signed_step(&mut adv, x, &dir, cfg.epsilon, cfg.epsilon);
    finish(model, adv, labels, 1)
}

pub fn pgd<C: Classifier + ?Sized, R: Rng + ?Sized>(
    model: &C,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<AttackResult> {
    iterate(model, x, labels, cfg, false, rng)
}

/// Momentum iterative attack: `g <- decay * g + grad / ||grad||_1`, step along `sign(g)`.
pub fn mim<C: Classifier + ?Sized, R: Rng + ?Sized>(
    model: &C,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<AttackResult> {
    iterate(model, x, labels, cfg, true, rng)
}

/// PGD on the margin loss. `cfg.loss_kind` must be [`LossKind::CwMargin`].
pub fn cw_pgd<C: Classifier + ?Sized, R: Rng + ?Sized>(
    model: &C,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<AttackResult> {
    if cfg.loss_kind != LossKind::CwMargin {
        return Err(Error::Config("cw_pgd requires loss_kind = cw_margin".into()));
    }
    iterate(model, x, labels, cfg, false, rng)
}

/// Dispatches on `cfg.method`.
pub fn run_attack<C: Classifier + ?Sized, R: Rng + ?Sized>(
    model: &C,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<AttackResult> {
    match cfg.method {
        AttackMethod::Fgsm => fgsm(model, x, labels, cfg),
        AttackMethod::Pgd => pgd(model, x, labels, cfg, rng),
        AttackMethod::Mim => mim(model, x, labels, cfg, rng),
        AttackMethod::Cw => {
            let cw = AttackConfig {
                loss_kind: LossKind::CwMargin,
                ..cfg.clone()
            };
            cw_pgd(model, x, labels, &cw, rng)
        }
    }
}
