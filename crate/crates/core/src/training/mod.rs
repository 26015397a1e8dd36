//! Adversarial training with SGD momentum, a multi-step schedule and early stopping
//! on robust validation accuracy.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attacks::{pgd, AttackConfig, TrainMode};
use crate::autodiff::{Graph, Sgd, SgdConfig, Var};
use crate::error::{Error, Result};
use crate::evaluation::accuracy;
use crate::io::Dataset;
use crate::model::Model;
use crate::tensor::Tensor;


/// Multiplier applied to the learning rate at each milestone.
pub const LR_DECAY: f32 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f32,
    /// Epochs at which the learning rate is multiplied by [`LR_DECAY`].
    pub lr_milestones: Vec<usize>,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Adversary used on every training batch; `epsilon = 0` means natural training.
    pub train_attack: AttackConfig,
    /// Adversary used for robust validation accuracy.
    pub val_attack: AttackConfig,
    /// Validation samples used per epoch (0 = all).
    pub val_limit: usize,
    /// Stop after this many epochs without a new best (0 = never stop early).
    pub early_stop_patience: usize,
    /// Random 4-pixel-padded crops and horizontal flips.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let train_attack = AttackConfig {
            steps: 10,
            ..AttackConfig::default()
        };
        Self {
            epochs: 10,
            batch_size: 128,
            lr_initial: 0.1,
            lr_milestones: Vec::new(),
            momentum: 0.9,
            weight_decay: 5e-4,
            val_attack: train_attack.clone(),
            train_attack,
            val_limit: 0,
            early_stop_patience: 0,
            augment: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "lr_milestones {:?} must be strictly increasing",
                self.lr_milestones
            )));
        }
        if self.lr_milestones.last().is_some_and(|&m| m >= self.epochs) {
            return Err(Error::Config(format!(
                "lr_milestones {:?} must lie below epochs = {}",
                self.lr_milestones, self.epochs
            )));
        }
        self.sgd(self.lr_initial).validate()?;
        self.train_attack.validate()?;
        self.val_attack.validate()
    }

    fn sgd(&self, lr: f32) -> SgdConfig {
        SgdConfig {
            lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// `lr_initial * 0.1^(milestones <= epoch)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f32 {
    let passed = cfg.lr_milestones.iter().filter(|&&m| m <= epoch).count();
    (cfg.lr_initial as f64 * (LR_DECAY as f64).powi(passed as i32)) as f32
}

/// L2 norm of the concatenated gradients of `params`.
pub fn gradient_norm(g: &Graph, params: &[Var]) -> Result<f64> {
    let mut total = 0.0f64;
    for (i, &p) in params.iter().enumerate() {
        let grad = g
            .grad(p)
            .ok_or_else(|| Error::Usage(format!("parameter {i} has no gradient; run backward first")))?;
        total += grad.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
    }
    Ok(total.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f32,
    pub train_loss: f64,
    pub clean_val_acc: f64,
    pub robust_val_acc: f64,
    /// Mean over the epoch's steps of the parameter-gradient L2 norm.
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
}

/// Pads by 4 with zeros, crops back at a random offset, and flips half the images.
fn augment_batch<R: Rng + ?Sized>(x: &Tensor, rng: &mut R) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    let mut out = Tensor::zeros(x.shape());
    for i in 0..n {
        let (di, dj) = (rng.random_range(0..9) as isize - 4, rng.random_range(0..9) as isize - 4);
        let flip = rng.random_bool(0.5);
        let src = x.item(i);
        let dst = out.item_mut(i);
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    let sr = r as isize + di;
                    let sc0 = col as isize + dj;
                    let sc = if flip { w as isize - 1 - sc0 } else { sc0 };
                    if sr >= 0 && sr < h as isize && sc >= 0 && sc < w as isize {
                        dst[(ch * h + r) * w + col] = src[(ch * h + sr as usize) * w + sc as usize];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Trains a copy of `model` and returns the weights from the epoch with the best robust
/// validation accuracy (ties go to the better clean accuracy), with the per-epoch history.
pub fn adversarial_train(
    model: &Model,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Input("training and validation sets must be non-empty".into()));
    }
    let mut model = model.clone();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut attack_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_a77a_c4e5);
    let mut sgd = Sgd::new(model.params(), cfg.sgd(cfg.lr_initial))?;
    let val_eval = if cfg.val_limit > 0 {
        val.head(cfg.val_limit)?
    } else {
        val.clone()
    };

    let mut history = TrainHistory::default();
    let mut best: Option<((f64, f64), Model)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        sgd.cfg.lr = lr;
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut norm_sum, mut steps) = (0.0f64, 0.0f64, 0usize);
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (mut x, y) = train.batch(idx)?;
            if cfg.augment {
                x = augment_batch(&x, &mut shuffle_rng)?;
            }
            if cfg.train_attack.epsilon > 0.0 {
                x = pgd(&TrainMode(&model), &x, &y, &cfg.train_attack, &mut attack_rng)
                    .map_err(|e| match e {
                        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch} step {step}: attack: {m}")),
                        other => other,
                    })?
                    .adversarial;
            }
            let mut g = Graph::new();
            let params = model.bind(&mut g, true);
            let xv = g.constant(x);
            let step_result = (|| -> Result<(f64, f64, Vec<Tensor>, Vec<crate::autodiff::BnStats>)> {
                let (logits, bn) = model.forward_graph(&mut g, &params, xv, true)?;
                let loss = g.softmax_cross_entropy(logits, &y)?;
                g.backward(loss)?;
                let grads = params
                    .iter()
                    .zip(model.params())
                    .map(|(&p, t)| g.grad_tensor(p).unwrap_or_else(|| Tensor::zeros(t.shape())))
                    .collect();
                let norm = gradient_norm(&g, &params)?;
                Ok((g.value(loss).data()[0] as f64, norm, grads, bn))
            })();
            let (loss, norm, grads, bn) = match step_result {
                Ok(v) => v,
                Err(Error::Numeric(m)) => {
                    return Err(Error::Numeric(format!("epoch {epoch} step {step}: {m}")));
                }
                Err(e) => return Err(e),
            };
            model.commit_bn(bn)?;
            sgd.step(model.params_mut(), &grads)?;
            if model.params().iter().any(|p| !p.all_finite()) {
                return Err(Error::Numeric(format!(
                    "epoch {epoch} step {step}: parameters became non-finite"
                )));
            }
            loss_sum += loss;
            norm_sum += norm;
            steps += 1;
        }
        let val_seed = cfg.seed.wrapping_add(epoch as u64);
        let validated = accuracy(&model, &val_eval, None, val_seed)
            .and_then(|c| Ok((c, accuracy(&model, &val_eval, Some(&cfg.val_attack), val_seed)?)));
        let (clean, robust) = match validated {
            Ok(v) => v,
            Err(Error::Numeric(m)) => return Err(Error::Numeric(format!("epoch {epoch} validation: {m}"))),
            Err(e) => return Err(e),
        };
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / steps as f64,
            clean_val_acc: clean,
            robust_val_acc: robust,
            grad_norm: norm_sum / steps as f64,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.4} loss {:.4} clean {:.3} robust {:.3} grad {:.4}",
            rec.train_loss,
            clean,
            robust,
            rec.grad_norm
        );
        history.records.push(rec);
        // Robust accuracy decides; clean accuracy breaks ties.
        if best.as_ref().is_none_or(|(b, _)| (robust, clean) > *b) {
            best = Some(((robust, clean), model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok((best_model, history))
}
