//! Natural-evolution-strategies black-box attack.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{attack_losses, check_batch, sign, signed_step, AttackResult, Classifier, LossKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct NesConfig {
    pub epsilon: f32,
    /// Smoothing radius of the Gaussian search distribution, `[0, 1]` units.
    pub fd_eta: f32,
    /// Signed ascent step, `[0, 1]` units.
    pub lr: f32,
    pub max_queries: usize,
    /// Antithetic pairs per gradient estimate; one estimate costs `2 * samples_per_step` queries.
    pub samples_per_step: usize,
}

impl Default for NesConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            fd_eta: 0.01,
            lr: 0.01,
            max_queries: 10_000,
            samples_per_step: 50,
        }
    }
}

impl NesConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && (0.0..=1.0).contains(&self.epsilon)) {
            return Err(Error::Config(format!(
                "nes epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if !(self.fd_eta > 0.0 && self.fd_eta.is_finite()) || !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("nes fd_eta and lr must be positive".into()));
        }
        if self.samples_per_step == 0 {
            return Err(Error::Config("nes samples_per_step must be at least 1".into()));
        }
        if self.max_queries < 2 * self.samples_per_step {
            return Err(Error::Config(format!(
                "max_queries {} cannot pay for one estimate of {} queries",
                self.max_queries,
                2 * self.samples_per_step
            )));
        }
        Ok(())
    }
}

/// Antithetic Gaussian estimate of the gradient of a scalar loss at `x` (`[1, ...]`).
///
/// `loss` receives a batch of `2k` points `x + sigma u_i, x - sigma u_i` (interleaved)
/// and returns one loss per point.
pub fn nes_gradient_estimate<R: Rng + ?Sized>(
    loss: &mut dyn FnMut(&Tensor) -> Result<Vec<f64>>,
    x: &Tensor,
    sigma: f32,
    k: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if x.shape().first() != Some(&1) {
        return Err(Error::dim(format!("nes expects a single sample, got {:?}", x.shape())));
    }
    let d = x.len();
    let mut dirs = Vec::with_capacity(k);
    let mut batch = Vec::with_capacity(2 * k * d);
    for _ in 0..k {
        let u: Vec<f32> = (0..d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        batch.extend(x.data().iter().zip(&u).map(|(&v, &e)| v + sigma * e));
        batch.extend(x.data().iter().zip(&u).map(|(&v, &e)| v - sigma * e));
        dirs.push(u);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = 2 * k;
    let values = loss(&Tensor::new(shape, batch)?)?;
    if values.len() != 2 * k {
        return Err(Error::Usage(format!(
            "loss oracle returned {} values for {} points",
            values.len(),
            2 * k
        )));
    }
    let mut g = vec![0.0f64; d];
    for (i, u) in dirs.iter().enumerate() {
        let diff = values[2 * i] - values[2 * i + 1];
        for (gj, &uj) in g.iter_mut().zip(u) {
            *gj += diff * uj as f64;
        }
    }
    let norm = 1.0 / (2.0 * sigma as f64 * k as f64);
    g.iter_mut().for_each(|v| *v *= norm);
    Ok(g)
}

/// Score-based attack on cross-entropy using only `model.logits`.
///
/// Each sample runs until its prediction changes or another estimate would exceed
/// `max_queries`. Only the estimation queries are counted.
pub fn nes_attack<C: Classifier + ?Sized, R: Rng + ?Sized>(
    model: &C,
    x: &Tensor,
    labels: &[usize],
    cfg: &NesConfig,
    rng: &mut R,
) -> Result<AttackResult> {
    cfg.validate()?;
    check_batch(x, labels)?;
    let k = cfg.samples_per_step;
    let mut adv = x.clone();
    let mut success = Vec::with_capacity(labels.len());
    let mut queries = Vec::with_capacity(labels.len());
    for (i, &y) in labels.iter().enumerate() {
        let x0 = x.select(&[i])?;
        let mut cur = x0.clone();
        let mut used = 0;
        let mut done = false;
        loop {
            if model.logits(&cur)?.argmax_rows()[0] != y {
                done = true;
                break;
            }
            if used + 2 * k > cfg.max_queries {
                break;
            }
            let mut oracle = |b: &Tensor| -> Result<Vec<f64>> {
                let z = model.logits(b)?;
                let ys = vec![y; b.shape()[0]];
                Ok(attack_losses(&z, &ys, LossKind::CrossEntropy, 0.0)?
                    .into_iter()
                    .map(f64::from)
                    .collect())
            };
            let g = nes_gradient_estimate(&mut oracle, &cur, cfg.fd_eta, k, rng)?;
            used += 2 * k;
            let dir: Vec<f32> = g.iter().map(|&v| sign(v)).collect();
            signed_step(&mut cur, &x0, &dir, cfg.lr, cfg.epsilon);
        }
        adv.item_mut(i).copy_from_slice(cur.data());
        success.push(done);
        queries.push(used);
    }
    Ok(AttackResult {
        adversarial: adv,
        success,
        queries,
        gradient_calls: 0,
    })
}
