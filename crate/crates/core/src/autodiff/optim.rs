//! SGD with momentum and L2 weight decay.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One step of `v <- momentum * v + grad + weight_decay * param; param <- param - lr * v`.
pub fn sgd_momentum_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    cfg: SgdConfig,
) -> Result<()> {
    cfg.validate()?;
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::dim(format!(
            "{} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(velocity.iter()) {
        p.check_same_shape(g)?;
        p.check_same_shape(v)?;
    }
    let (lr, mom, wd) = (cfg.lr as f64, cfg.momentum as f64, cfg.weight_decay as f64);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let nv = mom * *vv as f64 + gv as f64 + wd * *pv as f64;
            *vv = nv as f32;
            *pv = (*pv as f64 - lr * *vv as f64) as f32;
        }
    }
    Ok(())
}

/// Optimizer state: one velocity buffer per parameter.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub cfg: SgdConfig,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(params: &[Tensor], cfg: SgdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Sgd {
            cfg,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        })
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        sgd_momentum_step(params, grads, &mut self.velocity, self.cfg)
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }
}
