//! Seeded stand-in image task with one robust and one fragile class signal.
//!
//! Each image is a grey background with pixel noise, a colored Gaussian blob at a
//! random position, and a faint high-frequency grating. The grating frequency is
//! specific to the class and always correct; the blob color matches the class only
//! with probability `blob_reliability` and otherwise shows another class's color.
//! A small L-infinity perturbation can swap the grating but not the blob.

use std::f32::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{DataSource, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub image_size: usize,
    pub background: f32,
    pub noise_std: f32,
    pub blob_amplitude: f32,
    pub blob_sigma: f32,
    pub blob_reliability: f64,
    pub grating_amplitude: f32,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            background: 0.5,
            noise_std: 0.02,
            blob_amplitude: 0.3,
            blob_sigma: 8.0,
            blob_reliability: 0.8,
            grating_amplitude: 0.01,
        }
    }
}

fn class_color(c: usize, k: usize) -> [f32; 3] {
    let t = 2.0 * PI * c as f32 / k as f32;
    [t.cos(), (t - 2.0 * PI / 3.0).cos(), (t + 2.0 * PI / 3.0).cos()]
}

/// Grating of class `c`: vertical Nyquist alternation times a horizontal cosine whose
/// frequency drops by one cycle per class from the Nyquist rate.
fn grating(c: usize, size: usize, i: usize, j: usize) -> f32 {
    let f = (size / 2).saturating_sub(c) as f32;
    (PI * i as f32 + 2.0 * PI * f * j as f32 / size as f32).cos()
}

pub fn synthetic_dataset(num_classes: usize, n: usize, seed: u64) -> Result<Dataset> {
    synthetic_dataset_with(&SyntheticConfig::default(), num_classes, n, seed)
}

pub fn synthetic_dataset_with(cfg: &SyntheticConfig, num_classes: usize, n: usize, seed: u64) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "synthetic data needs at least 2 classes, got {num_classes}"
        )));
    }
    if n == 0 || cfg.image_size < 8 || !cfg.image_size.is_multiple_of(2) || num_classes > cfg.image_size / 2 {
        return Err(Error::Config(format!(
            "cannot draw {n} synthetic {0}x{0} images for {num_classes} classes",
            cfg.image_size
        )));
    }
    if !(0.0..=1.0).contains(&cfg.blob_reliability) || cfg.noise_std < 0.0 || cfg.blob_sigma <= 0.0 {
        return Err(Error::Config("invalid synthetic generator settings".into()));
    }
    let s = cfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, cfg.noise_std.max(f32::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("noise_std: {e}")))?;
    let mut data = Vec::with_capacity(n * 3 * s * s);
    let mut labels = Vec::with_capacity(n);
    let lo = s as f32 / 4.0;
    let hi = 3.0 * s as f32 / 4.0;
    for idx in 0..n {
        let y = idx % num_classes;
        let shown = if rng.random_bool(cfg.blob_reliability) {
            y
        } else {
            (y + rng.random_range(1..num_classes)) % num_classes
        };
        let color = class_color(shown, num_classes);
        let (ci, cj) = (rng.random_range(lo..hi), rng.random_range(lo..hi));
        for tint in color {
            for i in 0..s {
                for j in 0..s {
                    let r2 = (i as f32 - ci).powi(2) + (j as f32 - cj).powi(2);
                    let blob = cfg.blob_amplitude * tint * (-r2 / (2.0 * cfg.blob_sigma.powi(2))).exp();
                    let v = cfg.background
                        + blob
                        + cfg.grating_amplitude * grating(y, s, i, j)
                        + if cfg.noise_std > 0.0 {
                            noise.sample(&mut rng)
                        } else {
                            0.0
                        };
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        labels.push(y);
    }
    Dataset::new(
        Tensor::new(vec![n, 3, s, s], data)?,
        labels,
        num_classes,
        DataSource::Synthetic,
    )
}
