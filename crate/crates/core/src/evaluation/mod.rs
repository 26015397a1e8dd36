//! Accuracy, Fourier heat maps, Grad-CAM and numerical checks of wavelet decay bounds.

mod gradcam;
mod heatmap;
mod theorems;

pub use gradcam::{gradcam, gradcam_with_head, CamMap};
pub use heatmap::{fourier_basis, fourier_heat_map, fourier_perturbation, HeatMapGrid};
pub use theorems::{
    decay_fit, dyadic_modulus, local_regularity, theorem_decay_check, theorem_local_regularity_check, DecayFit,
    DyadicStep, LocalRegularity, Probe, DEFAULT_GRID_LOG2,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attacks::{run_attack, AttackConfig, Classifier};
use crate::error::{Error, Result};
use crate::io::Dataset;

#[cfg(test)]
mod tests;

/// Samples per forward pass during evaluation.
pub const EVAL_BATCH: usize = 100;

/// Fraction of samples whose prediction (after `attack`, if given) equals the label.
/// The attack's random starts are drawn from `seed`.
pub fn accuracy<C: Classifier + ?Sized>(
    model: &C,
    ds: &Dataset,
    attack: Option<&AttackConfig>,
    seed: u64,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Input("accuracy needs a non-empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y) = ds.batch(chunk)?;
        let pred = match attack {
            Some(cfg) => run_attack(model, &x, &y, cfg, &mut rng)?
                .success
                .iter()
                .map(|&s| !s)
                .collect::<Vec<bool>>(),
            None => model
                .logits(&x)?
                .argmax_rows()
                .iter()
                .zip(&y)
                .map(|(p, t)| p == t)
                .collect(),
        };
        correct += pred.iter().filter(|&&ok| ok).count();
    }
    Ok(correct as f64 / ds.len() as f64)
}
