use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attacks::Classifier;
use crate::error::{Error, Result};
use crate::io::Dataset;
use crate::tensor::Tensor;

/// Error rates under single-frequency perturbations over half of the centred spectrum.
///
/// Rows are `fi = -max_freq ..= max_freq`, columns `fj = 0 ..= max_freq`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatMapGrid {
    pub max_freq: usize,
    pub eps_f: f32,
    pub samples: usize,
    /// Row-major error rates in `[0, 1]`.
    pub errors: Vec<f64>,
}

impl HeatMapGrid {
    pub fn rows(&self) -> usize {
        2 * self.max_freq + 1
    }

    pub fn cols(&self) -> usize {
        self.max_freq + 1
    }

    pub fn get(&self, fi: isize, fj: usize) -> f64 {
        let row = (fi + self.max_freq as isize) as usize;
        self.errors[row * self.cols() + fj]
    }

    /// Frequency pair of a flat cell index.
    pub fn frequency(&self, cell: usize) -> (isize, usize) {
        (
            (cell / self.cols()) as isize - self.max_freq as isize,
            cell % self.cols(),
        )
    }
}

/// Real Fourier basis image `cos(2 pi (fi i + fj j) / size)` scaled to unit L2 norm.
pub fn fourier_basis(size: usize, fi: isize, fj: usize) -> Result<Vec<f32>> {
    let nyquist = size / 2;
    if size == 0 || fi.unsigned_abs() > nyquist || fj > nyquist {
        return Err(Error::dim(format!(
            "frequency ({fi}, {fj}) lies outside the spectrum of a {size}x{size} image"
        )));
    }
    let s = size as f64;
    let raw: Vec<f64> = (0..size * size)
        .map(|k| (2.0 * PI * (fi as f64 * (k / size) as f64 + fj as f64 * (k % size) as f64) / s).cos())
        .collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(raw.iter().map(|v| (v / norm) as f32).collect())
}

/// `eps_f * sign_c * basis` for each of the three channels; every channel has L2 norm `eps_f`.
pub fn fourier_perturbation(size: usize, fi: isize, fj: usize, eps_f: f32, signs: [f32; 3]) -> Result<Tensor> {
    let basis = fourier_basis(size, fi, fj)?;
    let mut data = Vec::with_capacity(3 * basis.len());
    for s in signs {
        data.extend(basis.iter().map(|&b| eps_f * s * b));
    }
    Tensor::new(vec![3, size, size], data)
}

/// Misclassification rate of `model` on the first `samples` images of `ds` when each is
/// perturbed by a randomly signed basis image of every frequency in the grid and clipped
/// to `[0, 1]`. Cells with `fj = 0, fi < 0` mirror their conjugate.
pub fn fourier_heat_map<C: Classifier + ?Sized>(
    model: &C,
    ds: &Dataset,
    eps_f: f32,
    samples: usize,
    max_freq: usize,
    seed: u64,
) -> Result<HeatMapGrid> {
    if !(eps_f.is_finite() && eps_f >= 0.0) {
        return Err(Error::Config(format!(
            "eps_f must be finite and non-negative, got {eps_f}"
        )));
    }
    let size = ds.image_size();
    if max_freq > size / 2 {
        return Err(Error::dim(format!(
            "heat map grid up to frequency {max_freq} exceeds the spectrum of {size}x{size} images"
        )));
    }
    let n = samples.min(ds.len());
    if n == 0 {
        return Err(Error::Input("heat map needs at least one sample".into()));
    }
    let idx: Vec<usize> = (0..n).collect();
    let (clean, labels) = ds.batch(&idx)?;
    let mut grid = HeatMapGrid {
        max_freq,
        eps_f,
        samples: n,
        errors: vec![0.0; (2 * max_freq + 1) * (max_freq + 1)],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for cell in 0..grid.errors.len() {
        let (fi, fj) = grid.frequency(cell);
        if fj == 0 && fi < 0 {
            continue;
        }
        let basis = fourier_basis(size, fi, fj)?;
        let mut x = clean.clone();
        for i in 0..n {
            let img = x.item_mut(i);
            for ch in img.chunks_mut(basis.len()) {
                let s = if rng.random_bool(0.5) { eps_f } else { -eps_f };
                for (v, &b) in ch.iter_mut().zip(&basis) {
                    *v = (*v + s * b).clamp(0.0, 1.0);
                }
            }
        }
        let pred = model.logits(&x)?.argmax_rows();
        let wrong = pred.iter().zip(&labels).filter(|(p, y)| p != y).count();
        grid.errors[cell] = wrong as f64 / n as f64;
    }
    for cell in 0..grid.errors.len() {
        let (fi, fj) = grid.frequency(cell);
        if fj == 0 && fi < 0 {
            let mirror = ((-fi + max_freq as isize) as usize) * grid.cols();
            grid.errors[cell] = grid.errors[mirror];
        }
    }
    Ok(grid)
}
