//! Python bindings. Tensors cross the boundary as flat `list[float]` plus a shape.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wwrn_core::attacks::{run_attack, AttackConfig, AttackMethod};
use wwrn_core::evaluation::theorem_decay_check;
use wwrn_core::io::{load_checkpoint, save_checkpoint, synthetic_dataset, RunConfig};
use wwrn_core::model::{build_model, Model as CoreModel};
use wwrn_core::wavelet::{self, dwt2d, idwt2d, FilterBank, WaveletBase};
use wwrn_core::{Error, Tensor};

fn to_py(e: Error) -> PyErr {
    match e.category() {
        "numeric" => PyArithmeticError::new_err(e.to_string()),
        "io" => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn bank(name: &str) -> PyResult<FilterBank> {
    wavelet::filter_bank(name).map_err(to_py)
}

fn tensor(data: Vec<f32>, shape: Vec<usize>) -> PyResult<Tensor> {
    Tensor::new(shape, data).map_err(to_py)
}

/// Names of the supported filter banks.
#[pyfunction]
fn filter_banks() -> Vec<&'static str> {
    WaveletBase::ALL.iter().map(|b| b.as_str()).collect()
}

/// Largest gain of wavelet average pooling on `size`x`size` periodic images.
#[pyfunction]
fn wap_lipschitz(base: &str, size: usize) -> PyResult<f64> {
    Ok(wavelet::wap_lipschitz(&bank(base)?, size))
}

/// Wavelet average pooling of an `[N, C, H, W]` batch; returns `(data, shape)`.
#[pyfunction]
fn wavelet_average_pool(data: Vec<f32>, shape: Vec<usize>, base: &str) -> PyResult<(Vec<f32>, Vec<usize>)> {
    let y = wavelet::wavelet_average_pool(&tensor(data, shape)?, &bank(base)?).map_err(to_py)?;
    Ok((y.data().to_vec(), y.shape().to_vec()))
}

/// Max-abs error of one analysis/synthesis round trip of an `[N, C, H, W]` batch.
#[pyfunction]
fn reconstruction_error(data: Vec<f32>, shape: Vec<usize>, base: &str) -> PyResult<f64> {
    let x = tensor(data, shape)?;
    let fb = bank(base)?;
    let back = idwt2d(&dwt2d(&x, &fb).map_err(to_py)?, &fb).map_err(to_py)?;
    Ok(back.max_abs_diff(&x))
}

/// Fitted and theoretical log-log slopes of the coefficient decay of `|x - b|^alpha`.
#[pyfunction]
fn decay_slope(base: &str, alpha: f64, scales: Vec<f64>, b: f64) -> PyResult<(f64, f64)> {
    let base: WaveletBase = base.parse().map_err(to_py)?;
    let fit = theorem_decay_check(base, alpha, &scales, b).map_err(to_py)?;
    Ok((fit.slope, fit.theoretical_slope))
}

/// Seeded synthetic images: `(data, shape, labels)`.
#[pyfunction]
fn synthetic(num_classes: usize, n: usize, seed: u64) -> PyResult<(Vec<f32>, Vec<usize>, Vec<usize>)> {
    let ds = synthetic_dataset(num_classes, n, seed).map_err(to_py)?;
    Ok((ds.images.data().to_vec(), ds.images.shape().to_vec(), ds.labels))
}

/// Defaults plus `key=value` overrides, rendered as the resolved configuration text.
#[pyfunction]
#[pyo3(signature = (text = "", overrides = Vec::new()))]
fn resolve_config(text: &str, overrides: Vec<String>) -> PyResult<String> {
    let mut cfg = RunConfig::parse(text).map_err(to_py)?;
    cfg.apply_overrides(&overrides).map_err(to_py)?;
    Ok(cfg.resolved_text())
}

/// A residual network with optional wavelet pooling.
#[pyclass(frozen)]
struct Model {
    inner: CoreModel,
}

#[pymethods]
impl Model {
    /// Builds a model from configuration text (only `model.*` keys matter).
    #[new]
    #[pyo3(signature = (config = "", seed = 0))]
    fn new(config: &str, seed: u64) -> PyResult<Self> {
        let cfg = RunConfig::parse(config).and_then(|c| c.model()).map_err(to_py)?;
        Ok(Self {
            inner: build_model(&cfg, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    /// Inference-mode logits `(data, shape)`.
    fn logits(&self, py: Python<'_>, data: Vec<f32>, shape: Vec<usize>) -> PyResult<(Vec<f32>, Vec<usize>)> {
        let x = tensor(data, shape)?;
        let z = py.detach(|| self.inner.forward(&x, false)).map_err(to_py)?;
        Ok((z.data().to_vec(), z.shape().to_vec()))
    }

    fn predict(&self, py: Python<'_>, data: Vec<f32>, shape: Vec<usize>) -> PyResult<Vec<usize>> {
        let x = tensor(data, shape)?;
        py.detach(|| self.inner.predict(&x)).map_err(to_py)
    }

    /// White-box attack (`fgsm`, `pgd`, `mim` or `cw`); returns the adversarial batch.
    #[pyo3(signature = (data, shape, labels, method = "pgd", epsilon = 0.031, steps = 10, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn attack(
        &self,
        py: Python<'_>,
        data: Vec<f32>,
        shape: Vec<usize>,
        labels: Vec<usize>,
        method: &str,
        epsilon: f32,
        steps: usize,
        seed: u64,
    ) -> PyResult<Vec<f32>> {
        let x = tensor(data, shape)?;
        let method: AttackMethod = method.parse().map_err(to_py)?;
        let cfg = AttackConfig {
            epsilon,
            steps,
            ..AttackConfig::for_method(method)
        };
        let r = py
            .detach(|| run_attack(&self.inner, &x, &labels, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)))
            .map_err(to_py)?;
        Ok(r.adversarial.data().to_vec())
    }
}

#[pymodule]
fn wwrn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(filter_banks, m)?)?;
    m.add_function(wrap_pyfunction!(wap_lipschitz, m)?)?;
    m.add_function(wrap_pyfunction!(wavelet_average_pool, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruction_error, m)?)?;
    m.add_function(wrap_pyfunction!(decay_slope, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
