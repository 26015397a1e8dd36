//! Quadrature checks of how continuous wavelet coefficients decay with scale.
//!
//! The mother wavelet of an orthogonal bank is tabulated by the cascade algorithm and
//! read back by linear interpolation. Coefficients
//! `<f, psi_{a,b}> = a^{-1/2} int f(x) psi((x - b) / a) dx` are midpoint sums on a grid
//! of spacing `2^-grid_log2` restricted to the support of `psi_{a,b}`.

use crate::error::{Error, Result};
use crate::wavelet::{FilterBank, WaveletBase};

/// Default quadrature resolution: `2^16` points per unit length.
pub const DEFAULT_GRID_LOG2: u32 = 16;

/// Cascade refinement levels used to tabulate the mother wavelet.
const CASCADE_LEVELS: u32 = 10;

/// Fewest quadrature points allowed under the support of the finest wavelet.
const MIN_SUPPORT_SAMPLES: usize = 16;

/// Test function whose coefficients are measured.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Probe {
    /// `|x - center|^alpha`.
    Holder { alpha: f64, center: f64 },
    /// `sin(2 pi freq x)`.
    Sine { freq: f64 },
}

impl Probe {
    fn eval(&self, x: f64) -> f64 {
        match *self {
            Probe::Holder { alpha, center } => (x - center).abs().powf(alpha),
            Probe::Sine { freq } => (2.0 * std::f64::consts::PI * freq * x).sin(),
        }
    }

    /// Exponent the coefficients are expected to decay with, `alpha + 1/2`.
    /// A smooth probe is held to the Lipschitz rate.
    fn theoretical_slope(&self) -> f64 {
        match *self {
            Probe::Holder { alpha, .. } => alpha + 0.5,
            Probe::Sine { .. } => 1.5,
        }
    }

    fn alpha(&self) -> f64 {
        match *self {
            Probe::Holder { alpha, .. } => alpha,
            Probe::Sine { .. } => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub base: WaveletBase,
    pub alpha: f64,
    pub b: f64,
    /// `(a, |<f, psi_{a,b}>|)` with `a` strictly decreasing.
    pub samples: Vec<(f64, f64)>,
    /// Least-squares slope of `ln |c|` against `ln a`.
    pub slope: f64,
    pub theoretical_slope: f64,
}

/// Mother wavelet sampled at spacing `2^-CASCADE_LEVELS` over its support `[0, len - 1]`.
struct MotherWavelet {
    values: Vec<f64>,
    support: f64,
}

impl MotherWavelet {
    fn new(base: WaveletBase) -> Result<Self> {
        if !base.is_orthogonal() {
            return Err(Error::UnsupportedBase {
                name: base.as_str().into(),
                reason: "coefficient decay checks need an orthogonal bank".into(),
            });
        }
        let fb = FilterBank::new(base)?;
        let taps = fb.lo_s.len();
        let sqrt2 = std::f64::consts::SQRT_2;
        // phi(n / 2^j) ~ v_j[n]; each pass doubles the resolution.
        let mut phi = vec![1.0f64];
        for _ in 0..CASCADE_LEVELS {
            let mut next = vec![0.0; 2 * (phi.len() - 1) + taps];
            for (k, &v) in phi.iter().enumerate() {
                for (n, &h) in fb.lo_s.iter().enumerate() {
                    next[2 * k + n] += sqrt2 * h * v;
                }
            }
            phi = next;
        }
        // psi(t) = sqrt2 sum_k g_k phi(2t - k)
        let step = 1usize << CASCADE_LEVELS;
        let len = (taps - 1) * step + 1;
        let values = (0..len)
            .map(|n| {
                fb.hi_s
                    .iter()
                    .enumerate()
                    .filter_map(|(k, &g)| {
                        let idx = (2 * n).checked_sub(k * step)?;
                        phi.get(idx).map(|&p| sqrt2 * g * p)
                    })
                    .sum()
            })
            .collect();
        Ok(Self {
            values,
            support: (taps - 1) as f64,
        })
    }

    fn eval(&self, t: f64) -> f64 {
        if !(0.0..self.support).contains(&t) {
            return 0.0;
        }
        let pos = t * (1u64 << CASCADE_LEVELS) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        let lo = self.values[i];
        let hi = self.values.get(i + 1).copied().unwrap_or(0.0);
        lo + frac * (hi - lo)
    }

    /// `<f, psi_{a,b}>` by the midpoint rule on the global grid of spacing `2^-grid_log2`.
    fn coefficient(&self, f: &Probe, a: f64, b: f64, grid_log2: u32) -> Result<f64> {
        let h = (-(grid_log2 as f64)).exp2();
        let lo = (b / h).floor() as i64;
        let hi = ((b + a * self.support) / h).ceil() as i64;
        let mut total = 0.0;
        let mut inside = 0usize;
        for i in lo..hi {
            let x = (i as f64 + 0.5) * h;
            let t = (x - b) / a;
            if (0.0..self.support).contains(&t) {
                total += f.eval(x) * self.eval(t);
                inside += 1;
            }
        }
        if inside < MIN_SUPPORT_SAMPLES {
            return Err(Error::Resolution(format!(
                "only {inside} quadrature points under the support at scale {a}; need {MIN_SUPPORT_SAMPLES}"
            )));
        }
        Ok(total * h / a.sqrt())
    }
}

fn check_scales(scales: &[f64]) -> Result<()> {
    if scales.len() < 2 {
        return Err(Error::Input("a decay fit needs at least two scales".into()));
    }
    if scales.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::Input(format!("scales must be positive, got {scales:?}")));
    }
    if scales.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Input(format!(
            "scales must be strictly decreasing, got {scales:?}"
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Input(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Coefficients of `probe` at translation `b` over `scales`, with the fitted log-log slope.
pub fn decay_fit(probe: Probe, base: WaveletBase, scales: &[f64], b: f64, grid_log2: u32) -> Result<DecayFit> {
    check_scales(scales)?;
    if let Probe::Holder { alpha, .. } = probe {
        check_alpha(alpha)?;
    }
    let psi = MotherWavelet::new(base)?;
    let mut samples = Vec::with_capacity(scales.len());
    for &a in scales {
        let c = psi.coefficient(&probe, a, b, grid_log2)?.abs();
        if c == 0.0 || !c.is_finite() {
            return Err(Error::Numeric(format!(
                "coefficient at scale {a} is {c}; cannot take its logarithm"
            )));
        }
        samples.push((a, c));
    }
    let logs: Vec<(f64, f64)> = samples.iter().map(|&(a, c)| (a.ln(), c.ln())).collect();
    Ok(DecayFit {
        base,
        alpha: probe.alpha(),
        b,
        slope: least_squares_slope(&logs),
        theoretical_slope: probe.theoretical_slope(),
        samples,
    })
}

/// Decay of the coefficients of `|x - b|^alpha` at its own singularity, on the default grid.
pub fn theorem_decay_check(base: WaveletBase, alpha: f64, scales: &[f64], b: f64) -> Result<DecayFit> {
    decay_fit(Probe::Holder { alpha, center: b }, base, scales, b, DEFAULT_GRID_LOG2)
}

/// One level of the dyadic modulus-of-continuity check.
#[derive(Clone, Debug, PartialEq)]
pub struct DyadicStep {
    pub j: u32,
    /// `sup |f(x) - f(x + 2^-j)|` over the sampled window.
    pub modulus: f64,
    /// `C 2^{-alpha j}` with `C` fitted on the coarse levels.
    pub bound: f64,
}

/// Sampled modulus of continuity of `|x - x0|^alpha` near `x0` at `delta = 2^-j` for
/// `j in levels`. The constant is the smallest one covering the first half of the
/// levels; the remaining levels test it.
pub fn dyadic_modulus(
    alpha: f64,
    x0: f64,
    levels: std::ops::RangeInclusive<u32>,
    grid_log2: u32,
) -> Result<Vec<DyadicStep>> {
    check_alpha(alpha)?;
    let (j0, j1) = (*levels.start(), *levels.end());
    if j1 <= j0 || j1 > grid_log2 {
        return Err(Error::Input(format!(
            "dyadic levels {j0}..={j1} must be increasing and no finer than the grid 2^-{grid_log2}"
        )));
    }
    let f = Probe::Holder { alpha, center: x0 };
    let h = (-(grid_log2 as f64)).exp2();
    let half_window = 0.25;
    let count = (half_window / h) as i64;
    let moduli: Vec<f64> = (j0..=j1)
        .map(|j| {
            let delta = (-(j as f64)).exp2();
            (-count..=count)
                .map(|i| {
                    let x = x0 + i as f64 * h;
                    (f.eval(x) - f.eval(x + delta)).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let fit_len = moduli.len().div_ceil(2);
    let c = (j0..=j1)
        .zip(&moduli)
        .take(fit_len)
        .map(|(j, m)| m / (-(alpha * j as f64)).exp2())
        .fold(0.0, f64::max);
    Ok((j0..=j1)
        .zip(moduli)
        .map(|(j, modulus)| DyadicStep {
            j,
            modulus,
            bound: c * (-(alpha * j as f64)).exp2(),
        })
        .collect())
}

/// Ratios `|<f, psi_{a, x0+b}>| / (a^{1/2} (a^alpha + |b|^alpha))` for `f = |x - x0|^alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalRegularity {
    pub base: WaveletBase,
    pub alpha: f64,
    /// `(grid_log2, max ratio, median ratio)` for the base grid and its 4x refinement.
    pub grids: Vec<(u32, f64, f64)>,
    /// Largest ratio against the bound with `|b|^alpha |ln |b||`; reported only.
    pub log_refined_max: f64,
    pub dyadic: Vec<DyadicStep>,
    /// Ratio finite on both grids with a maximum that moves by at most 10% under
    /// refinement, and the dyadic bound holds with halving steps within 20% of `2^-alpha`.
    pub holds: bool,
}

/// Tolerance on the relative change of the largest ratio under grid refinement.
const RATIO_STABILITY: f64 = 0.1;

pub fn local_regularity(
    base: WaveletBase,
    alpha: f64,
    x0: f64,
    offsets: &[f64],
    scales: &[f64],
    grid_log2: u32,
) -> Result<LocalRegularity> {
    check_alpha(alpha)?;
    check_scales(scales)?;
    if offsets.is_empty() {
        return Err(Error::Input("local regularity needs at least one offset".into()));
    }
    let psi = MotherWavelet::new(base)?;
    let f = Probe::Holder { alpha, center: x0 };
    let mut grids = Vec::new();
    let mut log_refined_max = 0.0f64;
    for grid in [grid_log2, grid_log2 + 2] {
        let mut ratios = Vec::with_capacity(offsets.len() * scales.len());
        for &a in scales {
            for &b in offsets {
                let c = psi.coefficient(&f, a, x0 + b, grid)?.abs();
                ratios.push(c / (a.sqrt() * (a.powf(alpha) + b.abs().powf(alpha))));
                if grid == grid_log2 && b != 0.0 {
                    let refined = a.sqrt() * (a.powf(alpha) + b.abs().powf(alpha) * b.abs().ln().abs());
                    log_refined_max = log_refined_max.max(c / refined);
                }
            }
        }
        ratios.sort_by(f64::total_cmp);
        let max = *ratios.last().expect("non-empty grid");
        let median = ratios[ratios.len() / 2];
        grids.push((grid, max, median));
    }
    let bounded = grids.iter().all(|&(_, max, _)| max.is_finite() && max > 0.0);
    let stable = (grids[0].1 - grids[1].1).abs() <= RATIO_STABILITY * grids[0].1;
    let dyadic = dyadic_modulus(alpha, x0, 4..=12, grid_log2)?;
    let expected = (-alpha).exp2();
    let halving = dyadic
        .windows(2)
        .all(|w| ((w[1].modulus / w[0].modulus) / expected - 1.0).abs() <= 0.2);
    let covered = dyadic.iter().all(|s| s.modulus <= s.bound * (1.0 + 1e-9));
    Ok(LocalRegularity {
        base,
        alpha,
        grids,
        log_refined_max,
        dyadic,
        holds: bounded && stable && halving && covered,
    })
}

/// `true` iff the local-regularity ratio stays bounded and the dyadic modulus bound holds.
pub fn theorem_local_regularity_check(
    base: WaveletBase,
    alpha: f64,
    x0: f64,
    offsets: &[f64],
    scales: &[f64],
) -> Result<bool> {
    Ok(local_regularity(base, alpha, x0, offsets, scales, DEFAULT_GRID_LOG2)?.holds)
}
