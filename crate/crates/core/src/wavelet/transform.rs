//! One-level separable 2-D DWT with periodic extension.
//!
//! Rows are filtered first (width axis), then columns (height axis), keeping even
//! phases. `lh` is lowpass along height applied to the horizontal highpass, `hl` is
//! the highpass along height applied to the horizontal lowpass.

use super::filters::FilterBank;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The four one-level subbands, each `[N, C, H/2, W/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

impl SubbandSet {
    pub fn shape(&self) -> &[usize] {
        self.ll.shape()
    }

    pub fn energy(&self) -> f64 {
        self.ll.norm_sq() + self.lh.norm_sq() + self.hl.norm_sq() + self.hh.norm_sq()
    }

    pub fn zeros_like(&self) -> Self {
        let z = Tensor::zeros(self.ll.shape());
        SubbandSet {
            ll: z.clone(),
            lh: z.clone(),
            hl: z.clone(),
            hh: z,
        }
    }
}

/// Subband planes of one `H x W` channel, in f64, ordered ll, lh, hl, hh.
pub(crate) struct Planes {
    pub ll: Vec<f64>,
    pub lh: Vec<f64>,
    pub hl: Vec<f64>,
    pub hh: Vec<f64>,
}

pub(crate) fn check_even(h: usize, w: usize) -> Result<()> {
    if h < 2 || w < 2 || !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(Error::dim(format!(
            "wavelet transform needs even spatial dims >= 2, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Analysis of one plane with filters `lo`, `hi` in correlation form.
pub(crate) fn analyze_plane(x: &[f32], h: usize, w: usize, lo: &[f64], hi: &[f64]) -> Planes {
    let wide: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    analyze_plane_f64(&wide, h, w, lo, hi)
}

/// Transpose-form synthesis of one plane: scatters each subband back with `lo`, `hi`.
/// With the synthesis filters this inverts `analyze_plane`; with the analysis filters
/// it is the adjoint of `analyze_plane`.
pub(crate) fn synthesize_plane(bands: [&[f64]; 4], h: usize, w: usize, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let [ll, lh, hl, hh] = bands;
    let (h2, w2) = (h / 2, w / 2);
    let mut row_lo = vec![0.0f64; h * w2];
    let mut row_hi = vec![0.0f64; h * w2];
    for i in 0..h2 {
        for (n, (&fl, &fh)) in lo.iter().zip(hi).enumerate() {
            let dst = (2 * i + n) % h;
            for k in 0..w2 {
                let s = i * w2 + k;
                row_lo[dst * w2 + k] += fl * ll[s] + fh * hl[s];
                row_hi[dst * w2 + k] += fl * lh[s] + fh * hh[s];
            }
        }
    }
    let mut x = vec![0.0f64; h * w];
    for r in 0..h {
        for k in 0..w2 {
            let a = row_lo[r * w2 + k];
            let d = row_hi[r * w2 + k];
            for (n, (&fl, &fh)) in lo.iter().zip(hi).enumerate() {
                x[r * w + (2 * k + n) % w] += fl * a + fh * d;
            }
        }
    }
    x
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// One-level 2-D DWT of every `[H, W]` plane of `x`.
pub fn dwt2d(x: &Tensor, fb: &FilterBank) -> Result<SubbandSet> {
    let [n, c, h, w] = x.dims4()?;
    check_even(h, w)?;
    let plane = h * w;
    let half = (h / 2) * (w / 2);
    let mut bands: [Vec<f32>; 4] = Default::default();
    for b in bands.iter_mut() {
        b.reserve(n * c * half);
    }
    for p in x.data().chunks(plane) {
        let out = analyze_plane(p, h, w, &fb.lo_a, &fb.hi_a);
        bands[0].extend(to_f32(&out.ll));
        bands[1].extend(to_f32(&out.lh));
        bands[2].extend(to_f32(&out.hl));
        bands[3].extend(to_f32(&out.hh));
    }
    let shape = vec![n, c, h / 2, w / 2];
    let [ll, lh, hl, hh] = bands;
    Ok(SubbandSet {
        ll: Tensor::new(shape.clone(), ll)?,
        lh: Tensor::new(shape.clone(), lh)?,
        hl: Tensor::new(shape.clone(), hl)?,
        hh: Tensor::new(shape, hh)?,
    })
}

/// Inverse of [`dwt2d`] (periodic boundary).
pub fn idwt2d(s: &SubbandSet, fb: &FilterBank) -> Result<Tensor> {
    synthesize(s, &fb.lo_s, &fb.hi_s)
}

pub(crate) fn synthesize(s: &SubbandSet, lo: &[f64], hi: &[f64]) -> Result<Tensor> {
    let shape = s.ll.shape();
    for (name, t) in [("lh", &s.lh), ("hl", &s.hl), ("hh", &s.hh)] {
        if t.shape() != shape {
            return Err(Error::dim(format!(
                "subband {name} has shape {:?}, ll has {shape:?}",
                t.shape()
            )));
        }
    }
    let [n, c, h2, w2] = s.ll.dims4()?;
    let (h, w) = (2 * h2, 2 * w2);
    let half = h2 * w2;
    let mut data = Vec::with_capacity(n * c * h * w);
    let widen =
        |t: &Tensor, i: usize| -> Vec<f64> { t.data()[i * half..(i + 1) * half].iter().map(|&v| v as f64).collect() };
    for i in 0..n * c {
        let (ll, lh, hl, hh) = (widen(&s.ll, i), widen(&s.lh, i), widen(&s.hl, i), widen(&s.hh, i));
        let x = synthesize_plane([&ll, &lh, &hl, &hh], h, w, lo, hi);
        data.extend(to_f32(&x));
    }
    Tensor::new(vec![n, c, h, w], data)
}

/// Wavelet Average Pooling: `0.25 * (ll + lh + hl + hh)`, halving each spatial dim.
pub fn wavelet_average_pool(x: &Tensor, fb: &FilterBank) -> Result<Tensor> {
    pool(x, fb, PoolKind::Average)
}

/// Keeps only the approximation subband; `half_scale` multiplies it by 0.5 so its
/// magnitude matches the average-pooling output on constant inputs.
pub fn wavelet_low_pass_pool(x: &Tensor, fb: &FilterBank, half_scale: bool) -> Result<Tensor> {
    pool(x, fb, PoolKind::LowPass { half_scale })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum PoolKind {
    Average,
    LowPass { half_scale: bool },
}

impl PoolKind {
    /// Weights applied to (ll, lh, hl, hh).
    pub(crate) fn weights(&self) -> [f64; 4] {
        match self {
            PoolKind::Average => [0.25; 4],
            PoolKind::LowPass { half_scale: true } => [0.5, 0.0, 0.0, 0.0],
            PoolKind::LowPass { half_scale: false } => [1.0, 0.0, 0.0, 0.0],
        }
    }
}

pub(crate) fn pool(x: &Tensor, fb: &FilterBank, kind: PoolKind) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    check_even(h, w)?;
    let wts = kind.weights();
    let half = (h / 2) * (w / 2);
    let mut data = Vec::with_capacity(n * c * half);
    for p in x.data().chunks(h * w) {
        let b = analyze_plane(p, h, w, &fb.lo_a, &fb.hi_a);
        for k in 0..half {
            let v = wts[0] * b.ll[k] + wts[1] * b.lh[k] + wts[2] * b.hl[k] + wts[3] * b.hh[k];
            data.push(v as f32);
        }
    }
    Tensor::new(vec![n, c, h / 2, w / 2], data)
}

/// Adjoint of [`pool`]: maps a gradient on the pooled map back to the input map.
pub(crate) fn pool_adjoint(
    grad: &[f32],
    plane_count: usize,
    h: usize,
    w: usize,
    fb: &FilterBank,
    kind: PoolKind,
) -> Vec<f32> {
    let wts = kind.weights();
    let half = (h / 2) * (w / 2);
    let mut out = Vec::with_capacity(plane_count * h * w);
    let mut bands = [vec![0.0f64; half], vec![0.0; half], vec![0.0; half], vec![0.0; half]];
    for i in 0..plane_count {
        let g = &grad[i * half..(i + 1) * half];
        for (b, &wt) in bands.iter_mut().zip(&wts) {
            for (dst, &v) in b.iter_mut().zip(g) {
                *dst = wt * v as f64;
            }
        }
        let x = synthesize_plane([&bands[0], &bands[1], &bands[2], &bands[3]], h, w, &fb.lo_a, &fb.hi_a);
        out.extend(to_f32(&x));
    }
    out
}

/// Adjoint of one analysis subband (`band` indexes ll, lh, hl, hh).
pub(crate) fn subband_adjoint(
    grad: &[f32],
    plane_count: usize,
    h: usize,
    w: usize,
    fb: &FilterBank,
    band: usize,
) -> Vec<f32> {
    let half = (h / 2) * (w / 2);
    let zeros = vec![0.0f64; half];
    let mut out = Vec::with_capacity(plane_count * h * w);
    for i in 0..plane_count {
        let g: Vec<f64> = grad[i * half..(i + 1) * half].iter().map(|&v| v as f64).collect();
        let mut bands: [&[f64]; 4] = [&zeros, &zeros, &zeros, &zeros];
        bands[band] = &g;
        out.extend(to_f32(&synthesize_plane(bands, h, w, &fb.lo_a, &fb.hi_a)));
    }
    out
}

/// Largest singular value of a pooling operator on `size x size` planes, estimated
/// by power iteration on `P^T P`.
pub(crate) fn pool_operator_norm(fb: &FilterBank, kind: PoolKind, size: usize, iters: usize) -> f64 {
    let wts = kind.weights();
    let half = (size / 2) * (size / 2);
    // Deterministic start with energy at every frequency.
    let mut v: Vec<f64> = (0..size * size)
        .map(|i| ((i as f64 * 0.618_033_988_75).fract() - 0.5) + 1e-3 * (i % 7) as f64)
        .collect();
    let mut sigma = 0.0;
    for _ in 0..iters {
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= nv);
        let b = analyze_plane_f64(&v, size, size, &fb.lo_a, &fb.hi_a);
        let y: Vec<f64> = (0..half)
            .map(|k| wts[0] * b.ll[k] + wts[1] * b.lh[k] + wts[2] * b.hl[k] + wts[3] * b.hh[k])
            .collect();
        sigma = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        let bands: Vec<Vec<f64>> = wts.iter().map(|&wt| y.iter().map(|&a| wt * a).collect()).collect();
        v = synthesize_plane(
            [&bands[0], &bands[1], &bands[2], &bands[3]],
            size,
            size,
            &fb.lo_a,
            &fb.hi_a,
        );
    }
    sigma
}

pub(crate) fn analyze_plane_f64(x: &[f64], h: usize, w: usize, lo: &[f64], hi: &[f64]) -> Planes {
    let (h2, w2) = (h / 2, w / 2);
    let mut row_lo = vec![0.0f64; h * w2];
    let mut row_hi = vec![0.0f64; h * w2];
    for r in 0..h {
        for k in 0..w2 {
            let (mut a, mut d) = (0.0, 0.0);
            for (n, (&fl, &fh)) in lo.iter().zip(hi).enumerate() {
                let v = x[r * w + (2 * k + n) % w];
                a += fl * v;
                d += fh * v;
            }
            row_lo[r * w2 + k] = a;
            row_hi[r * w2 + k] = d;
        }
    }
    let mut out = Planes {
        ll: vec![0.0; h2 * w2],
        lh: vec![0.0; h2 * w2],
        hl: vec![0.0; h2 * w2],
        hh: vec![0.0; h2 * w2],
    };
    for i in 0..h2 {
        for (n, (&fl, &fh)) in lo.iter().zip(hi).enumerate() {
            let src = (2 * i + n) % h;
            for k in 0..w2 {
                let l = row_lo[src * w2 + k];
                let d = row_hi[src * w2 + k];
                out.ll[i * w2 + k] += fl * l;
                out.hl[i * w2 + k] += fh * l;
                out.lh[i * w2 + k] += fl * d;
                out.hh[i * w2 + k] += fh * d;
            }
        }
    }
    out
}
