//! Multi-level approximation ladder.

use super::filters::FilterBank;
use super::transform::{check_even, dwt2d};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LADDER_TOL: f64 = 1e-5;

/// Level-`levels` approximation obtained by re-applying [`dwt2d`] to `ll`.
pub fn recursive_approximation(x: &Tensor, fb: &FilterBank, levels: usize) -> Result<Tensor> {
    let mut cur = x.clone();
    for _ in 0..levels {
        cur = dwt2d(&cur, fb)?.ll;
    }
    Ok(cur)
}

/// Equivalent lowpass filter of `levels` cascaded stages:
/// `H_k[t] = sum_{2^(k-1) i + n = t} lo[i] H_{k-1}[n]`.
pub fn equivalent_lowpass(lo: &[f64], levels: usize) -> Vec<f64> {
    let mut eq = vec![1.0];
    for k in 0..levels {
        let step = 1usize << k;
        let len = eq.len() + step * (lo.len() - 1);
        let mut next = vec![0.0; len];
        for (i, &li) in lo.iter().enumerate() {
            for (n, &hn) in eq.iter().enumerate() {
                next[step * i + n] += li * hn;
            }
        }
        eq = next;
    }
    eq
}

/// Level-`levels` approximation computed in one pass with the equivalent filter and
/// a downsampling factor of `2^levels`.
pub fn direct_approximation(x: &Tensor, fb: &FilterBank, levels: usize) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4()?;
    let factor = 1usize << levels;
    check_divisible(h, w, levels)?;
    let eq = equivalent_lowpass(&fb.lo_a, levels);
    let (ho, wo) = (h / factor, w / factor);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for p in x.data().chunks(h * w) {
        let mut rows = vec![0.0f64; h * wo];
        for r in 0..h {
            for k in 0..wo {
                rows[r * wo + k] = eq
                    .iter()
                    .enumerate()
                    .map(|(t, &f)| f * p[r * w + (factor * k + t) % w] as f64)
                    .sum();
            }
        }
        for i in 0..ho {
            for k in 0..wo {
                let v: f64 = eq
                    .iter()
                    .enumerate()
                    .map(|(t, &f)| f * rows[((factor * i + t) % h) * wo + k])
                    .sum();
                out.push(v as f32);
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

fn check_divisible(h: usize, w: usize, levels: usize) -> Result<()> {
    let factor = 1usize << levels;
    if levels == 0 || !h.is_multiple_of(factor) || !w.is_multiple_of(factor) {
        return Err(Error::dim(format!(
            "{h}x{w} is not divisible by 2^{levels} (levels must be >= 1)"
        )));
    }
    check_even(h, w)
}

/// True iff the recursive ladder `dwt2d(...dwt2d(x).ll...).ll` agrees with the
/// single-pass equivalent-filter decomposition at every level up to `levels`.
pub fn multilevel_consistency_check(x: &Tensor, fb: &FilterBank, levels: usize) -> Result<bool> {
    let [_, _, h, w] = x.dims4()?;
    check_divisible(h, w, levels)?;
    let scale = x.data().iter().fold(1.0f64, |m, &v| m.max(v.abs() as f64));
    let mut cur = x.clone();
    for level in 1..=levels {
        cur = dwt2d(&cur, fb)?.ll;
        let direct = direct_approximation(x, fb, level)?;
        // Lowpass gain is 2 per level in 2-D.
        let tol = LADDER_TOL * scale * (1u64 << level) as f64;
        if cur.max_abs_diff(&direct) > tol {
            return Ok(false);
        }
    }
    Ok(true)
}
