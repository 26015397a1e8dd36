//! Dense kernels with f64 accumulation.

#[inline]
pub(crate) fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (d, &v) in acc.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// Dot product with a fixed 4-lane accumulation order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        lanes[0] += a[j] * b[j];
        lanes[1] += a[j + 1] * b[j + 1];
        lanes[2] += a[j + 2] * b[j + 2];
        lanes[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds one `[C, H, W]` image into a `[C*kh*kw, ho*wo]` column matrix.
pub(crate) fn im2col(x: &[f32], g: &ConvGeom, col: &mut [f64]) {
    let p = g.cols();
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for (oj, v) in out_row.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *v = if jj < 0 || jj >= g.w as isize {
                            0.0
                        } else {
                            src[jj as usize] as f64
                        };
                    }
                }
            }
        }
    }
}

/// Adds a column matrix back onto a `[C, H, W]` image (adjoint of [`im2col`]).
pub(crate) fn col2im(col: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let p = g.cols();
    for ci in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let base = ci * g.h * g.w + ii as usize * g.w;
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            x[base + jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(x: &[f32], w: &[f32], n: usize, g: &ConvGeom) -> Vec<f32> {
    let (q, p) = (g.rows(), g.cols());
    let w64: Vec<f64> = w.iter().map(|&v| v as f64).collect();
    let mut col = vec![0.0f64; q * p];
    let mut acc = vec![0.0f64; p];
    let mut out = Vec::with_capacity(n * g.k * p);
    let in_len = g.c * g.h * g.w;
    for ni in 0..n {
        im2col(&x[ni * in_len..(ni + 1) * in_len], g, &mut col);
        for k in 0..g.k {
            acc.iter_mut().for_each(|v| *v = 0.0);
            let wrow = &w64[k * q..(k + 1) * q];
            for (qi, &wv) in wrow.iter().enumerate() {
                axpy(&mut acc, wv, &col[qi * p..(qi + 1) * p]);
            }
            out.extend(acc.iter().map(|&v| v as f32));
        }
    }
    out
}

/// Returns `(dx, dw)`; each is computed only when requested.
pub(crate) fn conv_backward(
    x: &[f32],
    w: &[f32],
    gout: &[f32],
    n: usize,
    g: &ConvGeom,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let (q, p) = (g.rows(), g.cols());
    let in_len = g.c * g.h * g.w;
    let w64: Vec<f64> = w.iter().map(|&v| v as f64).collect();
    // Transposed weights, [q, k], for the input gradient.
    let mut wt = vec![0.0f64; q * g.k];
    for k in 0..g.k {
        for qi in 0..q {
            wt[qi * g.k + k] = w64[k * q + qi];
        }
    }
    let mut col = vec![0.0f64; q * p];
    let mut dcol = vec![0.0f64; q * p];
    let mut g64 = vec![0.0f64; g.k * p];
    let mut dw = if need_dw { Some(vec![0.0f64; g.k * q]) } else { None };
    let mut dx = if need_dx {
        Some(Vec::with_capacity(n * in_len))
    } else {
        None
    };
    let mut dx_img = vec![0.0f64; in_len];
    for ni in 0..n {
        let gslice = &gout[ni * g.k * p..(ni + 1) * g.k * p];
        for (d, &s) in g64.iter_mut().zip(gslice) {
            *d = s as f64;
        }
        if let Some(dw) = dw.as_mut() {
            im2col(&x[ni * in_len..(ni + 1) * in_len], g, &mut col);
            for k in 0..g.k {
                let grow = &g64[k * p..(k + 1) * p];
                for qi in 0..q {
                    dw[k * q + qi] += dot(grow, &col[qi * p..(qi + 1) * p]);
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            for qi in 0..q {
                let acc = &mut dcol[qi * p..(qi + 1) * p];
                acc.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..g.k {
                    axpy(acc, wt[qi * g.k + k], &g64[k * p..(k + 1) * p]);
                }
            }
            dx_img.iter_mut().for_each(|v| *v = 0.0);
            col2im(&dcol, g, &mut dx_img);
            dx.extend(dx_img.iter().map(|&v| v as f32));
        }
    }
    (dx, dw.map(|d| d.into_iter().map(|v| v as f32).collect()))
}
