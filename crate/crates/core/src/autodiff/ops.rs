//! Differentiable primitives and their backward rules.

use super::kernels::{conv_backward, conv_forward, ConvGeom};
use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::wavelet::{pool_adjoint, subband_adjoint, FilterBank, PoolKind};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running mean/variance of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl BnStats {
    pub fn new(channels: usize) -> Self {
        BnStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f64>,
        training: bool,
    },
    AvgPool {
        x: Var,
        k: usize,
    },
    Subsample(Var),
    Subband {
        x: Var,
        fb: FilterBank,
        band: usize,
    },
    WaveletPool {
        x: Var,
        fb: FilterBank,
        kind: PoolKind,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Margin {
        logits: Var,
        /// Per sample: (true class, strongest other class, active).
        picks: Vec<(usize, usize, bool)>,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Relu(_) => "relu",
            Op::Reshape(_) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "linear",
            Op::BatchNorm { .. } => "batch_norm",
            Op::AvgPool { .. } => "avg_pool2d",
            Op::Subsample(_) => "subsample",
            Op::Subband { .. } => "dwt2d",
            Op::WaveletPool { .. } => "wavelet_pool",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Margin { .. } => "cw_margin",
        }
    }

    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _) | Op::Sum(x) | Op::Mean(x) | Op::Relu(x) | Op::Reshape(x) | Op::Subsample(x) => vec![*x],
            Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::Linear { x, w, b } => vec![*x, *w, *b],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::AvgPool { x, .. } | Op::Subband { x, .. } | Op::WaveletPool { x, .. } => vec![*x],
            Op::CrossEntropy { logits, .. } | Op::Margin { logits, .. } => vec![*logits],
        }
    }
}

fn check_labels(labels: &[usize], n: usize, c: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Input(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Input(format!("label {bad} outside [0, {c})")));
    }
    Ok(())
}

fn dims2(t: &Tensor) -> Result<[usize; 2]> {
    match t.shape() {
        &[n, d] => Ok([n, d]),
        s => Err(Error::dim(format!("expected a rank-2 tensor, got {s:?}"))),
    }
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Result<Var> {
        let v = self.value(x).scale(s);
        self.push(v, Op::Scale(x, s))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum() as f32;
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = (t.sum() / t.len() as f64) as f32;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        self.push(v, Op::Reshape(x))
    }

    /// Flattens `[N, ...]` to `[N, D]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = t.shape()[0];
        let d = t.len() / n;
        self.reshape(x, &[n, d])
    }

    /// 2-D convolution (cross-correlation) without bias.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).dims4()?;
        let [k, cw, kh, kw] = self.value(w).dims4()?;
        if cw != c {
            return Err(Error::dim(format!(
                "conv2d: input has {c} channels, weight expects {cw}"
            )));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d: stride must be >= 1"));
        }
        if kh > h + 2 * padding || kw > wd + 2 * padding {
            return Err(Error::dim(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                wd + 2 * padding
            )));
        }
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            k,
            kh,
            kw,
            stride,
            pad: padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (wd + 2 * padding - kw) / stride + 1,
        };
        let out = conv_forward(self.value(x).data(), self.value(w).data(), n, &geom);
        let value = Tensor::new(vec![n, k, geom.ho, geom.wo], out)?;
        self.push(value, Op::Conv2d { x, w, geom })
    }

    /// `x [N, D] * w [D, M] + b [M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [n, d] = dims2(self.value(x))?;
        let [dw, m] = dims2(self.value(w))?;
        if dw != d || self.value(b).shape() != [m] {
            return Err(Error::dim(format!(
                "linear: x {:?}, w {:?}, b {:?}",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let (xd, wdat, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * m);
        let mut acc = vec![0.0f64; m];
        for i in 0..n {
            for (a, &bv) in acc.iter_mut().zip(bd) {
                *a = bv as f64;
            }
            for (j, &xv) in xd[i * d..(i + 1) * d].iter().enumerate() {
                let xv = xv as f64;
                for (a, &wv) in acc.iter_mut().zip(&wdat[j * m..(j + 1) * m]) {
                    *a += xv * wv as f64;
                }
            }
            out.extend(acc.iter().map(|&v| v as f32));
        }
        self.push(Tensor::new(vec![n, m], out)?, Op::Linear { x, w, b })
    }

    /// Batch normalization over `(N, H, W)` per channel. In training mode the batch
    /// statistics are used and the updated running statistics are returned; in eval
    /// mode only `running` is used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &BnStats,
        training: bool,
    ) -> Result<(Var, Option<BnStats>)> {
        let xt = self.value(x);
        let (n, c, hw) = match xt.shape() {
            &[n, c, h, w] => (n, c, h * w),
            &[n, c] => (n, c, 1),
            s => return Err(Error::dim(format!("batch_norm: unsupported shape {s:?}"))),
        };
        if self.value(gamma).shape() != [c]
            || self.value(beta).shape() != [c]
            || running.mean.len() != c
            || running.var.len() != c
        {
            return Err(Error::dim(format!("batch_norm: parameters do not match {c} channels")));
        }
        let count = n * hw;
        let data = xt.data();
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        if training {
            for ni in 0..n {
                for ci in 0..c {
                    let s = &data[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    mean[ci] += s.iter().map(|&v| v as f64).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for ni in 0..n {
                for ci in 0..c {
                    let s = &data[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    var[ci] += s.iter().map(|&v| (v as f64 - mean[ci]).powi(2)).sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
        } else {
            for ci in 0..c {
                mean[ci] = running.mean[ci] as f64;
                var[ci] = running.var[ci] as f64;
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(data.len());
        let mut out = Vec::with_capacity(data.len());
        for ni in 0..n {
            for ci in 0..c {
                for &v in &data[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                    let xh = (v as f64 - mean[ci]) * inv_std[ci];
                    xhat.push(xh as f32);
                    out.push((gd[ci] as f64 * xh + bd[ci] as f64) as f32);
                }
            }
        }
        let updated = training.then(|| {
            let unbias = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            BnStats {
                mean: (0..c)
                    .map(|ci| ((1.0 - BN_MOMENTUM) * running.mean[ci] as f64 + BN_MOMENTUM * mean[ci]) as f32)
                    .collect(),
                var: (0..c)
                    .map(|ci| ((1.0 - BN_MOMENTUM) * running.var[ci] as f64 + BN_MOMENTUM * var[ci] * unbias) as f32)
                    .collect(),
            }
        });
        let shape = xt.shape().to_vec();
        let v = self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
        )?;
        Ok((v, updated))
    }

    /// Non-overlapping average pooling with a `kernel x kernel` window.
    pub fn avg_pool2d(&mut self, x: Var, kernel: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if kernel == 0 || h % kernel != 0 || w % kernel != 0 {
            return Err(Error::dim(format!(
                "avg_pool2d: kernel {kernel} does not divide {h}x{w}"
            )));
        }
        let (ho, wo) = (h / kernel, w / kernel);
        let data = self.value(x).data();
        let norm = (kernel * kernel) as f64;
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for p in data.chunks(h * w) {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0f64;
                    for di in 0..kernel {
                        let row = (i * kernel + di) * w + j * kernel;
                        acc += p[row..row + kernel].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    out.push((acc / norm) as f32);
                }
            }
        }
        self.push(Tensor::new(vec![n, c, ho, wo], out)?, Op::AvgPool { x, k: kernel })
    }

    /// Keeps the top-left sample of every 2x2 block.
    pub fn subsample2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        crate::wavelet::dwt2d_shape_check(h, w)?;
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(data.len() / 4);
        for p in data.chunks(h * w) {
            for i in 0..h / 2 {
                for j in 0..w / 2 {
                    out.push(p[2 * i * w + 2 * j]);
                }
            }
        }
        self.push(Tensor::new(vec![n, c, h / 2, w / 2], out)?, Op::Subsample(x))
    }

    /// Differentiable one-level DWT; returns `[ll, lh, hl, hh]`.
    pub fn dwt2d(&mut self, x: Var, fb: &FilterBank) -> Result<[Var; 4]> {
        let s = crate::wavelet::dwt2d(self.value(x), fb)?;
        let bands = [s.ll, s.lh, s.hl, s.hh];
        let mut out = [x; 4];
        for (band, t) in bands.into_iter().enumerate() {
            out[band] = self.push(
                t,
                Op::Subband {
                    x,
                    fb: fb.clone(),
                    band,
                },
            )?;
        }
        Ok(out)
    }

    /// Differentiable Wavelet Average Pooling.
    pub fn wavelet_average_pool(&mut self, x: Var, fb: &FilterBank) -> Result<Var> {
        self.wavelet_pool(x, fb, PoolKind::Average)
    }

    /// Differentiable approximation-only pooling.
    pub fn wavelet_low_pass_pool(&mut self, x: Var, fb: &FilterBank, half_scale: bool) -> Result<Var> {
        self.wavelet_pool(x, fb, PoolKind::LowPass { half_scale })
    }

    fn wavelet_pool(&mut self, x: Var, fb: &FilterBank, kind: PoolKind) -> Result<Var> {
        let v = crate::wavelet::pool_with(self.value(x), fb, kind)?;
        self.push(
            v,
            Op::WaveletPool {
                x,
                fb: fb.clone(),
                kind,
            },
        )
    }

    /// Per-sample `-log softmax(logits)[label]`, shape `[N]`, max-subtracted.
    pub fn cross_entropy_per_sample(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [n, c] = dims2(self.value(logits))?;
        check_labels(labels, n, c)?;
        let z = self.value(logits).data();
        let mut probs = Vec::with_capacity(n * c);
        let mut out = Vec::with_capacity(n);
        for (row, &y) in z.chunks(c).zip(labels) {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
            let sum: f64 = row.iter().map(|&v| (v as f64 - m).exp()).sum();
            let lse = m + sum.ln();
            out.push((lse - row[y] as f64) as f32);
            probs.extend(row.iter().map(|&v| (v as f64 - m).exp() / sum));
        }
        self.push(
            Tensor::new(vec![n], out)?,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Mean cross-entropy over the batch, a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let per = self.cross_entropy_per_sample(logits, labels)?;
        self.mean(per)
    }

    /// Per-sample margin `max(z_y - max_{c != y} z_c, -kappa)`, shape `[N]`.
    pub fn cw_margin(&mut self, logits: Var, labels: &[usize], kappa: f32) -> Result<Var> {
        let [n, c] = dims2(self.value(logits))?;
        if c < 2 {
            return Err(Error::Input("margin loss needs at least two classes".into()));
        }
        check_labels(labels, n, c)?;
        let z = self.value(logits).data();
        let mut out = Vec::with_capacity(n);
        let mut picks = Vec::with_capacity(n);
        for (row, &y) in z.chunks(c).zip(labels) {
            let mut other = if y == 0 { 1 } else { 0 };
            for (j, &v) in row.iter().enumerate() {
                if j != y && v > row[other] {
                    other = j;
                }
            }
            let margin = row[y] as f64 - row[other] as f64;
            let active = margin > -(kappa as f64);
            out.push(margin.max(-(kappa as f64)) as f32);
            picks.push((y, other, active));
        }
        self.push(Tensor::new(vec![n], out)?, Op::Margin { logits, picks })
    }
}

/// Gradient contributions of node `i` to its inputs, given its output gradient `g`.
pub(crate) fn backward_rule(graph: &Graph, i: usize, g: &[f32]) -> Result<Vec<(Var, Vec<f32>)>> {
    let node = &graph.nodes[i];
    let val = |v: Var| graph.value(v);
    let wants = |v: Var| graph.requires_grad(v);
    let mut out = Vec::new();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            out.push((*a, g.to_vec()));
            out.push((*b, g.to_vec()));
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                out.push((*a, g.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect()));
            }
            if wants(*b) {
                out.push((*b, g.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect()));
            }
        }
        Op::Scale(x, s) => out.push((*x, g.iter().map(|v| v * s).collect())),
        Op::Sum(x) => out.push((*x, vec![g[0]; val(*x).len()])),
        Op::Mean(x) => {
            let n = val(*x).len();
            out.push((*x, vec![(g[0] as f64 / n as f64) as f32; n]));
        }
        Op::Relu(x) => out.push((
            *x,
            g.iter()
                .zip(val(*x).data())
                .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                .collect(),
        )),
        Op::Reshape(x) => out.push((*x, g.to_vec())),
        Op::Conv2d { x, w, geom } => {
            let n = val(*x).shape()[0];
            let (dx, dw) = conv_backward(val(*x).data(), val(*w).data(), g, n, geom, wants(*x), wants(*w));
            if let Some(dx) = dx {
                out.push((*x, dx));
            }
            if let Some(dw) = dw {
                out.push((*w, dw));
            }
        }
        Op::Linear { x, w, b } => {
            let [n, d] = dims2(val(*x))?;
            let m = val(*b).len();
            let (xd, wd) = (val(*x).data(), val(*w).data());
            if wants(*x) {
                let mut dx = Vec::with_capacity(n * d);
                for r in 0..n {
                    let gr = &g[r * m..(r + 1) * m];
                    for j in 0..d {
                        let wr = &wd[j * m..(j + 1) * m];
                        let s: f64 = gr.iter().zip(wr).map(|(&a, &b)| a as f64 * b as f64).sum();
                        dx.push(s as f32);
                    }
                }
                out.push((*x, dx));
            }
            if wants(*w) {
                let mut dw = vec![0.0f64; d * m];
                for r in 0..n {
                    let gr = &g[r * m..(r + 1) * m];
                    for j in 0..d {
                        let xv = xd[r * d + j] as f64;
                        for (acc, &gv) in dw[j * m..(j + 1) * m].iter_mut().zip(gr) {
                            *acc += xv * gv as f64;
                        }
                    }
                }
                out.push((*w, dw.into_iter().map(|v| v as f32).collect()));
            }
            if wants(*b) {
                let mut db = vec![0.0f64; m];
                for r in 0..n {
                    for (acc, &gv) in db.iter_mut().zip(&g[r * m..(r + 1) * m]) {
                        *acc += gv as f64;
                    }
                }
                out.push((*b, db.into_iter().map(|v| v as f32).collect()));
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            training,
        } => {
            let shape = val(*x).shape();
            let (n, c) = (shape[0], shape[1]);
            let hw = val(*x).len() / (n * c);
            let count = (n * hw) as f64;
            let gd = val(*gamma).data();
            let mut sum_g = vec![0.0f64; c];
            let mut sum_gx = vec![0.0f64; c];
            for ni in 0..n {
                for ci in 0..c {
                    let r = (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
                    for (&gv, &xh) in g[r.clone()].iter().zip(&xhat[r]) {
                        sum_g[ci] += gv as f64;
                        sum_gx[ci] += gv as f64 * xh as f64;
                    }
                }
            }
            if wants(*x) {
                let mut dx = Vec::with_capacity(g.len());
                for ni in 0..n {
                    for ci in 0..c {
                        let r = (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
                        let scale = gd[ci] as f64 * inv_std[ci];
                        for (&gv, &xh) in g[r.clone()].iter().zip(&xhat[r]) {
                            let v = if *training {
                                scale / count * (count * gv as f64 - sum_g[ci] - xh as f64 * sum_gx[ci])
                            } else {
                                scale * gv as f64
                            };
                            dx.push(v as f32);
                        }
                    }
                }
                out.push((*x, dx));
            }
            if wants(*gamma) {
                out.push((*gamma, sum_gx.iter().map(|&v| v as f32).collect()));
            }
            if wants(*beta) {
                out.push((*beta, sum_g.iter().map(|&v| v as f32).collect()));
            }
        }
        Op::AvgPool { x, k } => {
            let [_, _, h, w] = val(*x).dims4()?;
            let (ho, wo) = (h / k, w / k);
            let norm = (k * k) as f64;
            let mut dx = vec![0.0f32; val(*x).len()];
            for (pi, p) in dx.chunks_mut(h * w).enumerate() {
                for i in 0..h {
                    for j in 0..w {
                        let gv = g[pi * ho * wo + (i / k) * wo + j / k];
                        p[i * w + j] = (gv as f64 / norm) as f32;
                    }
                }
            }
            out.push((*x, dx));
        }
        Op::Subsample(x) => {
            let [_, _, h, w] = val(*x).dims4()?;
            let (h2, w2) = (h / 2, w / 2);
            let mut dx = vec![0.0f32; val(*x).len()];
            for (pi, p) in dx.chunks_mut(h * w).enumerate() {
                for i in 0..h2 {
                    for j in 0..w2 {
                        p[2 * i * w + 2 * j] = g[pi * h2 * w2 + i * w2 + j];
                    }
                }
            }
            out.push((*x, dx));
        }
        Op::Subband { x, fb, band } => {
            let [n, c, h, w] = val(*x).dims4()?;
            out.push((*x, subband_adjoint(g, n * c, h, w, fb, *band)));
        }
        Op::WaveletPool { x, fb, kind } => {
            let [n, c, h, w] = val(*x).dims4()?;
            out.push((*x, pool_adjoint(g, n * c, h, w, fb, *kind)));
        }
        Op::CrossEntropy { logits, labels, probs } => {
            let c = val(*logits).shape()[1];
            let mut dz = Vec::with_capacity(probs.len());
            for (r, (&y, &gv)) in labels.iter().zip(g).enumerate() {
                for j in 0..c {
                    let t = if j == y { 1.0 } else { 0.0 };
                    dz.push((gv as f64 * (probs[r * c + j] - t)) as f32);
                }
            }
            out.push((*logits, dz));
        }
        Op::Margin { logits, picks } => {
            let c = val(*logits).shape()[1];
            let mut dz = vec![0.0f32; val(*logits).len()];
            for (r, (&(y, other, active), &gv)) in picks.iter().zip(g).enumerate() {
                if active {
                    dz[r * c + y] += gv;
                    dz[r * c + other] -= gv;
                }
            }
            out.push((*logits, dz));
        }
    }
    Ok(out)
}
