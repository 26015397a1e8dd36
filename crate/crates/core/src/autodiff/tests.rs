use super::*;
use crate::wavelet::{FilterBank, WaveletBase};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f32 = 1e-3;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in [-1, 1] kept at least `gap` away from zero (away from ReLU kinks).
fn away_from_zero(shape: &[usize], gap: f32, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f32 = r.random_range(gap..1.0);
        if r.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

struct GradReport {
    max_rel: f64,
    mean_rel: f64,
}

/// Compares reverse-mode gradients of `sum(R * f(inputs))` against central finite
/// differences evaluated in f64 on the f32 outputs.
fn grad_check<F>(inputs: &[Tensor], seed: u64, f: F) -> GradReport
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut r = rng(seed);
    let forward = |vals: &[Tensor]| -> Tensor {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).clone()
    };
    let base = forward(inputs);
    let proj = Tensor::rand_uniform(base.shape(), -1.0, 1.0, &mut r);
    // Worst-case effect of rounding every f32 output on one central difference.
    let rounding: f64 = base
        .data()
        .iter()
        .zip(proj.data())
        .map(|(&a, &b)| (a as f64 * b as f64).abs())
        .sum::<f64>()
        * f32::EPSILON as f64
        / (2.0 * FD_STEP as f64);
    let project = |t: &Tensor| -> f64 {
        t.data()
            .iter()
            .zip(proj.data())
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars).unwrap();
    let pv = g.constant(proj.clone());
    let prod = g.mul(out, pv).unwrap();
    let loss = g.sum(prod).unwrap();
    g.backward(loss).unwrap();

    let mut rels = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = g.grad(vars[k]).unwrap().to_vec();
        let scale = analytic.iter().fold(0.0f64, |m, &v| m.max(v.abs() as f64));
        let floor = (1e-2 * scale).max(100.0 * rounding).max(1e-6);
        let count = input.len().min(48);
        for s in 0..count {
            let idx = if input.len() <= 48 {
                s
            } else {
                r.random_range(0..input.len())
            };
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[idx] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[idx] -= FD_STEP;
            let h = (plus[k].data()[idx] as f64 - minus[k].data()[idx] as f64) / 2.0;
            let numeric = (project(&forward(&plus)) - project(&forward(&minus))) / (2.0 * h);
            let a = analytic[idx] as f64;
            rels.push((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
        }
    }
    GradReport {
        max_rel: rels.iter().cloned().fold(0.0, f64::max),
        mean_rel: rels.iter().sum::<f64>() / rels.len() as f64,
    }
}

fn assert_grad(report: GradReport, what: &str) {
    assert!(
        report.max_rel < 1e-2 && report.mean_rel < 1e-3,
        "{what}: max rel {:.2e}, mean rel {:.2e}",
        report.max_rel,
        report.mean_rel
    );
}

#[test]
fn conv2d_trivial_values() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 1, 1], 3.0));
    let w = g.constant(Tensor::full(&[1, 1, 1, 1], 2.0));
    let y = g.conv2d(x, w, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[6.0]);
    let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = g.conv2d(x, w, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).data(), &[9.0]);
}

/// Nested-loop convolution in f64.
fn conv_oracle(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Vec<f64> {
    let [n, c, h, wd] = x.dims4().unwrap();
    let [k, _, kh, kw] = w.dims4().unwrap();
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::new();
    for ni in 0..n {
        for ki in 0..k {
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut acc = 0.0f64;
                    for ci in 0..c {
                        for a in 0..kh {
                            for b in 0..kw {
                                let ii = (oi * stride + a) as isize - pad as isize;
                                let jj = (oj * stride + b) as isize - pad as isize;
                                if ii < 0 || jj < 0 || ii >= h as isize || jj >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * c + ci) * h + ii as usize) * wd + jj as usize];
                                let wv = w.data()[((ki * c + ci) * kh + a) * kw + b];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_nested_loop_oracle() {
    let mut r = rng(1);
    for &(stride, pad) in &[(1, 0), (1, 1), (2, 1), (2, 0)] {
        let x = Tensor::rand_uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut r);
        let w = Tensor::rand_uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
        let y = g.conv2d(xv, wv, stride, pad).unwrap();
        let oracle = conv_oracle(&x, &w, stride, pad);
        assert_eq!(g.value(y).len(), oracle.len());
        for (a, b) in g.value(y).data().iter().zip(&oracle) {
            assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}

#[test]
fn conv2d_shape_errors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(matches!(g.conv2d(x, w, 1, 0), Err(Error::Dimension(_))));
    let w = g.constant(Tensor::zeros(&[1, 2, 7, 7]));
    assert!(g.conv2d(x, w, 1, 1).is_err());
    let w = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
    assert!(g.conv2d(x, w, 0, 1).is_err());
}

#[test]
fn conv2d_is_linear_in_input() {
    let mut r = rng(2);
    let x = Tensor::rand_uniform(&[2, 3, 6, 6], -1.0, 1.0, &mut r);
    let y = Tensor::rand_uniform(&[2, 3, 6, 6], -1.0, 1.0, &mut r);
    let w = Tensor::rand_uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut r);
    let (a, b) = (0.7f32, -1.3f32);
    let conv = |t: &Tensor| {
        let mut g = Graph::new();
        let (tv, wv) = (g.constant(t.clone()), g.constant(w.clone()));
        let o = g.conv2d(tv, wv, 1, 1).unwrap();
        g.value(o).clone()
    };
    let lhs = conv(&x.zip_map(&y, |p, q| a * p + b * q).unwrap());
    let rhs = conv(&x).zip_map(&conv(&y), |p, q| a * p + b * q).unwrap();
    assert!(lhs.max_abs_diff(&rhs) < 1e-5);
}

#[test]
fn relu_and_pooling_values() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    let c = g.constant(Tensor::full(&[1, 2, 8, 8], 0.37));
    let p = g.avg_pool2d(c, 4).unwrap();
    assert_eq!(g.shape(p), &[1, 2, 2, 2]);
    assert!(g.value(p).data().iter().all(|&v| (v - 0.37).abs() < 1e-7));
    assert!(matches!(g.avg_pool2d(c, 3), Err(Error::Dimension(_))));
}

#[test]
fn cross_entropy_values() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
    let l = g.softmax_cross_entropy(z, &[0]).unwrap();
    assert!((g.value(l).data()[0] - std::f32::consts::LN_2).abs() < 1e-6);
    let z = g.constant(Tensor::new(vec![1, 2], vec![1000.0, 0.0]).unwrap());
    let l = g.softmax_cross_entropy(z, &[0]).unwrap();
    assert!(g.value(l).data()[0].abs() < 1e-6);
    let l = g.softmax_cross_entropy(z, &[1]).unwrap();
    assert!((g.value(l).data()[0] - 1000.0).abs() < 1e-3);
    assert!(matches!(g.softmax_cross_entropy(z, &[2]), Err(Error::Input(_))));
}

#[test]
fn mean_cross_entropy_gradient_matches_softmax_formula() {
    let mut r = rng(4);
    let z = Tensor::rand_uniform(&[4, 10], -3.0, 3.0, &mut r);
    let labels = [0usize, 9, 4, 4];
    let mut g = Graph::new();
    let zv = g.leaf(z.clone(), true);
    let l = g.softmax_cross_entropy(zv, &labels).unwrap();
    g.backward(l).unwrap();
    let grad = g.grad(zv).unwrap();
    let mut loss = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        let row: Vec<f64> = z.data()[i * 10..(i + 1) * 10].iter().map(|&v| v as f64).collect();
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
        loss += denom.ln() + m - row[y];
        for j in 0..10 {
            let p = (row[j] - m).exp() / denom;
            let want = (p - if j == y { 1.0 } else { 0.0 }) / 4.0;
            assert!((grad[i * 10 + j] as f64 - want).abs() < 1e-6);
        }
    }
    assert!((g.value(l).data()[0] as f64 - loss / 4.0).abs() < 1e-5);
}

#[test]
fn backward_trivial_cases() {
    let mut g = Graph::new();
    let x = g.leaf(
        Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap(),
        true,
    );
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);

    let mut g = Graph::new();
    let x = g.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap(), true);
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    // A second call accumulates.
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0, 8.0, 12.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn backward_usage_errors() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::zeros(&[3]), true);
    assert!(matches!(g.backward(x), Err(Error::Usage(_))));
    let mut other = Graph::new();
    other.leaf(Tensor::zeros(&[1]), true);
    let far = Var(57);
    assert!(matches!(other.backward(far), Err(Error::Usage(_))));
    // No recorded ops: a no-op.
    let mut g = Graph::new();
    let c = g.constant(Tensor::scalar(1.0));
    g.backward(c).unwrap();
    assert!(g.grad(c).is_none());
}

#[test]
fn non_finite_values_are_errors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![2], vec![f32::MAX, f32::MAX]).unwrap());
    assert!(matches!(g.scale(x, 10.0), Err(Error::Numeric(_))));
}

#[test]
fn gradient_checks_for_every_primitive() {
    let shapes: [[usize; 4]; 5] = [[1, 1, 4, 4], [2, 2, 4, 6], [2, 3, 6, 4], [1, 2, 8, 8], [3, 1, 4, 4]];
    for (s, shape) in shapes.iter().enumerate() {
        let seed = 100 + s as u64;
        let mut r = rng(seed);
        let [n, c, h, w] = *shape;
        let x = away_from_zero(shape, 0.05, &mut r);
        let wt = Tensor::rand_uniform(&[3, c, 3, 3], -1.0, 1.0, &mut r);
        assert_grad(
            grad_check(&[x.clone(), wt.clone()], seed, |g, v| g.conv2d(v[0], v[1], 1, 1)),
            "conv2d",
        );
        if h >= 4 {
            assert_grad(
                grad_check(&[x.clone(), wt.clone()], seed, |g, v| g.conv2d(v[0], v[1], 2, 1)),
                "conv2d stride 2",
            );
        }
        assert_grad(grad_check(std::slice::from_ref(&x), seed, |g, v| g.relu(v[0])), "relu");
        assert_grad(
            grad_check(std::slice::from_ref(&x), seed, |g, v| g.avg_pool2d(v[0], 2)),
            "avg_pool",
        );
        assert_grad(
            grad_check(std::slice::from_ref(&x), seed, |g, v| g.subsample2(v[0])),
            "subsample",
        );
        let y = Tensor::rand_uniform(shape, -1.0, 1.0, &mut r);
        assert_grad(
            grad_check(&[x.clone(), y.clone()], seed, |g, v| g.mul(v[0], v[1])),
            "mul",
        );
        assert_grad(
            grad_check(&[x.clone(), y.clone()], seed, |g, v| g.add(v[0], v[1])),
            "add",
        );
        assert_grad(
            grad_check(std::slice::from_ref(&x), seed, |g, v| g.scale(v[0], -1.7)),
            "scale",
        );
        assert_grad(grad_check(std::slice::from_ref(&x), seed, |g, v| g.mean(v[0])), "mean");

        // Batch norm in both modes.
        let gamma = Tensor::rand_uniform(&[c], 0.5, 1.5, &mut r);
        let beta = Tensor::rand_uniform(&[c], -0.5, 0.5, &mut r);
        let stats = BnStats {
            mean: (0..c).map(|i| 0.1 * i as f32).collect(),
            var: (0..c).map(|i| 0.5 + 0.2 * i as f32).collect(),
        };
        if n * h * w > 1 {
            assert_grad(
                grad_check(&[x.clone(), gamma.clone(), beta.clone()], seed, |g, v| {
                    Ok(g.batch_norm(v[0], v[1], v[2], &stats, true)?.0)
                }),
                "batch_norm train",
            );
        }
        assert_grad(
            grad_check(&[x.clone(), gamma.clone(), beta.clone()], seed, |g, v| {
                Ok(g.batch_norm(v[0], v[1], v[2], &stats, false)?.0)
            }),
            "batch_norm eval",
        );

        // Wavelet layers, every bank.
        for base in WaveletBase::ALL {
            let fb = FilterBank::new(base).unwrap();
            assert_grad(
                grad_check(std::slice::from_ref(&x), seed, |g, v| g.wavelet_average_pool(v[0], &fb)),
                "wavelet_average_pool",
            );
            assert_grad(
                grad_check(std::slice::from_ref(&x), seed, |g, v| {
                    g.wavelet_low_pass_pool(v[0], &fb, false)
                }),
                "wavelet_low_pass_pool",
            );
            for band in 0..4 {
                assert_grad(
                    grad_check(std::slice::from_ref(&x), seed, |g, v| Ok(g.dwt2d(v[0], &fb)?[band])),
                    "dwt2d",
                );
            }
        }

        // Dense head and losses.
        let d = c * h;
        let xs = Tensor::rand_uniform(&[n + 1, d], -1.0, 1.0, &mut r);
        let lw = Tensor::rand_uniform(&[d, 5], -1.0, 1.0, &mut r);
        let lb = Tensor::rand_uniform(&[5], -1.0, 1.0, &mut r);
        assert_grad(
            grad_check(&[xs.clone(), lw, lb], seed, |g, v| g.linear(v[0], v[1], v[2])),
            "linear",
        );
        let logits = Tensor::rand_uniform(&[n + 3, 10], -2.0, 2.0, &mut r);
        let labels: Vec<usize> = (0..n + 3).map(|i| (i * 7 + s) % 10).collect();
        assert_grad(
            grad_check(std::slice::from_ref(&logits), seed, |g, v| {
                g.cross_entropy_per_sample(v[0], &labels)
            }),
            "cross_entropy",
        );
        assert_grad(
            grad_check(std::slice::from_ref(&logits), seed, |g, v| {
                g.cw_margin(v[0], &labels, 0.0)
            }),
            "cw_margin",
        );
    }
}

#[test]
fn batch_norm_eval_uses_running_stats_only() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[2, 1, 2, 2], 3.0));
    let gamma = g.constant(Tensor::full(&[1], 2.0));
    let beta = g.constant(Tensor::full(&[1], 0.5));
    let stats = BnStats {
        mean: vec![1.0],
        var: vec![4.0],
    };
    let (y, upd) = g.batch_norm(x, gamma, beta, &stats, false).unwrap();
    assert!(upd.is_none());
    let want = 2.0 * (3.0 - 1.0) / (4.0f64 + 1e-5).sqrt() + 0.5;
    assert!(g.value(y).data().iter().all(|&v| (v as f64 - want).abs() < 1e-6));
    let (_, upd) = g.batch_norm(x, gamma, beta, &stats, true).unwrap();
    let upd = upd.unwrap();
    assert!((upd.mean[0] - (0.9 * 1.0 + 0.1 * 3.0)).abs() < 1e-6);
    assert!((upd.var[0] - 0.9 * 4.0).abs() < 1e-6);
}

#[test]
fn two_layer_network_gradients() {
    let mut r = rng(7);
    let x = away_from_zero(&[2, 2, 6, 6], 0.05, &mut r);
    let w1 = Tensor::rand_uniform(&[3, 2, 3, 3], -0.5, 0.5, &mut r);
    let w2 = Tensor::rand_uniform(&[27, 4], -0.5, 0.5, &mut r);
    let b2 = Tensor::rand_uniform(&[4], -0.5, 0.5, &mut r);
    let labels = [1usize, 3];
    let report = grad_check(&[x, w1, w2, b2], 7, |g, v| {
        let h = g.conv2d(v[0], v[1], 2, 1)?;
        let h = g.relu(h)?;
        let h = g.flatten(h)?;
        let z = g.linear(h, v[2], v[3])?;
        // Per-sample losses keep the f32 rounding of a single scalar out of the differences.
        g.cross_entropy_per_sample(z, &labels)
    });
    assert_grad(report, "two-layer net");
}

#[test]
fn deterministic_replay() {
    let run = || {
        let mut r = rng(9);
        let x = Tensor::rand_uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut r);
        let w = Tensor::rand_uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut r);
        let mut g = Graph::new();
        let (xv, wv) = (g.leaf(x, true), g.leaf(w, true));
        let y = g.conv2d(xv, wv, 1, 1).unwrap();
        let y = g.relu(y).unwrap();
        let l = g.sum(y).unwrap();
        g.backward(l).unwrap();
        (
            g.value(y).clone(),
            g.grad(wv).unwrap().to_vec(),
            g.grad(xv).unwrap().to_vec(),
        )
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn conv_oracle_property(seed in any::<u64>(), c in 1usize..4, k in 1usize..4, hw in 3usize..7, stride in 1usize..3, pad in 0usize..2) {
        let mut r = rng(seed);
        let x = Tensor::rand_uniform(&[2, c, hw, hw], -1.0, 1.0, &mut r);
        let w = Tensor::rand_uniform(&[k, c, 3, 3], -1.0, 1.0, &mut r);
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
        let y = g.conv2d(xv, wv, stride, pad).unwrap();
        for (a, b) in g.value(y).data().iter().zip(conv_oracle(&x, &w, stride, pad)) {
            prop_assert!((*a as f64 - b).abs() < 1e-6);
        }
    }
}
