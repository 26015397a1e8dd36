use super::*;
use crate::attacks::{AttackConfig, LossKind};
use crate::autodiff::Graph;
use crate::io::{synthetic_dataset, DataSource};
use crate::model::{build_model, ModelConfig};
use crate::tensor::Tensor;
use crate::wavelet::WaveletBase;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Always predicts `class` with zero input gradient.
struct Constant {
    class: usize,
    classes: usize,
}

impl Classifier for Constant {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[0];
        Ok(Tensor::from_fn(&[n, self.classes], |i| {
            if i % self.classes == self.class {
                1.0
            } else {
                0.0
            }
        }))
    }

    fn loss_and_grad(&self, x: &Tensor, _: &[usize], _: LossKind, _: f32) -> Result<(Vec<f32>, Tensor)> {
        Ok((vec![0.0; x.shape()[0]], Tensor::zeros(x.shape())))
    }
}

/// Class 1 iff the energy outside the low-frequency square `|fi|, |fj| < cutoff`
/// exceeds `tau`, computed by a direct DFT of each channel.
struct HighFrequencyThreshold {
    cutoff: isize,
    tau: f64,
}

impl HighFrequencyThreshold {
    fn energy(&self, img: &[f32], s: usize) -> f64 {
        let total: f64 = img.iter().map(|&v| (v as f64).powi(2)).sum();
        let mut low = 0.0;
        for ch in img.chunks(s * s) {
            for fi in -(self.cutoff - 1)..self.cutoff {
                for fj in -(self.cutoff - 1)..self.cutoff {
                    let (mut re, mut im) = (0.0f64, 0.0f64);
                    for (k, &v) in ch.iter().enumerate() {
                        let ph =
                            -2.0 * std::f64::consts::PI * (fi as f64 * (k / s) as f64 + fj as f64 * (k % s) as f64)
                                / s as f64;
                        re += v as f64 * ph.cos();
                        im += v as f64 * ph.sin();
                    }
                    low += (re * re + im * im) / (s * s) as f64;
                }
            }
        }
        total - low
    }
}

impl Classifier for HighFrequencyThreshold {
    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape()[2];
        let n = x.shape()[0];
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            out.push(0.0);
            out.push((self.energy(x.item(i), s) - self.tau) as f32);
        }
        Tensor::new(vec![n, 2], out)
    }

    fn loss_and_grad(&self, _: &Tensor, _: &[usize], _: LossKind, _: f32) -> Result<(Vec<f32>, Tensor)> {
        Err(Error::Usage("not differentiable".into()))
    }
}

/// Smooth images: grey plus a one-cycle cosine, all labelled 0.
fn smooth_images(n: usize, s: usize) -> Dataset {
    let data = Tensor::from_fn(&[n, 3, s, s], |k| {
        let i = (k / s) % s;
        let phase = (k / (3 * s * s)) as f32;
        0.5 + 0.1 * (2.0 * std::f32::consts::PI * i as f32 / s as f32 + phase).cos()
    });
    Dataset::new(data, vec![0; n], 2, DataSource::Synthetic).unwrap()
}

fn tiny_model(seed: u64, classes: usize) -> crate::model::Model {
    let cfg = ModelConfig {
        depth: 1,
        width: 1,
        base_channels: 2,
        num_classes: classes,
        input_size: 8,
        ..ModelConfig::default()
    };
    build_model(&cfg, seed).unwrap()
}

#[test]
fn constant_model_on_its_own_class() {
    let ds = smooth_images(7, 8);
    let m = Constant { class: 0, classes: 2 };
    assert_eq!(accuracy(&m, &ds, None, 0).unwrap(), 1.0);
    assert_eq!(accuracy(&m, &ds, Some(&AttackConfig::default()), 0).unwrap(), 1.0);
}

#[test]
fn random_model_is_at_chance() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let n = 2000;
    let images = Tensor::rand_uniform(&[n, 3, 4, 4], 0.0, 1.0, &mut r);
    let ds = Dataset::new(images, (0..n).map(|i| i % 10).collect(), 10, DataSource::Synthetic).unwrap();
    let model =
        crate::attacks::LinearClassifier::new(Tensor::randn(&[48, 10], 1.0, &mut r), Tensor::zeros(&[10])).unwrap();
    let acc = accuracy(&model, &ds, None, 0).unwrap();
    let sd = (0.1f64 * 0.9 / n as f64).sqrt();
    assert!((acc - 0.1).abs() < 4.0 * sd, "accuracy {acc}");
}

#[test]
fn zero_budget_attack_matches_clean_accuracy() {
    let m = tiny_model(2, 2);
    let ds = synthetic_dataset(2, 20, 3).unwrap();
    let ds = Dataset::new(
        Tensor::from_fn(&[20, 3, 8, 8], |k| {
            let (i, rest) = (k / 192, k % 192);
            ds.images.item(i)[(rest / 64) * 1024 + ((rest % 64) / 8) * 4 * 32 + (rest % 8) * 4]
        }),
        ds.labels.clone(),
        2,
        DataSource::Synthetic,
    )
    .unwrap();
    let clean = accuracy(&m, &ds, None, 4).unwrap();
    let zero = AttackConfig {
        epsilon: 0.0,
        ..AttackConfig::default()
    };
    assert_eq!(accuracy(&m, &ds, Some(&zero), 4).unwrap(), clean);
    assert!(accuracy(&m, &smooth_images(1, 8).head(1).unwrap(), None, 0).is_ok());
}

#[test]
fn fourier_basis_is_unit_norm() {
    for (fi, fj) in [(0isize, 0usize), (1, 0), (-3, 5), (16, 16), (-16, 0), (7, 16)] {
        let p = fourier_perturbation(32, fi, fj, 4.0, [1.0, -1.0, 1.0]).unwrap();
        for ch in p.data().chunks(1024) {
            let norm = ch.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 4.0).abs() < 1e-5, "({fi}, {fj}): {norm}");
        }
    }
    assert!(matches!(fourier_basis(32, 17, 0), Err(Error::Dimension(_))));
}

#[test]
fn heat_map_of_a_constant_model_is_zero() {
    let ds = smooth_images(3, 8);
    let grid = fourier_heat_map(&Constant { class: 0, classes: 2 }, &ds, 4.0, 3, 4, 0).unwrap();
    assert_eq!((grid.rows(), grid.cols()), (9, 5));
    assert!(grid.errors.iter().all(|&e| e == 0.0));
    assert!(matches!(
        fourier_heat_map(&Constant { class: 0, classes: 2 }, &ds, 4.0, 3, 5, 0),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn threshold_classifier_fails_only_at_high_frequencies() {
    let s = 16;
    let ds = smooth_images(4, s);
    let eps = 2.0f32;
    let cutoff = 5;
    let model = HighFrequencyThreshold {
        cutoff,
        tau: (eps * eps) as f64,
    };
    assert_eq!(accuracy(&model, &ds, None, 0).unwrap(), 1.0);
    let grid = fourier_heat_map(&model, &ds, eps, 4, 8, 1).unwrap();
    for cell in 0..grid.errors.len() {
        let (fi, fj) = grid.frequency(cell);
        let high = fi.abs() >= cutoff || fj as isize >= cutoff;
        let want = if high { 1.0 } else { 0.0 };
        assert_eq!(grid.errors[cell], want, "cell ({fi}, {fj})");
    }
}

#[test]
fn heat_map_is_seeded_and_converges() {
    let m = tiny_model(5, 2);
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let n = 400;
    let images = Tensor::rand_uniform(&[n, 3, 8, 8], 0.2, 0.8, &mut r);
    let ds = Dataset::new(images, (0..n).map(|i| i % 2).collect(), 2, DataSource::Synthetic).unwrap();
    let a = fourier_heat_map(&m, &ds, 1.0, 200, 4, 7).unwrap();
    assert_eq!(a, fourier_heat_map(&m, &ds, 1.0, 200, 4, 7).unwrap());
    let b = fourier_heat_map(&m, &ds, 1.0, 400, 4, 7).unwrap();
    let mean: f64 = a.errors.iter().zip(&b.errors).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.errors.len() as f64;
    assert!(mean < 0.05, "mean change {mean}");
    assert!(a.errors.iter().all(|e| (0.0..=1.0).contains(e)));
    // Conjugate cells mirror each other.
    assert_eq!(a.get(-2, 0), a.get(2, 0));
}

#[test]
fn gradcam_of_a_mean_score_head_is_the_first_map() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let (k, h, w) = (3, 4, 4);
    let features = Tensor::randn(&[1, k, h, w], 1.0, &mut r);
    let head = |g: &mut Graph, a| {
        let pooled = g.avg_pool2d(a, h)?;
        let flat = g.flatten(pooled)?;
        let wt = g.constant(Tensor::from_fn(&[k, 2], |i| if i / 2 == 0 { 1.0 } else { 0.0 }));
        let b = g.constant(Tensor::zeros(&[2]));
        g.linear(flat, wt, b)
    };
    let cam = gradcam_with_head(&features, 1, head).unwrap();
    assert!((cam.alphas[0] - 1.0 / (h * w) as f64).abs() < 1e-9);
    assert!(cam.alphas[1..].iter().all(|&a| a == 0.0));
    let relu: Vec<f64> = features.data()[..h * w].iter().map(|&v| (v as f64).max(0.0)).collect();
    let (lo, hi) = relu
        .iter()
        .fold((f64::MAX, f64::MIN), |(l, u), &v| (l.min(v), u.max(v)));
    for (c, v) in cam.values.iter().zip(&relu) {
        assert!((c - (v - lo) / (hi - lo)).abs() < 1e-6);
    }
}

#[test]
fn gradcam_ignores_logit_shifts() {
    let mut m = tiny_model(9, 3);
    let mut r = ChaCha8Rng::seed_from_u64(10);
    let x = Tensor::rand_uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut r);
    let before = gradcam(&m, &x, 2).unwrap();
    m.param_mut("fc.bias")
        .unwrap()
        .data_mut()
        .iter_mut()
        .for_each(|b| *b += 5.0);
    assert_eq!(gradcam(&m, &x, 2).unwrap(), before);
    assert!(before.values.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(matches!(gradcam(&m, &x, 3), Err(Error::Input(_))));
    assert!(matches!(
        gradcam(&m, &Tensor::zeros(&[2, 3, 8, 8]), 0),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn gradcam_weights_match_finite_differences() {
    let mut cfg = tiny_model(11, 4).config().clone();
    cfg.wap_position = crate::model::WapPosition::Disabled;
    let m = build_model(&cfg, 11).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(12);
    let x = Tensor::rand_uniform(&[1, 3, 8, 8], 0.0, 1.0, &mut r);
    let class = 1;
    let cam = gradcam(&m, &x, class).unwrap();
    let mut g = Graph::new();
    let p = m.bind(&mut g, false);
    let xv = g.constant(x);
    let map = m.features(&mut g, &p, xv, false).unwrap().map;
    let a = g.value(map).clone();
    let [_, k, h, w] = a.dims4().unwrap();
    let score = |t: &Tensor| -> f64 {
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let v = g.constant(t.clone());
        let z = m.head(&mut g, &p, v).unwrap();
        g.value(z).data()[class] as f64
    };
    let step = 1e-2f32;
    for ch in 0..k {
        let (mut up, mut down) = (a.clone(), a.clone());
        for i in 0..h * w {
            up.data_mut()[ch * h * w + i] += step;
            down.data_mut()[ch * h * w + i] -= step;
        }
        let fd = (score(&up) - score(&down)) / (2.0 * step as f64 * (h * w) as f64);
        let an = cam.alphas[ch];
        let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-3);
        assert!(rel < 1e-2, "channel {ch}: analytic {an} numeric {fd}");
    }
}

fn dyadic(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|j| (-(j as f64)).exp2()).collect()
}

#[test]
fn haar_decay_slopes_follow_alpha() {
    let scales = dyadic(2, 9);
    let lip = theorem_decay_check(WaveletBase::Haar, 1.0, &scales, 0.5).unwrap();
    assert!((lip.slope - 1.5).abs() < 0.1, "{}", lip.slope);
    assert_eq!(lip.theoretical_slope, 1.5);
    let half = theorem_decay_check(WaveletBase::Haar, 0.5, &scales, 0.5).unwrap();
    assert!((half.slope - 1.0).abs() < 0.1, "{}", half.slope);
    assert!(half.samples.windows(2).all(|w| w[1].0 < w[0].0));
    assert!(half.samples.iter().all(|s| s.1 >= 0.0));
}

#[test]
fn smooth_probe_decays_at_least_at_the_lipschitz_rate() {
    // The leading term is exactly a^{3/2}; the next one bends the fit by about
    // a^2, so the finest scales are used and a 1% allowance covers what remains.
    let fit = decay_fit(Probe::Sine { freq: 1.0 }, WaveletBase::Haar, &dyadic(5, 11), 0.3, 20).unwrap();
    assert!(fit.slope >= 1.5 - 1e-2, "{}", fit.slope);
}

#[test]
fn decay_fits_for_other_orthogonal_banks() {
    // These banks have at least two vanishing moments, so a Lipschitz kink at the
    // left edge of the support gives a vanishing integral; alpha = 1/2 does not.
    for base in [WaveletBase::Db5, WaveletBase::Sym4, WaveletBase::Coif4] {
        let fit = theorem_decay_check(base, 0.5, &dyadic(6, 9), 0.5).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.1, "{base}: {}", fit.slope);
    }
}

#[test]
fn decay_fit_is_grid_stable() {
    let scales = dyadic(3, 8);
    let probe = Probe::Holder {
        alpha: 0.5,
        center: 0.4,
    };
    let coarse = decay_fit(probe, WaveletBase::Haar, &scales, 0.4, 14).unwrap();
    let fine = decay_fit(probe, WaveletBase::Haar, &scales, 0.4, 16).unwrap();
    assert!((coarse.slope - fine.slope).abs() < 0.02);
}

#[test]
fn decay_check_errors() {
    let e = theorem_decay_check(WaveletBase::Haar, 1.0, &[0.25, 2f64.powi(-13)], 0.5).unwrap_err();
    assert!(matches!(e, Error::Resolution(_)), "{e}");
    assert!(matches!(
        theorem_decay_check(WaveletBase::Rbio2_2, 1.0, &[0.5, 0.25], 0.5),
        Err(Error::UnsupportedBase { .. })
    ));
    assert!(theorem_decay_check(WaveletBase::Haar, 1.5, &[0.5, 0.25], 0.5).is_err());
    assert!(theorem_decay_check(WaveletBase::Haar, 1.0, &[0.25, 0.5], 0.5).is_err());
}

#[test]
fn zero_offset_reduces_to_the_decay_bound() {
    let scales = dyadic(4, 8);
    let fit = theorem_decay_check(WaveletBase::Haar, 0.5, &scales, 0.3).unwrap();
    let report = local_regularity(WaveletBase::Haar, 0.5, 0.3, &[0.0], &scales, DEFAULT_GRID_LOG2).unwrap();
    // With b = 0 the ratio is |c| / a^{alpha + 1/2}.
    let ratios: Vec<f64> = fit.samples.iter().map(|&(a, c)| c / a.powf(1.0)).collect();
    let max = ratios.iter().cloned().fold(0.0, f64::max);
    assert!((report.grids[0].1 - max).abs() < 1e-12 * max);
}

#[test]
fn local_regularity_holds_for_holder_probes() {
    let scales = dyadic(6, 10);
    let offsets: Vec<f64> = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|v| v * 2f64.powi(-9))
        .collect();
    for alpha in [0.5, 1.0] {
        let r = local_regularity(WaveletBase::Haar, alpha, 0.5, &offsets, &scales, DEFAULT_GRID_LOG2).unwrap();
        assert!(r.holds, "alpha {alpha}: {r:?}");
        assert!(r.grids.iter().all(|&(_, max, median)| max < 10.0 * median), "{r:?}");
        assert!(r.log_refined_max.is_finite());
    }
    assert!(theorem_local_regularity_check(WaveletBase::Db5, 0.5, 0.5, &offsets, &scales).unwrap());
}

#[test]
fn dyadic_modulus_halves_for_lipschitz_probe() {
    let steps = dyadic_modulus(1.0, 0.5, 3..=10, DEFAULT_GRID_LOG2).unwrap();
    for w in steps.windows(2) {
        let ratio = w[1].modulus / w[0].modulus;
        assert!((ratio - 0.5).abs() <= 0.1, "{ratio}");
        assert!((w[1].bound / w[0].bound - 0.5).abs() < 1e-12);
    }
    assert!(steps.iter().all(|s| s.modulus <= s.bound * (1.0 + 1e-9)));
    assert!(dyadic_modulus(1.0, 0.5, 5..=5, 16).is_err());
}
