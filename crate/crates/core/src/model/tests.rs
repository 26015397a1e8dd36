use super::*;
use rand::Rng;

fn small(position: WapPosition) -> ModelConfig {
    ModelConfig {
        depth: 1,
        width: 1,
        base_channels: 4,
        wap_position: position,
        ..ModelConfig::default()
    }
}

fn batch(n: usize, seed: u64) -> Tensor {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::rand_uniform(&[n, 3, 32, 32], 0.0, 1.0, &mut r)
}

#[test]
fn output_shape_without_pooling() {
    let cfg = ModelConfig {
        depth: 1,
        width: 1,
        wavelet_base: None,
        wap_position: WapPosition::Disabled,
        ..ModelConfig::default()
    };
    let m = build_model(&cfg, 0).unwrap();
    assert_eq!(m.forward(&batch(2, 1), false).unwrap().shape(), &[2, 10]);
}

#[test]
fn pre_pool_map_sizes() {
    for (pos, side) in [
        (WapPosition::AfterFinalRelu, 4),
        (WapPosition::BeforeFinalRelu, 4),
        (WapPosition::AfterFirstConv, 4),
        (WapPosition::Disabled, 8),
    ] {
        let m = build_model(&small(pos), 3).unwrap();
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let x = g.constant(batch(1, 2));
        let f = m.features(&mut g, &p, x, false).unwrap();
        assert_eq!(g.shape(f.map), &[1, 16, side, side], "{pos}");
        assert_eq!(m.config().final_spatial(), side);
    }
}

#[test]
fn parameter_count_matches_closed_form() {
    for depth in 1..3 {
        for width in 1..3 {
            let cfg = ModelConfig {
                depth,
                width,
                base_channels: 4,
                num_classes: 7,
                ..ModelConfig::default()
            };
            let m = build_model(&cfg, 0).unwrap();
            assert_eq!(m.parameter_count(), cfg.parameter_count());
        }
    }
    // Hand count for depth 1, width 1, base 4, 10 classes.
    let stem = 3 * 4 * 9;
    let g0 = 2 * 4 + 4 * 4 * 9 + 2 * 4 + 4 * 4 * 9;
    let g1 = 2 * 4 + 4 * 8 * 9 + 2 * 8 + 8 * 8 * 9 + 4 * 8;
    let g2 = 2 * 8 + 8 * 16 * 9 + 2 * 16 + 16 * 16 * 9 + 8 * 16;
    let head = 2 * 16 + 16 * 10 + 10;
    assert_eq!(
        small(WapPosition::AfterFinalRelu).parameter_count(),
        stem + g0 + g1 + g2 + head
    );
}

#[test]
fn same_seed_same_parameters() {
    let cfg = small(WapPosition::AfterFinalRelu);
    let a = build_model(&cfg, 11).unwrap();
    let b = build_model(&cfg, 11).unwrap();
    let c = build_model(&cfg, 12).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn zero_input_gives_bias() {
    let mut m = build_model(&small(WapPosition::AfterFinalRelu), 5).unwrap();
    // With zero input every conv output is zero, BN in eval mode maps it to
    // -mean/std*gamma + beta = 0 for fresh stats, so the classifier sees zeros.
    *m.param_mut("fc.bias").unwrap() = Tensor::new(vec![10], (0..10).map(|i| i as f32 * 0.1).collect()).unwrap();
    let z = m.forward(&Tensor::zeros(&[2, 3, 32, 32]), false).unwrap();
    for row in 0..2 {
        for j in 0..10 {
            assert!((z.data()[row * 10 + j] - j as f32 * 0.1).abs() < 1e-7);
        }
    }
}

#[test]
fn pooling_variants_differ() {
    let wap = build_model(&small(WapPosition::AfterFinalRelu), 9).unwrap();
    let sub_cfg = ModelConfig {
        pooling_variant: PoolingVariant::Subsample,
        wavelet_base: None,
        ..small(WapPosition::AfterFinalRelu)
    };
    let sub = build_model(&sub_cfg, 9).unwrap();
    assert_eq!(wap.params(), sub.params());
    let x = batch(2, 4);
    let a = wap.forward(&x, false).unwrap();
    let b = sub.forward(&x, false).unwrap();
    assert!(a.max_abs_diff(&b) > 1e-4);
}

#[test]
fn ablation_twins_share_parameter_layout() {
    let on = build_model(&small(WapPosition::AfterFinalRelu), 1).unwrap();
    let off = build_model(&small(WapPosition::Disabled), 1).unwrap();
    assert_eq!(on.param_names(), off.param_names());
    assert_eq!(on.params(), off.params());
}

#[test]
fn config_validation() {
    let mut cfg = small(WapPosition::AfterFinalRelu);
    cfg.wavelet_base = None;
    assert!(matches!(build_model(&cfg, 0), Err(Error::Config(_))));
    let mut cfg = small(WapPosition::AfterFinalRelu);
    cfg.input_size = 36;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = small(WapPosition::Disabled);
    cfg.input_size = 36;
    cfg.wavelet_base = None;
    assert!(cfg.validate().is_ok());
    let mut cfg = small(WapPosition::AfterFirstConv);
    cfg.input_size = 12;
    assert!(cfg.validate().is_err());
    cfg.depth = 0;
    assert!(cfg.validate().is_err());
    assert_eq!(
        "before_final_relu".parse::<WapPosition>().unwrap(),
        WapPosition::BeforeFinalRelu
    );
    assert!("middle".parse::<WapPosition>().is_err());
}

#[test]
fn forward_rejects_wrong_shape() {
    let m = build_model(&small(WapPosition::AfterFinalRelu), 0).unwrap();
    assert!(matches!(
        m.forward(&Tensor::zeros(&[1, 3, 16, 16]), false),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn eval_forward_is_per_sample() {
    let m = build_model(&small(WapPosition::AfterFinalRelu), 2).unwrap();
    let x = batch(3, 6);
    let full = m.forward(&x, false).unwrap();
    let rev = m.forward(&x.select(&[2, 1, 0]).unwrap(), false).unwrap();
    for i in 0..3 {
        let one = m.forward(&x.select(&[i]).unwrap(), false).unwrap();
        assert_eq!(one.data(), full.item(i));
        assert_eq!(rev.item(2 - i), full.item(i));
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    for pos in [WapPosition::AfterFinalRelu, WapPosition::AfterFirstConv] {
        let m = build_model(&small(pos), 21).unwrap();
        let x = batch(2, 22);
        let labels = [3usize, 8];
        let loss_of = |t: &Tensor| -> f64 {
            let z = m.forward(t, false).unwrap();
            let mut total = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let row: Vec<f64> = z.item(i).iter().map(|&v| v as f64).collect();
                let mx = row.iter().cloned().fold(f64::MIN, f64::max);
                let lse = row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
                total += lse - row[y];
            }
            total
        };
        let mut g = Graph::new();
        let p = m.bind(&mut g, false);
        let xv = g.leaf(x.clone(), true);
        let (z, _) = m.forward_graph(&mut g, &p, xv, false).unwrap();
        let l = g.cross_entropy_per_sample(z, &labels).unwrap();
        let l = g.sum(l).unwrap();
        g.backward(l).unwrap();
        let grad = g.grad(xv).unwrap().to_vec();
        let scale = grad.iter().fold(0.0f32, |a, &b| a.max(b.abs())) as f64;
        let mut r = ChaCha8Rng::seed_from_u64(23);
        let floor = 1e-2 * scale;
        let central = |idx: usize, h: f32| {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[idx] += h;
            xm.data_mut()[idx] -= h;
            let step = (xp.data()[idx] as f64 - xm.data()[idx] as f64) / 2.0;
            (loss_of(&xp) - loss_of(&xm)) / (2.0 * step)
        };
        let mut checked = 0;
        for _ in 0..64 {
            if checked == 8 {
                break;
            }
            let idx = r.random_range(0..x.len());
            let numeric = central(idx, 1e-2);
            // The net is piecewise linear up to the loss, so a wide stencil keeps f32
            // rounding small. A ReLU switching inside the stencil makes the quotient
            // depend on the step; such pixels are not differentiable points and are redrawn.
            let half = central(idx, 5e-3);
            if (numeric - half).abs() > 2.5e-3 * numeric.abs().max(floor) {
                continue;
            }
            let a = grad[idx] as f64;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            assert!(rel < 1e-2, "{pos} pixel {idx}: analytic {a} numeric {numeric}");
            checked += 1;
        }
        assert_eq!(checked, 8, "{pos}: too few smooth pixels");
    }
}

#[test]
fn named_tensor_round_trip() {
    let mut m = build_model(&small(WapPosition::AfterFinalRelu), 30).unwrap();
    let mut g = Graph::new();
    let p = m.bind(&mut g, false);
    let x = g.constant(batch(4, 31));
    let (_, upd) = m.forward_graph(&mut g, &p, x, true).unwrap();
    m.commit_bn(upd).unwrap();
    let rebuilt = Model::from_named_tensors(m.config(), m.named_tensors()).unwrap();
    let probe = batch(2, 32);
    assert_eq!(
        m.forward(&probe, false).unwrap(),
        rebuilt.forward(&probe, false).unwrap()
    );
    let mut short = m.named_tensors();
    short.pop();
    assert!(Model::from_named_tensors(m.config(), short).is_err());
}
