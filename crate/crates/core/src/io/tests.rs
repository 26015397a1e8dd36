use super::*;
use crate::error::Error;
use crate::model::{build_model, ModelConfig, WapPosition};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn record(label: u8, fill: impl Fn(usize) -> u8) -> Vec<u8> {
    let mut r = vec![label];
    r.extend((0..3072).map(fill));
    r
}

#[test]
fn cifar_single_record() {
    let ds = parse_cifar10(&record(7, |_| 255)).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.labels, vec![7]);
    assert!(ds.images.data().iter().all(|&v| v == 1.0));
    assert_eq!(ds.source, DataSource::Cifar10);
}

#[test]
fn cifar_plane_layout() {
    // Red plane holds the row index, green the column, blue a constant.
    let bytes = record(3, |k| match k / 1024 {
        0 => ((k % 1024) / 32) as u8,
        1 => (k % 32) as u8,
        _ => 200,
    });
    let ds = parse_cifar10(&bytes).unwrap();
    let img = ds.images.item(0);
    assert_eq!(img[5 * 32 + 9], 5.0 / 255.0);
    assert_eq!(img[1024 + 5 * 32 + 9], 9.0 / 255.0);
    assert_eq!(img[2048 + 31 * 32 + 31], 200.0 / 255.0);
}

#[test]
fn cifar_format_errors() {
    let e = parse_cifar10(&vec![0u8; RECORD_LEN - 1]).unwrap_err();
    assert!(matches!(e, Error::Format { offset: 0, .. }), "{e}");
    assert!(matches!(parse_cifar10(&[]), Err(Error::Format { .. })));
    let mut two = record(1, |_| 0);
    two.extend(record(10, |_| 0));
    match parse_cifar10(&two) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, RECORD_LEN as u64),
        other => panic!("{other:?}"),
    }
}

#[test]
fn cifar_batch_sized_file() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut bytes = Vec::with_capacity(10_000 * RECORD_LEN);
    for _ in 0..10_000 {
        let label = r.random_range(0..10u8);
        bytes.extend(record(label, |k| (k * 7 % 256) as u8));
    }
    let ds = parse_cifar10(&bytes).unwrap();
    assert_eq!(ds.len(), 10_000);
    assert_eq!(ds.class_counts().iter().sum::<usize>(), 10_000);
    assert_eq!(encode_cifar10(&ds).unwrap(), bytes);
}

#[test]
fn synthetic_is_seeded_and_balanced() {
    let a = synthetic_dataset(3, 100, 5).unwrap();
    assert_eq!(a, synthetic_dataset(3, 100, 5).unwrap());
    assert_ne!(a.images, synthetic_dataset(3, 100, 6).unwrap().images);
    let counts = a.class_counts();
    let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
    assert!(hi - lo <= 1, "{counts:?}");
    assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(a.source, DataSource::Synthetic);
    assert!(synthetic_dataset(1, 10, 0).is_err());
}

#[test]
fn synthetic_two_class_is_linearly_separable() {
    // Logistic regression probe trained by full-batch gradient descent.
    let ds = synthetic_dataset(2, 200, 7).unwrap();
    let d = 3 * 32 * 32;
    let mean: Vec<f64> = (0..d)
        .map(|j| (0..ds.len()).map(|i| ds.images.item(i)[j] as f64).sum::<f64>() / ds.len() as f64)
        .collect();
    let x: Vec<Vec<f64>> = (0..ds.len())
        .map(|i| {
            ds.images
                .item(i)
                .iter()
                .zip(&mean)
                .map(|(&v, m)| v as f64 - m)
                .collect()
        })
        .collect();
    let t: Vec<f64> = ds.labels.iter().map(|&y| y as f64).collect();
    let (mut w, mut b) = (vec![0.0f64; d], 0.0f64);
    let lr = 5.0;
    for _ in 0..100 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (xi, &ti) in x.iter().zip(&t) {
            let z: f64 = xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            let err = 1.0 / (1.0 + (-z).exp()) - ti;
            gw.iter_mut().zip(xi).for_each(|(g, &v)| *g += err * v);
            gb += err;
        }
        let n = x.len() as f64;
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= lr * g / n);
        b -= lr * gb / n;
    }
    let correct = x
        .iter()
        .zip(&t)
        .filter(|(xi, &ti)| {
            let z: f64 = xi.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + b;
            (z > 0.0) == (ti > 0.5)
        })
        .count();
    assert!(correct as f64 / x.len() as f64 > 0.95, "{correct}/200");
}

#[test]
fn dataset_validation_and_split() {
    let ok = Tensor::full(&[4, 3, 2, 2], 0.5);
    assert!(Dataset::new(ok.clone(), vec![0, 1, 0], 2, DataSource::Synthetic).is_err());
    assert!(Dataset::new(ok.clone(), vec![0, 1, 0, 2], 2, DataSource::Synthetic).is_err());
    assert!(Dataset::new(Tensor::full(&[4, 3, 2, 2], 1.5), vec![0; 4], 2, DataSource::Synthetic).is_err());
    let ds = Dataset::new(ok, vec![0, 1, 0, 1], 2, DataSource::Synthetic).unwrap();
    let (train, val) = ds.split_validation(0.25).unwrap();
    assert_eq!((train.len(), val.len()), (3, 1));
    assert_eq!(val.labels, vec![1]);
}

fn small_model(seed: u64) -> crate::model::Model {
    let cfg = ModelConfig {
        depth: 1,
        width: 1,
        base_channels: 2,
        input_size: 8,
        wap_position: WapPosition::AfterFinalRelu,
        ..ModelConfig::default()
    };
    build_model(&cfg, seed).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let m = small_model(3);
    let bytes = encode_checkpoint(&m);
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back.config(), m.config());
    assert_eq!(back.named_tensors(), m.named_tensors());
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::rand_uniform(&[3, 3, 8, 8], 0.0, 1.0, &mut r);
    let (za, zb) = (m.forward(&x, false).unwrap(), back.forward(&x, false).unwrap());
    assert!(za.data().iter().zip(zb.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(encode_checkpoint(&back), bytes);
}

#[test]
fn checkpoint_corruption_is_detected() {
    let bytes = encode_checkpoint(&small_model(5));
    let mut r = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let mut bad = bytes.clone();
        let at = r.random_range(8..bytes.len());
        bad[at] ^= 1 << r.random_range(0..8);
        assert!(
            matches!(decode_checkpoint(&bad), Err(Error::Format { .. })),
            "flip at {at}"
        );
    }
    assert!(matches!(decode_checkpoint(&[]), Err(Error::Format { offset: 0, .. })));
    let mut wrong_version = bytes.clone();
    wrong_version[4] = 2;
    assert!(matches!(
        decode_checkpoint(&wrong_version),
        Err(Error::Format { offset: 4, .. })
    ));
    assert!(matches!(
        decode_checkpoint(b"NOPE...."),
        Err(Error::Format { offset: 0, .. })
    ));
    assert!(matches!(
        decode_checkpoint(&bytes[..bytes.len() - 9]),
        Err(Error::Format { .. })
    ));
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/model.wwrn");
    let m = small_model(7);
    save_checkpoint(&m, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap().named_tensors(), m.named_tensors());
}

#[test]
fn config_defaults_overrides_and_echo() {
    let text =
        "# comment\nseed = 9\nattack.step_size = 1/255\n\nmodel.wap_position = disabled\nmodel.wavelet_base = none\n";
    let mut cfg = RunConfig::parse(text).unwrap();
    assert_eq!(cfg.seed().unwrap(), 9);
    assert!((cfg.attack().unwrap().step_size - 1.0 / 255.0).abs() < 1e-9);
    assert_eq!(cfg.model().unwrap().wavelet_base, None);
    cfg.apply_overrides(&["train.epochs=3", "train.lr_milestones=1,2"])
        .unwrap();
    let train = cfg.train().unwrap();
    assert_eq!((train.epochs, train.lr_milestones.clone()), (3, vec![1, 2]));
    assert_eq!(RunConfig::parse(&cfg.resolved_text()).unwrap(), cfg);
}

#[test]
fn config_errors_name_the_key() {
    let e = RunConfig::parse("seed = 1\nbogus.key = 3\n").unwrap_err();
    assert!(
        matches!(&e, Error::Config(m) if m.contains("line 2") && m.contains("bogus.key")),
        "{e}"
    );
    let e = RunConfig::parse("train.lr = fast").unwrap().train().unwrap_err();
    assert!(matches!(&e, Error::Config(m) if m.contains("train.lr")), "{e}");
    assert!(RunConfig::parse("no equals sign").is_err());
    let mut cfg = RunConfig::default();
    assert!(cfg.apply_overrides(&["attack.method=laser"]).is_ok());
    assert!(matches!(cfg.attack(), Err(Error::Config(_))));
    assert!(cfg.apply_overrides(&["nope=1"]).is_err());
}

#[test]
fn config_model_keys_round_trip() {
    let m = ModelConfig {
        depth: 3,
        base_channels: 5,
        wap_position: WapPosition::AfterFirstConv,
        ..ModelConfig::default()
    };
    let mut cfg = RunConfig::default();
    cfg.set_model(&m);
    assert_eq!(cfg.model().unwrap(), m);
    assert!(cfg.model_text().lines().all(|l| l.starts_with("model.")));
}

#[test]
fn fractions() {
    assert_eq!(parse_fraction("2/255"), Some(2.0 / 255.0));
    assert_eq!(parse_fraction(" 0.5 "), Some(0.5));
    assert_eq!(parse_fraction("1/0"), None);
    assert_eq!(parse_fraction("x"), None);
}

#[test]
fn csv_round_trip_and_header() {
    let mut t = CsvTable::new("metrics", &["name", "value"]);
    t.push(&["clean", "0.5"]).unwrap();
    t.push(&["with,comma", "1"]).unwrap();
    assert!(t.push(&["short"]).is_err());
    let bytes = t.to_bytes().unwrap();
    assert!(bytes.starts_with(b"# wwrn-csv v1 metrics\nname,value\n"));
    assert_eq!(CsvTable::from_bytes(&bytes).unwrap(), t);
    assert!(CsvTable::from_bytes(b"name,value\n").is_err());
}

#[test]
fn pgm_encoding() {
    let bytes = encode_pgm(&[0.0, 1.0, 0.5, 2.0], 2, 2).unwrap();
    let header = b"P5\n2 2\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(&bytes[header.len()..], &[0, 128, 64, 255]);
    assert_eq!(&encode_pgm(&[3.0; 4], 2, 2).unwrap()[header.len()..], &[0; 4]);
    assert!(encode_pgm(&[1.0; 3], 2, 2).is_err());
}
