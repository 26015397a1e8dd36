//! One function per subcommand. Tables go to `out.dir` and are echoed to stdout.

use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wwrn_core::attacks::nes_attack;
use wwrn_core::evaluation::{
    accuracy, decay_fit, dyadic_modulus, fourier_heat_map, gradcam as grad_cam, local_regularity, Probe, EVAL_BATCH,
};
use wwrn_core::experiment::{
    ablation_table, ablation_variants, base_variants, history_table, metrics_table, position_variants,
    robustness_metrics, write_heat_map, Sweep, METRIC_COLUMNS,
};
use wwrn_core::io::{load_checkpoint, save_checkpoint, write_csv, write_pgm, CsvTable, RunConfig};
use wwrn_core::model::{build_model, Model, WapPosition};
use wwrn_core::training::adversarial_train;
use wwrn_core::wavelet::{dwt2d, idwt2d, wap_lipschitz, FilterBank, WaveletBase};
use wwrn_core::{Error, Result, Tensor};

use crate::{data, SweepKind};

/// Residual bound of `check wavelet`.
const WAVELET_TOLERANCE: f64 = 1e-4;
/// Allowed distance between a fitted and a theoretical decay slope.
const SLOPE_TOLERANCE: f64 = 0.1;

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn config_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("key `{key}`: {msg}"))
}

/// Maps `--method` and `--epsilon` onto the attack or NES keys.
pub fn apply_attack_flags(cfg: &mut RunConfig, method: Option<&str>, epsilon: Option<&str>) -> Result<()> {
    let nes = method == Some("nes");
    if let Some(m) = method.filter(|_| !nes) {
        cfg.set("attack.method", m)?;
    }
    if let Some(e) = epsilon {
        cfg.set(if nes { "nes.epsilon" } else { "attack.epsilon" }, e)?;
    }
    Ok(())
}

/// Validates every typed view, logs the resolved configuration and writes it to
/// `<out.dir>/config.txt`.
pub fn echo_config(cfg: &RunConfig) -> Result<()> {
    cfg.model()?;
    cfg.train()?;
    cfg.attack()?;
    cfg.nes()?;
    let text = cfg.resolved_text();
    log::info!("resolved configuration:\n{text}");
    let dir = cfg.out_dir()?;
    std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    let path = dir.join("config.txt");
    std::fs::write(&path, text).map_err(io_at(&path))
}

fn emit(cfg: &RunConfig, file: &str, table: &CsvTable) -> Result<()> {
    let path = cfg.out_dir()?.join(file);
    write_csv(&path, table)?;
    print!("{}", String::from_utf8_lossy(&table.to_bytes()?));
    log::info!("wrote {}", path.display());
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn load(cfg: &RunConfig) -> Result<Model> {
    let path = cfg.checkpoint_path()?;
    let model = load_checkpoint(&path)?;
    log::info!("loaded {} ({} parameters)", path.display(), model.parameter_count());
    Ok(model)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let model_cfg = cfg.model()?;
    let tc = cfg.train()?;
    let (train, val) = data::train_val(cfg, &model_cfg)?;
    let init = build_model(&model_cfg, cfg.seed()?)?;
    log::info!(
        "training {} parameters on {} {} images, validating on {}",
        init.parameter_count(),
        train.len(),
        train.source,
        val.len()
    );
    let (best, history) = adversarial_train(&init, &train, &val, &tc)?;
    let path = cfg.checkpoint_path()?;
    save_checkpoint(&best, &path)?;
    log::info!("best epoch {}; checkpoint {}", history.best_epoch, path.display());
    emit(cfg, "history.csv", &history_table(&history)?)
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let model = load(cfg)?;
    let ds = data::test(cfg, model.config(), cfg.usize("eval.samples")?)?;
    let attack = cfg.attack()?;
    let metrics = robustness_metrics(&model, &ds, &attack, cfg.seed()?)?;
    let mut header = vec!["samples", "epsilon"];
    header.extend(METRIC_COLUMNS);
    let mut t = CsvTable::new("eval", &header);
    let mut row = vec![ds.len().to_string(), attack.epsilon.to_string()];
    row.extend(metrics.iter().map(|&v| fmt(v)));
    t.push(&row)?;
    emit(cfg, "eval.csv", &t)
}

pub fn attack(cfg: &RunConfig, nes: bool) -> Result<()> {
    let model = load(cfg)?;
    let ds = data::test(cfg, model.config(), cfg.usize("eval.samples")?)?;
    let seed = cfg.seed()?;
    let clean = accuracy(&model, &ds, None, seed)?;
    let (method, epsilon, robust, mean_queries) = if nes {
        let nc = cfg.nes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut held, mut queries) = (0usize, 0usize);
        for start in (0..ds.len()).step_by(EVAL_BATCH) {
            let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(ds.len())).collect();
            let (x, y) = ds.batch(&idx)?;
            let r = nes_attack(&model, &x, &y, &nc, &mut rng)?;
            held += r.success.iter().filter(|&&s| !s).count();
            queries += r.queries.iter().sum::<usize>();
        }
        let n = ds.len() as f64;
        ("nes", nc.epsilon, held as f64 / n, queries as f64 / n)
    } else {
        let ac = cfg.attack()?;
        let robust = accuracy(&model, &ds, Some(&ac), seed)?;
        (ac.method.as_str(), ac.epsilon, robust, 0.0)
    };
    let mut t = CsvTable::new(
        "attack",
        &[
            "method",
            "epsilon",
            "samples",
            "clean_accuracy",
            "robust_accuracy",
            "mean_queries",
        ],
    );
    t.push(&[
        method.to_string(),
        epsilon.to_string(),
        ds.len().to_string(),
        fmt(clean),
        fmt(robust),
        fmt(mean_queries),
    ])?;
    emit(cfg, "attack.csv", &t)
}

pub fn heatmap(cfg: &RunConfig) -> Result<()> {
    let model = load(cfg)?;
    let samples = cfg.usize("heatmap.samples")?;
    let ds = data::test(cfg, model.config(), samples)?;
    let grid = fourier_heat_map(
        &model,
        &ds,
        cfg.f32("heatmap.eps_f")?,
        samples,
        cfg.usize("heatmap.max_freq")?,
        cfg.seed()?,
    )?;
    let dir = cfg.out_dir()?;
    write_heat_map(&dir, "heatmap", &grid)?;
    let mean = grid.errors.iter().sum::<f64>() / grid.errors.len() as f64;
    println!(
        "heat map {}x{} over {} images, mean error {mean:.4}; wrote {}",
        grid.rows(),
        grid.cols(),
        grid.samples,
        dir.join("heatmap.{csv,pgm}").display()
    );
    Ok(())
}

pub fn gradcam(cfg: &RunConfig) -> Result<()> {
    let model = load(cfg)?;
    let index = cfg.usize("gradcam.index")?;
    let ds = data::test(cfg, model.config(), index + 1)?;
    if index >= ds.len() {
        return Err(config_err(
            "gradcam.index",
            format!("{index} but only {} test images", ds.len()),
        ));
    }
    let (x, y) = ds.batch(&[index])?;
    let class = match cfg.get("gradcam.class")? {
        "label" => y[0],
        "predicted" => model.predict(&x)?[0],
        other => other.parse().map_err(|_| {
            config_err(
                "gradcam.class",
                format!("`{other}` is not `label`, `predicted` or a class id"),
            )
        })?,
    };
    let map = grad_cam(&model, &x, class)?;
    let mut t = CsvTable::new("gradcam", &["row", "col", "value"]);
    for (k, &v) in map.values.iter().enumerate() {
        t.push(&[(k / map.width).to_string(), (k % map.width).to_string(), fmt(v)])?;
    }
    let dir = cfg.out_dir()?;
    write_pgm(dir.join("gradcam.pgm"), &map.values, map.height, map.width)?;
    let s = ds.image_size();
    let gray: Vec<f64> = (0..s * s)
        .map(|p| (0..3).map(|c| x.data()[c * s * s + p] as f64).sum::<f64>() / 3.0)
        .collect();
    write_pgm(dir.join("gradcam_input.pgm"), &gray, s, s)?;
    log::info!("image {index}, label {}, class {class}", y[0]);
    emit(cfg, "gradcam.csv", &t)
}

pub fn check_wavelet(cfg: &RunConfig) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed()?);
    let mut t = CsvTable::new(
        "wavelet_check",
        &["base", "orthogonal", "pr_max_abs", "parseval_rel", "wap_lipschitz"],
    );
    let mut failures = Vec::new();
    for base in WaveletBase::ALL {
        let fb = FilterBank::new(base)?;
        let (mut pr, mut parseval) = (0.0f64, 0.0f64);
        for _ in 0..50 {
            let x = Tensor::rand_uniform(&[1, 3, 32, 32], -1.0, 1.0, &mut rng);
            let s = dwt2d(&x, &fb)?;
            pr = pr.max(idwt2d(&s, &fb)?.max_abs_diff(&x) as f64);
            parseval = parseval.max((s.energy() - x.norm_sq()).abs() / x.norm_sq());
        }
        let orthogonal = base.is_orthogonal();
        if pr >= WAVELET_TOLERANCE || (orthogonal && parseval >= WAVELET_TOLERANCE) {
            failures.push(base.as_str());
        }
        t.push(&[
            base.as_str().to_string(),
            orthogonal.to_string(),
            format!("{pr:e}"),
            if orthogonal {
                format!("{parseval:e}")
            } else {
                String::new()
            },
            fmt(wap_lipschitz(&fb, 32)),
        ])?;
    }
    emit(cfg, "wavelet_check.csv", &t)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "residuals at or above {WAVELET_TOLERANCE} for {failures:?}"
        )))
    }
}

fn dyadic_scales(from: i32, to: i32) -> Vec<f64> {
    (from..=to).map(|j| 2f64.powi(-j)).collect()
}

pub fn check_theorems(cfg: &RunConfig) -> Result<()> {
    let grid = u32::try_from(cfg.usize("theorem.grid_log2")?).map_err(|e| config_err("theorem.grid_log2", e))?;
    let mut failures = Vec::new();
    // Banks with two or more vanishing moments annihilate the Lipschitz kink at the
    // edge of their support, so they are probed at alpha = 1/2 only.
    let decays = [
        (WaveletBase::Haar, 0.5, dyadic_scales(2, 9)),
        (WaveletBase::Haar, 1.0, dyadic_scales(2, 9)),
        (WaveletBase::Db5, 0.5, dyadic_scales(6, 9)),
        (WaveletBase::Sym4, 0.5, dyadic_scales(6, 9)),
        (WaveletBase::Coif4, 0.5, dyadic_scales(6, 9)),
    ];
    let b = 0.5;
    let mut t = CsvTable::new(
        "theorem_decay",
        &[
            "base",
            "alpha",
            "b",
            "scale",
            "coefficient",
            "fitted_slope",
            "theoretical_slope",
            "pass",
        ],
    );
    for (base, alpha, scales) in &decays {
        let fit = decay_fit(
            Probe::Holder {
                alpha: *alpha,
                center: b,
            },
            *base,
            scales,
            b,
            grid,
        )?;
        let pass = (fit.slope - fit.theoretical_slope).abs() <= SLOPE_TOLERANCE;
        if !pass {
            failures.push(format!("decay {base} alpha {alpha}: slope {:.4}", fit.slope));
        }
        for &(a, c) in &fit.samples {
            t.push(&[
                base.as_str().to_string(),
                alpha.to_string(),
                b.to_string(),
                format!("{a:e}"),
                format!("{c:e}"),
                fmt(fit.slope),
                fmt(fit.theoretical_slope),
                pass.to_string(),
            ])?;
        }
    }
    emit(cfg, "theorem_decay.csv", &t)?;

    let offsets: Vec<f64> = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|v| v * 2f64.powi(-9))
        .collect();
    let scales = dyadic_scales(6, 10);
    let mut t = CsvTable::new(
        "theorem_local",
        &["base", "alpha", "grid_log2", "max_ratio", "median_ratio", "holds"],
    );
    for (base, alpha) in [
        (WaveletBase::Haar, 0.5),
        (WaveletBase::Haar, 1.0),
        (WaveletBase::Db5, 0.5),
    ] {
        let r = local_regularity(base, alpha, 0.5, &offsets, &scales, grid)?;
        if !r.holds {
            failures.push(format!("local regularity {base} alpha {alpha}"));
        }
        for &(g, max, median) in &r.grids {
            t.push(&[
                base.as_str().to_string(),
                alpha.to_string(),
                g.to_string(),
                format!("{max:e}"),
                format!("{median:e}"),
                r.holds.to_string(),
            ])?;
        }
    }
    emit(cfg, "theorem_local.csv", &t)?;

    let mut t = CsvTable::new("theorem_dyadic", &["alpha", "j", "modulus", "bound", "halving_ratio"]);
    for alpha in [0.5, 1.0] {
        let steps = dyadic_modulus(alpha, 0.5, 4..=12, grid)?;
        for (k, s) in steps.iter().enumerate() {
            let ratio = if k == 0 {
                String::new()
            } else {
                fmt(s.modulus / steps[k - 1].modulus)
            };
            t.push(&[
                alpha.to_string(),
                s.j.to_string(),
                format!("{:e}", s.modulus),
                format!("{:e}", s.bound),
                ratio,
            ])?;
        }
    }
    emit(cfg, "theorem_dyadic.csv", &t)?;
    log::info!("biorthogonal banks have no orthogonal mother wavelet and are skipped");
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "theorem checks failed: {}",
            failures.join("; ")
        )))
    }
}

pub fn sweep(cfg: &RunConfig, kind: SweepKind) -> Result<()> {
    let model = cfg.model()?;
    let tc = cfg.train()?;
    let attack = cfg.attack()?;
    let (train, val) = data::train_val(cfg, &model)?;
    let test = data::test(cfg, &model, cfg.usize("eval.samples")?)?;
    let variants = match kind {
        SweepKind::Bases => {
            let bases = cfg
                .list("sweep.bases")?
                .iter()
                .map(|s| s.parse::<WaveletBase>().map_err(|e| config_err("sweep.bases", e)))
                .collect::<Result<Vec<_>>>()?;
            base_variants(&model, &bases)
        }
        SweepKind::Positions => {
            let positions = cfg
                .list("sweep.positions")?
                .iter()
                .map(|s| s.parse::<WapPosition>().map_err(|e| config_err("sweep.positions", e)))
                .collect::<Result<Vec<_>>>()?;
            position_variants(&model, &positions)
        }
        SweepKind::Ablation => ablation_variants(&model),
    };
    for (name, v) in &variants {
        v.validate()
            .map_err(|e| Error::Config(format!("variant {name}: {e}")))?;
    }
    let sweep = Sweep {
        train: &train,
        val: &val,
        test: &test,
        train_cfg: &tc,
        attack: &attack,
        seed: cfg.seed()?,
    };
    let results = sweep.run(&variants)?;
    let dir = cfg.out_dir()?;
    for r in &results {
        write_csv(dir.join(format!("history_{}.csv", r.name)), &history_table(&r.history)?)?;
    }
    let (file, table) = match kind {
        SweepKind::Bases => ("sweep_bases.csv", metrics_table("sweep_bases", "base", &results)?),
        SweepKind::Positions => (
            "sweep_positions.csv",
            metrics_table("sweep_positions", "position", &results)?,
        ),
        SweepKind::Ablation => ("sweep_ablation.csv", ablation_table(&results)?),
    };
    emit(cfg, file, &table)
}
