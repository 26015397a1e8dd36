//! Train-and-evaluate drivers behind the sweep commands.

use std::path::Path;

use crate::attacks::{AttackConfig, AttackMethod};
use crate::error::Result;
use crate::evaluation::{accuracy, DecayFit, HeatMapGrid};
use crate::io::{write_csv, write_pgm, CsvTable, Dataset};
use crate::model::{build_model, Model, ModelConfig, WapPosition};
use crate::training::{adversarial_train, TrainConfig, TrainHistory};
use crate::wavelet::WaveletBase;

/// Metric columns: clean accuracy, then accuracy under each white-box attack.
pub const METRIC_COLUMNS: [&str; 5] = ["Clean", "FGSM", "PGD", "MIM", "CW"];

/// Accuracy on `ds` clean and under FGSM, PGD, MIM and CW, each configured by
/// [`AttackConfig::for_method`] with the budget, step size, steps and restarts of `base`.
pub fn robustness_metrics(model: &Model, ds: &Dataset, base: &AttackConfig, seed: u64) -> Result<[f64; 5]> {
    let mut out = [0.0; 5];
    out[0] = accuracy(model, ds, None, seed)?;
    for (slot, method) in out[1..].iter_mut().zip(AttackMethod::ALL) {
        let cfg = AttackConfig {
            epsilon: base.epsilon,
            step_size: base.step_size,
            steps: base.steps,
            random_init: base.random_init,
            restarts: base.restarts,
            ..AttackConfig::for_method(method)
        };
        *slot = accuracy(model, ds, Some(&cfg), seed)?;
    }
    Ok(out)
}

/// One trained configuration and its metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantResult {
    pub name: String,
    pub config: ModelConfig,
    pub history: TrainHistory,
    pub metrics: [f64; 5],
}

/// Shared inputs of a sweep.
pub struct Sweep<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub test: &'a Dataset,
    pub train_cfg: &'a TrainConfig,
    pub attack: &'a AttackConfig,
    /// Initialization seed shared by every variant.
    pub seed: u64,
}

impl Sweep<'_> {
    /// Builds each variant from the same seed, trains it and measures the metrics.
    pub fn run(&self, variants: &[(String, ModelConfig)]) -> Result<Vec<VariantResult>> {
        variants
            .iter()
            .map(|(name, cfg)| {
                log::info!("variant {name}: training");
                let model = build_model(cfg, self.seed)?;
                let (best, history) = adversarial_train(&model, self.train, self.val, self.train_cfg)?;
                let metrics = robustness_metrics(&best, self.test, self.attack, self.seed)?;
                log::info!("variant {name}: {metrics:?}");
                Ok(VariantResult {
                    name: name.clone(),
                    config: cfg.clone(),
                    history,
                    metrics,
                })
            })
            .collect()
    }
}

/// Variants differing only in the wavelet base.
pub fn base_variants(model: &ModelConfig, bases: &[WaveletBase]) -> Vec<(String, ModelConfig)> {
    bases
        .iter()
        .map(|&b| {
            let cfg = ModelConfig {
                wavelet_base: Some(b),
                ..model.clone()
            };
            (b.as_str().to_string(), cfg)
        })
        .collect()
}

/// Variants differing only in where the pooling stage sits.
pub fn position_variants(model: &ModelConfig, positions: &[WapPosition]) -> Vec<(String, ModelConfig)> {
    positions
        .iter()
        .map(|&p| {
            let cfg = ModelConfig {
                wap_position: p,
                ..model.clone()
            };
            (p.as_str().to_string(), cfg)
        })
        .collect()
}

/// The model with the pooling stage and its twin without it.
pub fn ablation_variants(model: &ModelConfig) -> Vec<(String, ModelConfig)> {
    let with = if model.wap_position == WapPosition::Disabled {
        ModelConfig {
            wap_position: WapPosition::AfterFinalRelu,
            ..model.clone()
        }
    } else {
        model.clone()
    };
    let without = ModelConfig {
        wap_position: WapPosition::Disabled,
        ..model.clone()
    };
    vec![("with_wap".into(), with), ("without_wap".into(), without)]
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per variant: the variant name, then [`METRIC_COLUMNS`].
pub fn metrics_table(kind: &str, key: &str, results: &[VariantResult]) -> Result<CsvTable> {
    let mut header = vec![key];
    header.extend(METRIC_COLUMNS);
    let mut t = CsvTable::new(kind, &header);
    for r in results {
        let mut row = vec![r.name.clone()];
        row.extend(r.metrics.iter().map(|&v| fmt(v)));
        t.push(&row)?;
    }
    Ok(t)
}

/// The two ablation rows followed by `delta = with_wap - without_wap`.
pub fn ablation_table(results: &[VariantResult]) -> Result<CsvTable> {
    let mut t = metrics_table("ablation", "variant", results)?;
    if let [with, without] = results {
        let mut row = vec!["delta".to_string()];
        row.extend(with.metrics.iter().zip(&without.metrics).map(|(a, b)| fmt(a - b)));
        t.push(&row)?;
    }
    Ok(t)
}

/// Per-epoch training log.
pub fn history_table(history: &TrainHistory) -> Result<CsvTable> {
    let mut t = CsvTable::new(
        "train_history",
        &[
            "epoch",
            "lr",
            "train_loss",
            "clean_val_acc",
            "robust_val_acc",
            "grad_norm",
            "best",
        ],
    );
    for r in &history.records {
        t.push(&[
            r.epoch.to_string(),
            format!("{}", r.lr),
            fmt(r.train_loss),
            fmt(r.clean_val_acc),
            fmt(r.robust_val_acc),
            fmt(r.grad_norm),
            (r.epoch == history.best_epoch).to_string(),
        ])?;
    }
    Ok(t)
}

/// One row per heat-map cell: `fi, fj, error_rate`.
pub fn heat_map_table(grid: &HeatMapGrid) -> Result<CsvTable> {
    let mut t = CsvTable::new("heatmap", &["fi", "fj", "error_rate"]);
    for (cell, &e) in grid.errors.iter().enumerate() {
        let (fi, fj) = grid.frequency(cell);
        t.push(&[fi.to_string(), fj.to_string(), fmt(e)])?;
    }
    Ok(t)
}

/// Writes `<stem>.csv` and `<stem>.pgm` (rows `fi`, columns `fj`) into `dir`.
pub fn write_heat_map(dir: &Path, stem: &str, grid: &HeatMapGrid) -> Result<()> {
    write_csv(dir.join(format!("{stem}.csv")), &heat_map_table(grid)?)?;
    write_pgm(dir.join(format!("{stem}.pgm")), &grid.errors, grid.rows(), grid.cols())
}

/// One row per scale of a decay fit, with the fitted and theoretical slopes repeated.
pub fn decay_table(fits: &[DecayFit]) -> Result<CsvTable> {
    let mut t = CsvTable::new(
        "decay_fit",
        &[
            "base",
            "alpha",
            "b",
            "scale",
            "coefficient",
            "fitted_slope",
            "theoretical_slope",
        ],
    );
    for f in fits {
        for &(a, c) in &f.samples {
            t.push(&[
                f.base.as_str().to_string(),
                f.alpha.to_string(),
                f.b.to_string(),
                format!("{a:e}"),
                format!("{c:e}"),
                fmt(f.slope),
                fmt(f.theoretical_slope),
            ])?;
        }
    }
    Ok(t)
}
