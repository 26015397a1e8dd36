//! Flat `key = value` run configuration with typed views.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attacks::{AttackConfig, AttackMethod, NesConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PoolingVariant, WapPosition};
use crate::training::TrainConfig;
use crate::wavelet::WaveletBase;

/// Environment variable naming the dataset root; the only setting read from the environment.
pub const DATA_ROOT_ENV: &str = "WWRN_DATA_ROOT";

/// Every accepted key with its default value.
const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("data.source", "synthetic"),
    ("data.root", "data"),
    ("data.train_size", "2000"),
    ("data.val_size", "500"),
    ("data.test_size", "500"),
    ("model.depth", "1"),
    ("model.width", "1"),
    ("model.base_channels", "8"),
    ("model.num_classes", "10"),
    ("model.input_size", "32"),
    ("model.wavelet_base", "haar"),
    ("model.wap_position", "after_final_relu"),
    ("model.pooling", "wap"),
    ("model.lpf_half_scale", "false"),
    ("train.epochs", "10"),
    ("train.batch_size", "128"),
    ("train.lr", "0.1"),
    ("train.lr_milestones", ""),
    ("train.momentum", "0.9"),
    ("train.weight_decay", "5e-4"),
    ("train.epsilon", "0.031"),
    ("train.step_size", "2/255"),
    ("train.steps", "10"),
    ("train.random_init", "true"),
    ("train.val_limit", "0"),
    ("train.patience", "0"),
    ("train.augment", "false"),
    ("attack.method", "pgd"),
    ("attack.epsilon", "0.031"),
    ("attack.step_size", "2/255"),
    ("attack.steps", "20"),
    ("attack.random_init", "true"),
    ("attack.restarts", "1"),
    ("attack.decay", "1.0"),
    ("attack.kappa", "0"),
    ("nes.epsilon", "0.05"),
    ("nes.fd_eta", "0.01"),
    ("nes.lr", "0.01"),
    ("nes.max_queries", "10000"),
    ("nes.samples_per_step", "50"),
    ("eval.samples", "500"),
    ("heatmap.eps_f", "4.0"),
    ("heatmap.samples", "100"),
    ("heatmap.max_freq", "16"),
    ("gradcam.index", "0"),
    ("gradcam.class", "label"),
    ("sweep.bases", "haar,db5,sym4,coif4,bior3.1,rbio2.2"),
    (
        "sweep.positions",
        "after_first_conv,before_final_relu,after_final_relu,disabled",
    ),
    ("theorem.grid_log2", "16"),
    ("out.dir", "out"),
    ("checkpoint", ""),
];

/// Resolved configuration: every known key mapped to its current value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    /// Built-in defaults, with `data.root` taken from [`DATA_ROOT_ENV`] when set.
    fn default() -> Self {
        let mut values: BTreeMap<String, String> = KEYS.iter().map(|&(k, v)| (k.to_string(), v.to_string())).collect();
        if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
            values.insert("data.root".into(), root);
        }
        Self { values }
    }
}

/// Parses `"0.5"` or a ratio such as `"2/255"`.
pub fn parse_fraction(s: &str) -> Option<f64> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let (n, d) = (n.trim().parse::<f64>().ok()?, d.trim().parse::<f64>().ok()?);
            (d != 0.0).then_some(n / d)
        }
        None => s.parse().ok(),
    }
}

impl RunConfig {
    /// Defaults overridden by the `key = value` lines of `text`. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not `key=value`")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key `{key}`"))),
        }
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))
    }

    /// Every key in sorted order, one `key = value` per line.
    pub fn resolved_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Only the `model.*` lines, as stored in checkpoints.
    pub fn model_text(&self) -> String {
        self.values
            .iter()
            .filter(|(k, _)| k.starts_with("model."))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    fn typed<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{raw}`: {e}")))
    }

    fn number(&self, key: &str) -> Result<f64> {
        let raw = self.get(key)?;
        parse_fraction(raw).ok_or_else(|| Error::Config(format!("key `{key}`: `{raw}` is not a number")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::Config(format!("key `{key}`: `{other}` is not a boolean"))),
        }
    }

    /// Comma-separated list; empty entries are skipped.
    pub fn list(&self, key: &str) -> Result<Vec<String>> {
        Ok(self
            .get(key)?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect())
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.typed(key)
    }

    pub fn f32(&self, key: &str) -> Result<f32> {
        Ok(self.number(key)? as f32)
    }

    pub fn seed(&self) -> Result<u64> {
        self.typed("seed")
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        Ok(PathBuf::from(self.get("out.dir")?))
    }

    /// `checkpoint`, or `model.wwrn` inside the output directory when that key is empty.
    pub fn checkpoint_path(&self) -> Result<PathBuf> {
        match self.get("checkpoint")? {
            "" => Ok(self.out_dir()?.join("model.wwrn")),
            p => Ok(PathBuf::from(p)),
        }
    }

    pub fn data_root(&self) -> Result<PathBuf> {
        Ok(PathBuf::from(self.get("data.root")?))
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let base = match self.get("model.wavelet_base")? {
            "none" => None,
            name => Some(
                name.parse::<WaveletBase>()
                    .map_err(|e| Error::Config(format!("key `model.wavelet_base`: {e}")))?,
            ),
        };
        let cfg = ModelConfig {
            depth: self.usize("model.depth")?,
            width: self.usize("model.width")?,
            base_channels: self.usize("model.base_channels")?,
            num_classes: self.usize("model.num_classes")?,
            input_size: self.usize("model.input_size")?,
            wavelet_base: base,
            wap_position: self.typed::<WapPosition>("model.wap_position")?,
            pooling_variant: self.typed::<PoolingVariant>("model.pooling")?,
            lpf_half_scale: self.flag("model.lpf_half_scale")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes `cfg` into the `model.*` keys.
    pub fn set_model(&mut self, cfg: &ModelConfig) {
        let mut put = |k: &str, v: String| {
            self.values.insert(k.to_string(), v);
        };
        put("model.depth", cfg.depth.to_string());
        put("model.width", cfg.width.to_string());
        put("model.base_channels", cfg.base_channels.to_string());
        put("model.num_classes", cfg.num_classes.to_string());
        put("model.input_size", cfg.input_size.to_string());
        put(
            "model.wavelet_base",
            cfg.wavelet_base.map_or("none", |b| b.as_str()).to_string(),
        );
        put("model.wap_position", cfg.wap_position.as_str().to_string());
        put("model.pooling", cfg.pooling_variant.as_str().to_string());
        put("model.lpf_half_scale", cfg.lpf_half_scale.to_string());
    }

    pub fn attack(&self) -> Result<AttackConfig> {
        let method = self.typed::<AttackMethod>("attack.method")?;
        let cfg = AttackConfig {
            epsilon: self.f32("attack.epsilon")?,
            step_size: self.f32("attack.step_size")?,
            steps: self.usize("attack.steps")?,
            random_init: self.flag("attack.random_init")?,
            restarts: self.usize("attack.restarts")?,
            decay: self.f32("attack.decay")?,
            kappa: self.f32("attack.kappa")?,
            ..AttackConfig::for_method(method)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn nes(&self) -> Result<NesConfig> {
        let cfg = NesConfig {
            epsilon: self.f32("nes.epsilon")?,
            fd_eta: self.f32("nes.fd_eta")?,
            lr: self.f32("nes.lr")?,
            max_queries: self.usize("nes.max_queries")?,
            samples_per_step: self.usize("nes.samples_per_step")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Training settings. The validation adversary is the PGD attack of the training
    /// section; `epsilon = 0` trains naturally.
    pub fn train(&self) -> Result<TrainConfig> {
        let milestones = self
            .list("train.lr_milestones")?
            .iter()
            .map(|m| {
                m.parse::<usize>()
                    .map_err(|e| Error::Config(format!("key `train.lr_milestones`: `{m}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let train_attack = AttackConfig {
            epsilon: self.f32("train.epsilon")?,
            step_size: self.f32("train.step_size")?,
            steps: self.usize("train.steps")?,
            random_init: self.flag("train.random_init")?,
            ..AttackConfig::for_method(AttackMethod::Pgd)
        };
        let val_attack = if train_attack.epsilon > 0.0 {
            train_attack.clone()
        } else {
            AttackConfig {
                epsilon: self.f32("attack.epsilon")?,
                ..train_attack.clone()
            }
        };
        let cfg = TrainConfig {
            epochs: self.usize("train.epochs")?,
            batch_size: self.usize("train.batch_size")?,
            lr_initial: self.f32("train.lr")?,
            lr_milestones: milestones,
            momentum: self.f32("train.momentum")?,
            weight_decay: self.f32("train.weight_decay")?,
            train_attack,
            val_attack,
            val_limit: self.usize("train.val_limit")?,
            early_stop_patience: self.usize("train.patience")?,
            augment: self.flag("train.augment")?,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
