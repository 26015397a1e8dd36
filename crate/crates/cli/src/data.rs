//! Dataset selection from the `data.*` keys.

use wwrn_core::io::{load_cifar10_dir, synthetic_dataset, Dataset, RunConfig};
use wwrn_core::model::ModelConfig;
use wwrn_core::{Error, Result};

/// Seed offsets keep the synthetic splits disjoint draws of the same distribution.
const VAL_SEED: u64 = 0x7a1;
const TEST_SEED: u64 = 0x7e5;

fn check(ds: Dataset, model: &ModelConfig) -> Result<Dataset> {
    if ds.image_size() != model.input_size {
        return Err(Error::Config(format!(
            "key `model.input_size`: {} but the {} images are {}x{}",
            model.input_size,
            ds.source,
            ds.image_size(),
            ds.image_size()
        )));
    }
    if ds.num_classes != model.num_classes {
        return Err(Error::Config(format!(
            "key `model.num_classes`: {} but the {} data has {} classes",
            model.num_classes, ds.source, ds.num_classes
        )));
    }
    Ok(ds)
}

fn source(cfg: &RunConfig) -> Result<&str> {
    match cfg.get("data.source")? {
        s @ ("synthetic" | "cifar10") => Ok(s),
        other => Err(Error::Config(format!(
            "key `data.source`: `{other}` is not `synthetic` or `cifar10`"
        ))),
    }
}

/// Training and validation splits. CIFAR-10 takes both from the training batches.
pub fn train_val(cfg: &RunConfig, model: &ModelConfig) -> Result<(Dataset, Dataset)> {
    let (n_train, n_val) = (cfg.usize("data.train_size")?, cfg.usize("data.val_size")?);
    let seed = cfg.seed()?;
    let classes = model.num_classes;
    let (train, val) = match source(cfg)? {
        "synthetic" => (
            synthetic_dataset(classes, n_train, seed)?,
            synthetic_dataset(classes, n_val, seed.wrapping_add(VAL_SEED))?,
        ),
        _ => {
            let all = load_cifar10_dir(cfg.data_root()?, false)?;
            if n_train + n_val > all.len() {
                return Err(Error::Config(format!(
                    "keys `data.train_size` + `data.val_size` = {} exceed the {} training records",
                    n_train + n_val,
                    all.len()
                )));
            }
            let train = all.subset(&(0..n_train).collect::<Vec<_>>())?;
            let val = all.subset(&(n_train..n_train + n_val).collect::<Vec<_>>())?;
            (train, val)
        }
    };
    Ok((check(train, model)?, check(val, model)?))
}

/// The first `n` test images, or `data.test_size` when `n` is larger.
pub fn test(cfg: &RunConfig, model: &ModelConfig, n: usize) -> Result<Dataset> {
    let n = n.min(cfg.usize("data.test_size")?);
    let ds = match source(cfg)? {
        "synthetic" => synthetic_dataset(model.num_classes, n, cfg.seed()?.wrapping_add(TEST_SEED))?,
        _ => load_cifar10_dir(cfg.data_root()?, true)?.head(n)?,
    };
    check(ds, model)
}
