//! Datasets, run configuration, checkpoints and result files.

mod checkpoint;
mod cifar;
mod config;
mod csv;
mod dataset;
mod pgm;
mod synthetic;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use cifar::{encode_cifar10, load_cifar10, load_cifar10_dir, parse_cifar10, RECORD_LEN};
pub use config::{parse_fraction, RunConfig, DATA_ROOT_ENV};
pub use csv::{read_csv, write_csv, CsvTable, CSV_SCHEMA_VERSION};
pub use dataset::{DataSource, Dataset};
pub use pgm::{encode_pgm, write_pgm};
pub use synthetic::{synthetic_dataset, synthetic_dataset_with, SyntheticConfig};

/// Attaches the offending path to an I/O error.
fn at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> crate::Error + '_ {
    move |e| crate::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests;
