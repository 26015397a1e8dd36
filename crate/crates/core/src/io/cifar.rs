//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by 1024 red,
//! 1024 green and 1024 blue bytes, each plane row-major 32x32.

use std::path::Path;

use super::dataset::{DataSource, Dataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RECORD_LEN: usize = 3073;
const PIXELS: usize = 3072;

pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(Error::format(
            (bytes.len() - bytes.len() % RECORD_LEN) as u64,
            format!("size {} is not a positive multiple of {RECORD_LEN}", bytes.len()),
        ));
    }
    let n = bytes.len() / RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * PIXELS);
    for (i, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        if rec[0] > 9 {
            return Err(Error::format(
                (i * RECORD_LEN) as u64,
                format!("label byte {} > 9", rec[0]),
            ));
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(Tensor::new(vec![n, 3, 32, 32], data)?, labels, 10, DataSource::Cifar10)
}

pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(super::at(path))?;
    parse_cifar10(&bytes).map_err(|e| match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

/// Inverse of [`parse_cifar10`] for 32x32 datasets (pixels rounded to bytes).
pub fn encode_cifar10(ds: &Dataset) -> Result<Vec<u8>> {
    if ds.images.shape()[1..] != [3, 32, 32] || ds.num_classes > 10 {
        return Err(Error::Input("only 10-class 3x32x32 datasets can be encoded".into()));
    }
    let mut out = Vec::with_capacity(ds.len() * RECORD_LEN);
    for i in 0..ds.len() {
        out.push(ds.labels[i] as u8);
        out.extend(
            ds.images
                .item(i)
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    Ok(out)
}

/// Loads and concatenates every `data_batch_*.bin` (or `test_batch.bin` when `test`)
/// under `root`, in name order.
pub fn load_cifar10_dir(root: impl AsRef<Path>, test: bool) -> Result<Dataset> {
    let root = root.as_ref();
    let mut files: Vec<_> = std::fs::read_dir(root)
        .map_err(super::at(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if test {
                name == "test_batch.bin"
            } else {
                name.starts_with("data_batch_") && name.ends_with(".bin")
            }
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Input(format!(
            "no CIFAR-10 batch files under {}",
            root.display()
        )));
    }
    let parts = files.iter().map(load_cifar10).collect::<Result<Vec<_>>>()?;
    let images = Tensor::concat(&parts.iter().map(|d| d.images.clone()).collect::<Vec<_>>())?;
    let labels = parts.into_iter().flat_map(|d| d.labels).collect();
    Dataset::new(images, labels, 10, DataSource::Cifar10)
}
