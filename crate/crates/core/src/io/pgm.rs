//! Binary greyscale PGM (P5, 8-bit) with min-max scaling.

use std::path::Path;

use crate::error::{Error, Result};

/// Maps `values` (row-major `height x width`) linearly so the minimum becomes 0 and
/// the maximum 255. A constant image encodes as all zeros.
pub fn encode_pgm(values: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if values.len() != height * width || values.is_empty() {
        return Err(Error::dim(format!(
            "{} values for a {height}x{width} image",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("PGM values must be finite".into()));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, values: &[f64], height: usize, width: usize) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(super::at(dir))?;
    }
    std::fs::write(path, encode_pgm(values, height, width)?).map_err(super::at(path))?;
    Ok(())
}
