//! Binary model checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//! `"WWRN"`, version, config length, config text (UTF-8 `model.*` lines), tensor count,
//! then per tensor: name length, name, rank, dims, `f32` payload. A trailing CRC32 covers
//! every preceding byte.

use std::path::Path;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WWRN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut run = RunConfig::default();
    run.set_model(model.config());
    let text = run.model_text();
    let tensors = model.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, text.len());
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, tensors.len());
    for (name, t) in &tensors {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated: {what} needs {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    if bytes.is_empty() {
        return Err(Error::format(0, "empty checkpoint"));
    }
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic; not a checkpoint file"));
    }
    if bytes.len() < 12 {
        return Err(Error::format(bytes.len() as u64, "truncated header"));
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes([
        bytes[body_len],
        bytes[body_len + 1],
        bytes[body_len + 2],
        bytes[body_len + 3],
    ]);
    if crc32fast::hash(&bytes[..body_len]) != stored {
        return Err(Error::format(
            body_len as u64,
            "CRC32 mismatch; file is corrupt or truncated",
        ));
    }
    let mut r = Reader {
        bytes: &bytes[..body_len],
        pos: 8,
    };
    let text_len = r.u32("config length")?;
    let text_at = r.pos;
    let text = std::str::from_utf8(r.take(text_len, "config block")?)
        .map_err(|e| Error::format(text_at as u64, format!("config block is not UTF-8: {e}")))?;
    let cfg = RunConfig::parse(text)
        .and_then(|c| c.model())
        .map_err(|e| Error::format(text_at as u64, format!("config block: {e}")))?;
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let at = r.pos;
        let name_len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|e| Error::format(at as u64, format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32("rank")?;
        let shape = (0..rank).map(|_| r.u32("dimension")).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= bytes.len() / 4);
        let numel =
            numel.ok_or_else(|| Error::format(at as u64, format!("tensor `{name}` shape {shape:?} is too large")))?;
        let payload = r.take(numel * 4, "tensor payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != body_len {
        return Err(Error::format(
            r.pos as u64,
            format!("{} unexpected trailing bytes", body_len - r.pos),
        ));
    }
    Model::from_named_tensors(&cfg, tensors)
        .map_err(|e| Error::format(8, format!("tensors do not match the config: {e}")))
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(super::at(dir))?;
    }
    std::fs::write(path, encode_checkpoint(model)).map_err(super::at(path))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(super::at(path))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}
