//! Versioned CSV tables: a `# wwrn-csv v1 <kind>` comment line, a header row, data rows.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvTable {
    /// Schema name written in the comment line, e.g. `metrics` or `heatmap`.
    pub kind: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(kind: &str, header: &[&str]) -> Self {
        Self {
            kind: kind.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: ToString>(&mut self, row: &[S]) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Usage(format!(
                "{} table row has {} fields, header has {}",
                self.kind,
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row.iter().map(|s| s.to_string()).collect());
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = format!("# wwrn-csv v{CSV_SCHEMA_VERSION} {}\n", self.kind).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&self.header).map_err(csv_err)?;
            for row in &self.rows {
                w.write_record(row).map_err(csv_err)?;
            }
            w.flush()?;
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(0, "missing schema comment line"))?;
        let first = std::str::from_utf8(&bytes[..nl]).map_err(|e| Error::format(0, e.to_string()))?;
        let prefix = format!("# wwrn-csv v{CSV_SCHEMA_VERSION} ");
        let kind = first
            .strip_prefix(&prefix)
            .ok_or_else(|| Error::format(0, format!("expected `{prefix}<kind>`, got `{first}`")))?;
        let mut r = csv::Reader::from_reader(&bytes[nl + 1..]);
        let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(csv_err))
            .collect::<Result<_>>()?;
        Ok(Self {
            kind: kind.to_string(),
            header,
            rows,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    Error::format(offset, e.to_string())
}

pub fn write_csv(path: impl AsRef<Path>, table: &CsvTable) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(super::at(dir))?;
    }
    let mut f = std::fs::File::create(path).map_err(super::at(path))?;
    f.write_all(&table.to_bytes()?).map_err(super::at(path))?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<CsvTable> {
    let path = path.as_ref();
    CsvTable::from_bytes(&std::fs::read(path).map_err(super::at(path))?).map_err(|e| match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}
