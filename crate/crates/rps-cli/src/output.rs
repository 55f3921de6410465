//! Artifact emission: fixed-layout CSV with 17-significant-digit floats,
//! pretty JSON, and the config hash used for traceability. Nothing here
//! writes timestamps or machine identifiers; bytes depend only on the
//! config and seed.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

/// One float cell: scientific notation with 16 fractional digits, i.e.
/// 17 significant digits, enough to round-trip any f64 exactly.
pub fn float_cell(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Buffered CSV writer with a fixed header written first.
pub struct CsvWriter {
    inner: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &str) -> io::Result<Self> {
        let mut inner = BufWriter::new(File::create(path)?);
        writeln!(inner, "{header}")?;
        Ok(CsvWriter { inner })
    }

    /// One row: leading label cells followed by float cells.
    pub fn row(&mut self, labels: &[String], floats: &[f64]) -> io::Result<()> {
        let mut cells = Vec::with_capacity(labels.len() + floats.len());
        cells.extend_from_slice(labels);
        cells.extend(floats.iter().map(|&x| float_cell(x)));
        writeln!(self.inner, "{}", cells.join(","))
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    text.push('\n');
    std::fs::write(path, text)
}
