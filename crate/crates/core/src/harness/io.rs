//! CSV tables, binary field snapshots and file digests.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spectral::ScalarField;

/// Shortest round-trip form, scientific for very small or large magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Accumulates rows and writes them in one go.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(path.to_path_buf())
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<PathBuf> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(path.to_path_buf())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_bytes(b: &[u8]) -> String {
    hex::encode(Sha256::digest(b))
}

/// First line of a snapshot file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub n: usize,
    pub time: f64,
    pub field: String,
    /// Always `"half_spectrum_row_major_k1_k2"`: index `i1·(n/2+1) + i2`.
    pub layout: String,
    /// Number of complex coefficients that follow.
    pub len: usize,
    /// Always `"f64_le_re_im"`.
    pub encoding: String,
}

const LAYOUT: &str = "half_spectrum_row_major_k1_k2";
const ENCODING: &str = "f64_le_re_im";

/// Writes a JSON header line followed by the raw coefficients.
pub fn write_snapshot<T: Real>(path: &Path, field: &ScalarField<T>, name: &str, time: f64) -> Result<PathBuf> {
    let c = field.coefficients();
    let header = SnapshotHeader {
        n: field.n(),
        time,
        field: name.to_string(),
        layout: LAYOUT.into(),
        len: c.len(),
        encoding: ENCODING.into(),
    };
    let mut f = std::io::BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut f, &header)?;
    f.write_all(b"\n")?;
    for z in c {
        f.write_all(&z.re.to_f64_lossy().to_le_bytes())?;
        f.write_all(&z.im.to_f64_lossy().to_le_bytes())?;
    }
    f.flush()?;
    Ok(path.to_path_buf())
}

pub fn read_snapshot(path: &Path) -> Result<(SnapshotHeader, ScalarField<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: SnapshotHeader = serde_json::from_str(line.trim_end())?;
    if header.layout != LAYOUT || header.encoding != ENCODING {
        return Err(Error::Config(format!("unsupported snapshot format in {}", path.display())));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 16 * header.len {
        return Err(Error::Config(format!("truncated snapshot {}", path.display())));
    }
    let coef = bytes
        .chunks_exact(16)
        .map(|b| {
            let re = f64::from_le_bytes(b[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(b[8..].try_into().expect("8 bytes"));
            Complex::new(re, im)
        })
        .collect();
    let field = ScalarField::from_coefficients(header.n, coef)?;
    Ok((header, field))
}
