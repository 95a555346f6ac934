//! `OSSLEMB1`: backbone feature rows.
//!
//! ```text
//! "OSSLEMB1" | u32 M | u32 D | M·D f32 rows | M u16 labels
//! ```

use super::{product, read_file, write_file, Reader};
use crate::error::{Error, Result};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"OSSLEMB1";

#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub dim: usize,
    /// Row-major `M × dim`.
    pub rows: Vec<f32>,
    pub labels: Vec<u16>,
}

impl Embeddings {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Keeps the first `n` rows.
    pub fn truncate(&mut self, n: usize) {
        self.labels.truncate(n);
        self.rows.truncate(n * self.dim);
    }
}

pub fn decode(bytes: &[u8]) -> Result<Embeddings> {
    let mut r = Reader::new(bytes, "osslemb1");
    r.magic(MAGIC)?;
    let m = r.u32_le()? as usize;
    let dim = r.u32_le()? as usize;
    let n = product(&r, 8, &[m, dim])?;
    let expected = n
        .checked_mul(4)
        .and_then(|v| v.checked_add(16 + 2 * m))
        .ok_or_else(|| r.malformed(8, "header sizes overflow"))?;
    if expected != bytes.len() {
        return Err(Error::Length {
            format: "osslemb1",
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    let rows = r.f32_le(n)?;
    let labels = r.u16_le(m)?;
    r.finish()?;
    Ok(Embeddings { dim, rows, labels })
}

pub fn encode(e: &Embeddings) -> Result<Vec<u8>> {
    if e.rows.len() != e.labels.len() * e.dim {
        return Err(Error::Length {
            format: "osslemb1",
            expected: (e.labels.len() * e.dim) as u64,
            found: e.rows.len() as u64,
        });
    }
    let mut out = Vec::with_capacity(16 + e.rows.len() * 4 + e.labels.len() * 2);
    out.extend_from_slice(MAGIC);
    out.extend((e.labels.len() as u32).to_le_bytes());
    out.extend((e.dim as u32).to_le_bytes());
    e.rows.iter().for_each(|v| out.extend(v.to_le_bytes()));
    e.labels.iter().for_each(|l| out.extend(l.to_le_bytes()));
    Ok(out)
}

pub fn load_embeddings(path: &Path) -> Result<Embeddings> {
    decode(&read_file(path)?).map_err(|e| e.in_file(path))
}

pub fn save_embeddings(e: &Embeddings, path: &Path) -> Result<()> {
    write_file(path, &encode(e)?)
}
