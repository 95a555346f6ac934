//! Binary containers: MNIST-style IDX, CIFAR-10 binary batches, the
//! `OSSLRAW1` image interchange format, `OSSLEMB1` embedding dumps and model
//! checkpoints.
//!
//! Each format has a pure `decode`/`encode` pair over byte slices plus thin
//! path-based wrappers that attach the file name to any error.

pub mod checkpoint;
pub mod cifar;
pub mod embeddings;
pub mod idx;
pub mod raw;

use crate::error::{Error, Result};
use std::path::Path;

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Cursor over a byte slice that reports offsets in its errors.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], format: &'static str) -> Self {
        Self {
            bytes,
            pos: 0,
            format,
        }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                format: self.format,
                offset: self.offset(),
                needed: n as u64,
                available: self.remaining() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8]) -> Result<()> {
        let n = expected.len().min(self.remaining());
        let found = &self.bytes[self.pos..self.pos + n];
        if found != expected {
            return Err(Error::BadMagic {
                format: self.format,
                expected: show_magic(expected),
                found: show_magic(found),
            });
        }
        self.pos += n;
        Ok(())
    }

    pub fn u32_be(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u32_le(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64_le(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32_le(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(checked_mul(self, n, 4)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub fn u16_le(&mut self, n: usize) -> Result<Vec<u16>> {
        let bytes = self.take(checked_mul(self, n, 2)?)?;
        Ok(bytes
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    /// Fails unless every byte has been consumed.
    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Length {
                format: self.format,
                expected: self.offset(),
                found: self.bytes.len() as u64,
            });
        }
        Ok(())
    }

    pub fn malformed(&self, offset: u64, reason: impl Into<String>) -> Error {
        Error::Malformed {
            format: self.format,
            offset,
            reason: reason.into(),
        }
    }
}

fn checked_mul(r: &Reader<'_>, a: usize, b: usize) -> Result<usize> {
    a.checked_mul(b)
        .ok_or_else(|| r.malformed(r.offset(), format!("element count {a} overflows")))
}

fn show_magic(bytes: &[u8]) -> String {
    if !bytes.is_empty() && bytes.iter().all(|b| b.is_ascii_graphic()) {
        format!("{:?}", String::from_utf8_lossy(bytes))
    } else {
        let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        format!("0x{hex}")
    }
}

/// Product of header dimensions, rejecting overflow.
pub(crate) fn product(r: &Reader<'_>, offset: u64, dims: &[usize]) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| r.malformed(offset, format!("dimensions {dims:?} overflow")))
    })
}
