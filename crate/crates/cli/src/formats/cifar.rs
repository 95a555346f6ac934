//! CIFAR-10 binary batches: back-to-back 3073-byte records, one label byte
//! followed by the red, green and blue 32×32 planes.

use super::read_file;
use crate::error::{Error, Result};
use ossl::data::{LabeledImageSet, SetRole};
use ossl::Tensor;
use std::path::Path;

pub const SIDE: usize = 32;
pub const PIXELS: usize = 3 * SIDE * SIDE;
pub const RECORD: usize = PIXELS + 1;
pub const CLASSES: usize = 10;

fn check_len(len: usize) -> Result<usize> {
    if len % RECORD != 0 {
        return Err(Error::Length {
            format: "cifar",
            expected: ((len / RECORD) * RECORD) as u64,
            found: len as u64,
        });
    }
    Ok(len / RECORD)
}

/// Decodes the concatenation of any number of batch files.
pub fn decode(name: &str, files: &[&[u8]]) -> Result<LabeledImageSet> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for bytes in files {
        let m = check_len(bytes.len())?;
        data.reserve(m * PIXELS);
        for (k, rec) in bytes.chunks_exact(RECORD).enumerate() {
            if usize::from(rec[0]) >= CLASSES {
                return Err(Error::Malformed {
                    format: "cifar",
                    offset: (k * RECORD) as u64,
                    reason: format!("label {} outside 0..{CLASSES}", rec[0]),
                });
            }
            labels.push(u16::from(rec[0]));
            data.extend(rec[1..].iter().map(|&b| f32::from(b) / 255.0));
        }
    }
    let images = Tensor::new([labels.len(), 3, SIDE, SIDE], data)?;
    Ok(LabeledImageSet::new(
        name,
        SetRole::Train,
        images,
        labels,
        CLASSES,
    )?)
}

pub fn load_cifar_bin(name: &str, paths: &[impl AsRef<Path>]) -> Result<LabeledImageSet> {
    let mut files = Vec::with_capacity(paths.len());
    for p in paths {
        let bytes = read_file(p.as_ref())?;
        check_len(bytes.len()).map_err(|e| e.in_file(p.as_ref()))?;
        files.push(bytes);
    }
    let slices: Vec<&[u8]> = files.iter().map(Vec::as_slice).collect();
    decode(name, &slices)
}
