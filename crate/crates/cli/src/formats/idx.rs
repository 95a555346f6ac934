//! IDX files as distributed with MNIST: a big-endian magic word
//! `0x0000_08_0d` (unsigned bytes, `d` dimensions), `d` big-endian `u32`
//! sizes, then the raw bytes.

use super::{product, read_file, Reader};
use crate::error::{Error, Result};
use ossl::data::{LabeledImageSet, SetRole};
use ossl::Tensor;
use std::path::Path;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Classes assumed for IDX label files, which carry no class count.
pub const IDX_CLASSES: usize = 10;

/// Raw image bytes: `(count, rows, cols, pixels)`.
pub fn decode_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let mut r = Reader::new(bytes, "idx images");
    r.magic(&IMAGES_MAGIC.to_be_bytes())?;
    let n = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    let len = product(&r, 4, &[n, rows, cols])?;
    let pixels = r.take(len)?;
    r.finish()?;
    Ok((n, rows, cols, pixels))
}

pub fn decode_labels(bytes: &[u8]) -> Result<&[u8]> {
    let mut r = Reader::new(bytes, "idx labels");
    r.magic(&LABELS_MAGIC.to_be_bytes())?;
    let n = r.u32_be()? as usize;
    let labels = r.take(n)?;
    r.finish()?;
    Ok(labels)
}

/// Pairs an image file with a label file; pixels become `byte / 255`.
pub fn decode(name: &str, images: &[u8], labels: &[u8]) -> Result<LabeledImageSet> {
    let (n, rows, cols, pixels) = decode_images(images)?;
    let labels = decode_labels(labels)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n as u64,
            labels: labels.len() as u64,
        });
    }
    let data = pixels.iter().map(|&b| f32::from(b) / 255.0).collect();
    let images = Tensor::new([n, 1, rows, cols], data)?;
    let labels = labels.iter().map(|&l| u16::from(l)).collect();
    Ok(LabeledImageSet::new(
        name,
        SetRole::Train,
        images,
        labels,
        IDX_CLASSES,
    )?)
}

pub fn load_idx(name: &str, images: &Path, labels: &Path) -> Result<LabeledImageSet> {
    let img = read_file(images)?;
    let lab = read_file(labels)?;
    decode_images(&img).map_err(|e| e.in_file(images))?;
    decode_labels(&lab).map_err(|e| e.in_file(labels))?;
    decode(name, &img, &lab)
}

/// Encodes 8-bit images and labels; used to author fixtures.
pub fn encode(rows: usize, cols: usize, pixels: &[u8], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [labels.len(), rows, cols] {
        img.extend((d as u32).to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = LABELS_MAGIC.to_be_bytes().to_vec();
    lab.extend((labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}
