//! `OSSLRAW1`: little-endian image interchange.
//!
//! ```text
//! "OSSLRAW1" | u32 M | u32 C | u32 H | u32 W | u32 class_count
//! M·C·H·W f32 pixels in [0,1] | M u16 labels
//! ```

use super::{product, read_file, write_file, Reader};
use crate::error::{Error, Result};
use ossl::data::{LabeledImageSet, SetRole};
use ossl::Tensor;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"OSSLRAW1";
const HEADER: usize = 8 + 5 * 4;

pub fn decode(name: &str, bytes: &[u8]) -> Result<LabeledImageSet> {
    let mut r = Reader::new(bytes, "osslraw1");
    r.magic(MAGIC)?;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32_le()? as usize;
    }
    let [m, c, h, w, classes] = dims;
    let pixels = product(&r, 8, &[m, c, h, w])?;
    let expected = pixels
        .checked_mul(4)
        .and_then(|p| p.checked_add(m * 2 + HEADER))
        .ok_or_else(|| r.malformed(8, "header sizes overflow"))?;
    if expected != bytes.len() {
        return Err(Error::Length {
            format: "osslraw1",
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    let data = r.f32_le(pixels)?;
    let labels = r.u16_le(m)?;
    r.finish()?;
    let images = Tensor::new([m, c, h, w], data)?;
    Ok(LabeledImageSet::new(
        name,
        SetRole::Train,
        images,
        labels,
        classes,
    )?)
}

pub fn encode(set: &LabeledImageSet) -> Vec<u8> {
    let x = set.images();
    let mut out = Vec::with_capacity(HEADER + x.numel() * 4 + set.len() * 2);
    out.extend_from_slice(MAGIC);
    for d in x.shape().iter().copied().chain([set.class_count()]) {
        out.extend((d as u32).to_le_bytes());
    }
    for v in x.data() {
        out.extend(v.to_le_bytes());
    }
    for l in set.labels() {
        out.extend(l.to_le_bytes());
    }
    out
}

pub fn load_raw_tensor(name: &str, path: &Path) -> Result<LabeledImageSet> {
    decode(name, &read_file(path)?).map_err(|e| e.in_file(path))
}

pub fn save_raw_tensor(set: &LabeledImageSet, path: &Path) -> Result<()> {
    write_file(path, &encode(set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::idx;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_little_endian() {
        let images = Tensor::new([1, 1, 1, 2], vec![0.5f32, 1.0]).unwrap();
        let set = LabeledImageSet::new("s", SetRole::Train, images, vec![3], 4).unwrap();
        let bytes = encode(&set);
        let mut expected = b"OSSLRAW1".to_vec();
        for d in [1u32, 1, 1, 2, 4] {
            expected.extend(d.to_le_bytes());
        }
        expected.extend([0, 0, 0, 0x3f, 0, 0, 0x80, 0x3f, 3, 0]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn empty_set() {
        let images = Tensor::<f32>::zeros([0, 3, 32, 32]);
        let set = LabeledImageSet::new("e", SetRole::Train, images, vec![], 10).unwrap();
        let back = decode("e", &encode(&set)).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn matches_the_idx_loader() {
        let pixels: Vec<u8> = (0..48).map(|i| (i * 5) as u8).collect();
        let (img, lab) = idx::encode(4, 4, &pixels, &[1, 0, 9]);
        let from_idx = idx::decode("x", &img, &lab).unwrap();
        let from_raw = decode("x", &encode(&from_idx)).unwrap();
        assert!(from_raw.images().bitwise_eq(from_idx.images()));
        assert_eq!(from_raw.labels(), from_idx.labels());
    }

    #[test]
    fn negative_cases() {
        let images = Tensor::new([2, 1, 2, 2], vec![0.25f32; 8]).unwrap();
        let set = LabeledImageSet::new("s", SetRole::Train, images, vec![0, 1], 2).unwrap();
        let good = encode(&set);

        let mut bad = good.clone();
        bad[7] = b'2';
        assert!(matches!(decode("s", &bad), Err(Error::BadMagic { .. })));
        assert!(matches!(
            decode("s", &good[..good.len() - 1]),
            Err(Error::Length { .. })
        ));
        assert!(matches!(
            decode("s", &good[..10]),
            Err(Error::Truncated { offset: 8, .. })
        ));
        let mut long = good.clone();
        long.extend([0, 0]);
        assert!(matches!(decode("s", &long), Err(Error::Length { .. })));

        let mut label = good.clone();
        let n = label.len();
        label[n - 2] = 5;
        assert!(matches!(decode("s", &label), Err(Error::Core(_))));
        let mut pixel = good;
        pixel[HEADER..HEADER + 4].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(decode("s", &pixel), Err(Error::Core(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            m in 0usize..5, c in 1usize..4, h in 1usize..6, w in 1usize..6,
            classes in 1usize..20, seed in any::<u64>(),
        ) {
            let mut state = seed;
            let mut next = || { state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); state >> 33 };
            let data = (0..m * c * h * w).map(|_| (next() % 1000) as f32 / 999.0).collect();
            let labels = (0..m).map(|_| (next() % classes as u64) as u16).collect();
            let images = Tensor::new([m, c, h, w], data).unwrap();
            let set = LabeledImageSet::new("p", SetRole::Train, images, labels, classes).unwrap();
            let back = decode("p", &encode(&set)).unwrap();
            prop_assert!(back.images().bitwise_eq(set.images()));
            prop_assert_eq!(back.labels(), set.labels());
            prop_assert_eq!(back.class_count(), classes);
        }
    }
}
