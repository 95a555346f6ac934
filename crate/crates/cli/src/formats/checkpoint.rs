//! Model checkpoints.
//!
//! ```text
//! "OSSL" | u32 version
//! str backbone | u32 num_classes | u64 init_seed | u32 head_hidden (0 = none)
//! u32 C | u32 H | u32 W
//! u32 group count, then per group:
//!     str group name | u32 param count, then per param:
//!         str name | u32 rank | rank × u32 dims | f32 values
//! ```
//!
//! Strings are a `u32` byte length followed by UTF-8. Everything is
//! little-endian and values are stored as `f32`, so a checkpoint read and
//! written again is byte-identical.

use super::{product, read_file, write_file, Reader};
use crate::error::Result;
use ossl::nn::{build_model, BackboneKind, GroupKind, InputSpec, ModelConfig, MultiHeadModel};
use ossl::{Scalar, Tensor};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"OSSL";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend((v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn get_str(r: &mut Reader<'_>) -> Result<String> {
    let at = r.offset();
    let n = r.u32_le()? as usize;
    let bytes = r.take(n)?;
    String::from_utf8(bytes.to_vec()).map_err(|_| r.malformed(at, "string is not UTF-8"))
}

pub fn encode<T: Scalar>(model: &MultiHeadModel<T>) -> Vec<u8> {
    let cfg = model.config();
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, VERSION as usize);
    put_str(&mut out, cfg.backbone.name());
    put_u32(&mut out, cfg.num_classes);
    out.extend(cfg.init_seed.to_le_bytes());
    put_u32(&mut out, cfg.head_hidden.unwrap_or(0));
    for d in [cfg.input.channels, cfg.input.height, cfg.input.width] {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, GroupKind::ALL.len());
    for kind in GroupKind::ALL {
        let group = model.group(kind);
        put_str(&mut out, kind.name());
        put_u32(&mut out, group.params().len());
        for p in group.params() {
            put_str(&mut out, &p.name);
            put_u32(&mut out, p.tensor.rank());
            for &d in p.tensor.shape() {
                put_u32(&mut out, d);
            }
            for v in p.tensor.data() {
                out.extend(v.to_f32().to_le_bytes());
            }
        }
    }
    out
}

/// Rebuilds the architecture from the stored configuration and fills in
/// every parameter, which must match by group, name and shape.
pub fn decode(bytes: &[u8]) -> Result<MultiHeadModel<f32>> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.magic(MAGIC)?;
    let version = r.u32_le()?;
    if version != VERSION {
        return Err(r.malformed(
            4,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let at = r.offset();
    let backbone_name = get_str(&mut r)?;
    let backbone = BackboneKind::from_name(&backbone_name)
        .ok_or_else(|| r.malformed(at, format!("unknown backbone `{backbone_name}`")))?;
    let num_classes = r.u32_le()? as usize;
    let init_seed = r.u64_le()?;
    let hidden = r.u32_le()? as usize;
    let (c, h, w) = (
        r.u32_le()? as usize,
        r.u32_le()? as usize,
        r.u32_le()? as usize,
    );
    let mut cfg = ModelConfig::new(backbone, num_classes, InputSpec::new(c, h, w), init_seed);
    cfg.head_hidden = (hidden > 0).then_some(hidden);
    let mut model = build_model::<f32>(&cfg)?;

    let at = r.offset();
    let groups = r.u32_le()? as usize;
    if groups != GroupKind::ALL.len() {
        return Err(r.malformed(at, format!("{groups} parameter groups, expected 4")));
    }
    for kind in GroupKind::ALL {
        let at = r.offset();
        let name = get_str(&mut r)?;
        if name != kind.name() {
            return Err(r.malformed(
                at,
                format!("group `{name}` where `{}` was expected", kind.name()),
            ));
        }
        let at = r.offset();
        let count = r.u32_le()? as usize;
        let expected = model.group(kind).params().len();
        if count != expected {
            return Err(r.malformed(
                at,
                format!("group {name} stores {count} tensors, architecture has {expected}"),
            ));
        }
        for i in 0..count {
            let at = r.offset();
            let pname = get_str(&mut r)?;
            let rank = r.u32_le()? as usize;
            if rank > 8 {
                return Err(r.malformed(at, format!("tensor {pname} has implausible rank {rank}")));
            }
            let shape: Vec<usize> = (0..rank)
                .map(|_| r.u32_le().map(|d| d as usize))
                .collect::<Result<_>>()?;
            let n = product(&r, at, &shape)?;
            let data = r.f32_le(n)?;
            let slot = &mut model.group_mut(kind).params_mut()[i];
            if slot.name != pname {
                return Err(r.malformed(
                    at,
                    format!("tensor `{pname}` where `{}` was expected", slot.name),
                ));
            }
            if slot.tensor.shape() != shape.as_slice() {
                return Err(ossl::Error::ShapeDrift {
                    name: pname,
                    expected: slot.tensor.shape().to_vec(),
                    found: shape,
                }
                .into());
            }
            let mut t = Tensor::new(shape, data)?;
            t.set_requires_grad(slot.tensor.requires_grad());
            slot.tensor = t;
        }
    }
    r.finish()?;
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &MultiHeadModel<T>, path: &Path) -> Result<()> {
    write_file(path, &encode(model))
}

pub fn load_checkpoint(path: &Path) -> Result<MultiHeadModel<f32>> {
    decode(&read_file(path)?).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn tiny(seed: u64) -> MultiHeadModel<f32> {
        build_model(&ModelConfig::new(
            BackboneKind::TinyCnn,
            3,
            InputSpec::new(1, 8, 8),
            seed,
        ))
        .unwrap()
    }

    #[test]
    fn header_bytes() {
        let bytes = encode(&tiny(5));
        assert_eq!(&bytes[..8], b"OSSL\x01\0\0\0");
        assert_eq!(&bytes[8..20], b"\x08\0\0\0tiny_cnn");
        assert_eq!(&bytes[20..24], &3u32.to_le_bytes());
        assert_eq!(&bytes[24..32], &5u64.to_le_bytes());
    }

    #[test]
    fn byte_exact_round_trip() {
        for cfg in [
            ModelConfig::new(BackboneKind::TinyCnn, 3, InputSpec::new(1, 8, 8), 1),
            ModelConfig::new(BackboneKind::Lenet5, 10, InputSpec::new(1, 28, 28), 2),
            ModelConfig {
                head_hidden: Some(5),
                ..ModelConfig::new(BackboneKind::TinyCnn, 4, InputSpec::new(3, 12, 12), 3)
            },
        ] {
            let mut m = build_model::<f32>(&cfg).unwrap();
            // Move away from the seeded initialization so the load really reads values.
            for v in m.group_mut(GroupKind::Backbone).params_mut()[0]
                .tensor
                .data_mut()
            {
                *v += 0.125;
            }
            let bytes = encode(&m);
            let back = decode(&bytes).unwrap();
            assert_eq!(back.config(), m.config());
            for kind in GroupKind::ALL {
                for (a, b) in back.group(kind).params().iter().zip(m.group(kind).params()) {
                    assert!(a.tensor.bitwise_eq(&b.tensor), "{}", a.name);
                }
            }
            assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn f64_models_are_stored_as_f32() {
        let m = tiny(9).cast::<f64>();
        assert_eq!(encode(&m), encode(&tiny(9)));
    }

    #[test]
    fn negative_cases() {
        let good = encode(&tiny(0));
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(decode(&magic), Err(Error::BadMagic { .. })));
        let mut version = good.clone();
        version[4] = 2;
        assert!(matches!(
            decode(&version),
            Err(Error::Malformed { offset: 4, .. })
        ));
        assert!(matches!(
            decode(&good[..good.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::Length { .. })));
        let mut backbone = good.clone();
        backbone[12] = b'T';
        assert!(matches!(
            decode(&backbone),
            Err(Error::Malformed { offset: 8, .. })
        ));
    }

    #[test]
    fn shape_drift_is_reported() {
        // Same parameter names, different input geometry: the fc layer grows.
        let small = encode(&tiny(0));
        let mut bytes = small.clone();
        // H and W live after backbone(12) + classes(4) + seed(8) + hidden(4) + C(4).
        let hw = 8 + 12 + 4 + 8 + 4 + 4;
        bytes[hw..hw + 4].copy_from_slice(&12u32.to_le_bytes());
        bytes[hw + 4..hw + 8].copy_from_slice(&12u32.to_le_bytes());
        let err = decode(&bytes).unwrap_err();
        assert!(
            matches!(err, Error::Core(ossl::Error::ShapeDrift { .. })),
            "{err}"
        );
    }
}
