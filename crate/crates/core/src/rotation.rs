//! Exact quarter-turn rotations and the 4-way rotation pretext batch.
//!
//! `r = 1` turns the image a quarter turn counterclockwise, so
//! `[[1,2],[3,4]]` becomes `[[2,4],[1,3]]`.

use crate::tensor::{one_hot, Tensor};
use crate::{Error, Result, Scalar};
use alloc::vec::Vec;

pub const ROTATIONS: usize = 4;

fn rotate_plane<T: Scalar>(src: &[T], h: usize, w: usize, r: usize, dst: &mut Vec<T>) {
    match r {
        0 => dst.extend_from_slice(src),
        1 => {
            for i in 0..w {
                for j in 0..h {
                    dst.push(src[j * w + (w - 1 - i)]);
                }
            }
        }
        2 => {
            for i in 0..h {
                for j in 0..w {
                    dst.push(src[(h - 1 - i) * w + (w - 1 - j)]);
                }
            }
        }
        _ => {
            for i in 0..w {
                for j in 0..h {
                    dst.push(src[(h - 1 - j) * w + i]);
                }
            }
        }
    }
}

fn check_quarter(r: usize) -> Result<()> {
    if r < ROTATIONS {
        Ok(())
    } else {
        Err(Error::InvalidArgument {
            op: "rotate90",
            reason: alloc::format!("rotation index {r} outside 0..4"),
        })
    }
}

/// Rotates a `[C,H,W]` image by `r` quarter turns counterclockwise.
pub fn rotate90<T: Scalar>(img: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    check_quarter(r)?;
    let &[c, h, w] = img.shape() else {
        return Err(Error::Rank {
            op: "rotate90",
            expected: 3,
            found: img.rank(),
        });
    };
    let mut out = Vec::with_capacity(img.numel());
    for plane in img.data().chunks_exact((h * w).max(1)).take(c) {
        rotate_plane(plane, h, w, r, &mut out);
    }
    let shape = if r % 2 == 1 { [c, w, h] } else { [c, h, w] };
    Tensor::new(shape, out)
}

/// Rotates every image of a `[N,C,H,W]` batch by the same `r`.
pub fn rotate_batch<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    check_quarter(r)?;
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::Rank {
            op: "rotate_batch",
            expected: 4,
            found: x.rank(),
        });
    };
    let mut out = Vec::with_capacity(x.numel());
    for plane in x.data().chunks_exact((h * w).max(1)).take(n * c) {
        rotate_plane(plane, h, w, r, &mut out);
    }
    let shape = if r % 2 == 1 {
        [n, c, w, h]
    } else {
        [n, c, h, w]
    };
    Tensor::new(shape, out)
}

/// All four rotations of every source image.
///
/// Rows `4k..4k+3` hold source image `k` at 0°, 90°, 180°, 270°.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationBatch<T> {
    pub images: Tensor<T>,
    pub rot_labels: Tensor<T>,
    pub source_index: Vec<usize>,
}

impl<T: Scalar> RotationBatch<T> {
    pub fn len(&self) -> usize {
        self.source_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_index.is_empty()
    }

    /// Row indices carrying rotation `r`, in source order.
    pub fn rows_for(&self, r: usize) -> Vec<usize> {
        (0..self.len() / ROTATIONS)
            .map(|k| k * ROTATIONS + r)
            .collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| i % ROTATIONS).collect()
    }
}

pub fn make_rotation_batch<T: Scalar>(x: &Tensor<T>) -> Result<RotationBatch<T>> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::Rank {
            op: "make_rotation_batch",
            expected: 4,
            found: x.rank(),
        });
    };
    if h != w {
        return Err(Error::Dimension {
            op: "make_rotation_batch",
            axis: "width (square images required)",
            expected: h,
            found: w,
        });
    }
    let plane = c * h * w;
    let mut data = Vec::with_capacity(ROTATIONS * x.numel());
    let mut source_index = Vec::with_capacity(ROTATIONS * n);
    for k in 0..n {
        let img = &x.data()[k * plane..(k + 1) * plane];
        for r in 0..ROTATIONS {
            for ch in img.chunks_exact((h * w).max(1)) {
                rotate_plane(ch, h, w, r, &mut data);
            }
            source_index.push(k);
        }
    }
    let labels: Vec<usize> = (0..ROTATIONS * n).map(|i| i % ROTATIONS).collect();
    Ok(RotationBatch {
        images: Tensor::new([ROTATIONS * n, c, h, w], data)?,
        rot_labels: one_hot(&labels, ROTATIONS)?,
        source_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn img(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut r = rng::stream(seed, 0);
        Tensor::from_fn([c, h, w], |_| rng::normal(&mut r))
    }

    #[test]
    fn quarter_turn_is_counterclockwise() {
        let x = Tensor::new([1, 2, 2], alloc::vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(rotate90(&x, 0).unwrap(), x);
        assert_eq!(rotate90(&x, 1).unwrap().data(), &[2.0, 4.0, 1.0, 3.0]);
        assert_eq!(rotate90(&x, 2).unwrap().data(), &[4.0, 3.0, 2.0, 1.0]);
        assert_eq!(rotate90(&x, 3).unwrap().data(), &[3.0, 1.0, 4.0, 2.0]);
        assert!(rotate90(&x, 4).is_err());
    }

    #[test]
    fn odd_turns_swap_extents() {
        let x = img(2, 3, 5, 1);
        let y = rotate90(&x, 1).unwrap();
        assert_eq!(y.shape(), &[2, 5, 3]);
        assert_eq!(rotate90(&y, 3).unwrap(), x);
    }

    #[test]
    fn single_image_batch_gets_identity_labels() {
        let x = img(1, 4, 4, 2).reshape([1, 1, 4, 4]).unwrap();
        let rb = make_rotation_batch(&x).unwrap();
        assert_eq!(rb.images.shape(), &[4, 1, 4, 4]);
        let eye: Vec<f64> = (0..16)
            .map(|i| if i / 4 == i % 4 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(rb.rot_labels.data(), &eye[..]);
        assert_eq!(rb.source_index, [0, 0, 0, 0]);
        for r in 0..4 {
            let expect = rotate90(&x.index_axis0(0).unwrap(), r).unwrap();
            assert_eq!(rb.images.index_axis0(r).unwrap(), expect);
        }
    }

    #[test]
    fn rotation_invariant_images_still_get_distinct_labels() {
        let x = Tensor::<f32>::full([2, 3, 5, 5], 0.7);
        let rb = make_rotation_batch(&x).unwrap();
        for i in 1..8 {
            assert_eq!(
                rb.images.index_axis0(i).unwrap(),
                rb.images.index_axis0(0).unwrap()
            );
        }
        assert_eq!(rb.labels(), [0, 1, 2, 3, 0, 1, 2, 3]);
        assert_eq!(rb.rows_for(2), [2, 6]);
    }

    #[test]
    fn non_square_batches_are_rejected() {
        let x = Tensor::<f32>::zeros([1, 1, 4, 6]);
        assert!(matches!(
            make_rotation_batch(&x),
            Err(Error::Dimension { .. })
        ));
    }

    proptest! {
        #[test]
        fn cyclic_group_law(seed in any::<u64>(), a in 0usize..4, b in 0usize..4, h in 1usize..7, w in 1usize..7) {
            let x = img(2, h, w, seed);
            let ab = rotate90(&rotate90(&x, a).unwrap(), b).unwrap();
            prop_assert_eq!(ab, rotate90(&x, (a + b) % 4).unwrap());
        }

        #[test]
        fn pixel_multiset_is_conserved(seed in any::<u64>(), r in 0usize..4) {
            let x = img(1, 5, 4, seed);
            let mut before: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
            let mut after: Vec<u64> = rotate90(&x, r).unwrap().data().iter().map(|v| v.to_bits()).collect();
            before.sort_unstable();
            after.sort_unstable();
            prop_assert_eq!(before, after);
        }

        #[test]
        fn batch_rotation_matches_per_image(seed in any::<u64>(), r in 0usize..4) {
            let mut g = rng::stream(seed, 1);
            let x = Tensor::from_fn([3, 2, 4, 4], |_| rng::normal(&mut g));
            let rb = rotate_batch(&x, r).unwrap();
            for k in 0..3 {
                prop_assert_eq!(rb.index_axis0(k).unwrap(), rotate90(&x.index_axis0(k).unwrap(), r).unwrap());
            }
        }
    }
}
