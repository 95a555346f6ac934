//! In-memory labelled image sets, preprocessing and seeded batching.
//!
//! Parsing the on-disk formats lives in the `ossl-cli` crate; everything here is
//! pure and works on already-decoded pixels.

use crate::nn::InputSpec;
use crate::rng;
use crate::tensor::Tensor;
use crate::{Error, Result, Scalar};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};
use rand::seq::SliceRandom;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SetRole {
    #[default]
    Train,
    OodTest,
}

impl SetRole {
    pub fn name(self) -> &'static str {
        match self {
            SetRole::Train => "train",
            SetRole::OodTest => "ood_test",
        }
    }
}

/// Images `[M,C,H,W]` with one class label per image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    name: String,
    role: SetRole,
    images: Tensor<f32>,
    labels: Vec<u16>,
    class_count: usize,
}

impl LabeledImageSet {
    /// Checks shapes, label range, and that pixels are finite and in `[0,1]`.
    pub fn new(
        name: impl Into<String>,
        role: SetRole,
        images: Tensor<f32>,
        labels: Vec<u16>,
        class_count: usize,
    ) -> Result<Self> {
        let set = Self::unchecked_range(name.into(), role, images, labels, class_count)?;
        if let Some(pos) = set
            .images
            .data()
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
        {
            return Err(set.error(format!(
                "pixel {pos} = {} is outside [0,1]",
                set.images.data()[pos]
            )));
        }
        Ok(set)
    }

    /// Like [`LabeledImageSet::new`] but accepts any finite pixel value, as
    /// produced by normalization.
    pub fn normalized(
        name: impl Into<String>,
        role: SetRole,
        images: Tensor<f32>,
        labels: Vec<u16>,
        class_count: usize,
    ) -> Result<Self> {
        Self::unchecked_range(name.into(), role, images, labels, class_count)
    }

    fn unchecked_range(
        name: String,
        role: SetRole,
        images: Tensor<f32>,
        labels: Vec<u16>,
        class_count: usize,
    ) -> Result<Self> {
        let set = Self {
            name,
            role,
            images,
            labels,
            class_count,
        };
        if set.images.rank() != 4 {
            return Err(set.error(format!(
                "images must be [M,C,H,W], found rank {}",
                set.images.rank()
            )));
        }
        if set.images.shape()[0] != set.labels.len() {
            return Err(set.error(format!(
                "{} images but {} labels",
                set.images.shape()[0],
                set.labels.len()
            )));
        }
        if set.class_count == 0 {
            return Err(set.error("class_count must be positive".to_string()));
        }
        if let Some((i, l)) = set
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| usize::from(l) >= set.class_count)
        {
            return Err(set.error(format!(
                "label {l} at index {i} outside 0..{}",
                set.class_count
            )));
        }
        if let Some(pos) = set.images.data().iter().position(|v| !v.is_finite()) {
            return Err(set.error(format!("pixel {pos} is not finite")));
        }
        Ok(set)
    }

    fn error(&self, reason: String) -> Error {
        Error::Dataset {
            dataset: self.name.clone(),
            reason,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> SetRole {
        self.role
    }

    pub fn with_role(mut self, role: SetRole) -> Self {
        self.role = role;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_spec(&self) -> InputSpec {
        let s = self.images.shape();
        InputSpec::new(s[1], s[2], s[3])
    }

    /// The first `n` images (or all of them).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let per = self.images.numel() / self.len().max(1);
        let mut shape = self.images.shape().to_vec();
        shape[0] = n;
        Self {
            name: self.name.clone(),
            role: self.role,
            images: Tensor::new(shape, self.images.data()[..n * per].to_vec())
                .expect("prefix of a valid set"),
            labels: self.labels[..n].to_vec(),
            class_count: self.class_count,
        }
    }

    /// Images at `indices` converted to `T`, with their labels.
    pub fn gather<T: Scalar>(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let s = self.images.shape();
        let per = s[1] * s[2] * s[3];
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(self.error(format!("index {i} out of range for {} images", self.len())));
            }
            data.extend(
                self.images.data()[i * per..(i + 1) * per]
                    .iter()
                    .map(|&v| T::from_f32(v)),
            );
            labels.push(usize::from(self.labels[i]));
        }
        Ok((
            Tensor::new([indices.len(), s[1], s[2], s[3]], data)?,
            labels,
        ))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Resize {
    #[default]
    None,
    Bilinear,
    Nearest,
}

impl Resize {
    pub fn name(self) -> &'static str {
        match self {
            Resize::None => "none",
            Resize::Bilinear => "bilinear",
            Resize::Nearest => "nearest",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Resize::None),
            "bilinear" => Some(Resize::Bilinear),
            "nearest" => Some(Resize::Nearest),
            _ => None,
        }
    }
}

/// How a set is brought into a model's input space.
///
/// Steps run in a fixed order: grayscale, resize, normalize. An empty
/// `normalize` list leaves values untouched.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreprocessSpec {
    pub target: InputSpec,
    pub grayscale: bool,
    pub resize: Resize,
    pub normalize: Vec<(f64, f64)>,
}

impl PreprocessSpec {
    pub fn identity(target: InputSpec) -> Self {
        Self {
            target,
            ..Self::default()
        }
    }
}

pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

fn luma(planes: &[f32], hw: usize, out: &mut Vec<f32>) {
    let (r, rest) = planes.split_at(hw);
    let (g, b) = rest.split_at(hw);
    out.extend((0..hw).map(|i| LUMA[0] * r[i] + LUMA[1] * g[i] + LUMA[2] * b[i]));
}

/// Source coordinate for output index `i` under nearest-neighbour scaling.
pub fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    (i * src / dst).min(src - 1)
}

fn resize_plane(
    src: &[f32],
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    mode: Resize,
    out: &mut Vec<f32>,
) {
    match mode {
        Resize::None => out.extend_from_slice(src),
        Resize::Nearest => {
            for i in 0..oh {
                let si = nearest_index(i, h, oh);
                for j in 0..ow {
                    out.push(src[si * w + nearest_index(j, w, ow)]);
                }
            }
        }
        Resize::Bilinear => {
            // Half-pixel centres, edge clamped, no antialiasing.
            let coord = |i: usize, from: usize, to: usize| -> (usize, usize, f32) {
                let x = ((i as f64 + 0.5) * from as f64 / to as f64 - 0.5)
                    .clamp(0.0, (from - 1) as f64);
                let lo = libm::floor(x) as usize;
                let hi = (lo + 1).min(from - 1);
                (lo, hi, (x - lo as f64) as f32)
            };
            for i in 0..oh {
                let (y0, y1, fy) = coord(i, h, oh);
                for j in 0..ow {
                    let (x0, x1, fx) = coord(j, w, ow);
                    let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                    out.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
}

/// Converts `set` to `spec.target`; labels are carried over untouched.
pub fn preprocess(set: &LabeledImageSet, spec: &PreprocessSpec) -> Result<LabeledImageSet> {
    let bad = |reason: String| Error::Dataset {
        dataset: set.name.clone(),
        reason,
    };
    let src = set.input_spec();
    let dst = spec.target;
    let channels = match (spec.grayscale, src.channels) {
        (true, 3) | (true, 1) => 1,
        (true, c) => {
            return Err(bad(format!(
                "grayscale conversion needs 3 channels, found {c}"
            )))
        }
        (false, c) => c,
    };
    if channels != dst.channels {
        return Err(bad(format!(
            "cannot map {} channels to {} (grayscale={})",
            src.channels, dst.channels, spec.grayscale
        )));
    }
    if spec.resize == Resize::None && (src.height, src.width) != (dst.height, dst.width) {
        return Err(bad(format!(
            "{}x{} images need a resize to reach {}x{}",
            src.height, src.width, dst.height, dst.width
        )));
    }
    if dst.height == 0 || dst.width == 0 || (!set.is_empty() && (src.height == 0 || src.width == 0))
    {
        return Err(bad("empty spatial extent".to_string()));
    }
    if !spec.normalize.is_empty() && spec.normalize.len() != channels {
        return Err(bad(format!(
            "{} normalization pairs for {channels} channels",
            spec.normalize.len()
        )));
    }
    if let Some((c, (_, s))) = spec
        .normalize
        .iter()
        .enumerate()
        .find(|(_, (_, s))| !(*s > 0.0 && s.is_finite()))
    {
        return Err(bad(format!("channel {c} std {s} must be positive")));
    }

    let hw = src.height * src.width;
    let per = src.channels * hw;
    let mut out = Vec::with_capacity(set.len() * channels * dst.height * dst.width);
    let mut gray = Vec::with_capacity(hw);
    for img in set.images.data().chunks_exact(per.max(1)).take(set.len()) {
        let planes: &[f32] = if spec.grayscale && src.channels == 3 {
            gray.clear();
            luma(img, hw, &mut gray);
            &gray
        } else {
            img
        };
        for (c, plane) in planes.chunks_exact(hw.max(1)).enumerate() {
            let start = out.len();
            resize_plane(
                plane,
                src.height,
                src.width,
                dst.height,
                dst.width,
                spec.resize,
                &mut out,
            );
            if let Some(&(mean, std)) = spec.normalize.get(c) {
                let (m, s) = (mean as f32, std as f32);
                out[start..].iter_mut().for_each(|v| *v = (*v - m) / s);
            }
        }
    }
    let images = Tensor::new([set.len(), channels, dst.height, dst.width], out)?;
    LabeledImageSet::normalized(
        set.name.clone(),
        set.role,
        images,
        set.labels.clone(),
        set.class_count,
    )
}

/// Per-channel mean and population standard deviation, accumulated in f64.
pub fn channel_stats(set: &LabeledImageSet) -> Vec<(f64, f64)> {
    let spec = set.input_spec();
    let hw = spec.height * spec.width;
    let mut sums = vec![(0.0f64, 0.0f64); spec.channels];
    for img in set.images.data().chunks_exact((spec.channels * hw).max(1)) {
        for (c, plane) in img.chunks_exact(hw.max(1)).enumerate() {
            for &v in plane {
                let v = f64::from(v);
                sums[c].0 += v;
                sums[c].1 += v * v;
            }
        }
    }
    let n = (set.len() * hw) as f64;
    sums.into_iter()
        .map(|(s, sq)| {
            if n == 0.0 {
                return (0.0, 1.0);
            }
            let mean = s / n;
            let var = (sq / n - mean * mean).max(0.0);
            (mean, libm::sqrt(var))
        })
        .collect()
}

/// Index batches for one epoch: a permutation that depends only on
/// `(shuffle_seed, epoch)`, cut into `batch_size` chunks with a final short
/// chunk when `len` is not a multiple.
pub fn batch_iter(
    len: usize,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument {
            op: "batch_iter",
            reason: "batch_size must be at least 1".into(),
        });
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(shuffle_seed, epoch));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Linearly separable synthetic images.
///
/// Class `k` lights a class-specific rectangle of the image (the image is
/// split into `classes` horizontal bands) on top of uniform noise of
/// amplitude `noise`, clamped to `[0,1]`.
pub fn synthetic_blobs(
    name: &str,
    n: usize,
    classes: usize,
    spec: InputSpec,
    noise: f32,
    seed: u64,
) -> Result<LabeledImageSet> {
    if classes == 0 || spec.height < classes {
        return Err(Error::InvalidArgument {
            op: "synthetic_blobs",
            reason: format!("{classes} classes do not fit {} rows", spec.height),
        });
    }
    let (c, h, w) = (spec.channels, spec.height, spec.width);
    let band = h / classes;
    let mut g = rng::stream(seed, 0);
    let mut data = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % classes;
        labels.push(k as u16);
        for _ in 0..c {
            for y in 0..h {
                for _ in 0..w {
                    let base = if y / band == k { 0.8 } else { 0.1 };
                    let jitter = rng::uniform_symmetric(&mut g, f64::from(noise)) as f32;
                    data.push((base + jitter).clamp(0.0, 1.0));
                }
            }
        }
    }
    LabeledImageSet::new(
        name,
        SetRole::Train,
        Tensor::new([n, c, h, w], data)?,
        labels,
        classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set_of(images: Tensor<f32>, labels: Vec<u16>) -> LabeledImageSet {
        LabeledImageSet::new("t", SetRole::Train, images, labels, 10).unwrap()
    }

    #[test]
    fn constructor_validates() {
        let ok = Tensor::<f32>::full([2, 1, 2, 2], 0.5);
        assert!(LabeledImageSet::new("a", SetRole::Train, ok.clone(), vec![0, 9], 10).is_ok());
        assert!(LabeledImageSet::new("a", SetRole::Train, ok.clone(), vec![0], 10).is_err());
        assert!(LabeledImageSet::new("a", SetRole::Train, ok.clone(), vec![0, 10], 10).is_err());
        let hot = Tensor::<f32>::full([2, 1, 2, 2], 1.5);
        assert!(LabeledImageSet::new("a", SetRole::Train, hot.clone(), vec![0, 1], 10).is_err());
        assert!(LabeledImageSet::normalized("a", SetRole::Train, hot, vec![0, 1], 10).is_ok());
        let nan = Tensor::<f32>::full([1, 1, 1, 1], f32::NAN);
        assert!(LabeledImageSet::normalized("a", SetRole::Train, nan, vec![0], 10).is_err());
        let empty = LabeledImageSet::new(
            "e",
            SetRole::OodTest,
            Tensor::zeros([0, 1, 28, 28]),
            vec![],
            10,
        )
        .unwrap();
        assert!(empty.is_empty());
        assert_eq!(empty.input_spec(), InputSpec::new(1, 28, 28));
    }

    #[test]
    fn identity_spec_is_a_no_op() {
        let mut g = rng::stream(1, 0);
        let x = Tensor::from_fn([3, 2, 5, 5], |_| {
            rng::uniform_symmetric(&mut g, 0.5) as f32 + 0.5
        });
        let set = set_of(x, vec![1, 2, 3]);
        let out = preprocess(&set, &PreprocessSpec::identity(InputSpec::new(2, 5, 5))).unwrap();
        assert!(out.images().bitwise_eq(set.images()));
        assert_eq!(out.labels(), set.labels());
    }

    #[test]
    fn constant_image_normalizes_to_constant() {
        let set = set_of(Tensor::full([1, 1, 4, 4], 0.75), vec![0]);
        let spec = PreprocessSpec {
            normalize: vec![(0.25, 0.5)],
            ..PreprocessSpec::identity(InputSpec::new(1, 4, 4))
        };
        let out = preprocess(&set, &spec).unwrap();
        assert!(out
            .images()
            .data()
            .iter()
            .all(|&v| v == (0.75 - 0.25) / 0.5));
    }

    #[test]
    fn nearest_upsample_matches_index_map() {
        let board = Tensor::from_fn([1, 1, 16, 16], |i| ((i / 16 + i % 16) % 2) as f32);
        let set = set_of(board.clone(), vec![4]);
        let spec = PreprocessSpec {
            resize: Resize::Nearest,
            ..PreprocessSpec::identity(InputSpec::new(1, 28, 28))
        };
        let out = preprocess(&set, &spec).unwrap();
        for i in 0..28 {
            for j in 0..28 {
                let src = board.data()[(i * 16 / 28) * 16 + j * 16 / 28];
                assert_eq!(out.images().data()[i * 28 + j], src);
            }
        }
    }

    #[test]
    fn bilinear_preserves_constants_and_ramps() {
        let set = set_of(Tensor::full([1, 1, 32, 32], 0.3), vec![0]);
        let spec = PreprocessSpec {
            resize: Resize::Bilinear,
            ..PreprocessSpec::identity(InputSpec::new(1, 28, 28))
        };
        let out = preprocess(&set, &spec).unwrap();
        assert!(out.images().data().iter().all(|v| (v - 0.3).abs() < 1e-6));

        // Same-size bilinear sampling hits pixel centres exactly.
        let ramp = Tensor::from_fn([1, 1, 4, 4], |i| i as f32 / 16.0);
        let set = set_of(ramp.clone(), vec![0]);
        let spec = PreprocessSpec {
            resize: Resize::Bilinear,
            ..PreprocessSpec::identity(InputSpec::new(1, 4, 4))
        };
        assert_eq!(
            preprocess(&set, &spec).unwrap().images().data(),
            ramp.data()
        );
    }

    #[test]
    fn grayscale_uses_luma_weights() {
        let mut px = vec![0.0f32; 12];
        px[..4].fill(1.0); // red plane
        let set = set_of(Tensor::new([1, 3, 2, 2], px).unwrap(), vec![0]);
        let spec = PreprocessSpec {
            grayscale: true,
            ..PreprocessSpec::identity(InputSpec::new(1, 2, 2))
        };
        let out = preprocess(&set, &spec).unwrap();
        assert!(out.images().data().iter().all(|&v| v == LUMA[0]));

        let gray = set_of(Tensor::zeros([1, 2, 2, 2]), vec![0]);
        assert!(preprocess(&gray, &spec).is_err());
        let to_rgb = PreprocessSpec::identity(InputSpec::new(3, 2, 2));
        assert!(preprocess(&set_of(Tensor::zeros([1, 1, 2, 2]), vec![0]), &to_rgb).is_err());
    }

    #[test]
    fn preprocess_rejects_bad_specs() {
        let set = set_of(Tensor::zeros([1, 1, 16, 16]), vec![0]);
        let no_resize = PreprocessSpec::identity(InputSpec::new(1, 28, 28));
        assert!(preprocess(&set, &no_resize).is_err());
        let zero_std = PreprocessSpec {
            normalize: vec![(0.0, 0.0)],
            ..PreprocessSpec::identity(InputSpec::new(1, 16, 16))
        };
        assert!(preprocess(&set, &zero_std).is_err());
    }

    #[test]
    fn stats_of_known_values() {
        let data = vec![0.0, 1.0, 0.0, 1.0, 0.5, 0.5, 0.5, 0.5];
        let set = set_of(Tensor::new([1, 2, 2, 2], data).unwrap(), vec![0]);
        assert_eq!(channel_stats(&set), vec![(0.5, 0.5), (0.5, 0.0)]);
    }

    #[test]
    fn batches_cover_the_set_once() {
        let b = batch_iter(10, 3, 7, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [3, 3, 3, 1]);
        assert_eq!(b, batch_iter(10, 3, 7, 0).unwrap());
        assert_ne!(b, batch_iter(10, 3, 7, 1).unwrap());
        assert_eq!(batch_iter(5, 64, 7, 3).unwrap().len(), 1);
        assert!(batch_iter(5, 0, 0, 0).is_err());
        assert!(batch_iter(0, 4, 0, 0).unwrap().is_empty());
    }

    #[test]
    fn gather_casts_and_orders() {
        let x = Tensor::from_fn([3, 1, 1, 2], |i| i as f32 / 8.0);
        let set = set_of(x, vec![5, 6, 7]);
        let (t, l) = set.gather::<f64>(&[2, 0]).unwrap();
        assert_eq!(t.data(), &[0.5, 0.625, 0.0, 0.125]);
        assert_eq!(l, [7, 5]);
        assert!(set.gather::<f32>(&[3]).is_err());
        assert_eq!(set.take(2).labels(), &[5, 6]);
    }

    #[test]
    fn synthetic_blobs_are_balanced_and_bounded() {
        let s = synthetic_blobs("blobs", 10, 2, InputSpec::new(1, 8, 8), 0.1, 3).unwrap();
        assert_eq!(s.labels().iter().filter(|&&l| l == 0).count(), 5);
        assert!(s.images().data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(
            s,
            synthetic_blobs("blobs", 10, 2, InputSpec::new(1, 8, 8), 0.1, 3).unwrap()
        );
    }

    proptest! {
        #[test]
        fn batches_partition(len in 0usize..200, bs in 1usize..50, seed in any::<u64>(), epoch in 0u64..5) {
            let mut all: Vec<usize> = batch_iter(len, bs, seed, epoch).unwrap().concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        }

        #[test]
        fn preprocess_keeps_labels(seed in any::<u64>(), n in 0usize..6) {
            let mut g = rng::stream(seed, 0);
            let x = Tensor::from_fn([n, 3, 8, 8], |_| (rng::uniform_symmetric(&mut g, 0.5) + 0.5) as f32);
            let labels: Vec<u16> = (0..n as u16).collect();
            let set = set_of(x, labels.clone());
            let spec = PreprocessSpec {
                grayscale: true,
                resize: Resize::Bilinear,
                normalize: vec![(0.1, 0.3)],
                target: InputSpec::new(1, 6, 6),
            };
            let a = preprocess(&set, &spec).unwrap();
            prop_assert_eq!(a.labels(), &labels[..]);
            prop_assert!(a.images().bitwise_eq(preprocess(&set, &spec).unwrap().images()));
        }
    }
}
