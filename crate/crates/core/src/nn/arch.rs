//! Concrete backbones and heads.
//!
//! * LeNet-5: conv(6,5×5) relu pool conv(16,5×5) relu pool, then
//!   fc 400→120 relu fc 120→84 relu. 28×28 inputs get padding 2 on the first
//!   convolution so both 28×28 and 32×32 reach the same 16×5×5 map.
//! * DenseNet-40: growth 12, three dense blocks of 12 composite layers,
//!   per-channel affine in place of batch norm, 1×1 conv + 2×2 average pool
//!   transitions, global average pool to 448 features.
//! * tiny_cnn: conv(4,3×3) relu pool conv(8,3×3) relu pool fc→32 relu.
//!
//! Weights are fan-in uniform with bound `sqrt(1/fan_in)`, biases zero,
//! affine scales one. Each parameter draws from its own ChaCha stream, keyed
//! by its creation ordinal.

use super::{
    BackboneKind, GroupKind, HeadKind, Layer, ModelConfig, MultiHeadModel, ParamGroup, ParamRef,
};
use crate::rng;
use crate::tensor::Tensor;
use crate::{Error, Result, Scalar};
use alloc::format;
use alloc::vec::Vec;
use libm::sqrt;

pub(super) const DENSE_GROWTH: usize = 12;
pub(super) const DENSE_LAYERS_PER_BLOCK: usize = 12;
pub(super) const DENSE_STEM: usize = 16;

struct Builder<T: Scalar> {
    groups: [ParamGroup<T>; 4],
    seed: u64,
    ordinal: u64,
}

impl<T: Scalar> Builder<T> {
    fn new(seed: u64) -> Self {
        Self {
            groups: GroupKind::ALL.map(ParamGroup::new),
            seed,
            ordinal: 0,
        }
    }

    fn next_stream(&mut self) -> u64 {
        let s = self.ordinal;
        self.ordinal += 1;
        s
    }

    fn uniform(&mut self, group: GroupKind, name: &str, shape: &[usize]) -> ParamRef {
        let mut r = rng::stream(self.seed, self.next_stream());
        let fan_in: usize = shape[1..].iter().product();
        let bound = sqrt(1.0 / fan_in as f64);
        let t = Tensor::from_fn(shape.to_vec(), |_| {
            T::from_f64(rng::uniform_symmetric(&mut r, bound))
        });
        self.groups[group.index()].push(name, t)
    }

    fn constant(&mut self, group: GroupKind, name: &str, len: usize, value: f64) -> ParamRef {
        self.next_stream();
        self.groups[group.index()].push(name, Tensor::full([len], T::from_f64(value)))
    }

    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize, padding: usize) -> Layer {
        let weight = self.uniform(
            GroupKind::Backbone,
            &format!("{name}.weight"),
            &[cout, cin, k, k],
        );
        let bias = self.constant(GroupKind::Backbone, &format!("{name}.bias"), cout, 0.0);
        Layer::Conv2d {
            weight,
            bias,
            stride: 1,
            padding,
        }
    }

    fn linear(&mut self, group: GroupKind, name: &str, out: usize, inp: usize) -> Layer {
        let weight = self.uniform(group, &format!("{name}.weight"), &[out, inp]);
        let bias = self.constant(group, &format!("{name}.bias"), out, 0.0);
        Layer::Linear { weight, bias }
    }

    fn affine(&mut self, name: &str, channels: usize) -> (ParamRef, ParamRef) {
        let scale = self.constant(GroupKind::Backbone, &format!("{name}.scale"), channels, 1.0);
        let shift = self.constant(GroupKind::Backbone, &format!("{name}.shift"), channels, 0.0);
        (scale, shift)
    }
}

fn unsupported(cfg: &ModelConfig) -> Error {
    Error::UnsupportedInput {
        backbone: cfg.backbone.name(),
        channels: cfg.input.channels,
        height: cfg.input.height,
        width: cfg.input.width,
    }
}

fn lenet5<T: Scalar>(b: &mut Builder<T>, cfg: &ModelConfig) -> Result<(Vec<Layer>, usize)> {
    let spec = cfg.input;
    let padding = match (spec.channels, spec.height, spec.width) {
        (1 | 3, 28, 28) => 2,
        (1 | 3, 32, 32) => 0,
        _ => return Err(unsupported(cfg)),
    };
    let layers = alloc::vec![
        b.conv("conv1", 6, spec.channels, 5, padding),
        Layer::Relu,
        Layer::MaxPool2,
        b.conv("conv2", 16, 6, 5, 0),
        Layer::Relu,
        Layer::MaxPool2,
        Layer::Flatten,
        b.linear(GroupKind::Backbone, "fc1", 120, 16 * 5 * 5),
        Layer::Relu,
        b.linear(GroupKind::Backbone, "fc2", 84, 120),
        Layer::Relu,
    ];
    Ok((layers, 84))
}

fn tiny_cnn<T: Scalar>(b: &mut Builder<T>, cfg: &ModelConfig) -> Result<(Vec<Layer>, usize)> {
    let spec = cfg.input;
    if spec.channels == 0
        || spec.height < 4
        || spec.width < 4
        || spec.height % 4 != 0
        || spec.width % 4 != 0
    {
        return Err(unsupported(cfg));
    }
    let flat = 8 * (spec.height / 4) * (spec.width / 4);
    let layers = alloc::vec![
        b.conv("conv1", 4, spec.channels, 3, 1),
        Layer::Relu,
        Layer::MaxPool2,
        b.conv("conv2", 8, 4, 3, 1),
        Layer::Relu,
        Layer::MaxPool2,
        Layer::Flatten,
        b.linear(GroupKind::Backbone, "fc", 32, flat),
        Layer::Relu,
    ];
    Ok((layers, 32))
}

fn densenet40<T: Scalar>(b: &mut Builder<T>, cfg: &ModelConfig) -> Result<(Vec<Layer>, usize)> {
    let spec = cfg.input;
    if (spec.channels, spec.height, spec.width) != (3, 32, 32) {
        return Err(unsupported(cfg));
    }
    let mut layers = alloc::vec![b.conv("stem", DENSE_STEM, 3, 3, 1)];
    let mut channels = DENSE_STEM;
    for block in 1..=3 {
        for l in 0..DENSE_LAYERS_PER_BLOCK {
            let name = format!("block{block}.layer{l}");
            let (scale, shift) = b.affine(&format!("{name}.norm"), channels);
            let weight = b.uniform(
                GroupKind::Backbone,
                &format!("{name}.conv.weight"),
                &[DENSE_GROWTH, channels, 3, 3],
            );
            let bias = b.constant(
                GroupKind::Backbone,
                &format!("{name}.conv.bias"),
                DENSE_GROWTH,
                0.0,
            );
            layers.push(Layer::Dense {
                scale,
                shift,
                weight,
                bias,
            });
            channels += DENSE_GROWTH;
        }
        let (scale, shift) = b.affine(&format!("{}.norm", transition_name(block)), channels);
        layers.push(Layer::Affine { scale, shift });
        layers.push(Layer::Relu);
        if block < 3 {
            let name = transition_name(block);
            layers.push(b.conv(&format!("{name}.conv"), channels, channels, 1, 0));
            layers.push(Layer::AvgPool2);
        }
    }
    layers.push(Layer::GlobalAvgPool);
    Ok((layers, channels))
}

fn transition_name(block: usize) -> alloc::string::String {
    if block < 3 {
        format!("transition{block}")
    } else {
        "final".into()
    }
}

fn head<T: Scalar>(
    b: &mut Builder<T>,
    kind: HeadKind,
    features: usize,
    out: usize,
    hidden: Option<usize>,
) -> Vec<Layer> {
    let group = kind.group();
    let name = kind.name();
    match hidden {
        None => alloc::vec![b.linear(group, &format!("{name}.fc"), out, features)],
        Some(h) => alloc::vec![
            b.linear(group, &format!("{name}.fc1"), h, features),
            Layer::Relu,
            b.linear(group, &format!("{name}.fc2"), out, h),
        ],
    }
}

pub(super) fn build<T: Scalar>(cfg: &ModelConfig) -> Result<MultiHeadModel<T>> {
    if cfg.num_classes < 2 {
        return Err(Error::InvalidArgument {
            op: "build_model",
            reason: format!("num_classes must be at least 2, got {}", cfg.num_classes),
        });
    }
    if cfg.head_hidden == Some(0) {
        return Err(Error::InvalidArgument {
            op: "build_model",
            reason: "head_hidden must be positive".into(),
        });
    }
    let mut b = Builder::new(cfg.init_seed);
    let (backbone, dim) = match cfg.backbone {
        BackboneKind::Lenet5 => lenet5(&mut b, cfg)?,
        BackboneKind::Densenet40 => densenet40(&mut b, cfg)?,
        BackboneKind::TinyCnn => tiny_cnn(&mut b, cfg)?,
    };
    let semantic = head(
        &mut b,
        HeadKind::Semantic,
        dim,
        cfg.num_classes,
        cfg.head_hidden,
    );
    let rotation = head(&mut b, HeadKind::Rotation, dim, 4, cfg.head_hidden);
    let auxiliary = head(
        &mut b,
        HeadKind::Auxiliary,
        dim,
        cfg.num_classes,
        cfg.head_hidden,
    );
    MultiHeadModel::from_parts(
        cfg.clone(),
        backbone,
        semantic,
        rotation,
        auxiliary,
        b.groups,
    )
}
