//! Multi-head models and their four disjoint parameter groups.
//!
//! A [`MultiHeadModel`] owns its parameters through four [`ParamGroup`]s:
//! backbone, semantic head, rotation head and auxiliary head. Layers refer
//! to parameters by [`ParamRef`], so a tensor belongs to exactly one group
//! by construction.

mod arch;
mod graph;

pub use graph::Graph;

use crate::tensor::Tensor;
use crate::{Error, Result, Scalar};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroupKind {
    Backbone,
    SemanticHead,
    RotationHead,
    AuxiliaryHead,
}

impl GroupKind {
    pub const ALL: [GroupKind; 4] = [
        GroupKind::Backbone,
        GroupKind::SemanticHead,
        GroupKind::RotationHead,
        GroupKind::AuxiliaryHead,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupKind::Backbone => "backbone",
            GroupKind::SemanticHead => "semantic_head",
            GroupKind::RotationHead => "rotation_head",
            GroupKind::AuxiliaryHead => "auxiliary_head",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Semantic,
    Rotation,
    Auxiliary,
}

impl HeadKind {
    pub fn group(self) -> GroupKind {
        match self {
            HeadKind::Semantic => GroupKind::SemanticHead,
            HeadKind::Rotation => GroupKind::RotationHead,
            HeadKind::Auxiliary => GroupKind::AuxiliaryHead,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Semantic => "semantic",
            HeadKind::Rotation => "rotation",
            HeadKind::Auxiliary => "auxiliary",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(HeadKind::Semantic),
            "rotation" => Ok(HeadKind::Rotation),
            "auxiliary" => Ok(HeadKind::Auxiliary),
            other => Err(Error::InvalidArgument {
                op: "head",
                reason: alloc::format!(
                    "unknown head `{other}` (expected semantic, rotation or auxiliary)"
                ),
            }),
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BackboneKind {
    Lenet5,
    Densenet40,
    TinyCnn,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Lenet5 => "lenet5",
            BackboneKind::Densenet40 => "densenet40",
            BackboneKind::TinyCnn => "tiny_cnn",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Self::Lenet5, Self::Densenet40, Self::TinyCnn]
            .into_iter()
            .find(|b| b.name() == name)
    }
}

/// Image geometry a model accepts: channels, height, width.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputSpec {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub num_classes: usize,
    pub init_seed: u64,
    pub head_hidden: Option<usize>,
    pub input: InputSpec,
}

impl ModelConfig {
    pub fn new(
        backbone: BackboneKind,
        num_classes: usize,
        input: InputSpec,
        init_seed: u64,
    ) -> Self {
        Self {
            backbone,
            num_classes,
            init_seed,
            head_hidden: None,
            input,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamRef {
    pub group: GroupKind,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup<T> {
    kind: GroupKind,
    params: Vec<Param<T>>,
    /// Optimizer steps skip frozen groups.
    pub frozen: bool,
}

impl<T: Scalar> ParamGroup<T> {
    pub fn new(kind: GroupKind) -> Self {
        Self {
            kind,
            params: Vec::new(),
            frozen: false,
        }
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    /// Appends a trainable tensor and returns its reference.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamRef {
        self.params.push(Param {
            name: name.into(),
            tensor: tensor.with_grad(),
        });
        ParamRef {
            group: self.kind,
            index: self.params.len() - 1,
        }
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Parameter values only; gradients are not part of a snapshot.
    pub fn snapshot(&self) -> GroupSnapshot<T> {
        GroupSnapshot {
            kind: self.kind,
            tensors: self
                .params
                .iter()
                .map(|p| {
                    let mut t = p.tensor.clone();
                    t.clear_grad();
                    (p.name.clone(), t)
                })
                .collect(),
        }
    }

    /// Bitwise comparison against a snapshot of the same group.
    pub fn matches(&self, snap: &GroupSnapshot<T>) -> bool {
        snap.kind == self.kind
            && snap.tensors.len() == self.params.len()
            && self
                .params
                .iter()
                .zip(&snap.tensors)
                .all(|(p, (name, t))| &p.name == name && p.tensor.bitwise_eq(t))
    }

    pub fn restore(&mut self, snap: &GroupSnapshot<T>) -> Result<()> {
        self.check_fit(snap)?;
        for (p, (_, t)) in self.params.iter_mut().zip(&snap.tensors) {
            p.tensor.data_mut().copy_from_slice(t.data());
            p.tensor.clear_grad();
        }
        Ok(())
    }

    fn check_fit(&self, snap: &GroupSnapshot<T>) -> Result<()> {
        if snap.kind != self.kind || snap.tensors.len() != self.params.len() {
            return Err(Error::InvalidArgument {
                op: "restore",
                reason: alloc::format!(
                    "snapshot of {} with {} tensors does not fit {} with {}",
                    snap.kind,
                    snap.tensors.len(),
                    self.kind,
                    self.params.len()
                ),
            });
        }
        for (p, (name, t)) in self.params.iter().zip(&snap.tensors) {
            if p.tensor.shape() != t.shape() || &p.name != name {
                return Err(Error::ShapeDrift {
                    name: p.name.clone(),
                    expected: p.tensor.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// Byte-exact copy of one group's parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSnapshot<T> {
    kind: GroupKind,
    tensors: Vec<(String, Tensor<T>)>,
}

impl<T> GroupSnapshot<T> {
    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv2d {
        weight: ParamRef,
        bias: ParamRef,
        stride: usize,
        padding: usize,
    },
    Linear {
        weight: ParamRef,
        bias: ParamRef,
    },
    Relu,
    MaxPool2,
    AvgPool2,
    Flatten,
    GlobalAvgPool,
    /// Per-channel scale and shift.
    Affine {
        scale: ParamRef,
        shift: ParamRef,
    },
    /// Dense composite layer: `concat(x, conv3x3(relu(affine(x))))`.
    Dense {
        scale: ParamRef,
        shift: ParamRef,
        weight: ParamRef,
        bias: ParamRef,
    },
}

impl Layer {
    fn refs(&self) -> Vec<ParamRef> {
        match *self {
            Layer::Conv2d { weight, bias, .. } | Layer::Linear { weight, bias } => {
                alloc::vec![weight, bias]
            }
            Layer::Affine { scale, shift } => alloc::vec![scale, shift],
            Layer::Dense {
                scale,
                shift,
                weight,
                bias,
            } => alloc::vec![scale, shift, weight, bias],
            _ => Vec::new(),
        }
    }
}

/// Shared backbone plus semantic, rotation and auxiliary heads.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadModel<T> {
    config: ModelConfig,
    backbone: Vec<Layer>,
    heads: [Vec<Layer>; 3],
    groups: [ParamGroup<T>; 4],
    feature_dim: usize,
}

impl<T: Scalar> MultiHeadModel<T> {
    /// Assembles a model from explicit parts and checks it end to end.
    ///
    /// Every layer must reference parameters of its own section (backbone
    /// layers the backbone group, head layers their head's group), and a
    /// zero batch must flow through with the declared output widths.
    pub fn from_parts(
        config: ModelConfig,
        backbone: Vec<Layer>,
        semantic: Vec<Layer>,
        rotation: Vec<Layer>,
        auxiliary: Vec<Layer>,
        groups: [ParamGroup<T>; 4],
    ) -> Result<Self> {
        if config.num_classes < 2 {
            return Err(Error::InvalidArgument {
                op: "build_model",
                reason: alloc::format!(
                    "num_classes must be at least 2, got {}",
                    config.num_classes
                ),
            });
        }
        for (g, kind) in groups.iter().zip(GroupKind::ALL) {
            if g.kind != kind {
                return Err(Error::InvalidArgument {
                    op: "build_model",
                    reason: alloc::format!("group slot {kind} holds {}", g.kind),
                });
            }
        }
        let sections = [
            (&backbone, GroupKind::Backbone),
            (&semantic, GroupKind::SemanticHead),
            (&rotation, GroupKind::RotationHead),
            (&auxiliary, GroupKind::AuxiliaryHead),
        ];
        for (layers, kind) in sections {
            for r in layers.iter().flat_map(Layer::refs) {
                if r.group != kind || r.index >= groups[kind.index()].params.len() {
                    return Err(Error::InvalidArgument {
                        op: "build_model",
                        reason: alloc::format!(
                            "layer in {kind} references {}[{}]",
                            r.group,
                            r.index
                        ),
                    });
                }
            }
        }
        let mut model = Self {
            config,
            backbone,
            heads: [semantic, rotation, auxiliary],
            groups,
            feature_dim: 0,
        };
        let probe = Tensor::zeros([
            1,
            model.config.input.channels,
            model.config.input.height,
            model.config.input.width,
        ]);
        let mut g = model.graph();
        let x = g.input(&probe)?;
        let f = g.features_var(x)?;
        let fshape = g.tape().shape(f).to_vec();
        if fshape.len() != 2 {
            return Err(Error::Rank {
                op: "build_model",
                expected: 2,
                found: fshape.len(),
            });
        }
        let mut widths = [0usize; 3];
        for head in [HeadKind::Semantic, HeadKind::Rotation, HeadKind::Auxiliary] {
            let z = g.head(f, head)?;
            widths[head.slot()] = g.tape().shape(z)[1];
        }
        drop(g);
        let classes = model.config.num_classes;
        for (head, expect) in [
            (HeadKind::Semantic, classes),
            (HeadKind::Rotation, 4),
            (HeadKind::Auxiliary, classes),
        ] {
            if widths[head.slot()] != expect {
                return Err(Error::Dimension {
                    op: "build_model",
                    axis: head.name(),
                    expected: expect,
                    found: widths[head.slot()],
                });
            }
        }
        model.feature_dim = fshape[1];
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_spec(&self) -> InputSpec {
        self.config.input
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn backbone_layers(&self) -> &[Layer] {
        &self.backbone
    }

    pub fn head_layers(&self, head: HeadKind) -> &[Layer] {
        &self.heads[head.slot()]
    }

    pub fn groups(&self) -> &[ParamGroup<T>; 4] {
        &self.groups
    }

    pub fn group(&self, kind: GroupKind) -> &ParamGroup<T> {
        &self.groups[kind.index()]
    }

    pub fn group_mut(&mut self, kind: GroupKind) -> &mut ParamGroup<T> {
        &mut self.groups[kind.index()]
    }

    pub fn param(&self, r: ParamRef) -> &Tensor<T> {
        &self.groups[r.group.index()].params[r.index].tensor
    }

    pub fn param_mut(&mut self, r: ParamRef) -> &mut Tensor<T> {
        &mut self.groups[r.group.index()].params[r.index].tensor
    }

    pub fn num_params(&self) -> usize {
        self.groups.iter().map(ParamGroup::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.groups {
            for p in &mut g.params {
                p.tensor.clear_grad();
            }
        }
    }

    pub fn snapshot(&self) -> [GroupSnapshot<T>; 4] {
        [
            self.groups[0].snapshot(),
            self.groups[1].snapshot(),
            self.groups[2].snapshot(),
            self.groups[3].snapshot(),
        ]
    }

    /// Restores all four groups, or none if any snapshot does not fit.
    pub fn restore(&mut self, snap: &[GroupSnapshot<T>; 4]) -> Result<()> {
        for (g, s) in self.groups.iter().zip(snap) {
            g.check_fit(s)?;
        }
        for (g, s) in self.groups.iter_mut().zip(snap) {
            g.restore(s)?;
        }
        Ok(())
    }

    /// Copies every parameter value of `src` head onto `dst` head.
    pub fn copy_head(&mut self, src: HeadKind, dst: HeadKind) -> Result<()> {
        let from = self.groups[src.group().index()].clone();
        let to = &mut self.groups[dst.group().index()];
        if from.params.len() != to.params.len() {
            return Err(Error::InvalidArgument {
                op: "copy_head",
                reason: alloc::format!("{src} and {dst} heads differ in layout"),
            });
        }
        for (d, s) in to.params.iter_mut().zip(&from.params) {
            if d.tensor.shape() != s.tensor.shape() {
                return Err(Error::ShapeDrift {
                    name: d.name.clone(),
                    expected: d.tensor.shape().to_vec(),
                    found: s.tensor.shape().to_vec(),
                });
            }
            d.tensor.data_mut().copy_from_slice(s.tensor.data());
        }
        Ok(())
    }

    /// Opens a fresh tape with every parameter bound as a leaf.
    pub fn graph(&self) -> Graph<'_, T> {
        Graph::new(self)
    }

    /// Backbone features of a batch, computed without gradients.
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::detached(self);
        let xv = g.input(x)?;
        let f = g.features_var(xv)?;
        Ok(g.tape().tensor(f))
    }

    /// Raw logits of one head, computed without gradients.
    pub fn logits(&self, x: &Tensor<T>, head: HeadKind) -> Result<Tensor<T>> {
        let mut g = Graph::detached(self);
        let xv = g.input(x)?;
        let f = g.features_var(xv)?;
        let z = g.head(f, head)?;
        Ok(g.tape().tensor(z))
    }

    /// Logits of a head applied to given features.
    pub fn head_logits(&self, features: &Tensor<T>, head: HeadKind) -> Result<Tensor<T>> {
        let mut g = Graph::detached(self);
        let f = g.tape_mut().leaf(features);
        let z = g.head(f, head)?;
        Ok(g.tape().tensor(z))
    }

    /// Converts parameter values to another element type.
    pub fn cast<U: Scalar>(&self) -> MultiHeadModel<U> {
        let cast_group = |g: &ParamGroup<T>| ParamGroup {
            kind: g.kind,
            params: g
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
            frozen: g.frozen,
        };
        MultiHeadModel {
            config: self.config.clone(),
            backbone: self.backbone.clone(),
            heads: self.heads.clone(),
            groups: [
                cast_group(&self.groups[0]),
                cast_group(&self.groups[1]),
                cast_group(&self.groups[2]),
                cast_group(&self.groups[3]),
            ],
            feature_dim: self.feature_dim,
        }
    }
}

/// Deterministic construction from `cfg`.
pub fn build_model<T: Scalar>(cfg: &ModelConfig) -> Result<MultiHeadModel<T>> {
    arch::build(cfg)
}
