use super::{GroupKind, HeadKind, Layer, MultiHeadModel, ParamRef};
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result, Scalar};
use alloc::vec::Vec;

/// One forward/backward pass over a model.
///
/// All parameters are placed on the tape as leaves when the graph opens;
/// gradients of every bound parameter are available after
/// [`Graph::backward`]. Which of them an optimizer applies is its own
/// decision.
pub struct Graph<'m, T: Scalar> {
    model: &'m MultiHeadModel<T>,
    tape: Tape<T>,
    bound: [Vec<Var>; 4],
}

impl<'m, T: Scalar> Graph<'m, T> {
    pub(crate) fn new(model: &'m MultiHeadModel<T>) -> Self {
        Self::bind(model, true)
    }

    /// Parameters enter as constants: nothing on this tape is differentiable.
    pub(crate) fn detached(model: &'m MultiHeadModel<T>) -> Self {
        Self::bind(model, false)
    }

    fn bind(model: &'m MultiHeadModel<T>, grads: bool) -> Self {
        let mut tape = Tape::new();
        let bound = core::array::from_fn(|g| {
            model.groups[g]
                .params
                .iter()
                .map(|p| {
                    if grads {
                        tape.leaf(&p.tensor)
                    } else {
                        tape.constant(p.tensor.shape().to_vec(), p.tensor.data().to_vec())
                            .expect("parameter tensors are well formed")
                    }
                })
                .collect()
        });
        Self { model, tape, bound }
    }

    pub fn model(&self) -> &'m MultiHeadModel<T> {
        self.model
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    pub fn tape_mut(&mut self) -> &mut Tape<T> {
        &mut self.tape
    }

    pub fn param_var(&self, r: ParamRef) -> Var {
        self.bound[r.group.index()][r.index]
    }

    /// Places an image batch on the tape after checking it against the
    /// model's input geometry.
    pub fn input(&mut self, x: &Tensor<T>) -> Result<Var> {
        let spec = self.model.input_spec();
        let shape = x.shape();
        if shape.len() != 4 {
            return Err(Error::Rank {
                op: "forward_features",
                expected: 4,
                found: shape.len(),
            });
        }
        for (axis, expected, found) in [
            ("channels", spec.channels, shape[1]),
            ("height", spec.height, shape[2]),
            ("width", spec.width, shape[3]),
        ] {
            if expected != found {
                return Err(Error::Dimension {
                    op: "forward_features",
                    axis,
                    expected,
                    found,
                });
            }
        }
        self.tape.constant(shape.to_vec(), x.data().to_vec())
    }

    /// Backbone features `[N, D]` of an input already on the tape.
    pub fn features_var(&mut self, x: Var) -> Result<Var> {
        let model = self.model;
        model
            .backbone
            .iter()
            .try_fold(x, |h, layer| self.apply(layer, h))
    }

    pub fn features(&mut self, x: &Tensor<T>) -> Result<Var> {
        let v = self.input(x)?;
        self.features_var(v)
    }

    /// Raw logits of `head` applied to features.
    pub fn head(&mut self, features: Var, head: HeadKind) -> Result<Var> {
        let model = self.model;
        model.heads[head.slot()]
            .iter()
            .try_fold(features, |h, layer| self.apply(layer, h))
    }

    fn apply(&mut self, layer: &Layer, x: Var) -> Result<Var> {
        let t = &mut self.tape;
        let p = |r: ParamRef| self.bound[r.group.index()][r.index];
        match *layer {
            Layer::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => t.conv2d(x, p(weight), p(bias), stride, padding),
            Layer::Linear { weight, bias } => t.linear(x, p(weight), p(bias)),
            Layer::Relu => Ok(t.relu(x)),
            Layer::MaxPool2 => t.maxpool2(x),
            Layer::AvgPool2 => t.avgpool2(x),
            Layer::Flatten => t.flatten(x),
            Layer::GlobalAvgPool => t.global_avg_pool(x),
            Layer::Affine { scale, shift } => t.channel_affine(x, p(scale), p(shift)),
            Layer::Dense {
                scale,
                shift,
                weight,
                bias,
            } => {
                let a = t.channel_affine(x, p(scale), p(shift))?;
                let r = t.relu(a);
                let c = t.conv2d(r, p(weight), p(bias), 1, 1)?;
                t.concat_channels(x, c)
            }
        }
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)
    }

    /// Gradient of a parameter; `None` when the loss does not depend on it.
    pub fn grad(&self, r: ParamRef) -> Option<&[T]> {
        self.tape.grad(self.param_var(r))
    }

    /// Gradients of one group in parameter order.
    pub fn group_grads(&self, kind: GroupKind) -> Vec<Option<&[T]>> {
        self.bound[kind.index()]
            .iter()
            .map(|&v| self.tape.grad(v))
            .collect()
    }
}
