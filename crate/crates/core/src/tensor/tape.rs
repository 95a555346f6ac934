//! Append-only reverse-mode tape.
//!
//! Nodes are stored in creation order, which is a topological order: every
//! operation can only reference nodes that already exist. `backward` walks
//! the sequence once in reverse.

use super::ops::{self, ConvGeom};
use super::{gemm, numel, Tensor};
use crate::{Error, Result, Scalar};
use alloc::vec;
use alloc::vec::Vec;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<u32>,
    },
    AvgPool2(Var),
    GlobalAvgPool(Var),
    Reshape(Var),
    ChannelAffine {
        input: Var,
        scale: Var,
        shift: Var,
    },
    ConcatChannels(Var, Var),
    SelectRows {
        input: Var,
        rows: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    shape: Vec<usize>,
    value: Vec<T>,
    requires_grad: bool,
}

/// Owns every intermediate of one forward pass.
///
/// A tape belongs to one thread for its whole life; values can be copied
/// out as [`Tensor`]s and shared freely.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

fn dims4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::Rank {
            op,
            expected: 4,
            found: shape.len(),
        }),
    }
}

fn dims2(op: &'static str, shape: &[usize]) -> Result<[usize; 2]> {
    match *shape {
        [n, d] => Ok([n, d]),
        _ => Err(Error::Rank {
            op,
            expected: 2,
            found: shape.len(),
        }),
    }
}

fn expect_dim(op: &'static str, axis: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            op,
            axis,
            expected,
            found,
        })
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>, value: Vec<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let id = Var(self.nodes.len() as u32);
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad,
        });
        self.grads.push(None);
        id
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.index()]
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    /// Records a copy of `t` as a leaf; it is differentiable iff `t` is.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(
            Op::Leaf,
            t.shape().to_vec(),
            t.data().to_vec(),
            t.requires_grad(),
        )
    }

    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(Op::Leaf, t.shape, t.data, false))
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// First element of a node, typically a scalar loss.
    pub fn scalar(&self, v: Var) -> T {
        self.node(v).value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = self.node(v);
        Tensor {
            shape: n.shape.clone(),
            data: n.value.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Gradient of the last `backward` with respect to a differentiable leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.index()].as_deref()
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, cin, h, w] = dims4(OP, self.shape(input))?;
        let [cout, kcin, kh, kw] = dims4(OP, self.shape(kernel))?;
        expect_dim(OP, "input channels", kcin, cin)?;
        let bshape = self.shape(bias);
        if bshape.len() != 1 {
            return Err(Error::Rank {
                op: OP,
                expected: 1,
                found: bshape.len(),
            });
        }
        expect_dim(OP, "bias", cout, bshape[0])?;
        if stride == 0 {
            return Err(Error::InvalidArgument {
                op: OP,
                reason: "stride must be positive".into(),
            });
        }
        if h + 2 * padding < kh {
            return Err(Error::Dimension {
                op: OP,
                axis: "height",
                expected: kh,
                found: h + 2 * padding,
            });
        }
        if w + 2 * padding < kw {
            return Err(Error::Dimension {
                op: OP,
                axis: "width",
                expected: kw,
                found: w + 2 * padding,
            });
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad: padding,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (w + 2 * padding - kw) / stride + 1,
        };
        let value = ops::conv2d_forward(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            &geom,
        );
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            vec![n, cout, geom.oh, geom.ow],
            value,
            rg,
        ))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "linear";
        let [n, d] = dims2(OP, self.shape(input))?;
        let [k, wd] = dims2(OP, self.shape(weight))?;
        expect_dim(OP, "inner", wd, d)?;
        let bshape = self.shape(bias);
        if bshape.len() != 1 {
            return Err(Error::Rank {
                op: OP,
                expected: 1,
                found: bshape.len(),
            });
        }
        expect_dim(OP, "bias", k, bshape[0])?;
        let value = ops::linear_forward(
            self.value(input),
            self.value(weight),
            self.value(bias),
            n,
            d,
            k,
        );
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(
            Op::Linear {
                input,
                weight,
                bias,
            },
            vec![n, k],
            value,
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .iter()
            .map(|&v| if v > T::ZERO { v } else { T::ZERO })
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.any_grad(&[x]);
        self.push(Op::Relu(x), shape, value, rg)
    }

    fn even_planes(&self, op: &'static str, x: Var) -> Result<[usize; 4]> {
        let [n, c, h, w] = dims4(op, self.shape(x))?;
        if h % 2 != 0 {
            return Err(Error::OddExtent {
                op,
                axis: "height",
                extent: h,
            });
        }
        if w % 2 != 0 {
            return Err(Error::OddExtent {
                op,
                axis: "width",
                extent: w,
            });
        }
        Ok([n, c, h, w])
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.even_planes("maxpool2", x)?;
        let (value, argmax) = ops::maxpool2_forward(self.value(x), n * c, h, w);
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Op::MaxPool2 { input: x, argmax },
            vec![n, c, h / 2, w / 2],
            value,
            rg,
        ))
    }

    pub fn avgpool2(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.even_planes("avgpool2", x)?;
        let value = ops::avgpool2_forward(self.value(x), n * c, h, w);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::AvgPool2(x), vec![n, c, h / 2, w / 2], value, rg))
    }

    /// `[N,C,H,W] -> [N,C]` mean over spatial positions.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = dims4("global_avg_pool", self.shape(x))?;
        let inv = T::ONE / T::from_usize(h * w);
        let value = self
            .value(x)
            .chunks_exact((h * w).max(1))
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::GlobalAvgPool(x), vec![n, c], value, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let have = self.value(x).len();
        if numel(&shape) != have {
            return Err(Error::DataLength {
                shape,
                expected: have,
                found: have,
            });
        }
        let value = self.value(x).to_vec();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Op::Reshape(x), shape, value, rg))
    }

    /// `[N, ...] -> [N, prod(...)]`
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x);
        let n = *shape.first().ok_or(Error::Rank {
            op: "flatten",
            expected: 2,
            found: 0,
        })?;
        let rest = numel(&shape[1..]);
        self.reshape(x, vec![n, rest])
    }

    /// Per-channel `x * scale[c] + shift[c]` on `[N,C,...]`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        const OP: &str = "channel_affine";
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::Rank {
                op: OP,
                expected: 2,
                found: shape.len(),
            });
        }
        let c = shape[1];
        expect_dim(OP, "scale", c, self.value(scale).len())?;
        expect_dim(OP, "shift", c, self.value(shift).len())?;
        let inner = numel(&shape[2..]);
        let (sc, sh) = (self.value(scale), self.value(shift));
        let mut value = self.value(x).to_vec();
        for (i, v) in value.iter_mut().enumerate() {
            let ch = (i / inner) % c;
            *v = *v * sc[ch] + sh[ch];
        }
        let rg = self.any_grad(&[x, scale, shift]);
        Ok(self.push(
            Op::ChannelAffine {
                input: x,
                scale,
                shift,
            },
            shape,
            value,
            rg,
        ))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "concat_channels";
        let [n, ca, h, w] = dims4(OP, self.shape(a))?;
        let [nb, cb, hb, wb] = dims4(OP, self.shape(b))?;
        expect_dim(OP, "batch", n, nb)?;
        expect_dim(OP, "height", h, hb)?;
        expect_dim(OP, "width", w, wb)?;
        let (la, lb) = (ca * h * w, cb * h * w);
        let mut value = Vec::with_capacity(n * (la + lb));
        for i in 0..n {
            value.extend_from_slice(&self.value(a)[i * la..(i + 1) * la]);
            value.extend_from_slice(&self.value(b)[i * lb..(i + 1) * lb]);
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::ConcatChannels(a, b), vec![n, ca + cb, h, w], value, rg))
    }

    /// Gathers rows of the leading axis in the given order.
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.first().ok_or(Error::Rank {
            op: "select_rows",
            expected: 1,
            found: 0,
        })?;
        let stride = numel(&shape[1..]);
        let mut value = Vec::with_capacity(rows.len() * stride);
        for &r in rows {
            if r >= n {
                return Err(Error::InvalidArgument {
                    op: "select_rows",
                    reason: alloc::format!("row {r} outside 0..{n}"),
                });
            }
            value.extend_from_slice(&self.value(x)[r * stride..(r + 1) * stride]);
        }
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Op::SelectRows {
                input: x,
                rows: rows.to_vec(),
            },
            out_shape,
            value,
            rg,
        ))
    }

    /// Mean cross entropy of `softmax(logits)` against one-hot `targets`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let [n, k] = dims2(OP, self.shape(logits))?;
        let [tn, tk] = dims2(OP, targets.shape())?;
        expect_dim(OP, "batch", n, tn)?;
        expect_dim(OP, "classes", k, tk)?;
        if n == 0 || k == 0 {
            return Err(Error::InvalidArgument {
                op: OP,
                reason: "empty logits".into(),
            });
        }
        let mut labels = Vec::with_capacity(n);
        for (row, t) in targets.data().chunks_exact(k).enumerate() {
            let mut hot = None;
            for (j, &v) in t.iter().enumerate() {
                if v == T::ONE && hot.is_none() {
                    hot = Some(j);
                } else if v != T::ZERO {
                    return Err(Error::NotOneHot { row });
                }
            }
            labels.push(hot.ok_or(Error::NotOneHot { row })?);
        }
        let (losses, probs) = ops::softmax_ce_rows(self.value(logits), &labels, k);
        let loss = ops::shifted_mean(&losses);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            },
            vec![1],
            vec![loss],
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != sb.len() {
            return Err(Error::Rank {
                op,
                expected: sa.len(),
                found: sb.len(),
            });
        }
        for (&x, &y) in sa.iter().zip(sb) {
            expect_dim(op, "elementwise", x, y)?;
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op<T>, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Var {
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.any_grad(&[a, b]);
        self.push(op, shape, value, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.any_grad(&[x]);
        self.push(Op::Scale(x, c), shape, value, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().copied().sum::<T>();
        let rg = self.any_grad(&[x]);
        self.push(Op::Sum(x), vec![1], vec![total], rg)
    }

    /// Clears all gradients so `backward` may run again.
    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    /// Propagates `d loss / d node` to every differentiable leaf.
    ///
    /// Intermediate gradients are released once consumed; only leaf
    /// gradients remain readable through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.node(loss).value.len();
        if numel != 1 {
            return Err(Error::NotScalar { numel });
        }
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        self.backward_done = true;
        if !self.node(loss).requires_grad {
            return Ok(());
        }
        self.grads[loss.index()] = Some(vec![T::ONE]);
        for idx in (0..=loss.index()).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: &[T]) {
        if !self.nodes[v.index()].requires_grad {
            return;
        }
        match &mut self.grads[v.index()] {
            Some(g) => add_into(g, delta),
            slot @ None => *slot = Some(delta.to_vec()),
        }
    }

    fn accumulate_owned(&mut self, v: Var, delta: Vec<T>) {
        if !self.nodes[v.index()].requires_grad {
            return;
        }
        match &mut self.grads[v.index()] {
            Some(g) => add_into(g, &delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, idx: usize, g: &[T]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let need = [
                    self.requires_grad(input),
                    self.requires_grad(kernel),
                    self.requires_grad(bias),
                ];
                let grads =
                    ops::conv2d_backward(self.value(input), self.value(kernel), g, &geom, need);
                if let Some(d) = grads.input {
                    self.accumulate_owned(input, d);
                }
                if let Some(d) = grads.kernel {
                    self.accumulate_owned(kernel, d);
                }
                if let Some(d) = grads.bias {
                    self.accumulate_owned(bias, d);
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let [n, d] = dims2("linear", self.shape(input)).expect("checked at record time");
                let k = self.shape(weight)[0];
                if self.requires_grad(input) {
                    let mut dx = vec![T::ZERO; n * d];
                    gemm::gemm_nn(n, k, d, g, self.value(weight), &mut dx);
                    self.accumulate_owned(input, dx);
                }
                if self.requires_grad(weight) {
                    let mut dw = vec![T::ZERO; k * d];
                    gemm::gemm_tn(k, n, d, g, self.value(input), &mut dw);
                    self.accumulate_owned(weight, dw);
                }
                if self.requires_grad(bias) {
                    let mut db = vec![T::ZERO; k];
                    if k > 0 {
                        for row in g.chunks_exact(k) {
                            add_into(&mut db, row);
                        }
                    }
                    self.accumulate_owned(bias, db);
                }
            }
            Op::Relu(x) => {
                let d = self
                    .value(x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > T::ZERO { gv } else { T::ZERO })
                    .collect();
                self.accumulate_owned(x, d);
            }
            Op::MaxPool2 { input, argmax } => {
                let mut d = vec![T::ZERO; self.value(input).len()];
                for (&a, &gv) in argmax.iter().zip(g) {
                    d[a as usize] += gv;
                }
                self.accumulate_owned(input, d);
            }
            Op::AvgPool2(x) => {
                let [n, c, h, w] =
                    dims4("avgpool2", self.shape(x)).expect("checked at record time");
                let d = ops::avgpool2_backward(g, n * c, h, w);
                self.accumulate_owned(x, d);
            }
            Op::GlobalAvgPool(x) => {
                let [_, _, h, w] =
                    dims4("global_avg_pool", self.shape(x)).expect("checked at record time");
                let area = h * w;
                let inv = T::ONE / T::from_usize(area);
                let mut d = Vec::with_capacity(g.len() * area);
                for &gv in g {
                    d.extend(core::iter::repeat(gv * inv).take(area));
                }
                self.accumulate_owned(x, d);
            }
            Op::Reshape(x) => self.accumulate(x, g),
            Op::ChannelAffine {
                input,
                scale,
                shift,
            } => {
                let shape = self.shape(input).to_vec();
                let c = shape[1];
                let inner = numel(&shape[2..]);
                let x = self.value(input);
                let sc = self.value(scale);
                let mut dx = vec![T::ZERO; x.len()];
                let mut dscale = vec![T::ZERO; c];
                let mut dshift = vec![T::ZERO; c];
                for (i, (&gv, &xv)) in g.iter().zip(x).enumerate() {
                    let ch = (i / inner) % c;
                    dx[i] = gv * sc[ch];
                    dscale[ch] += gv * xv;
                    dshift[ch] += gv;
                }
                self.accumulate_owned(input, dx);
                self.accumulate_owned(scale, dscale);
                self.accumulate_owned(shift, dshift);
            }
            Op::ConcatChannels(a, b) => {
                let [n, ca, h, w] = dims4("concat", self.shape(a)).expect("checked at record time");
                let cb = self.shape(b)[1];
                let (la, lb) = (ca * h * w, cb * h * w);
                let mut da = Vec::with_capacity(n * la);
                let mut db = Vec::with_capacity(n * lb);
                for chunk in g.chunks_exact(la + lb) {
                    da.extend_from_slice(&chunk[..la]);
                    db.extend_from_slice(&chunk[la..]);
                }
                self.accumulate_owned(a, da);
                self.accumulate_owned(b, db);
            }
            Op::SelectRows { input, rows } => {
                let stride = numel(&self.shape(input)[1..]);
                let mut d = vec![T::ZERO; self.value(input).len()];
                for (i, &r) in rows.iter().enumerate() {
                    add_into(
                        &mut d[r * stride..(r + 1) * stride],
                        &g[i * stride..(i + 1) * stride],
                    );
                }
                self.accumulate_owned(input, d);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len();
                let k = probs.len() / n;
                let scale = g[0] / T::from_usize(n);
                let mut d = probs;
                for (row, &y) in d.chunks_exact_mut(k).zip(&labels) {
                    row[y] -= T::ONE;
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                self.accumulate_owned(logits, d);
            }
            Op::Add(a, b) => {
                self.accumulate(a, g);
                self.accumulate(b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g);
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                self.accumulate_owned(b, neg);
            }
            Op::Mul(a, b) => {
                let da = g
                    .iter()
                    .zip(self.value(b))
                    .map(|(&gv, &bv)| gv * bv)
                    .collect();
                let db = g
                    .iter()
                    .zip(self.value(a))
                    .map(|(&gv, &av)| gv * av)
                    .collect();
                self.accumulate_owned(a, da);
                self.accumulate_owned(b, db);
            }
            Op::Scale(x, c) => {
                let d = g.iter().map(|&v| v * c).collect();
                self.accumulate_owned(x, d);
            }
            Op::Sum(x) => {
                let n = self.value(x).len();
                self.accumulate_owned(x, vec![g[0]; n]);
            }
        }
    }
}
