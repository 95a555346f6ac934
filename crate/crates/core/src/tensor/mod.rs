//! Dense tensors and the reverse-mode tape that differentiates them.

pub mod gemm;
pub mod gradcheck;
mod ops;
mod tape;

pub use tape::{Tape, Var};

use crate::{Error, Result, Scalar};
use alloc::vec;
use alloc::vec::Vec;

/// Row-major dense array with an optional gradient slot.
///
/// A tensor with `requires_grad == false` never carries a gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(Error::DataLength {
                shape,
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self {
            shape,
            data: vec![T::ZERO; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(f).collect();
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as a trainable leaf.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Turning gradients off drops any stored gradient.
    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if !self.requires_grad {
            return Err(Error::InvalidArgument {
                op: "set_grad",
                reason: "tensor does not require gradients".into(),
            });
        }
        if grad.len() != self.data.len() {
            return Err(Error::DataLength {
                shape: self.shape.clone(),
                expected: self.data.len(),
                found: grad.len(),
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(Error::DataLength {
                shape,
                expected: self.data.len(),
                found: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Element-type conversion; the gradient slot is not carried over.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    /// Same shape and identical bit patterns.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.bits() == b.bits())
    }

    /// Sub-tensor along the leading axis.
    pub fn index_axis0(&self, i: usize) -> Result<Self> {
        let (&n, rest) = self.shape.split_first().ok_or(Error::Rank {
            op: "index_axis0",
            expected: 1,
            found: 0,
        })?;
        if i >= n {
            return Err(Error::InvalidArgument {
                op: "index_axis0",
                reason: alloc::format!("index {i} out of range for extent {n}"),
            });
        }
        let stride = numel(rest);
        Tensor::new(
            rest.to_vec(),
            self.data[i * stride..(i + 1) * stride].to_vec(),
        )
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let Some(first) = items.first() else {
            return Err(Error::InvalidArgument {
                op: "stack",
                reason: "no tensors to stack".into(),
            });
        };
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::InvalidArgument {
                    op: "stack",
                    reason: alloc::format!("shape {:?} differs from {:?}", t.shape, first.shape),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::new(shape, data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One-hot rows for `labels` over `classes` columns.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut out = Tensor::zeros([labels.len(), classes]);
    for (row, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::InvalidArgument {
                op: "one_hot",
                reason: alloc::format!("label {label} outside 0..{classes}"),
            });
        }
        out.data[row * classes + label] = T::ONE;
    }
    Ok(out)
}
