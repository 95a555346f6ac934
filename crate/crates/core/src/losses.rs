//! Task losses and the two bi-level objectives.
//!
//! * `L_ch`: cross entropy of the semantic head on the unrotated batch.
//! * `L_rh`: mean over the four rotations of the rotation head's cross
//!   entropy on the rotated copies.
//! * `L_ah`: cross entropy of the auxiliary head on the unrotated batch.
//! * `L_upper = L_ch + L_rh`, `L_lower = L_ch - L_ah` (or `L_ch - L_rh`
//!   under [`LowerVariant::Rh`]).
//!
//! Losses only build the graph. Which parameters move is decided by the
//! optimizer in [`crate::bilevel`].

use crate::nn::{Graph, HeadKind, MultiHeadModel};
use crate::rotation::{make_rotation_batch, ROTATIONS};
use crate::tensor::{one_hot, Tensor, Var};
use crate::{Error, Result, Scalar};

/// Second term of the lower objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum LowerVariant {
    /// `L_ch - L_ah`
    #[default]
    Ah,
    /// `L_ch - L_rh`, kept for ablation.
    Rh,
}

impl LowerVariant {
    pub fn name(self) -> &'static str {
        match self {
            LowerVariant::Ah => "ah",
            LowerVariant::Rh => "rh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "ah" => Some(LowerVariant::Ah),
            "rh" => Some(LowerVariant::Rh),
            _ => None,
        }
    }
}

/// Loss values of one batch in natural-log units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBundle<T> {
    pub l_ch: T,
    pub l_rh: T,
    pub l_ah: T,
    pub l_upper: T,
    pub l_lower: T,
}

#[derive(Clone, Copy, Debug)]
pub struct UpperTerms {
    pub l_ch: Var,
    pub l_rh: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LowerTerms {
    pub l_ch: Var,
    /// `L_ah`, or `L_rh` under the ablation variant.
    pub subtracted: Var,
    pub total: Var,
}

impl<T: Scalar> Graph<'_, T> {
    fn check_targets(&self, op: &'static str, y: &Tensor<T>) -> Result<()> {
        let classes = self.model().num_classes();
        match *y.shape() {
            [_, k] if k == classes => Ok(()),
            [_, k] => Err(Error::Dimension {
                op,
                axis: "classes",
                expected: classes,
                found: k,
            }),
            _ => Err(Error::Rank {
                op,
                expected: 2,
                found: y.rank(),
            }),
        }
    }

    /// Cross entropy of `head` on features already on the tape.
    pub fn head_loss(&mut self, features: Var, head: HeadKind, y: &Tensor<T>) -> Result<Var> {
        let z = self.head(features, head)?;
        self.tape_mut().softmax_cross_entropy(z, y)
    }

    pub fn semantic_loss(&mut self, x: &Tensor<T>, y: &Tensor<T>) -> Result<Var> {
        self.check_targets("semantic_loss", y)?;
        let f = self.features(x)?;
        self.head_loss(f, HeadKind::Semantic, y)
    }

    pub fn auxiliary_loss(&mut self, x: &Tensor<T>, y: &Tensor<T>) -> Result<Var> {
        self.check_targets("auxiliary_loss", y)?;
        let f = self.features(x)?;
        self.head_loss(f, HeadKind::Auxiliary, y)
    }

    /// Four-way rotation loss: `((CE_0 + CE_90) + CE_180) + CE_270`, scaled
    /// by 1/4, each `CE_r` a mean over the batch.
    pub fn rotation_loss(&mut self, x: &Tensor<T>) -> Result<Var> {
        let rb = make_rotation_batch(x)?;
        let f = self.features(&rb.images)?;
        let z = self.head(f, HeadKind::Rotation)?;
        let n = rb.len() / ROTATIONS;
        let mut total: Option<Var> = None;
        for r in 0..ROTATIONS {
            let rows = rb.rows_for(r);
            let zr = self.tape_mut().select_rows(z, &rows)?;
            let labels = alloc::vec![r; n];
            let ce = self
                .tape_mut()
                .softmax_cross_entropy(zr, &one_hot(&labels, ROTATIONS)?)?;
            total = Some(match total {
                None => ce,
                Some(acc) => self.tape_mut().add(acc, ce)?,
            });
        }
        let sum = total.expect("four rotation terms");
        Ok(self.tape_mut().scale(sum, T::from_f64(0.25)))
    }

    pub fn upper_loss(&mut self, x: &Tensor<T>, y: &Tensor<T>) -> Result<UpperTerms> {
        let l_ch = self.semantic_loss(x, y)?;
        let l_rh = self.rotation_loss(x)?;
        let total = self.tape_mut().add(l_ch, l_rh)?;
        Ok(UpperTerms { l_ch, l_rh, total })
    }

    /// Both cross entropies share one backbone pass over `x`.
    pub fn lower_loss(
        &mut self,
        x: &Tensor<T>,
        y: &Tensor<T>,
        variant: LowerVariant,
    ) -> Result<LowerTerms> {
        self.check_targets("lower_loss", y)?;
        let f = self.features(x)?;
        let l_ch = self.head_loss(f, HeadKind::Semantic, y)?;
        let subtracted = match variant {
            LowerVariant::Ah => self.head_loss(f, HeadKind::Auxiliary, y)?,
            LowerVariant::Rh => self.rotation_loss(x)?,
        };
        let total = self.tape_mut().sub(l_ch, subtracted)?;
        Ok(LowerTerms {
            l_ch,
            subtracted,
            total,
        })
    }
}

/// All loss values of a batch, computed without gradients.
pub fn loss_bundle<T: Scalar>(
    model: &MultiHeadModel<T>,
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<LossBundle<T>> {
    let y = one_hot(labels, model.num_classes())?;
    let mut g = model.graph();
    let f = g.features(x)?;
    let l_ch = g.head_loss(f, HeadKind::Semantic, &y)?;
    let l_ah = g.head_loss(f, HeadKind::Auxiliary, &y)?;
    let l_rh = g.rotation_loss(x)?;
    let t = g.tape_mut();
    let upper = t.add(l_ch, l_rh)?;
    let lower = t.sub(l_ch, l_ah)?;
    Ok(LossBundle {
        l_ch: t.scalar(l_ch),
        l_rh: t.scalar(l_rh),
        l_ah: t.scalar(l_ah),
        l_upper: t.scalar(upper),
        l_lower: t.scalar(lower),
    })
}
