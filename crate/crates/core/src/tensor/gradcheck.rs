//! Central finite-difference oracle for tape gradients.
//!
//! Elements where the difference quotient itself is unstable sit on a kink of
//! relu or max-pool and are excluded from the error statistics; they are
//! counted in `kinks`. The quotient is taken at `h`, `h/10` and `h/100`: on
//! a smooth stretch all three agree to `O(h²)`, while a kink closer than `h`
//! biases the wider steps by a share of the jump in slope. A wrong analytic
//! gradient still shows, as three agreeing quotients that miss it.

use super::{Tape, Tensor, Var};
use crate::{Error, Result, Scalar};
use alloc::vec::Vec;

/// Magnitude below which relative error degrades to absolute error.
pub const DENOM_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel: f64,
    pub mean_rel: f64,
    /// Relative error per checked element, `NaN` for excluded kinks.
    pub rel: Vec<f64>,
    pub indices: Vec<usize>,
    pub kinks: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel < self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
    (analytic - numeric).abs() / denom
}

fn central<T: Scalar>(
    f: &mut impl FnMut(&[T]) -> Result<T>,
    point: &mut [T],
    i: usize,
    h: T,
) -> Result<f64> {
    let orig = point[i];
    point[i] = orig + h;
    let plus = f(point)?.to_f64();
    point[i] = orig - h;
    let minus = f(point)?.to_f64();
    point[i] = orig;
    Ok((plus - minus) / (2.0 * h.to_f64()))
}

/// Compares `analytic` with central differences of `value` at `indices`.
pub fn compare_gradients<T: Scalar>(
    mut value: impl FnMut(&[T]) -> Result<T>,
    point: &[T],
    analytic: &[T],
    indices: &[usize],
    step: T,
    tol: f64,
) -> Result<GradCheckReport> {
    if analytic.len() != point.len() {
        return Err(Error::DataLength {
            shape: alloc::vec![point.len()],
            expected: point.len(),
            found: analytic.len(),
        });
    }
    let mut x = point.to_vec();
    let finer = [step * T::from_f64(0.1), step * T::from_f64(0.01)];
    let mut rel = Vec::with_capacity(indices.len());
    let (mut max_rel, mut sum, mut counted, mut kinks) = (0.0f64, 0.0f64, 0usize, 0usize);
    for &i in indices {
        let coarse = central(&mut value, &mut x, i, step)?;
        let mut kinked = false;
        for h in finer {
            kinked |= relative_error(coarse, central(&mut value, &mut x, i, h)?) > tol;
        }
        if kinked {
            kinks += 1;
            rel.push(f64::NAN);
            continue;
        }
        let e = relative_error(analytic[i].to_f64(), coarse);
        max_rel = max_rel.max(e);
        sum += e;
        counted += 1;
        rel.push(e);
    }
    Ok(GradCheckReport {
        max_rel,
        mean_rel: if counted == 0 {
            0.0
        } else {
            sum / counted as f64
        },
        rel,
        indices: indices.to_vec(),
        kinks,
        tol,
    })
}

/// Checks the tape gradient of a scalar function `f` at `point`, every element.
pub fn grad_check<T: Scalar>(
    f: impl Fn(&mut Tape<T>, Var) -> Result<Var>,
    point: &Tensor<T>,
    step: T,
    tol: f64,
) -> Result<GradCheckReport> {
    let all: Vec<usize> = (0..point.numel()).collect();
    grad_check_at(f, point, step, tol, &all)
}

/// As [`grad_check`], restricted to `indices`.
pub fn grad_check_at<T: Scalar>(
    f: impl Fn(&mut Tape<T>, Var) -> Result<Var>,
    point: &Tensor<T>,
    step: T,
    tol: f64,
    indices: &[usize],
) -> Result<GradCheckReport> {
    let shape = point.shape().to_vec();
    let mut tape = Tape::new();
    let x = tape.leaf(&point.clone().with_grad());
    let y = f(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape
        .grad(x)
        .map(<[T]>::to_vec)
        .unwrap_or_else(|| alloc::vec![T::ZERO; point.numel()]);
    let value = |data: &[T]| -> Result<T> {
        let mut t = Tape::new();
        let v = t.constant(shape.clone(), data.to_vec())?;
        let out = f(&mut t, v)?;
        Ok(t.scalar(out))
    };
    compare_gradients(value, point.data(), &analytic, indices, step, tol)
}
