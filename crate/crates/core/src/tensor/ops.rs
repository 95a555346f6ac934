//! Forward and backward kernels behind the tape operations.

use super::gemm::{gemm_nn, gemm_tn, transpose};
use crate::Scalar;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, col: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        dst[oy * g.ow + ox] =
                            if iy >= 0 && (iy as usize) < g.h && ix >= 0 && (ix as usize) < g.w {
                                img[(ci * g.h + iy as usize) * g.w + ix as usize]
                            } else {
                                T::ZERO
                            };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, img: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.w {
                            continue;
                        }
                        img[(ci * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], kernel: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let (k, p) = (g.patch(), g.positions());
    let img_len = g.cin * g.h * g.w;
    let out_len = g.cout * p;
    let mut out = vec![T::ZERO; g.n * out_len];
    let mut col = vec![T::ZERO; k * p];
    for (img, dst) in x.chunks_exact(img_len).zip(out.chunks_exact_mut(out_len)) {
        im2col(img, g, &mut col);
        gemm_nn(g.cout, k, p, kernel, &col, dst);
        for (plane, &b) in dst.chunks_exact_mut(p).zip(bias) {
            for v in plane {
                *v += b;
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dout: &[T],
    g: &ConvGeom,
    need: [bool; 3],
) -> ConvGrads<T> {
    let (k, p) = (g.patch(), g.positions());
    let img_len = g.cin * g.h * g.w;
    let out_len = g.cout * p;
    let mut dx = need[0].then(|| vec![T::ZERO; x.len()]);
    let mut dk = need[1].then(|| vec![T::ZERO; kernel.len()]);
    let mut db = need[2].then(|| vec![T::ZERO; g.cout]);
    let mut col = vec![T::ZERO; k * p];
    let mut dcol = vec![T::ZERO; k * p];
    for i in 0..g.n {
        let d = &dout[i * out_len..(i + 1) * out_len];
        if let Some(db) = db.as_mut() {
            for (acc, plane) in db.iter_mut().zip(d.chunks_exact(p)) {
                for &v in plane {
                    *acc += v;
                }
            }
        }
        if let Some(dk) = dk.as_mut() {
            im2col(&x[i * img_len..(i + 1) * img_len], g, &mut col);
            let col_t = transpose(k, p, &col);
            gemm_nn(g.cout, p, k, d, &col_t, dk);
        }
        if let Some(dx) = dx.as_mut() {
            dcol.fill(T::ZERO);
            gemm_tn(k, g.cout, p, kernel, d, &mut dcol);
            col2im(&dcol, g, &mut dx[i * img_len..(i + 1) * img_len]);
        }
    }
    ConvGrads {
        input: dx,
        kernel: dk,
        bias: db,
    }
}

/// `out[n×k] = x[n×d] · wᵀ + b`
pub(crate) fn linear_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    n: usize,
    d: usize,
    k: usize,
) -> Vec<T> {
    let wt = transpose(k, d, w);
    let mut out = vec![T::ZERO; n * k];
    gemm_nn(n, d, k, x, &wt, &mut out);
    if k > 0 {
        for row in out.chunks_exact_mut(k) {
            for (v, &bias) in row.iter_mut().zip(b) {
                *v += bias;
            }
        }
    }
    out
}

/// 2×2 stride-2 max; ties resolve to the first element in row-major order.
pub(crate) fn maxpool2_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn avgpool2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i = base + 2 * oy * w + 2 * ox;
                out.push((x[i] + x[i + 1] + x[i + w] + x[i + w + 1]) * quarter);
            }
        }
    }
    out
}

pub(crate) fn avgpool2_backward<T: Scalar>(
    dout: &[T],
    planes: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::from_f64(0.25);
    let mut dx = vec![T::ZERO; planes * h * w];
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dout[(pl * oh + oy) * ow + ox] * quarter;
                let i = base + 2 * oy * w + 2 * ox;
                dx[i] += g;
                dx[i + 1] += g;
                dx[i + w] += g;
                dx[i + w + 1] += g;
            }
        }
    }
    dx
}

/// Per-row loss of a max-shifted log-sum-exp cross entropy plus the softmax.
pub(crate) fn softmax_ce_rows<T: Scalar>(
    logits: &[T],
    labels: &[usize],
    k: usize,
) -> (Vec<T>, Vec<T>) {
    let mut losses = Vec::with_capacity(labels.len());
    let mut probs = vec![T::ZERO; logits.len()];
    for ((row, p), &y) in logits
        .chunks_exact(k)
        .zip(probs.chunks_exact_mut(k))
        .zip(labels)
    {
        let mut m = row[0];
        for &v in &row[1..] {
            if v > m {
                m = v;
            }
        }
        let mut s = T::ZERO;
        for (pv, &v) in p.iter_mut().zip(row) {
            *pv = (v - m).exp();
            s += *pv;
        }
        for pv in p.iter_mut() {
            *pv /= s;
        }
        losses.push(s.ln() - (row[y] - m));
    }
    (losses, probs)
}

/// Mean taken relative to the first term, so equal terms average exactly.
pub(crate) fn shifted_mean<T: Scalar>(values: &[T]) -> T {
    let Some(&first) = values.first() else {
        return T::ZERO;
    };
    let mut acc = T::ZERO;
    for &v in &values[1..] {
        acc += v - first;
    }
    first + acc / T::from_usize(values.len())
}
