//! Shared oracles for the integration and acceptance suites.

#![allow(dead_code)]

pub mod straight_line;

use ossl::nn::{
    build_model, BackboneKind, GroupKind, InputSpec, ModelConfig, MultiHeadModel, ParamRef,
};
use ossl::rng;
use ossl::tensor::gradcheck::{compare_gradients, grad_check, GradCheckReport};
use ossl::tensor::one_hot;
use ossl::{Result, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-4;
pub const COMPOSITE_TOL: f64 = 1e-3;

pub fn randn(shape: &[usize], seed: u64, stream: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, stream);
    Tensor::from_fn(shape.to_vec(), |_| rng::normal(&mut r))
}

pub fn unit(shape: &[usize], seed: u64, stream: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, stream);
    Tensor::from_fn(shape.to_vec(), |_| {
        rng::uniform_symmetric(&mut r, 0.5) + 0.5
    })
}

/// `sum(v * r)` for a fixed random `r`, so every output element matters.
fn weighted_sum(t: &mut Tape<f64>, v: Var, r: &Tensor<f64>) -> Result<Var> {
    let c = t.constant(r.shape().to_vec(), r.data().to_vec())?;
    let m = t.mul(v, c)?;
    Ok(t.sum(m))
}

fn konst(t: &mut Tape<f64>, x: &Tensor<f64>) -> Result<Var> {
    t.constant(x.shape().to_vec(), x.data().to_vec())
}

/// Finite-difference checks of every differentiable tape op for one seed,
/// each with respect to every differentiable argument.
pub fn op_suite(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let s = seed;
    let x = randn(&[2, 3, 6, 6], s, 1);
    let k = randn(&[4, 3, 3, 3], s, 2);
    let b = randn(&[4], s, 3);
    let r_conv1 = randn(&[2, 4, 6, 6], s, 4);
    let r_conv2 = randn(&[2, 4, 2, 2], s, 5);
    let xl = randn(&[3, 5], s, 6);
    let w = randn(&[4, 5], s, 7);
    let bl = randn(&[4], s, 8);
    let r_lin = randn(&[3, 4], s, 9);
    let r_img = randn(&[2, 3, 6, 6], s, 10);
    let r_half = randn(&[2, 3, 3, 3], s, 11);
    let r_gap = randn(&[2, 3], s, 12);
    let scale = randn(&[3], s, 13);
    let shift = randn(&[3], s, 14);
    let other = randn(&[2, 2, 6, 6], s, 15);
    let r_cat = randn(&[2, 5, 6, 6], s, 16);
    let r_sel = randn(&[4, 5], s, 17);
    let logits = randn(&[5, 7], s, 18);
    let labels: Vec<usize> = (0..5).map(|i| ((s as usize) + 3 * i) % 7).collect();
    let y = one_hot::<f64>(&labels, 7).unwrap();
    let a2 = randn(&[3, 5], s, 19);
    let r_flat = randn(&[2, 108], s, 20);

    let mut out = Vec::new();
    let mut check = |name, f: &dyn Fn(&mut Tape<f64>, Var) -> Result<Var>, p: &Tensor<f64>| {
        out.push((name, grad_check(f, p, FD_STEP, OP_TOL).unwrap()));
    };

    check(
        "conv2d/input",
        &|t, v| {
            let (kv, bv) = (konst(t, &k)?, konst(t, &b)?);
            let c = t.conv2d(v, kv, bv, 1, 1)?;
            weighted_sum(t, c, &r_conv1)
        },
        &x,
    );
    check(
        "conv2d/kernel",
        &|t, v| {
            let (xv, bv) = (konst(t, &x)?, konst(t, &b)?);
            let c = t.conv2d(xv, v, bv, 2, 0)?;
            weighted_sum(t, c, &r_conv2)
        },
        &k,
    );
    check(
        "conv2d/bias",
        &|t, v| {
            let (xv, kv) = (konst(t, &x)?, konst(t, &k)?);
            let c = t.conv2d(xv, kv, v, 1, 1)?;
            weighted_sum(t, c, &r_conv1)
        },
        &b,
    );
    check(
        "linear/input",
        &|t, v| {
            let (wv, bv) = (konst(t, &w)?, konst(t, &bl)?);
            let z = t.linear(v, wv, bv)?;
            weighted_sum(t, z, &r_lin)
        },
        &xl,
    );
    check(
        "linear/weight",
        &|t, v| {
            let (xv, bv) = (konst(t, &xl)?, konst(t, &bl)?);
            let z = t.linear(xv, v, bv)?;
            weighted_sum(t, z, &r_lin)
        },
        &w,
    );
    check(
        "linear/bias",
        &|t, v| {
            let (xv, wv) = (konst(t, &xl)?, konst(t, &w)?);
            let z = t.linear(xv, wv, v)?;
            weighted_sum(t, z, &r_lin)
        },
        &bl,
    );
    check(
        "relu",
        &|t, v| {
            let r = t.relu(v);
            weighted_sum(t, r, &r_img)
        },
        &x,
    );
    check(
        "maxpool2",
        &|t, v| {
            let p = t.maxpool2(v)?;
            weighted_sum(t, p, &r_half)
        },
        &x,
    );
    check(
        "avgpool2",
        &|t, v| {
            let p = t.avgpool2(v)?;
            weighted_sum(t, p, &r_half)
        },
        &x,
    );
    check(
        "global_avg_pool",
        &|t, v| {
            let p = t.global_avg_pool(v)?;
            weighted_sum(t, p, &r_gap)
        },
        &x,
    );
    check(
        "channel_affine/input",
        &|t, v| {
            let (a, c) = (konst(t, &scale)?, konst(t, &shift)?);
            let z = t.channel_affine(v, a, c)?;
            weighted_sum(t, z, &r_img)
        },
        &x,
    );
    check(
        "channel_affine/scale",
        &|t, v| {
            let (xv, c) = (konst(t, &x)?, konst(t, &shift)?);
            let z = t.channel_affine(xv, v, c)?;
            weighted_sum(t, z, &r_img)
        },
        &scale,
    );
    check(
        "channel_affine/shift",
        &|t, v| {
            let (xv, a) = (konst(t, &x)?, konst(t, &scale)?);
            let z = t.channel_affine(xv, a, v)?;
            weighted_sum(t, z, &r_img)
        },
        &shift,
    );
    check(
        "concat_channels/first",
        &|t, v| {
            let o = konst(t, &other)?;
            let z = t.concat_channels(v, o)?;
            weighted_sum(t, z, &r_cat)
        },
        &x,
    );
    check(
        "concat_channels/second",
        &|t, v| {
            let o = konst(t, &x)?;
            let z = t.concat_channels(o, v)?;
            weighted_sum(t, z, &r_cat)
        },
        &other,
    );
    check(
        "select_rows",
        &|t, v| {
            let z = t.select_rows(v, &[2, 0, 2, 1])?;
            weighted_sum(t, z, &r_sel)
        },
        &a2,
    );
    check(
        "flatten",
        &|t, v| {
            let z = t.flatten(v)?;
            weighted_sum(t, z, &r_flat)
        },
        &x,
    );
    check(
        "softmax_cross_entropy",
        &|t, v| t.softmax_cross_entropy(v, &y),
        &logits,
    );
    check(
        "add",
        &|t, v| {
            let o = konst(t, &a2)?;
            let z = t.add(v, o)?;
            let z = t.mul(z, z)?;
            Ok(t.sum(z))
        },
        &xl,
    );
    check(
        "sub",
        &|t, v| {
            let o = konst(t, &a2)?;
            let z = t.sub(o, v)?;
            let z = t.mul(z, z)?;
            Ok(t.sum(z))
        },
        &xl,
    );
    check(
        "mul",
        &|t, v| {
            let o = konst(t, &a2)?;
            let z = t.mul(v, o)?;
            let z = t.mul(z, v)?;
            Ok(t.sum(z))
        },
        &xl,
    );
    check(
        "scale",
        &|t, v| {
            let z = t.scale(v, -1.75);
            weighted_sum(t, z, &a2)
        },
        &xl,
    );
    check("sum", &|t, v| Ok(t.sum(v)), &xl);
    out
}

/// Outcome of the end-to-end parameter-gradient check.
#[derive(Debug, Clone, Default)]
pub struct CompositeReport {
    pub max_rel: f64,
    pub mean_rel: f64,
    pub checked: usize,
    pub kinks: usize,
    pub worst: String,
}

pub fn lenet(seed: u64) -> MultiHeadModel<f64> {
    build_model(&ModelConfig::new(
        BackboneKind::Lenet5,
        10,
        InputSpec::new(1, 28, 28),
        seed,
    ))
    .unwrap()
}

/// `L_ch + L_rh + L_ah` of a model on one batch.
pub fn composite_loss(m: &MultiHeadModel<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> Result<f64> {
    let mut g = m.graph();
    let u = g.upper_loss(x, y)?;
    let a = g.auxiliary_loss(x, y)?;
    let total = g.tape_mut().add(u.total, a)?;
    Ok(g.tape().scalar(total))
}

/// Checks every LeNet-5 parameter tensor against central differences of the
/// summed semantic, rotation and auxiliary losses on a 2-image batch.
///
/// Tensors with at most `dense_limit` elements are checked in full; larger
/// ones at `per_tensor` positions drawn from the seed.
pub fn lenet_composite(seed: u64, per_tensor: usize, dense_limit: usize) -> CompositeReport {
    let model = lenet(seed);
    let x = unit(&[2, 1, 28, 28], seed, 100);
    let labels = [(seed % 10) as usize, ((seed + 3) % 10) as usize];
    let y = one_hot::<f64>(&labels, 10).unwrap();

    let mut g = model.graph();
    let u = g.upper_loss(&x, &y).unwrap();
    let a = g.auxiliary_loss(&x, &y).unwrap();
    let total = g.tape_mut().add(u.total, a).unwrap();
    g.backward(total).unwrap();
    let mut analytic = Vec::new();
    for kind in GroupKind::ALL {
        for (index, p) in model.group(kind).params().iter().enumerate() {
            let r = ParamRef { group: kind, index };
            let grad = g
                .grad(r)
                .map_or_else(|| vec![0.0; p.tensor.numel()], <[f64]>::to_vec);
            analytic.push((r, p.name.clone(), grad));
        }
    }
    drop(g);

    let mut report = CompositeReport::default();
    let mut sum = 0.0;
    let mut work = model.clone();
    let mut pick = rng::stream(seed, 200);
    for (r, name, grad) in analytic {
        let n = grad.len();
        let indices: Vec<usize> = if n <= dense_limit {
            (0..n).collect()
        } else {
            (0..per_tensor)
                .map(|_| ((rng::uniform_symmetric(&mut pick, 0.5) + 0.5) * n as f64) as usize % n)
                .collect()
        };
        let point = model.param(r).data().to_vec();
        let rep = compare_gradients(
            |data: &[f64]| {
                work.param_mut(r).data_mut().copy_from_slice(data);
                composite_loss(&work, &x, &y)
            },
            &point,
            &grad,
            &indices,
            FD_STEP,
            COMPOSITE_TOL,
        )
        .unwrap();
        work.param_mut(r).data_mut().copy_from_slice(&point);
        let counted = indices.len() - rep.kinks;
        sum += rep.mean_rel * counted as f64;
        report.checked += counted;
        report.kinks += rep.kinks;
        if rep.max_rel > report.max_rel {
            report.max_rel = rep.max_rel;
            report.worst = format!("{}/{}", r.group.name(), name);
        }
    }
    report.mean_rel = if report.checked == 0 {
        0.0
    } else {
        sum / report.checked as f64
    };
    report
}
