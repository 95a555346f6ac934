//! Per-sample, loop-only reimplementation of the tiny CNN, its three heads,
//! the losses and hand-derived backpropagation. Shares nothing with the tape
//! beyond reading initial parameter values by name.

// Index loops are the point here: they mirror the math term by term.
#![allow(clippy::needless_range_loop)]

use ossl::nn::{GroupKind, MultiHeadModel};

#[derive(Clone, Debug)]
pub struct Dense {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub out: usize,
    pub inp: usize,
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub cout: usize,
    pub cin: usize,
}

#[derive(Clone, Debug)]
pub struct TinyNet {
    pub conv1: Conv,
    pub conv2: Conv,
    pub fc: Dense,
    pub semantic: Dense,
    pub rotation: Dense,
    pub auxiliary: Dense,
    pub side: usize,
}

fn named(model: &MultiHeadModel<f64>, kind: GroupKind, name: &str) -> (Vec<f64>, Vec<usize>) {
    let p = model
        .group(kind)
        .params()
        .iter()
        .find(|p| p.name == name)
        .unwrap_or_else(|| panic!("parameter {name} missing"));
    (p.tensor.data().to_vec(), p.tensor.shape().to_vec())
}

fn conv_from(model: &MultiHeadModel<f64>, prefix: &str) -> Conv {
    let (w, s) = named(model, GroupKind::Backbone, &format!("{prefix}.weight"));
    let (b, _) = named(model, GroupKind::Backbone, &format!("{prefix}.bias"));
    assert_eq!((s[2], s[3]), (3, 3));
    Conv {
        w,
        b,
        cout: s[0],
        cin: s[1],
    }
}

fn dense_from(model: &MultiHeadModel<f64>, kind: GroupKind, prefix: &str) -> Dense {
    let (w, s) = named(model, kind, &format!("{prefix}.weight"));
    let (b, _) = named(model, kind, &format!("{prefix}.bias"));
    Dense {
        w,
        b,
        out: s[0],
        inp: s[1],
    }
}

impl TinyNet {
    pub fn from_model(model: &MultiHeadModel<f64>) -> Self {
        let spec = model.input_spec();
        assert_eq!(spec.height, spec.width);
        Self {
            conv1: conv_from(model, "conv1"),
            conv2: conv_from(model, "conv2"),
            fc: dense_from(model, GroupKind::Backbone, "fc"),
            semantic: dense_from(model, GroupKind::SemanticHead, "semantic.fc"),
            rotation: dense_from(model, GroupKind::RotationHead, "rotation.fc"),
            auxiliary: dense_from(model, GroupKind::AuxiliaryHead, "auxiliary.fc"),
            side: spec.height,
        }
    }

    /// Every parameter of `group`, in the order the model stores them.
    pub fn flat(&self, kind: GroupKind) -> Vec<Vec<f64>> {
        match kind {
            GroupKind::Backbone => vec![
                self.conv1.w.clone(),
                self.conv1.b.clone(),
                self.conv2.w.clone(),
                self.conv2.b.clone(),
                self.fc.w.clone(),
                self.fc.b.clone(),
            ],
            GroupKind::SemanticHead => vec![self.semantic.w.clone(), self.semantic.b.clone()],
            GroupKind::RotationHead => vec![self.rotation.w.clone(), self.rotation.b.clone()],
            GroupKind::AuxiliaryHead => vec![self.auxiliary.w.clone(), self.auxiliary.b.clone()],
        }
    }
}

/// A network of zeros with the same layout, used to accumulate gradients.
fn zeros_like(n: &TinyNet) -> TinyNet {
    let mut net = n.clone();
    for v in [
        &mut net.conv1.w,
        &mut net.conv1.b,
        &mut net.conv2.w,
        &mut net.conv2.b,
        &mut net.fc.w,
        &mut net.fc.b,
        &mut net.semantic.w,
        &mut net.semantic.b,
        &mut net.rotation.w,
        &mut net.rotation.b,
        &mut net.auxiliary.w,
        &mut net.auxiliary.b,
    ] {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
    net
}

fn conv3x3(c: &Conv, x: &[f64], side: usize) -> Vec<f64> {
    let mut out = vec![0.0; c.cout * side * side];
    for o in 0..c.cout {
        for i in 0..side {
            for j in 0..side {
                let mut acc = c.b[o];
                for ci in 0..c.cin {
                    for ki in 0..3 {
                        for kj in 0..3 {
                            let (y, xx) = (i + ki, j + kj);
                            if y < 1 || xx < 1 || y > side || xx > side {
                                continue;
                            }
                            acc += c.w[((o * c.cin + ci) * 3 + ki) * 3 + kj]
                                * x[(ci * side + y - 1) * side + xx - 1];
                        }
                    }
                }
                out[(o * side + i) * side + j] = acc;
            }
        }
    }
    out
}

fn conv3x3_back(c: &Conv, g: &mut Conv, x: &[f64], side: usize, dout: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; c.cin * side * side];
    for o in 0..c.cout {
        for i in 0..side {
            for j in 0..side {
                let d = dout[(o * side + i) * side + j];
                g.b[o] += d;
                for ci in 0..c.cin {
                    for ki in 0..3 {
                        for kj in 0..3 {
                            let (y, xx) = (i + ki, j + kj);
                            if y < 1 || xx < 1 || y > side || xx > side {
                                continue;
                            }
                            let wi = ((o * c.cin + ci) * 3 + ki) * 3 + kj;
                            let xi = (ci * side + y - 1) * side + xx - 1;
                            g.w[wi] += d * x[xi];
                            dx[xi] += d * c.w[wi];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// 2×2 max pool; returns values and the winning input index of each output.
fn pool(x: &[f64], channels: usize, side: usize) -> (Vec<f64>, Vec<usize>) {
    let half = side / 2;
    let mut out = Vec::with_capacity(channels * half * half);
    let mut arg = Vec::with_capacity(channels * half * half);
    for c in 0..channels {
        for i in 0..half {
            for j in 0..half {
                let mut best = (f64::NEG_INFINITY, 0);
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let k = (c * side + 2 * i + di) * side + 2 * j + dj;
                    if x[k] > best.0 {
                        best = (x[k], k);
                    }
                }
                out.push(best.0);
                arg.push(best.1);
            }
        }
    }
    (out, arg)
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn affine(d: &Dense, x: &[f64]) -> Vec<f64> {
    (0..d.out)
        .map(|o| d.b[o] + (0..d.inp).map(|i| d.w[o * d.inp + i] * x[i]).sum::<f64>())
        .collect()
}

fn affine_back(d: &Dense, g: &mut Dense, x: &[f64], dz: &[f64]) -> Vec<f64> {
    let mut dx = vec![0.0; d.inp];
    for o in 0..d.out {
        g.b[o] += dz[o];
        for i in 0..d.inp {
            g.w[o * d.inp + i] += dz[o] * x[i];
            dx[i] += dz[o] * d.w[o * d.inp + i];
        }
    }
    dx
}

struct Trace {
    x: Vec<f64>,
    a1: Vec<f64>,
    p1: Vec<f64>,
    arg1: Vec<usize>,
    a2: Vec<f64>,
    flat: Vec<f64>,
    arg2: Vec<usize>,
    feat: Vec<f64>,
}

impl TinyNet {
    fn forward(&self, x: &[f64]) -> Trace {
        let s = self.side;
        let mut a1 = conv3x3(&self.conv1, x, s);
        relu(&mut a1);
        let (p1, arg1) = pool(&a1, self.conv1.cout, s);
        let mut a2 = conv3x3(&self.conv2, &p1, s / 2);
        relu(&mut a2);
        let (flat, arg2) = pool(&a2, self.conv2.cout, s / 2);
        let mut feat = affine(&self.fc, &flat);
        relu(&mut feat);
        Trace {
            x: x.to_vec(),
            a1,
            p1,
            arg1,
            a2,
            flat,
            arg2,
            feat,
        }
    }

    fn backward(&self, t: &Trace, dfeat: &[f64], g: &mut TinyNet) {
        let s = self.side;
        let dfeat: Vec<f64> = dfeat
            .iter()
            .zip(&t.feat)
            .map(|(d, f)| if *f > 0.0 { *d } else { 0.0 })
            .collect();
        let dflat = affine_back(&self.fc, &mut g.fc, &t.flat, &dfeat);
        let mut da2 = vec![0.0; t.a2.len()];
        for (k, &src) in t.arg2.iter().enumerate() {
            da2[src] += dflat[k];
        }
        for (d, a) in da2.iter_mut().zip(&t.a2) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        let dp1 = conv3x3_back(&self.conv2, &mut g.conv2, &t.p1, s / 2, &da2);
        let mut da1 = vec![0.0; t.a1.len()];
        for (k, &src) in t.arg1.iter().enumerate() {
            da1[src] += dp1[k];
        }
        for (d, a) in da1.iter_mut().zip(&t.a1) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        conv3x3_back(&self.conv1, &mut g.conv1, &t.x, s, &da1);
    }
}

/// Softmax cross entropy of one row and its gradient w.r.t. the logits.
fn ce(z: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let loss = s.ln() + m - z[label];
    let grad = e
        .iter()
        .enumerate()
        .map(|(k, v)| v / s - if k == label { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

/// Counterclockwise quarter turns of a `[C,S,S]` image.
pub fn rotate(img: &[f64], channels: usize, side: usize, r: usize) -> Vec<f64> {
    let mut cur = img.to_vec();
    for _ in 0..r {
        let mut next = vec![0.0; cur.len()];
        for c in 0..channels {
            for i in 0..side {
                for j in 0..side {
                    // new(i, j) = old(j, side-1-i)
                    next[(c * side + i) * side + j] = cur[(c * side + j) * side + side - 1 - i];
                }
            }
        }
        cur = next;
    }
    cur
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// `L_ch + L_rh`, moving backbone, semantic and rotation parameters.
    Upper,
    /// `L_ch - L_ah`, moving backbone and auxiliary parameters.
    Lower,
    /// `L_ch` alone; used for the two-pass decomposition.
    Semantic,
    /// `L_ah` alone.
    Auxiliary,
}

/// Loss value and gradients of `obj` over a batch of `[C,S,S]` images.
pub fn loss_and_grads(
    net: &TinyNet,
    images: &[Vec<f64>],
    labels: &[usize],
    obj: Objective,
) -> (f64, TinyNet) {
    let n = images.len() as f64;
    let mut g = zeros_like(net);
    let mut loss = 0.0;
    let (w_ch, w_ah) = match obj {
        Objective::Upper | Objective::Semantic => (1.0, 0.0),
        Objective::Lower => (1.0, -1.0),
        Objective::Auxiliary => (0.0, 1.0),
    };
    for (img, &label) in images.iter().zip(labels) {
        let t = net.forward(img);
        let mut dfeat = vec![0.0; t.feat.len()];
        if w_ch != 0.0 {
            let (l, dz) = ce(&affine(&net.semantic, &t.feat), label);
            loss += w_ch * l / n;
            let dz: Vec<f64> = dz.iter().map(|v| w_ch * v / n).collect();
            let df = affine_back(&net.semantic, &mut g.semantic, &t.feat, &dz);
            dfeat.iter_mut().zip(df).for_each(|(a, b)| *a += b);
        }
        if w_ah != 0.0 {
            let (l, dz) = ce(&affine(&net.auxiliary, &t.feat), label);
            loss += w_ah * l / n;
            let dz: Vec<f64> = dz.iter().map(|v| w_ah * v / n).collect();
            let df = affine_back(&net.auxiliary, &mut g.auxiliary, &t.feat, &dz);
            dfeat.iter_mut().zip(df).for_each(|(a, b)| *a += b);
        }
        net.backward(&t, &dfeat, &mut g);
        if obj == Objective::Upper {
            for r in 0..4 {
                let rotated = rotate(img, net.conv1.cin, net.side, r);
                let tr = net.forward(&rotated);
                let (l, dz) = ce(&affine(&net.rotation, &tr.feat), r);
                loss += 0.25 * l / n;
                let dz: Vec<f64> = dz.iter().map(|v| 0.25 * v / n).collect();
                let df = affine_back(&net.rotation, &mut g.rotation, &tr.feat, &dz);
                net.backward(&tr, &df, &mut g);
            }
        }
    }
    (loss, g)
}

fn axpy(dst: &mut [f64], lr: f64, g: &[f64]) {
    dst.iter_mut().zip(g).for_each(|(p, d)| *p -= lr * d);
}

/// One plain SGD step of the upper or lower rule. Returns the loss before the step.
pub fn sgd(
    net: &mut TinyNet,
    images: &[Vec<f64>],
    labels: &[usize],
    obj: Objective,
    lr: f64,
) -> f64 {
    let (loss, g) = loss_and_grads(net, images, labels, obj);
    for (p, d) in [(&mut net.conv1, &g.conv1), (&mut net.conv2, &g.conv2)] {
        axpy(&mut p.w, lr, &d.w);
        axpy(&mut p.b, lr, &d.b);
    }
    axpy(&mut net.fc.w, lr, &g.fc.w);
    axpy(&mut net.fc.b, lr, &g.fc.b);
    let heads: Vec<(&mut Dense, &Dense)> = match obj {
        Objective::Upper => vec![
            (&mut net.semantic, &g.semantic),
            (&mut net.rotation, &g.rotation),
        ],
        Objective::Lower => vec![(&mut net.auxiliary, &g.auxiliary)],
        _ => panic!("sgd only implements the upper and lower rules"),
    };
    for (p, d) in heads {
        axpy(&mut p.w, lr, &d.w);
        axpy(&mut p.b, lr, &d.b);
    }
    loss
}

/// Largest elementwise difference between this network and a model.
pub fn max_abs_diff(net: &TinyNet, model: &MultiHeadModel<f64>) -> f64 {
    let mut worst = 0.0f64;
    for kind in GroupKind::ALL {
        for (mine, p) in net.flat(kind).iter().zip(model.group(kind).params()) {
            assert_eq!(mine.len(), p.tensor.numel(), "{}", p.name);
            for (a, b) in mine.iter().zip(p.tensor.data()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}
