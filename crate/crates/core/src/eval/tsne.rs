//! Exact t-SNE (van der Maaten & Hinton, 2008) and the silhouette score.
//!
//! Rows are first put in a canonical lexicographic order and every
//! computation, including the per-point initialization stream, is keyed by
//! canonical position. Permuting the input rows therefore permutes the output
//! rows and changes nothing else.

use crate::rng;
use crate::{Error, Result};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f64::consts::LN_2;
use libm::{exp, log, log2, sqrt};

pub const MAX_POINTS: usize = 2500;
const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and momentum 0.5. Momentum
    /// state and gains restart when the phase ends.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub init_sigma: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            init_sigma: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsneResult {
    /// Output coordinates in input row order.
    pub coords: Vec<[f64; 2]>,
    /// `KL(P || Q)` after each iteration (unexaggerated P).
    pub kl: Vec<f64>,
    /// Entropy in bits of each conditional distribution, input row order.
    pub entropies: Vec<f64>,
    /// Sum of each conditional row before symmetrization.
    pub row_sums: Vec<f64>,
    /// Sum of the joint affinity matrix.
    pub p_total: f64,
    /// Rows whose bandwidth search stopped before reaching tolerance.
    pub unconverged: usize,
}

fn invalid(reason: alloc::string::String) -> Error {
    Error::InvalidArgument { op: "tsne", reason }
}

/// Entropy (nats) and row of `exp(-beta * (d - d_min))` normalized.
fn conditional(dist: &[f64], skip: usize, beta: f64, row: &mut [f64]) -> f64 {
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != skip)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, p)) in dist.iter().zip(row.iter_mut()).enumerate() {
        if j == skip {
            *p = 0.0;
            continue;
        }
        let shifted = d - dmin;
        *p = exp(-beta * shifted);
        sum += *p;
        weighted += shifted * *p;
    }
    row.iter_mut().for_each(|p| *p /= sum);
    log(sum) + beta * weighted / sum
}

/// Bisects the precision of point `i` until its entropy hits `target_bits`.
fn search_row(dist: &[f64], i: usize, target_bits: f64, row: &mut [f64]) -> (f64, bool) {
    let n = dist.len();
    let mean_gap = {
        let dmin = dist
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &d)| d)
            .fold(f64::INFINITY, f64::min);
        let total: f64 = dist
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &d)| d - dmin)
            .sum();
        total / (n - 1) as f64
    };
    let mut beta = if mean_gap > 0.0 { 1.0 / mean_gap } else { 1.0 };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut h = conditional(dist, i, beta, row) / LN_2;
    for _ in 0..MAX_BISECTIONS {
        if (h - target_bits).abs() <= ENTROPY_TOL {
            return (h, true);
        }
        if h > target_bits {
            lo = beta;
            beta = if hi.is_infinite() {
                beta * 2.0
            } else {
                0.5 * (beta + hi)
            };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
        h = conditional(dist, i, beta, row) / LN_2;
    }
    (h, (h - target_bits).abs() <= ENTROPY_TOL)
}

fn canonical_order(data: &[f64], d: usize) -> Vec<usize> {
    let m = data.len().checked_div(d).unwrap_or(0);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&data[a * d..(a + 1) * d], &data[b * d..(b + 1) * d]);
        ra.iter()
            .zip(rb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    order
}

/// Embeds `m` rows of width `d` (row-major `data`) into two dimensions.
pub fn tsne(data: &[f64], d: usize, cfg: &TsneConfig) -> Result<TsneResult> {
    if d == 0 || data.len() % d != 0 {
        return Err(invalid(alloc::format!(
            "{} values do not form rows of width {d}",
            data.len()
        )));
    }
    let m = data.len() / d;
    if m < 10 {
        return Err(invalid(alloc::format!(
            "needs at least 10 points, found {m}"
        )));
    }
    if m > MAX_POINTS {
        return Err(invalid(alloc::format!(
            "exact t-SNE is capped at {MAX_POINTS} points, found {m}"
        )));
    }
    if !(cfg.perplexity > 1.0 && cfg.perplexity < m as f64 / 3.0) {
        return Err(invalid(alloc::format!(
            "perplexity {} must lie in (1, {m}/3)",
            cfg.perplexity
        )));
    }
    if cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 || !data.iter().all(|v| v.is_finite())
    {
        return Err(invalid(
            "learning rate must be positive and inputs finite".into(),
        ));
    }

    let order = canonical_order(data, d);
    let x: Vec<&[f64]> = order.iter().map(|&o| &data[o * d..(o + 1) * d]).collect();

    // Conditional affinities, one row at a time.
    let target = log2(cfg.perplexity);
    let mut p = vec![0.0; m * m];
    let mut dist = vec![0.0; m];
    let mut entropies = vec![0.0; m];
    let mut row_sums = vec![0.0; m];
    let mut unconverged = 0;
    for i in 0..m {
        for (j, dj) in dist.iter_mut().enumerate() {
            *dj = x[i].iter().zip(x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        }
        let (h, ok) = search_row(&dist, i, target, &mut p[i * m..(i + 1) * m]);
        entropies[i] = h;
        row_sums[i] = p[i * m..(i + 1) * m].iter().sum();
        unconverged += usize::from(!ok);
    }
    // Symmetrize.
    for i in 0..m {
        for j in i + 1..m {
            let v = (p[i * m + j] + p[j * m + i]) / (2 * m) as f64;
            p[i * m + j] = v;
            p[j * m + i] = v;
        }
    }
    let p_total: f64 = p.iter().sum();

    let mut y: Vec<[f64; 2]> = (0..m)
        .map(|i| {
            let mut g = rng::stream(cfg.seed, i as u64);
            [
                cfg.init_sigma * rng::normal(&mut g),
                cfg.init_sigma * rng::normal(&mut g),
            ]
        })
        .collect();
    let mut velocity = vec![[0.0; 2]; m];
    let mut gains = vec![[1.0f64; 2]; m];
    let mut num = vec![0.0; m * m];
    let mut grad = vec![[0.0; 2]; m];
    let mut kl = Vec::with_capacity(cfg.iterations);

    for it in 0..cfg.iterations {
        if it == cfg.exaggeration_iters {
            // The objective changes here; velocity and gains built up
            // against the exaggerated affinities would overshoot it.
            velocity.iter_mut().for_each(|v| *v = [0.0; 2]);
            gains.iter_mut().for_each(|g| *g = [1.0; 2]);
        }
        let early = it < cfg.exaggeration_iters;
        let exag = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };

        let z = student_t(&y, &mut num);
        for i in 0..m {
            let mut g = [0.0; 2];
            for j in 0..m {
                let w = num[i * m + j];
                let coeff = (exag * p[i * m + j] - w / z) * w;
                g[0] += coeff * (y[i][0] - y[j][0]);
                g[1] += coeff * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..m {
            for k in 0..2 {
                let same_sign = (grad[i][k] > 0.0) == (velocity[i][k] > 0.0);
                gains[i][k] = if same_sign {
                    gains[i][k] * 0.8
                } else {
                    gains[i][k] + 0.2
                };
                gains[i][k] = gains[i][k].max(0.01);
                velocity[i][k] =
                    momentum * velocity[i][k] - cfg.learning_rate * gains[i][k] * grad[i][k];
                y[i][k] += velocity[i][k];
            }
        }
        let mean = y.iter().fold([0.0; 2], |a, v| [a[0] + v[0], a[1] + v[1]]);
        let mean = [mean[0] / m as f64, mean[1] / m as f64];
        y.iter_mut().for_each(|v| {
            v[0] -= mean[0];
            v[1] -= mean[1];
        });

        let z = student_t(&y, &mut num);
        let mut objective = 0.0;
        for (pij, w) in p.iter().zip(&num) {
            if *pij > 0.0 {
                objective += pij * log(pij / (w / z).max(f64::MIN_POSITIVE));
            }
        }
        kl.push(objective);
    }

    // Back to input order.
    let mut coords = vec![[0.0; 2]; m];
    let mut ent = vec![0.0; m];
    let mut sums = vec![0.0; m];
    for (c, &o) in order.iter().enumerate() {
        coords[o] = y[c];
        ent[o] = entropies[c];
        sums[o] = row_sums[c];
    }
    Ok(TsneResult {
        coords,
        kl,
        entropies: ent,
        row_sums: sums,
        p_total,
        unconverged,
    })
}

/// Fills `num` with `1 / (1 + |y_i - y_j|^2)` (zero diagonal); returns the sum.
fn student_t(y: &[[f64; 2]], num: &mut [f64]) -> f64 {
    let m = y.len();
    let mut z = 0.0;
    for i in 0..m {
        num[i * m + i] = 0.0;
        for j in i + 1..m {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let w = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * m + j] = w;
            num[j * m + i] = w;
            z += 2.0 * w;
        }
    }
    z
}

/// Mean silhouette coefficient of `points` (row-major, width `d`) under
/// `labels`, with Euclidean distance. Points alone in their cluster score 0.
pub fn silhouette(points: &[f64], d: usize, labels: &[usize]) -> Result<f64> {
    let m = labels.len();
    if d == 0 || points.len() != m * d {
        return Err(invalid(alloc::format!(
            "{} values for {m} points of width {d}",
            points.len()
        )));
    }
    let k = labels.iter().max().map_or(0, |l| l + 1);
    let sizes = labels.iter().fold(vec![0usize; k], |mut s, &l| {
        s[l] += 1;
        s
    });
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(invalid("silhouette needs at least two clusters".into()));
    }
    let row = |i: usize| &points[i * d..(i + 1) * d];
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..m {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..m {
            if i != j {
                let dist: f64 = row(i)
                    .iter()
                    .zip(row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                sums[labels[j]] += sqrt(dist);
            }
        }
        let own = labels[i];
        if sizes[own] < 2 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let s = if a.max(b) > 0.0 {
            (b - a) / a.max(b)
        } else {
            0.0
        };
        total += s;
    }
    Ok(total / m as f64)
}
