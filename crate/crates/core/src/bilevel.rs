//! Alternating upper/lower SGD and the two baseline training modes.
//!
//! Every step clears gradients, builds one tape, back-propagates once and
//! moves only the parameter groups its rule owns:
//!
//! | step              | objective         | groups moved                     |
//! |-------------------|-------------------|----------------------------------|
//! | upper             | `L_ch + L_rh`     | backbone, semantic, rotation     |
//! | lower             | `L_ch - L_ah`     | backbone, auxiliary              |
//! | baseline `L_ch`   | `L_ch`            | backbone, semantic               |
//!
//! The semantic head stays on the lower tape as a constant-valued op, so the
//! lower gradient still reaches the backbone through it; it just never moves.

use crate::data::{batch_iter, LabeledImageSet};
use crate::eval::accuracy;
use crate::losses::LowerVariant;
use crate::nn::{GroupKind, HeadKind, MultiHeadModel};
use crate::tensor::{one_hot, Tensor, Var};
use crate::{Error, Result, Scalar};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// `L_ch` only.
    BaselineCh,
    /// `L_ch + L_rh` as a single objective.
    BaselineChRh,
    /// Alternating upper and lower updates.
    #[default]
    Ossl,
}

impl TrainMode {
    pub const ALL: [TrainMode; 3] = [
        TrainMode::BaselineCh,
        TrainMode::BaselineChRh,
        TrainMode::Ossl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrainMode::BaselineCh => "baseline_ch",
            TrainMode::BaselineChRh => "baseline_ch_rh",
            TrainMode::Ossl => "ossl",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            TrainMode::BaselineCh => "L_ch",
            TrainMode::BaselineChRh => "L_ch+L_rh",
            TrainMode::Ossl => "OSSL",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub n_epoch: usize,
    pub shuffle_seed: u64,
    pub mode: TrainMode,
    pub lower_variant: LowerVariant,
    /// Batch size used for test-set evaluation.
    pub eval_batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            batch_size: 128,
            n_epoch: 30,
            shuffle_seed: 0,
            mode: TrainMode::Ossl,
            lower_variant: LowerVariant::Ah,
            eval_batch_size: 256,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidArgument {
                op: "sgd",
                reason: reason.into(),
            })
        };
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive and finite");
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be at least 1");
        }
        Ok(())
    }
}

/// Test-set evaluation happens at epochs `p >= 49` with `p % 10 == 0`, and
/// always after the last epoch.
pub fn is_eval_epoch(epoch: usize, n_epoch: usize) -> bool {
    (epoch >= 49 && epoch % 10 == 0) || epoch == n_epoch
}

/// Loss values and gradient norms of one update.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// The optimized objective.
    pub loss: f64,
    pub l_ch: f64,
    pub l_rh: Option<f64>,
    pub l_ah: Option<f64>,
    /// Correct semantic predictions in the batch, measured before the update.
    pub correct: usize,
    /// L2 norm of the gradient per group; `None` for groups the step leaves alone.
    pub grad_norms: [Option<f64>; 4],
}

const UPPER_GROUPS: [GroupKind; 3] = [
    GroupKind::Backbone,
    GroupKind::SemanticHead,
    GroupKind::RotationHead,
];
const LOWER_GROUPS: [GroupKind; 2] = [GroupKind::Backbone, GroupKind::AuxiliaryHead];
const CH_GROUPS: [GroupKind; 2] = [GroupKind::Backbone, GroupKind::SemanticHead];

struct Objective {
    total: Var,
    l_ch: Var,
    l_rh: Option<Var>,
    l_ah: Option<Var>,
    semantic_logits: Var,
}

fn count_correct<T: Scalar>(logits: &[T], labels: &[usize], classes: usize) -> usize {
    logits
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &y)| crate::eval::argmax(row) == y)
        .count()
}

/// Builds the objective, back-propagates, and applies `p -= lr * g` to the
/// listed groups (skipping frozen ones). Nothing is written if the loss or any
/// gradient is non-finite.
fn sgd_step<T: Scalar>(
    model: &mut MultiHeadModel<T>,
    x: &Tensor<T>,
    labels: &[usize],
    lr: f64,
    groups: &[GroupKind],
    build: impl FnOnce(&mut crate::nn::Graph<'_, T>, &Tensor<T>, &Tensor<T>) -> Result<Objective>,
) -> Result<StepReport> {
    if x.shape().first() != Some(&labels.len()) {
        return Err(Error::InvalidArgument {
            op: "sgd_step",
            reason: format!("{} labels for batch shape {:?}", labels.len(), x.shape()),
        });
    }
    model.zero_grad();
    let classes = model.num_classes();
    let y = one_hot(labels, classes)?;

    let (report, grads) = {
        let mut g = model.graph();
        let obj = build(&mut g, x, &y)?;
        let tape = g.tape();
        let value = tape.scalar(obj.total);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss (value {})", value.to_f64())));
        }
        let correct = count_correct(tape.value(obj.semantic_logits), labels, classes);
        let read = |v: Option<Var>| v.map(|v| tape.scalar(v).to_f64());
        let mut report = StepReport {
            loss: value.to_f64(),
            l_ch: tape.scalar(obj.l_ch).to_f64(),
            l_rh: read(obj.l_rh),
            l_ah: read(obj.l_ah),
            correct,
            grad_norms: [None; 4],
        };
        g.backward(obj.total)?;
        let mut grads: Vec<(GroupKind, Vec<Option<Vec<T>>>)> = Vec::with_capacity(groups.len());
        for &kind in groups {
            let per: Vec<Option<Vec<T>>> = g
                .group_grads(kind)
                .into_iter()
                .map(|gr| gr.map(<[T]>::to_vec))
                .collect();
            let mut sq = 0.0;
            for (param, gr) in model.group(kind).params().iter().zip(&per) {
                for v in gr.iter().flatten() {
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!(
                            "gradient of {}/{}",
                            kind.name(),
                            param.name
                        )));
                    }
                    sq += v.to_f64() * v.to_f64();
                }
            }
            report.grad_norms[kind.index()] = Some(libm::sqrt(sq));
            grads.push((kind, per));
        }
        (report, grads)
    };

    let step = T::from_f64(lr);
    for (kind, per) in grads {
        let group = model.group_mut(kind);
        if group.frozen {
            continue;
        }
        for (param, gr) in group.params_mut().iter_mut().zip(per) {
            let Some(gr) = gr else { continue };
            for (w, d) in param.tensor.data_mut().iter_mut().zip(&gr) {
                *w -= step * *d;
            }
            param.tensor.set_grad(gr)?;
        }
    }
    Ok(report)
}

/// One SGD step on `L_ch + L_rh` over backbone, semantic and rotation heads.
pub fn upper_step<T: Scalar>(
    model: &mut MultiHeadModel<T>,
    x: &Tensor<T>,
    labels: &[usize],
    lr: f64,
) -> Result<StepReport> {
    sgd_step(model, x, labels, lr, &UPPER_GROUPS, |g, x, y| {
        let f = g.features(x)?;
        let z = g.head(f, HeadKind::Semantic)?;
        let l_ch = g.tape_mut().softmax_cross_entropy(z, y)?;
        let l_rh = g.rotation_loss(x)?;
        let total = g.tape_mut().add(l_ch, l_rh)?;
        Ok(Objective {
            total,
            l_ch,
            l_rh: Some(l_rh),
            l_ah: None,
            semantic_logits: z,
        })
    })
}

/// One SGD step on the lower objective over backbone and auxiliary head;
/// semantic and rotation heads keep their values.
pub fn lower_step<T: Scalar>(
    model: &mut MultiHeadModel<T>,
    x: &Tensor<T>,
    labels: &[usize],
    lr: f64,
    variant: LowerVariant,
) -> Result<StepReport> {
    sgd_step(model, x, labels, lr, &LOWER_GROUPS, |g, x, y| {
        let f = g.features(x)?;
        let z = g.head(f, HeadKind::Semantic)?;
        let l_ch = g.tape_mut().softmax_cross_entropy(z, y)?;
        let (sub, l_rh, l_ah) = match variant {
            LowerVariant::Ah => {
                let a = g.head_loss(f, HeadKind::Auxiliary, y)?;
                (a, None, Some(a))
            }
            LowerVariant::Rh => {
                let r = g.rotation_loss(x)?;
                (r, Some(r), None)
            }
        };
        let total = g.tape_mut().sub(l_ch, sub)?;
        Ok(Objective {
            total,
            l_ch,
            l_rh,
            l_ah,
            semantic_logits: z,
        })
    })
}

/// One SGD step on `L_ch` over backbone and semantic head.
pub fn baseline_ch_step<T: Scalar>(
    model: &mut MultiHeadModel<T>,
    x: &Tensor<T>,
    labels: &[usize],
    lr: f64,
) -> Result<StepReport> {
    sgd_step(model, x, labels, lr, &CH_GROUPS, |g, x, y| {
        let f = g.features(x)?;
        let z = g.head(f, HeadKind::Semantic)?;
        let l_ch = g.tape_mut().softmax_cross_entropy(z, y)?;
        Ok(Objective {
            total: l_ch,
            l_ch,
            l_rh: None,
            l_ah: None,
            semantic_logits: z,
        })
    })
}

/// One SGD step on `L_ch + L_rh` as a single objective. Same update rule as
/// [`upper_step`]; kept separate so the two modes read distinctly.
pub fn baseline_ch_rh_step<T: Scalar>(
    model: &mut MultiHeadModel<T>,
    x: &Tensor<T>,
    labels: &[usize],
    lr: f64,
) -> Result<StepReport> {
    upper_step(model, x, labels, lr)
}

/// Summary of one epoch. Losses are sample-weighted means over the epoch's
/// mini-batches, read off the forward pass before each update; `None` when
/// the mode never computes that loss.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_ch: Option<f64>,
    pub l_rh: Option<f64>,
    pub l_ah: Option<f64>,
    /// Running semantic accuracy over the epoch, measured before each update.
    pub train_acc: f64,
    /// One entry per registered test set; `None` off the evaluation schedule.
    pub test_acc: Vec<Option<f64>>,
    pub wall_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRunRecord {
    pub mode: TrainMode,
    /// Filled in by the caller that owns the configuration.
    pub config_hash: Option<String>,
    pub model_seed: u64,
    pub shuffle_seed: u64,
    pub test_names: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub checkpoint_path: Option<String>,
}

impl TrainRunRecord {
    /// Test accuracies from the last evaluated epoch.
    pub fn final_test_acc(&self) -> Vec<Option<f64>> {
        let mut out = alloc::vec![None; self.test_names.len()];
        for e in &self.epochs {
            for (o, a) in out.iter_mut().zip(&e.test_acc) {
                if a.is_some() {
                    *o = *a;
                }
            }
        }
        out
    }
}

/// Callbacks around the training loop.
pub trait TrainHooks<T: Scalar> {
    /// Milliseconds on some monotonic clock; `None` leaves wall time unrecorded.
    fn now_ms(&mut self) -> Option<u64> {
        None
    }

    /// Called after every epoch with the record so far.
    fn on_epoch(&mut self, _record: &EpochRecord, _model: &MultiHeadModel<T>) -> Result<()> {
        Ok(())
    }

    /// Called after every update with the step index within the run.
    fn on_step(&mut self, _step: usize, _report: &StepReport) {}
}

/// Hooks that do nothing.
pub struct NoHooks;

impl<T: Scalar> TrainHooks<T> for NoHooks {}

fn check_set<T: Scalar>(model: &MultiHeadModel<T>, set: &LabeledImageSet) -> Result<()> {
    let fail = |reason: String| {
        Err(Error::Dataset {
            dataset: set.name().into(),
            reason,
        })
    };
    if set.class_count() != model.num_classes() {
        return fail(format!(
            "{} classes, model has {}",
            set.class_count(),
            model.num_classes()
        ));
    }
    let (s, m) = (set.input_spec(), model.input_spec());
    if s != m {
        return fail(format!(
            "images are {}x{}x{}, model expects {}x{}x{}",
            s.channels, s.height, s.width, m.channels, m.height, m.width
        ));
    }
    Ok(())
}

#[derive(Default)]
struct Running {
    samples: usize,
    correct: usize,
    l_ch: f64,
    l_rh: Option<f64>,
    l_ah: Option<f64>,
}

impl Running {
    fn add(slot: &mut Option<f64>, v: Option<f64>, n: f64) {
        if let Some(v) = v {
            *slot = Some(slot.unwrap_or(0.0) + v * n);
        }
    }

    fn record(&mut self, r: &StepReport, n: usize, count_acc: bool) {
        let w = n as f64;
        if count_acc {
            self.samples += n;
            self.correct += r.correct;
            self.l_ch += r.l_ch * w;
        }
        Self::add(&mut self.l_rh, r.l_rh, w);
        Self::add(&mut self.l_ah, r.l_ah, w);
    }
}

/// Runs the configured mode for `cfg.n_epoch` epochs over `train_set`.
///
/// In OSSL mode each mini-batch gets an upper step followed by a lower step
/// on the same images. Epochs are numbered from 1.
pub fn train<T: Scalar>(
    model: &mut MultiHeadModel<T>,
    train_set: &LabeledImageSet,
    test_sets: &[LabeledImageSet],
    cfg: &SgdConfig,
    hooks: &mut dyn TrainHooks<T>,
) -> Result<TrainRunRecord> {
    cfg.validate()?;
    check_set(model, train_set)?;
    for t in test_sets {
        check_set(model, t)?;
    }
    let mut record = TrainRunRecord {
        mode: cfg.mode,
        config_hash: None,
        model_seed: model.config().init_seed,
        shuffle_seed: cfg.shuffle_seed,
        test_names: test_sets.iter().map(|t| t.name().into()).collect(),
        epochs: Vec::with_capacity(cfg.n_epoch),
        checkpoint_path: None,
    };
    let mut step = 0;
    for epoch in 1..=cfg.n_epoch {
        let started = hooks.now_ms();
        let mut run = Running::default();
        for idx in batch_iter(
            train_set.len(),
            cfg.batch_size,
            cfg.shuffle_seed,
            epoch as u64,
        )? {
            let (x, labels) = train_set.gather::<T>(&idx)?;
            match cfg.mode {
                TrainMode::BaselineCh => {
                    let r = baseline_ch_step(model, &x, &labels, cfg.lr)?;
                    run.record(&r, idx.len(), true);
                    hooks.on_step(step, &r);
                }
                TrainMode::BaselineChRh => {
                    let r = baseline_ch_rh_step(model, &x, &labels, cfg.lr)?;
                    run.record(&r, idx.len(), true);
                    hooks.on_step(step, &r);
                }
                TrainMode::Ossl => {
                    let up = upper_step(model, &x, &labels, cfg.lr)?;
                    run.record(&up, idx.len(), true);
                    hooks.on_step(step, &up);
                    step += 1;
                    let low = lower_step(model, &x, &labels, cfg.lr, cfg.lower_variant)?;
                    // L_rh already came from the upper step under the ablation variant.
                    let low_only = StepReport {
                        l_rh: None,
                        ..low.clone()
                    };
                    run.record(&low_only, idx.len(), false);
                    hooks.on_step(step, &low);
                }
            }
            step += 1;
        }
        let mean = |v: f64| {
            if run.samples == 0 {
                0.0
            } else {
                v / run.samples as f64
            }
        };
        let test_acc = if is_eval_epoch(epoch, cfg.n_epoch) {
            test_sets
                .iter()
                .map(|t| {
                    accuracy(model, t, HeadKind::Semantic, cfg.eval_batch_size)
                        .map(|r| Some(r.accuracy))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            alloc::vec![None; test_sets.len()]
        };
        let wall_ms = match (started, hooks.now_ms()) {
            (Some(a), Some(b)) => Some(b.saturating_sub(a)),
            _ => None,
        };
        let rec = EpochRecord {
            epoch,
            l_ch: (run.samples > 0).then(|| mean(run.l_ch)),
            l_rh: run.l_rh.map(mean),
            l_ah: run.l_ah.map(mean),
            train_acc: mean(run.correct as f64),
            test_acc,
            wall_ms,
        };
        hooks.on_epoch(&rec, model)?;
        record.epochs.push(rec);
    }
    Ok(record)
}
