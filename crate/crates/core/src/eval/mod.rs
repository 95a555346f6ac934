//! Accuracy measurement, t-SNE and result tables.

mod report;
mod tsne;

pub use report::{report_table, ReportTable, TableRow};
pub use tsne::{silhouette, tsne, TsneConfig, TsneResult};

use crate::data::LabeledImageSet;
use crate::nn::{HeadKind, MultiHeadModel};
use crate::rotation::{make_rotation_batch, ROTATIONS};
use crate::{Error, Result, Scalar};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Outcome of scoring one head on one set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub dataset: String,
    pub head: HeadKind,
    pub accuracy: f64,
    pub n: usize,
    /// `None` for classes without samples.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl EvalResult {
    fn from_confusion(dataset: &str, head: HeadKind, confusion: Vec<Vec<u64>>) -> Self {
        let n: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let total: u64 = row.iter().sum();
                (total > 0).then(|| row[i] as f64 / total as f64)
            })
            .collect();
        Self {
            dataset: dataset.into(),
            head,
            accuracy: if n == 0 { 0.0 } else { trace as f64 / n as f64 },
            n: n as usize,
            per_class,
            confusion,
        }
    }

    /// `dataset,head,accuracy,n`
    pub fn csv_row(&self) -> String {
        alloc::format!(
            "{},{},{:.6},{}",
            self.dataset,
            self.head,
            self.accuracy,
            self.n
        )
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if v.to_f64() > row[best].to_f64() {
            best = i;
        }
    }
    best
}

fn check_compatible<T: Scalar>(model: &MultiHeadModel<T>, set: &LabeledImageSet) -> Result<()> {
    if set.class_count() != model.num_classes() {
        return Err(Error::Dataset {
            dataset: set.name().into(),
            reason: alloc::format!(
                "set has {} classes but the model predicts {}",
                set.class_count(),
                model.num_classes()
            ),
        });
    }
    check_geometry(model, set)
}

fn check_geometry<T: Scalar>(model: &MultiHeadModel<T>, set: &LabeledImageSet) -> Result<()> {
    if set.input_spec() != model.input_spec() {
        let (s, m) = (set.input_spec(), model.input_spec());
        return Err(Error::Dataset {
            dataset: set.name().into(),
            reason: alloc::format!(
                "images are {}x{}x{} but the model expects {}x{}x{}",
                s.channels,
                s.height,
                s.width,
                m.channels,
                m.height,
                m.width
            ),
        });
    }
    Ok(())
}

fn chunks(len: usize, batch: usize) -> impl Iterator<Item = Vec<usize>> {
    let batch = batch.max(1);
    (0..len)
        .step_by(batch)
        .map(move |s| (s..(s + batch).min(len)).collect())
}

/// Class accuracy of the semantic or auxiliary head.
pub fn accuracy<T: Scalar>(
    model: &MultiHeadModel<T>,
    set: &LabeledImageSet,
    head: HeadKind,
    batch_size: usize,
) -> Result<EvalResult> {
    if head == HeadKind::Rotation {
        return Err(Error::InvalidArgument {
            op: "accuracy",
            reason: "the rotation head is scored by rotation_accuracy".into(),
        });
    }
    check_compatible(model, set)?;
    let c = model.num_classes();
    let mut confusion = vec![vec![0u64; c]; c];
    for idx in chunks(set.len(), batch_size) {
        let (x, labels) = set.gather::<T>(&idx)?;
        let z = model.logits(&x, head)?;
        for (row, &y) in z.data().chunks(c).zip(&labels) {
            confusion[y][argmax(row)] += 1;
        }
    }
    Ok(EvalResult::from_confusion(set.name(), head, confusion))
}

/// Four-way rotation accuracy over every image of the set at every angle.
pub fn rotation_accuracy<T: Scalar>(
    model: &MultiHeadModel<T>,
    set: &LabeledImageSet,
    batch_size: usize,
) -> Result<EvalResult> {
    check_compatible(model, set)?;
    let mut confusion = vec![vec![0u64; ROTATIONS]; ROTATIONS];
    for idx in chunks(set.len(), batch_size) {
        let (x, _) = set.gather::<T>(&idx)?;
        let rb = make_rotation_batch(&x)?;
        let z = model.logits(&rb.images, HeadKind::Rotation)?;
        for (row, r) in z.data().chunks(ROTATIONS).zip(rb.labels()) {
            confusion[r][argmax(row)] += 1;
        }
    }
    Ok(EvalResult::from_confusion(
        set.name(),
        HeadKind::Rotation,
        confusion,
    ))
}

/// Routes to [`accuracy`] or [`rotation_accuracy`] by head.
pub fn evaluate<T: Scalar>(
    model: &MultiHeadModel<T>,
    set: &LabeledImageSet,
    head: HeadKind,
    batch_size: usize,
) -> Result<EvalResult> {
    match head {
        HeadKind::Rotation => rotation_accuracy(model, set, batch_size),
        _ => accuracy(model, set, head, batch_size),
    }
}

/// Backbone features of every image, in set order, as `f32` rows.
pub fn embeddings<T: Scalar>(
    model: &MultiHeadModel<T>,
    set: &LabeledImageSet,
    batch_size: usize,
) -> Result<(usize, Vec<f32>)> {
    check_geometry(model, set)?;
    let d = model.feature_dim();
    let mut out = Vec::with_capacity(set.len() * d);
    for idx in chunks(set.len(), batch_size) {
        let (x, _) = set.gather::<T>(&idx)?;
        out.extend(model.features(&x)?.data().iter().map(|v| v.to_f32()));
    }
    Ok((d, out))
}
