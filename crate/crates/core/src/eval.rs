//! Alignment evaluation: reconstruction error and least-squares linear probes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::align::{AlignError, AlignmentMap, Method};
use crate::ingest::{PairedClouds, PointCloud};
use crate::linalg::{self, serde_matrix, serde_vector};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("ids of the two clouds differ")]
    IdMismatch,
    #[error("expected {expected} columns, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cloud has no label column `{0}`")]
    MissingLabel(String),
    #[error("probe training needs at least 2 classes, found {0}")]
    SingleClass(usize),
    #[error("cannot evaluate on an empty cloud")]
    Empty,
    #[error(transparent)]
    Align(#[from] AlignError),
}

/// Mean over rows of the squared Euclidean distance.
pub fn reconstruction_mse(b_hat: &PointCloud, b_true: &PointCloud) -> Result<f64, EvalError> {
    if b_hat.ids() != b_true.ids() {
        return Err(EvalError::IdMismatch);
    }
    if b_hat.dim() != b_true.dim() {
        return Err(EvalError::DimensionMismatch { expected: b_true.dim(), found: b_hat.dim() });
    }
    if b_hat.n() == 0 {
        return Err(EvalError::Empty);
    }
    Ok(matrix_mse(b_hat.matrix(), b_true.matrix()))
}

pub(crate) fn matrix_mse(x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    (x - y).norm_squared() / x.nrows() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub intercept: bool,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { intercept: true }
    }
}

/// One-vs-all least-squares classifier `scores = X W + 1 bᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// d × C
    #[serde(with = "serde_matrix")]
    pub w: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    pub b: DVector<f64>,
    /// Ascending; column `c` of `w` scores `class_ids[c]`.
    pub class_ids: Vec<i64>,
}

impl ProbeModel {
    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn scores(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, EvalError> {
        if x.ncols() != self.dim() {
            return Err(EvalError::DimensionMismatch { expected: self.dim(), found: x.ncols() });
        }
        Ok(linalg::uncenter(&(x * &self.w), &self.b))
    }

    /// Row-wise argmax; the first maximal class wins ties.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<i64>, EvalError> {
        let scores = self.scores(x)?;
        Ok(scores.row_iter().map(|row| self.class_ids[argmax(row.iter().copied())]).collect())
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, v) in values.enumerate() {
        if v > best.0 {
            best = (v, i);
        }
    }
    best.1
}

fn labels_of<'a>(cloud: &'a PointCloud, label_col: &str) -> Result<&'a [i64], EvalError> {
    cloud.label(label_col).ok_or_else(|| EvalError::MissingLabel(label_col.to_string()))
}

pub fn fit_probe(train: &PointCloud, label_col: &str) -> Result<ProbeModel, EvalError> {
    fit_probe_with(train, label_col, ProbeOptions::default())
}

/// Least squares on one-hot targets through the pseudo-inverse.
pub fn fit_probe_with(train: &PointCloud, label_col: &str, opts: ProbeOptions) -> Result<ProbeModel, EvalError> {
    let labels = labels_of(train, label_col)?;
    let mut class_ids = labels.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    if class_ids.len() < 2 {
        return Err(EvalError::SingleClass(class_ids.len()));
    }
    let x = train.matrix();
    let (n, d) = (x.nrows(), x.ncols());
    let design = if opts.intercept { x.clone().insert_column(d, 1.0) } else { x.clone() };
    let targets = DMatrix::from_fn(n, class_ids.len(), |i, c| f64::from(u8::from(labels[i] == class_ids[c])));
    let coef = linalg::pinv(&design) * targets;
    let w = coef.rows(0, d).into_owned();
    let b = if opts.intercept { coef.row(d).transpose() } else { DVector::zeros(class_ids.len()) };
    Ok(ProbeModel { w, b, class_ids })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: i64,
    pub support: usize,
    pub predicted: usize,
    pub true_positive: usize,
    /// 0 when nothing was predicted as this class.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class metrics for every class present in `truth`, ascending.
pub fn per_class_metrics(truth: &[i64], predicted: &[i64]) -> Vec<ClassMetrics> {
    let mut classes = truth.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| {
            let support = truth.iter().filter(|&&t| t == c).count();
            let npred = predicted.iter().filter(|&&p| p == c).count();
            let tp = truth.iter().zip(predicted).filter(|&(&t, &p)| t == c && p == c).count();
            let precision = if npred > 0 { tp as f64 / npred as f64 } else { 0.0 };
            let recall = tp as f64 / support as f64;
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassMetrics { class_id: c, support, predicted: npred, true_positive: tp, precision, recall, f1 }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub method: Option<Method>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<usize>,
    /// Missing when no reconstruction target was available.
    pub mse: Option<f64>,
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub n_test: usize,
    /// Classes present in the test labels that received no predictions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unpredicted_classes: Vec<i64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Accuracy and macro metrics from label vectors.
pub fn classification_report(truth: &[i64], predicted: &[i64]) -> Result<EvalReport, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let per_class = per_class_metrics(truth, predicted);
    let c = per_class.len() as f64;
    let correct = truth.iter().zip(predicted).filter(|(t, p)| t == p).count();
    Ok(EvalReport {
        method: None,
        k: None,
        mse: None,
        accuracy: correct as f64 / truth.len() as f64,
        precision_macro: per_class.iter().map(|m| m.precision).sum::<f64>() / c,
        recall_macro: per_class.iter().map(|m| m.recall).sum::<f64>() / c,
        f1_macro: per_class.iter().map(|m| m.f1).sum::<f64>() / c,
        n_test: truth.len(),
        unpredicted_classes: per_class.iter().filter(|m| m.predicted == 0).map(|m| m.class_id).collect(),
    })
}

pub fn probe_metrics(m: &ProbeModel, test: &PointCloud, label_col: &str) -> Result<EvalReport, EvalError> {
    let truth = labels_of(test, label_col)?;
    let predicted = m.predict(test.matrix())?;
    classification_report(truth, &predicted)
}

/// Transmit the A side, score it against the B side and with a probe
/// trained on B.
pub fn evaluate_alignment(
    m: &AlignmentMap,
    pair_test: &PairedClouds,
    probe: &ProbeModel,
    label_col: &str,
) -> Result<EvalReport, EvalError> {
    let transmitted = crate::align::transmit(m, pair_test.a())?;
    let mse = reconstruction_mse(&transmitted, pair_test.b())?;
    let mut report = probe_metrics(probe, &transmitted, label_col)?;
    report.mse = Some(mse);
    report.method = Some(m.method());
    report.k = Some(m.k);
    Ok(report)
}
