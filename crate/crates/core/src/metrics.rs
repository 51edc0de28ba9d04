//! Accuracy, per-class accuracy, micro-AUC, micro-mAP and MCC.
//!
//! Conventions: argmax ties go to the lowest class index; AUC uses midranks
//! for tied scores; average precision ranks by descending score with ties
//! kept in original (row-major) order; MCC is 0 when any marginal of the
//! confusion matrix is empty.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Labels, Task};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Published reference values for the real datasets. These are not
/// reproducible from synthetic data and serve as documentation only.
pub mod reported {
    /// Best unimodal accuracy on Amazon Reviews product classification.
    pub const AMAZON_BEST_UNIMODAL_ACCURACY: f64 = 0.919;
    /// Trimodal late-fusion accuracy on Amazon Reviews.
    pub const AMAZON_TRIMODAL_LATE_ACCURACY: f64 = 0.969;
    /// Best unimodal micro-AUC on MovieLens25M genre classification.
    pub const ML25M_BEST_UNIMODAL_AUC: f64 = 0.907;
    /// Best multimodal micro-AUC on MovieLens25M.
    pub const ML25M_BEST_MULTIMODAL_AUC: f64 = 0.918;
    /// Plot-only MCC on MovieLens1M gender classification.
    pub const ML1M_PLOT_MCC: f64 = 0.543;
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Scores with their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions<T> {
    pub scores: Matrix<T>,
    pub labels: Labels,
}

impl<T: Scalar> Predictions<T> {
    pub fn new(scores: Matrix<T>, labels: Labels) -> Result<Self> {
        if scores.rows() == 0 {
            return Err(Error::UndefinedMetric("no predictions".into()));
        }
        if scores.rows() != labels.len() {
            return Err(Error::dim("prediction rows", scores.rows(), labels.len()));
        }
        let want = labels.output_dim();
        let binary_pair = labels.task() == Task::Binary && scores.cols() == 2;
        if scores.cols() != want && !binary_pair {
            return Err(Error::dim("prediction columns", scores.cols(), want));
        }
        if !scores.is_finite() {
            return Err(Error::NonFinite("prediction scores".into()));
        }
        labels.validate()?;
        Ok(Predictions { scores, labels })
    }

    pub fn accuracy(&self) -> Result<f64> {
        accuracy(&self.scores, &self.labels)
    }

    pub fn per_class_accuracy(&self) -> Result<Vec<Option<f64>>> {
        per_class_accuracy(&self.scores, &self.labels)
    }

    pub fn micro_auc(&self) -> Result<f64> {
        micro_auc(&self.scores, &self.labels)
    }

    pub fn micro_map(&self) -> Result<f64> {
        micro_map(&self.scores, &self.labels)
    }

    pub fn mcc(&self, threshold: f64) -> Result<f64> {
        mcc(&self.scores, &self.labels, threshold)
    }

    /// The task's metric suite: accuracy for multiclass; micro-AUC and
    /// micro-mAP for multilabel; MCC and AUC for binary. Metrics that are
    /// undefined on this sample are left out.
    pub fn evaluate(&self) -> Result<BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        let mut put = |name: &str, v: Result<f64>| -> Result<()> {
            match v {
                Ok(x) => {
                    out.insert(name.to_owned(), x);
                    Ok(())
                }
                Err(Error::UndefinedMetric(_)) => Ok(()),
                Err(e) => Err(e),
            }
        };
        match self.labels.task() {
            Task::Multiclass => put("accuracy", self.accuracy())?,
            Task::Multilabel => {
                put("micro_auc", self.micro_auc())?;
                put("micro_map", self.micro_map())?;
            }
            Task::Binary => {
                put("mcc", self.mcc(DEFAULT_THRESHOLD))?;
                put("micro_auc", self.micro_auc())?;
            }
        }
        Ok(out)
    }
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in row.iter().enumerate() {
        if *x > row[best] {
            best = i;
        }
    }
    best
}

fn multiclass(labels: &Labels) -> Result<&[usize]> {
    match labels {
        Labels::Multiclass { classes, .. } => Ok(classes),
        other => Err(Error::TaskMismatch(format!(
            "{:?} labels where multiclass is required",
            other.task()
        ))),
    }
}

fn check_rows<T: Scalar>(scores: &Matrix<T>, labels: &Labels) -> Result<()> {
    if scores.rows() == 0 {
        return Err(Error::UndefinedMetric("no predictions".into()));
    }
    if scores.rows() != labels.len() {
        return Err(Error::dim("prediction rows", scores.rows(), labels.len()));
    }
    Ok(())
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy<T: Scalar>(scores: &Matrix<T>, labels: &Labels) -> Result<f64> {
    check_rows(scores, labels)?;
    let classes = multiclass(labels)?;
    let hits = scores
        .iter_rows()
        .zip(classes)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(hits as f64 / classes.len() as f64)
}

/// Accuracy restricted to each true class; `None` for classes with no items.
pub fn per_class_accuracy<T: Scalar>(scores: &Matrix<T>, labels: &Labels) -> Result<Vec<Option<f64>>> {
    check_rows(scores, labels)?;
    let classes = multiclass(labels)?;
    let k = labels.output_dim();
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for (row, &y) in scores.iter_rows().zip(classes) {
        totals[y] += 1;
        hits[y] += usize::from(argmax(row) == y);
    }
    Ok(hits
        .into_iter()
        .zip(totals)
        .map(|(h, t)| (t > 0).then(|| h as f64 / t as f64))
        .collect())
}

/// Flattened `(score, is_positive)` pairs in row-major order.
fn flattened<T: Scalar>(scores: &Matrix<T>, labels: &Labels) -> Result<Vec<(f64, bool)>> {
    check_rows(scores, labels)?;
    match labels {
        Labels::Multilabel { k, hot } => {
            if scores.cols() != *k {
                return Err(Error::dim("score columns", scores.cols(), *k));
            }
            Ok(scores
                .iter_rows()
                .zip(hot)
                .flat_map(|(row, h)| row.iter().zip(h).map(|(s, &b)| (s.as_f64(), b == 1)))
                .collect())
        }
        Labels::Binary(y) => {
            let col = positive_column(scores)?;
            Ok(scores
                .iter_rows()
                .zip(y)
                .map(|(row, &b)| (row[col].as_f64(), b == 1))
                .collect())
        }
        Labels::Multiclass { .. } => Err(Error::TaskMismatch(
            "micro metrics need multilabel or binary labels".into(),
        )),
    }
}

fn positive_column<T: Scalar>(scores: &Matrix<T>) -> Result<usize> {
    match scores.cols() {
        1 => Ok(0),
        2 => Ok(1),
        c => Err(Error::dim("binary score columns", c, 1)),
    }
}

/// Normalized Mann-Whitney U over all flattened (item, class) pairs.
pub fn micro_auc<T: Scalar>(scores: &Matrix<T>, labels: &Labels) -> Result<f64> {
    let mut pairs = flattened(scores, labels)?;
    let n_pos = pairs.iter().filter(|p| p.1).count();
    let n_neg = pairs.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both positive and negative labels".into(),
        ));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j + 1 < pairs.len() && pairs[j + 1].0 == pairs[i].0 {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares their mean
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let positives = pairs[i..=j].iter().filter(|p| p.1).count();
        rank_sum += midrank * positives as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision over all flattened pairs.
pub fn micro_map<T: Scalar>(scores: &Matrix<T>, labels: &Labels) -> Result<f64> {
    let pairs = flattened(scores, labels)?;
    let n_pos = pairs.iter().filter(|p| p.1).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("average precision needs a positive".into()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    // stable: equal scores keep original order
    order.sort_by(|&a, &b| pairs[b].0.total_cmp(&pairs[a].0));
    let mut seen = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if pairs[i].1 {
            seen += 1;
            sum += seen as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

/// Confusion counts `(tp, tn, fp, fn)` at `score >= threshold`.
pub fn confusion<T: Scalar>(scores: &Matrix<T>, labels: &Labels, threshold: f64) -> Result<[u64; 4]> {
    check_rows(scores, labels)?;
    let Labels::Binary(y) = labels else {
        return Err(Error::TaskMismatch("MCC needs binary labels".into()));
    };
    let col = positive_column(scores)?;
    let mut c = [0u64; 4];
    for (row, &truth) in scores.iter_rows().zip(y) {
        let pred = row[col].as_f64() >= threshold;
        let slot = match (pred, truth == 1) {
            (true, true) => 0,
            (false, false) => 1,
            (true, false) => 2,
            (false, true) => 3,
        };
        c[slot] += 1;
    }
    Ok(c)
}

pub fn mcc_from_confusion([tp, tn, fp, fn_]: [u64; 4]) -> f64 {
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / denom.sqrt()
}

pub fn mcc<T: Scalar>(scores: &Matrix<T>, labels: &Labels, threshold: f64) -> Result<f64> {
    Ok(mcc_from_confusion(confusion(scores, labels, threshold)?))
}

/// Mean, sample standard deviation and count of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(MetricSummary { mean, std, n_runs: n })
    }
}

/// Per-cell metric bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub technique: String,
    pub modalities: Vec<String>,
    pub metrics: BTreeMap<String, MetricSummary>,
}
