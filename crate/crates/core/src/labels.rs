use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Multiclass,
    Multilabel,
    Binary,
}

impl Task {
    /// The metric used to rank cells in reports and ablation verdicts.
    pub fn primary_metric(self) -> &'static str {
        match self {
            Task::Multiclass => "accuracy",
            Task::Multilabel => "micro_auc",
            Task::Binary => "mcc",
        }
    }
}

/// Resolved ground truth, aligned to some ordered list of ids.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// One-of-K class indices.
    Multiclass { k: usize, classes: Vec<usize> },
    /// K-hot rows.
    Multilabel { k: usize, hot: Vec<Vec<u8>> },
    /// 0/1 per example.
    Binary(Vec<u8>),
}

impl Labels {
    pub fn task(&self) -> Task {
        match self {
            Labels::Multiclass { .. } => Task::Multiclass,
            Labels::Multilabel { .. } => Task::Multilabel,
            Labels::Binary(_) => Task::Binary,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Labels::Multiclass { classes, .. } => classes.len(),
            Labels::Multilabel { hot, .. } => hot.len(),
            Labels::Binary(y) => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Width of the model output this label set trains: K for one-of-K and
    /// K-hot labels, 1 for binary.
    pub fn output_dim(&self) -> usize {
        match self {
            Labels::Multiclass { k, .. } | Labels::Multilabel { k, .. } => *k,
            Labels::Binary(_) => 1,
        }
    }

    pub fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Multiclass { k, classes } => Labels::Multiclass {
                k: *k,
                classes: idx.iter().map(|&i| classes[i]).collect(),
            },
            Labels::Multilabel { k, hot } => Labels::Multilabel {
                k: *k,
                hot: idx.iter().map(|&i| hot[i].clone()).collect(),
            },
            Labels::Binary(y) => Labels::Binary(idx.iter().map(|&i| y[i]).collect()),
        }
    }

    /// Dense training targets: one-hot, K-hot or a single 0/1 column.
    pub fn to_targets<T: Scalar>(&self) -> Matrix<T> {
        let n = self.len();
        let k = self.output_dim();
        let mut m = Matrix::zeros(n, k);
        match self {
            Labels::Multiclass { classes, .. } => {
                for (i, &c) in classes.iter().enumerate() {
                    m.set(i, c, T::one());
                }
            }
            Labels::Multilabel { hot, .. } => {
                for (i, row) in hot.iter().enumerate() {
                    for (j, &b) in row.iter().enumerate() {
                        if b != 0 {
                            m.set(i, j, T::one());
                        }
                    }
                }
            }
            Labels::Binary(y) => {
                for (i, &b) in y.iter().enumerate() {
                    if b != 0 {
                        m.set(i, 0, T::one());
                    }
                }
            }
        }
        m
    }

    /// Checks arity against the declared class count.
    pub fn validate(&self) -> Result<()> {
        match self {
            Labels::Multiclass { k, classes } => {
                if let Some((i, c)) = classes.iter().enumerate().find(|(_, &c)| c >= *k) {
                    return Err(Error::LabelArity(format!("row {i}: class {c} >= K={k}")));
                }
            }
            Labels::Multilabel { k, hot } => {
                for (i, row) in hot.iter().enumerate() {
                    if row.len() != *k {
                        return Err(Error::LabelArity(format!(
                            "row {i}: {} entries, K={k}",
                            row.len()
                        )));
                    }
                    if row.iter().any(|&b| b > 1) {
                        return Err(Error::LabelArity(format!("row {i}: entries must be 0/1")));
                    }
                }
            }
            Labels::Binary(y) => {
                if let Some(i) = y.iter().position(|&b| b > 1) {
                    return Err(Error::LabelArity(format!("row {i}: binary label must be 0/1")));
                }
            }
        }
        Ok(())
    }
}
