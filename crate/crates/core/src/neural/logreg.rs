//! L2-regularized binary logistic regression.

use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::network::{sigmoid, Network};
use super::spec::{Head, Loss, NetworkSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, Scalar};

fn default_c() -> f64 {
    0.1
}
fn default_max_iters() -> usize {
    5000
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_lr() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    /// Inverse regularization strength.
    #[serde(default = "default_c", rename = "C", alias = "c")]
    pub c: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Stop once the gradient's infinity norm falls below this.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_true")]
    pub fit_intercept: bool,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            c: default_c(),
            max_iters: default_max_iters(),
            tolerance: default_tolerance(),
            learning_rate: default_lr(),
            fit_intercept: true,
        }
    }
}

impl LogRegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::Config(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("tolerance must be >= 0".into()));
        }
        AdamConfig::new(self.learning_rate).validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
}

impl<T: Scalar> LogisticModel<T> {
    /// Probability of the positive class, one column.
    pub fn predict_proba(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.weights.len() {
            return Err(Error::dim("logistic regression input", x.cols(), self.weights.len()));
        }
        let p = x.iter_rows().map(|r| sigmoid(dot(&self.weights, r) + self.bias)).collect();
        Matrix::from_vec(x.rows(), 1, p)
    }

    /// The equivalent single-output sigmoid network.
    pub fn to_network(&self) -> Result<Network<T>> {
        let spec = NetworkSpec {
            input_dim: self.weights.len(),
            layers: vec![],
            head: Head::Sigmoid(1),
            loss: Loss::BinaryCe,
            init_seed: 0,
        };
        let mut params = self.weights.clone();
        params.push(self.bias);
        Network::from_parts(spec, params, vec![])
    }
}

/// `(1/n) Σ logloss + ‖w‖² / (2 C n)`; the bias is not penalized.
pub fn logreg_objective<T: Scalar>(x: &Matrix<T>, y: &[u8], w: &[T], b: T, c: f64) -> f64 {
    let n = x.rows() as f64;
    let mut total = 0.0;
    for (row, &yi) in x.iter_rows().zip(y) {
        let z = (dot(w, row) + b).as_f64();
        // log(1 + e^z) - y z, stable for large |z|
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        total += softplus - f64::from(yi) * z;
    }
    let sq: f64 = w.iter().map(|v| v.as_f64() * v.as_f64()).sum();
    total / n + sq / (2.0 * c * n)
}

fn gradient<T: Scalar>(x: &Matrix<T>, y: &[u8], params: &[T], c: f64, fit_intercept: bool) -> Vec<T> {
    let p = x.cols();
    let (w, b) = params.split_at(p);
    let n = T::of_usize(x.rows());
    let mut g = vec![T::zero(); p + 1];
    for (row, &yi) in x.iter_rows().zip(y) {
        let r = sigmoid(dot(w, row) + b[0]) - T::of(f64::from(yi));
        for (gj, xj) in g[..p].iter_mut().zip(row) {
            *gj += r * *xj;
        }
        g[p] += r;
    }
    let reg = T::one() / (T::of(c) * n);
    for (gj, wj) in g[..p].iter_mut().zip(w) {
        *gj = *gj / n + reg * *wj;
    }
    g[p] = if fit_intercept { g[p] / n } else { T::zero() };
    g
}

/// Full-batch Adam on the regularized objective. A step that increases the
/// objective is undone and Adam restarts with half the learning rate, which
/// keeps the iteration monotone and lets it settle on the optimum.
pub fn fit_logreg<T: Scalar>(x: &Matrix<T>, y: &[u8], cfg: &LogRegConfig) -> Result<LogisticModel<T>> {
    cfg.validate()?;
    if x.rows() != y.len() {
        return Err(Error::LabelArity(format!("{} labels for {} rows", y.len(), x.rows())));
    }
    if x.rows() < 2 {
        return Err(Error::DegenerateLabels);
    }
    if y.iter().any(|v| *v > 1) {
        return Err(Error::LabelArity("binary labels must be 0 or 1".into()));
    }
    let positives = y.iter().filter(|v| **v == 1).count();
    if positives == 0 || positives == y.len() {
        return Err(Error::DegenerateLabels);
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("logistic regression input".into()));
    }
    let p = x.cols();
    let mut params = vec![T::zero(); p + 1];
    let mut adam = Adam::new(AdamConfig::new(cfg.learning_rate), p + 1);
    let objective = |params: &[T]| logreg_objective(x, y, &params[..p], params[p], cfg.c);
    let mut current = objective(&params);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let g = gradient(x, y, &params, cfg.c, cfg.fit_intercept);
        let inf_norm = g.iter().fold(0.0f64, |m, v| m.max(v.as_f64().abs()));
        if inf_norm < cfg.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let saved = params.clone();
        adam.step(&mut params, &g);
        let next = objective(&params);
        if !next.is_finite() {
            return Err(Error::TrainingDiverged { epoch: iterations });
        }
        if next > current {
            params = saved;
            let lr = adam.config.learning_rate * 0.5;
            if lr < 1e-16 {
                break;
            }
            adam = Adam::new(AdamConfig::new(lr), p + 1);
        } else {
            current = next;
        }
    }
    let bias = params.pop().expect("bias slot");
    Ok(LogisticModel {
        weights: params,
        bias,
        iterations,
        objective: current,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pair_has_zero_bias() {
        let x: Matrix<f64> = Matrix::from_rows(&[[1.0, 2.0], [-1.0, -2.0]]).unwrap();
        let m = fit_logreg(&x, &[1, 0], &LogRegConfig::default()).unwrap();
        assert!(m.bias.abs() < 1e-6, "{}", m.bias);
        assert!(m.weights[0] > 0.0);
    }

    #[test]
    fn unregularized_limit_separates() {
        let x = Matrix::from_rows(&[[0.0, 1.0], [1.0, 2.0], [3.0, 1.0], [4.0, 0.0], [0.5, 0.5], [3.5, 2.0]]).unwrap();
        let y = [0, 0, 1, 1, 0, 1];
        let cfg = LogRegConfig {
            c: 1e12,
            ..Default::default()
        };
        let m = fit_logreg(&x, &y, &cfg).unwrap();
        let p = m.predict_proba(&x).unwrap();
        for (pi, yi) in p.as_slice().iter().zip(y) {
            assert_eq!(u8::from(*pi >= 0.5), yi);
        }
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(matches!(fit_logreg(&x, &[1, 1], &LogRegConfig::default()), Err(Error::DegenerateLabels)));
        let one = Matrix::from_rows(&[[1.0]]).unwrap();
        assert!(matches!(fit_logreg(&one, &[1], &LogRegConfig::default()), Err(Error::DegenerateLabels)));
    }

    #[test]
    fn network_view_matches() {
        let x: Matrix<f64> = Matrix::from_rows(&[[1.0, 0.2], [-0.4, 0.9], [0.3, -1.0]]).unwrap();
        let m = fit_logreg(&x, &[1, 0, 1], &LogRegConfig::default()).unwrap();
        let a = m.predict_proba(&x).unwrap();
        let b = m.to_network().unwrap().predict_proba(&x).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn config_json_accepts_capital_c() {
        let c: LogRegConfig = serde_json::from_str(r#"{"C": 0.5}"#).unwrap();
        assert_eq!(c.c, 0.5);
        assert_eq!(LogRegConfig::default().c, 0.1);
        assert!(LogRegConfig { c: 0.0, ..c }.validate().is_err());
    }
}
