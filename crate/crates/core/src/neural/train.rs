use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::network::{Mode, Network};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{hash_words, stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub shuffle_seed: u64,
    pub adam: AdamConfig,
}

/// Training presets for the canned approaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    AmazonLate,
    AmazonEarly,
    AmazonSketch,
    AmazonBinarized,
    Ml25m,
    /// Early-fusion and graph models on the movie task train longer.
    Ml25mLong,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, learning_rate: f64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            shuffle_seed: 0,
            adam: AdamConfig::new(learning_rate),
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::AmazonLate => TrainConfig::new(10, 32, 1e-4),
            Preset::AmazonEarly => TrainConfig::new(10, 32, 1e-3),
            Preset::AmazonSketch => TrainConfig::new(10, 32, 1e-5),
            Preset::AmazonBinarized => TrainConfig::new(20, 32, 1e-4),
            Preset::Ml25m => TrainConfig::new(20, 64, 1e-5),
            Preset::Ml25mLong => TrainConfig::new(30, 64, 1e-5),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.shuffle_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<T> {
    pub network: Network<T>,
    pub history: Vec<EpochRecord>,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn predict_proba(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.network.predict_proba(x)
    }
}

/// Mini-batch training with epoch-wise shuffling.
///
/// Batch order comes from `(shuffle_seed, epoch)` and dropout masks from
/// `(shuffle_seed, epoch, batch)`, so identical inputs give identical
/// parameter bytes. `validation` only feeds the history.
pub fn train<T: Scalar>(
    spec: NetworkSpec,
    x: &Matrix<T>,
    targets: &Matrix<T>,
    cfg: &TrainConfig,
    validation: Option<(&Matrix<T>, &Matrix<T>)>,
) -> Result<TrainedModel<T>> {
    cfg.validate()?;
    if x.rows() == 0 {
        return Err(Error::Config("training data is empty".into()));
    }
    if targets.rows() != x.rows() {
        return Err(Error::LabelArity(format!("{} targets for {} rows", targets.rows(), x.rows())));
    }
    let mut network = Network::new(spec)?;
    let mut adam = Adam::new(cfg.adam, network.params().len());
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream(hash_words(&[cfg.shuffle_seed, epoch as u64])));
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xb = x.select_rows(idx);
            let yb = targets.select_rows(idx);
            let mask_seed = hash_words(&[cfg.shuffle_seed, epoch as u64, b as u64, 0xd7]);
            let pass = network.forward(&xb, Mode::Train { mask_seed })?;
            let (loss, grads) = network.backward(&pass, &yb)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged { epoch });
            }
            total += loss.as_f64() * idx.len() as f64;
            adam.step(network.params_mut(), &grads);
            network.update_running_stats(&pass);
        }
        if !network.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        let val_loss = match validation {
            Some((vx, vy)) if vx.rows() > 0 => {
                let pass = network.forward(vx, Mode::Infer)?;
                Some(network.loss(&pass, vy)?.as_f64())
            }
            _ => None,
        };
        history.push(EpochRecord {
            epoch,
            loss: total / x.rows() as f64,
            val_loss,
        });
    }
    Ok(TrainedModel { network, history })
}

#[cfg(test)]
mod tests {
    use super::super::spec::{build_paper_architecture, Architecture, Head, Loss};
    use super::*;
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> (Matrix<f64>, Matrix<f64>) {
        let mut rng = stream(seed);
        let mut x = Matrix::zeros(n, 2);
        let mut y = Matrix::zeros(n, 2);
        for i in 0..n {
            let class = i % 2;
            let sign = if class == 1 { 1.0 } else { -1.0 };
            x.set(i, 0, sign * (1.0 + rng.random::<f64>()));
            x.set(i, 1, rng.random_range(-1.0..1.0));
            y.set(i, class, 1.0);
        }
        (x, y)
    }

    #[test]
    fn presets_match_published_settings() {
        let lrs: Vec<f64> = [Preset::AmazonLate, Preset::AmazonEarly, Preset::AmazonSketch, Preset::AmazonBinarized]
            .iter()
            .map(|p| TrainConfig::preset(*p).adam.learning_rate)
            .collect();
        assert_eq!(lrs, vec![1e-4, 1e-3, 1e-5, 1e-4]);
        assert_eq!(TrainConfig::preset(Preset::AmazonLate).epochs, 10);
        assert_eq!(TrainConfig::preset(Preset::AmazonBinarized).epochs, 20);
        assert_eq!(TrainConfig::preset(Preset::AmazonEarly).batch_size, 32);
        assert_eq!(TrainConfig::preset(Preset::Ml25m).epochs, 20);
        assert_eq!(TrainConfig::preset(Preset::Ml25mLong).epochs, 30);
        assert_eq!(TrainConfig::preset(Preset::Ml25m).batch_size, 64);
        assert_eq!(TrainConfig::preset(Preset::Ml25m).adam.learning_rate, 1e-5);
    }

    #[test]
    fn loss_decreases_on_separable_toy() {
        let (x, y) = separable(200, 1);
        let spec = build_paper_architecture(Architecture::AmazonEarly, 2, 2);
        let cfg = TrainConfig::new(5, 32, 1e-3).with_seed(4);
        let model = train(spec, &x, &y, &cfg, None).unwrap();
        let losses: Vec<f64> = model.history.iter().map(|h| h.loss).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = separable(70, 2);
        let spec = build_paper_architecture(Architecture::AmazonSketch, 2, 2).scaled(1.0 / 32.0);
        let cfg = TrainConfig::new(3, 16, 1e-3).with_seed(9);
        let a = train(spec.clone(), &x, &y, &cfg, Some((&x, &y))).unwrap();
        let b = train(spec, &x, &y, &cfg, Some((&x, &y))).unwrap();
        let bytes = |m: &TrainedModel<f64>| {
            m.network
                .params()
                .iter()
                .chain(m.network.running_stats())
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bytes(&a), bytes(&b));
        assert_eq!(a.history, b.history);
        assert!(a.history.iter().all(|h| h.val_loss.is_some()));
        assert!(a.network.running_stats().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let (mut x, y) = separable(40, 3);
        x.as_mut_slice().iter_mut().for_each(|v| *v *= 1e200);
        let spec = build_paper_architecture(Architecture::Linear, 2, 2);
        let cfg = TrainConfig::new(3, 8, 1e300);
        assert!(matches!(train(spec, &x, &y, &cfg, None), Err(Error::TrainingDiverged { .. })));
    }

    #[test]
    fn sigmoid_head_learns() {
        let (x, y) = separable(120, 5);
        let spec = build_paper_architecture(Architecture::Ml25m, 2, 2).scaled(1.0 / 32.0);
        assert_eq!(spec.head, Head::Sigmoid(2));
        assert_eq!(spec.loss, Loss::BinaryCe);
        let model = train(spec, &x, &y, &TrainConfig::new(30, 16, 1e-2), None).unwrap();
        assert!(model.history.last().unwrap().loss < model.history[0].loss);
    }

    #[test]
    fn rejects_bad_config() {
        let (x, y) = separable(4, 0);
        let spec = build_paper_architecture(Architecture::Linear, 2, 2);
        assert!(train(spec.clone(), &x, &y, &TrainConfig::new(0, 4, 1e-3), None).is_err());
        assert!(train(spec, &x, &y, &TrainConfig::new(1, 0, 1e-3), None).is_err());
    }
}
