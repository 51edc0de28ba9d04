use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize, activation: Activation },
    Dropout { rate: f64 },
    Batchnorm,
}

impl LayerSpec {
    pub fn relu(units: usize) -> Self {
        LayerSpec::Dense {
            units,
            activation: Activation::Relu,
        }
    }

    pub fn dropout(rate: f64) -> Self {
        LayerSpec::Dropout { rate }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "classes", rename_all = "snake_case")]
pub enum Head {
    Softmax(usize),
    Sigmoid(usize),
}

impl Head {
    pub fn classes(self) -> usize {
        match self {
            Head::Softmax(k) | Head::Sigmoid(k) => k,
        }
    }

    /// Output head and loss for a task: softmax + categorical CE for
    /// multiclass, sigmoid + binary CE otherwise (one unit for binary).
    pub fn for_task(task: Task, k: usize) -> (Head, Loss) {
        match task {
            Task::Multiclass => (Head::Softmax(k), Loss::CategoricalCe),
            Task::Multilabel => (Head::Sigmoid(k), Loss::BinaryCe),
            Task::Binary => (Head::Sigmoid(1), Loss::BinaryCe),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CategoricalCe,
    BinaryCe,
}

/// Layer-by-layer network description.
///
/// `layers` are the hidden layers; every network ends in an implicit linear
/// dense layer with `head.classes()` units followed by the head activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub head: Head,
    pub loss: Loss,
    #[serde(default)]
    pub init_seed: u64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Spec("network input_dim must be >= 1".into()));
        }
        if self.head.classes() == 0 {
            return Err(Error::Spec("head needs at least one class".into()));
        }
        match (self.head, self.loss) {
            (Head::Softmax(_), Loss::CategoricalCe) | (Head::Sigmoid(_), Loss::BinaryCe) => {}
            _ => {
                return Err(Error::Spec(
                    "softmax pairs with categorical_ce, sigmoid with binary_ce".into(),
                ))
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            match *l {
                LayerSpec::Dense { units: 0, .. } => {
                    return Err(Error::Spec(format!("layer {i}: dense units must be >= 1")))
                }
                LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                    return Err(Error::Spec(format!("layer {i}: dropout rate {rate} not in [0, 1)")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Multiplies every hidden dense width by `factor` (at least one unit).
    pub fn scaled(mut self, factor: f64) -> Self {
        for l in &mut self.layers {
            if let LayerSpec::Dense { units, .. } = l {
                *units = ((*units as f64 * factor).round() as usize).max(1);
            }
        }
        self
    }

    /// Caps every hidden dense width at `max_units`.
    pub fn capped(mut self, max_units: usize) -> Self {
        for l in &mut self.layers {
            if let LayerSpec::Dense { units, .. } = l {
                *units = (*units).min(max_units).max(1);
            }
        }
        self
    }

    pub fn with_head(mut self, head: Head, loss: Loss) -> Self {
        self.head = head;
        self.loss = loss;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }
}

/// The canned architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Late-fusion head over concatenated unimodal outputs.
    AmazonLateHead,
    /// Early-fusion network over concatenated embeddings.
    AmazonEarly,
    /// Network over flattened (classical or binarized) sketches.
    AmazonSketch,
    /// Multilabel genre network.
    Ml25m,
    /// No hidden layers: softmax/logistic regression.
    Linear,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::AmazonLateHead,
        Architecture::AmazonEarly,
        Architecture::AmazonSketch,
        Architecture::Ml25m,
        Architecture::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::AmazonLateHead => "amazon_late_head",
            Architecture::AmazonEarly => "amazon_early",
            Architecture::AmazonSketch => "amazon_sketch",
            Architecture::Ml25m => "ml25m",
            Architecture::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownArchitecture(s.to_owned()))
    }
}

pub fn build_paper_architecture(arch: Architecture, input_dim: usize, k: usize) -> NetworkSpec {
    use LayerSpec as L;
    let (layers, head, loss) = match arch {
        Architecture::AmazonLateHead => (
            vec![L::relu(20)],
            Head::Softmax(k),
            Loss::CategoricalCe,
        ),
        Architecture::AmazonEarly => (
            vec![
                L::relu(64),
                L::dropout(0.1),
                L::relu(64),
                L::dropout(0.1),
                L::relu(64),
                L::dropout(0.1),
                L::relu(64),
            ],
            Head::Softmax(k),
            Loss::CategoricalCe,
        ),
        Architecture::AmazonSketch => (
            vec![
                L::relu(1024),
                L::dropout(0.2),
                L::Batchnorm,
                L::relu(512),
                L::dropout(0.2),
                L::Batchnorm,
                L::relu(128),
                L::dropout(0.2),
            ],
            Head::Softmax(k),
            Loss::CategoricalCe,
        ),
        Architecture::Ml25m => (
            vec![L::relu(1024), L::relu(512), L::relu(128)],
            Head::Sigmoid(k),
            Loss::BinaryCe,
        ),
        Architecture::Linear => (Vec::new(), Head::Softmax(k), Loss::CategoricalCe),
    };
    NetworkSpec {
        input_dim,
        layers,
        head,
        loss,
        init_seed: 0,
    }
}

/// Looks an architecture up by name.
pub fn build_named_architecture(name: &str, input_dim: usize, k: usize) -> Result<NetworkSpec> {
    Ok(build_paper_architecture(name.parse()?, input_dim, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_units(spec: &NetworkSpec) -> Vec<usize> {
        spec.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dense { units, .. } => Some(*units),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn early_fusion_shape() {
        let s = build_paper_architecture(Architecture::AmazonEarly, 1536, 12);
        assert_eq!(s.head, Head::Softmax(12));
        assert_eq!(dense_units(&s), vec![64, 64, 64, 64]);
        let rates: Vec<f64> = s
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Dropout { rate } => Some(*rate),
                _ => None,
            })
            .collect();
        assert_eq!(rates, vec![0.1; 3]);
        // last hidden layer is dense, no dropout after it
        assert!(matches!(s.layers.last(), Some(LayerSpec::Dense { .. })));
    }

    #[test]
    fn ml25m_shape() {
        let s = build_paper_architecture(Architecture::Ml25m, 1024, 20);
        assert_eq!(s.head, Head::Sigmoid(20));
        assert_eq!(s.loss, Loss::BinaryCe);
        assert_eq!(dense_units(&s), vec![1024, 512, 128]);
    }

    #[test]
    fn sketch_shape() {
        let s = build_paper_architecture(Architecture::AmazonSketch, 65_536, 12);
        assert_eq!(dense_units(&s), vec![1024, 512, 128]);
        assert!(s
            .layers
            .iter()
            .all(|l| !matches!(l, LayerSpec::Dropout { rate } if *rate != 0.2)));
        assert_eq!(s.layers.iter().filter(|l| **l == LayerSpec::Batchnorm).count(), 2);
    }

    #[test]
    fn late_head_shape() {
        let s = build_paper_architecture(Architecture::AmazonLateHead, 24, 12);
        assert_eq!(dense_units(&s), vec![20]);
        assert_eq!(s.head, Head::Softmax(12));
    }

    #[test]
    fn names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
        assert!(matches!(
            build_named_architecture("resnet", 3, 2),
            Err(Error::UnknownArchitecture(_))
        ));
    }

    #[test]
    fn validation() {
        let mut s = build_paper_architecture(Architecture::AmazonEarly, 4, 3);
        s.loss = Loss::BinaryCe;
        assert!(s.validate().is_err());
        let s = build_paper_architecture(Architecture::AmazonEarly, 4, 3).scaled(0.25);
        assert_eq!(dense_units(&s), vec![16; 4]);
        assert!(s.validate().is_ok());
        let mut s = build_paper_architecture(Architecture::Linear, 4, 3);
        s.layers.push(LayerSpec::dropout(1.0));
        assert!(s.validate().is_err());
    }
}
