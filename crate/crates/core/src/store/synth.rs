//! Seeded Gaussian class-cluster embeddings for desk-scale experiments.
//!
//! Every class gets a latent code `z_c` of `latent_dim` standard-normal
//! coordinates. A modality observes a contiguous (wrapping) window of those
//! coordinates, of length `round(informativeness * latent_dim)` starting at
//! `round(signal_offset * latent_dim)`, mapped into its embedding space by a
//! fixed random projection and scaled by `separation`, plus unit Gaussian
//! noise. Informativeness 0 therefore yields pure class-independent noise,
//! and two modalities with complementary windows each carry part of the
//! class signal.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    Dataset, DatasetManifest, EmbeddingRecord, LabelSet, LabelTarget, LabelValue, ModalityEntry,
    ModalityId,
};
use crate::error::{Error, Result};
use crate::labels::Task;
use crate::rng::{derive_seed, stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    #[default]
    Multiclass,
    Multilabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModality {
    pub name: String,
    pub dim: usize,
    /// Fraction of the latent class code this modality observes, in [0, 1].
    pub informativeness: f64,
    /// Start of the observed window as a fraction of the latent code.
    #[serde(default)]
    pub signal_offset: f64,
    #[serde(default)]
    pub missing_rate: f64,
}

/// Users whose binary label is correlated with the classes of the items they
/// interact with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthUsers {
    pub n_users: usize,
    pub min_items: usize,
    pub max_items: usize,
    /// Probability that an interaction is drawn from the label's preferred
    /// half of the classes rather than uniformly.
    #[serde(default = "default_affinity")]
    pub affinity: f64,
    #[serde(default = "default_positive_rate")]
    pub positive_rate: f64,
}

fn default_affinity() -> f64 {
    0.3
}

fn default_positive_rate() -> f64 {
    0.5
}

fn default_latent_dim() -> usize {
    8
}

fn default_separation() -> f64 {
    1.0
}

fn default_extra_label_rate() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_items: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub task: SynthTask,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Multilabel only: chance of each non-primary class being switched on.
    #[serde(default = "default_extra_label_rate")]
    pub extra_label_rate: f64,
    pub seed: u64,
    pub modalities: Vec<SynthModality>,
    /// When set, labels move to users and the task becomes binary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub users: Option<SynthUsers>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Spec(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.n_items < self.num_classes {
            return bad(format!(
                "n_items {} smaller than num_classes {}",
                self.n_items, self.num_classes
            ));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be >= 1".into());
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return bad(format!("separation {} must be finite and >= 0", self.separation));
        }
        if !(0.0..=1.0).contains(&self.extra_label_rate) {
            return bad("extra_label_rate outside [0, 1]".into());
        }
        if self.modalities.is_empty() {
            return bad("no modalities".into());
        }
        let mut names = HashSet::new();
        for m in &self.modalities {
            if !names.insert(m.name.as_str()) {
                return bad(format!("duplicate modality `{}`", m.name));
            }
            if m.dim == 0 {
                return bad(format!("modality `{}` has dim 0", m.name));
            }
            if !(0.0..=1.0).contains(&m.informativeness) {
                return bad(format!("modality `{}`: informativeness outside [0, 1]", m.name));
            }
            if !(0.0..1.0).contains(&m.signal_offset) {
                return bad(format!("modality `{}`: signal_offset outside [0, 1)", m.name));
            }
            if !(0.0..1.0).contains(&m.missing_rate) {
                return bad(format!("modality `{}`: missing_rate outside [0, 1)", m.name));
            }
        }
        if let Some(u) = &self.users {
            if u.n_users == 0 || u.min_items == 0 || u.max_items < u.min_items {
                return bad("users need n_users >= 1 and 1 <= min_items <= max_items".into());
            }
            if self.n_items < 2 * u.max_items {
                return bad(format!(
                    "n_items {} too small for {} distinct interactions per user",
                    self.n_items, u.max_items
                ));
            }
            if !(0.0..=1.0).contains(&u.affinity) {
                return bad("affinity outside [0, 1]".into());
            }
            if !(u.positive_rate > 0.0 && u.positive_rate < 1.0) {
                return bad("positive_rate must lie in (0, 1)".into());
            }
        }
        Ok(())
    }

    fn window(&self, m: &SynthModality) -> Vec<usize> {
        let l = self.latent_dim;
        let start = (m.signal_offset * l as f64).round() as usize;
        let len = ((m.informativeness * l as f64).round() as usize).min(l);
        (0..len).map(|t| (start + t) % l).collect()
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Generates a dataset in memory. Values pass through `f32` so that the
/// in-memory data equals what `Dataset::write_to_dir` puts on disk.
pub fn synth_generate<T: Scalar>(spec: &SynthSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let n = spec.n_items;
    let k = spec.num_classes;
    let l = spec.latent_dim;
    let width = n.saturating_sub(1).to_string().len().max(4);
    let items: Vec<String> = (0..n).map(|i| format!("item{i:0width$}")).collect();

    let mut classes: Vec<usize> = (0..n).map(|i| i % k).collect();
    classes.shuffle(&mut stream(derive_seed(spec.seed, "classes")));

    let mut code_rng = stream(derive_seed(spec.seed, "codes"));
    let codes: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..l).map(|_| normal(&mut code_rng)).collect())
        .collect();

    let mut entries = Vec::with_capacity(spec.modalities.len());
    let mut by_modality = Vec::with_capacity(spec.modalities.len());
    for m in &spec.modalities {
        let id = ModalityId::new(m.name.clone(), m.dim)?;
        let mut rng = stream(derive_seed(spec.seed, &format!("modality/{}", m.name)));
        let scale = 1.0 / (l as f64).sqrt();
        let projection: Vec<f64> = (0..m.dim * l).map(|_| normal(&mut rng) * scale).collect();
        let window = spec.window(m);
        // per-class signal vectors in embedding space
        let signals: Vec<Vec<f64>> = codes
            .iter()
            .map(|z| {
                (0..m.dim)
                    .map(|r| {
                        let row = &projection[r * l..(r + 1) * l];
                        spec.separation * window.iter().map(|&j| row[j] * z[j]).sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        let mut records = Vec::with_capacity(n);
        for (item, &c) in items.iter().zip(&classes) {
            let missing = rng.random::<f64>() < m.missing_rate;
            let v: Vec<T> = signals[c]
                .iter()
                .map(|s| T::of((s + normal(&mut rng)) as f32 as f64))
                .collect();
            if missing {
                records.push(EmbeddingRecord::absent(item.clone(), &id));
            } else if v.iter().all(|x| x.is_zero()) {
                records.push(EmbeddingRecord {
                    item_id: item.clone(),
                    modality: id.clone(),
                    vector: v,
                    present: true,
                    allow_zero: true,
                });
            } else {
                records.push(EmbeddingRecord::present(item.clone(), &id, v)?);
            }
        }
        entries.push(ModalityEntry {
            name: m.name.clone(),
            dim: m.dim,
            file: None,
        });
        by_modality.push(records);
    }

    let (task, labels, interactions) = match &spec.users {
        None => match spec.task {
            SynthTask::Multiclass => {
                let values = items
                    .iter()
                    .zip(&classes)
                    .map(|(id, &c)| (id.clone(), LabelValue::Class(c)))
                    .collect();
                (Task::Multiclass, values, None)
            }
            SynthTask::Multilabel => {
                let mut rng = stream(derive_seed(spec.seed, "multilabel"));
                let values = items
                    .iter()
                    .zip(&classes)
                    .map(|(id, &c)| {
                        let hot = (0..k)
                            .map(|j| u8::from(j == c || rng.random::<f64>() < spec.extra_label_rate))
                            .collect();
                        (id.clone(), LabelValue::Hot(hot))
                    })
                    .collect();
                (Task::Multilabel, values, None)
            }
        },
        Some(users) => {
            let (values, inter) = generate_users(spec, users, &items, &classes);
            (Task::Binary, values, Some(inter))
        }
    };

    let manifest = DatasetManifest {
        task,
        modalities: entries,
        items,
        labels: LabelSet {
            num_classes: if task == Task::Binary { 2 } else { k },
            target: if interactions.is_some() {
                LabelTarget::Users
            } else {
                LabelTarget::Items
            },
            values: labels,
        },
        interactions,
    };
    Dataset::assemble(manifest, by_modality)
}

type UserLabels = BTreeMap<String, LabelValue>;
type Interactions = BTreeMap<String, Vec<String>>;

fn generate_users(
    spec: &SynthSpec,
    users: &SynthUsers,
    items: &[String],
    classes: &[usize],
) -> (UserLabels, Interactions) {
    let mut rng = stream(derive_seed(spec.seed, "users"));
    let half = spec.num_classes / 2;
    let (pos_pool, neg_pool): (Vec<usize>, Vec<usize>) =
        (0..items.len()).partition(|&i| classes[i] < half);
    let width = users.n_users.saturating_sub(1).to_string().len().max(4);
    let mut labels = BTreeMap::new();
    let mut inter = BTreeMap::new();
    for u in 0..users.n_users {
        let id = format!("user{u:0width$}");
        let y = u8::from(rng.random::<f64>() < users.positive_rate);
        let pool = if y == 1 { &pos_pool } else { &neg_pool };
        let count = rng.random_range(users.min_items..=users.max_items);
        let mut seen = HashSet::with_capacity(count);
        let mut list = Vec::with_capacity(count);
        while list.len() < count {
            let pick = if rng.random::<f64>() < users.affinity {
                pool[rng.random_range(0..pool.len())]
            } else {
                rng.random_range(0..items.len())
            };
            if seen.insert(pick) {
                list.push(items[pick].clone());
            }
        }
        labels.insert(id.clone(), LabelValue::Class(y as usize));
        inter.insert(id, list);
    }
    (labels, inter)
}
