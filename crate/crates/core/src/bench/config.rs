use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::Combiner;
use crate::labels::Task;
use crate::neural::{Architecture, LogRegConfig, Preset, TrainConfig};
use crate::sketch::SketchSpec;
use crate::store::{make_split, Dataset, SplitPlan, SynthSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    Late,
    Early,
    Sketch,
    SketchBinarized,
}

impl Technique {
    pub const ALL: [Technique; 4] = [Technique::Late, Technique::Early, Technique::Sketch, Technique::SketchBinarized];

    pub fn name(self) -> &'static str {
        match self {
            Technique::Late => "late",
            Technique::Early => "early",
            Technique::Sketch => "sketch",
            Technique::SketchBinarized => "sketch_binarized",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Technique::Late => "Late fusion",
            Technique::Early => "Early fusion",
            Technique::Sketch => "Sketch",
            Technique::SketchBinarized => "Sketch binarized",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Technique {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Technique::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown technique `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Path to a manifest; relative paths resolve against the config file.
    Manifest(PathBuf),
    Synth(SynthSpec),
}

/// Overrides on top of a technique's training preset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<Architecture>,
    /// Multiplies every hidden layer width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
}

/// A fully resolved training recipe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recipe {
    pub architecture: Architecture,
    pub hidden_scale: f64,
    pub train: TrainConfig,
}

impl TrainingOverride {
    pub fn resolve(&self, architecture: Architecture, preset: Preset) -> Recipe {
        let mut train = TrainConfig::preset(preset);
        if let Some(e) = self.epochs {
            train.epochs = e;
        }
        if let Some(b) = self.batch_size {
            train.batch_size = b;
        }
        if let Some(lr) = self.learning_rate {
            train.adam.learning_rate = lr;
        }
        Recipe {
            architecture: self.architecture.unwrap_or(architecture),
            hidden_scale: self.hidden_scale.unwrap_or(1.0),
            train,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSettings {
    /// Per-modality models of the late-fusion pipeline.
    #[serde(default)]
    pub late_unimodal: TrainingOverride,
    /// The model on top of concatenated unimodal outputs.
    #[serde(default)]
    pub late_head: TrainingOverride,
    #[serde(default)]
    pub early: TrainingOverride,
    #[serde(default)]
    pub sketch: TrainingOverride,
    #[serde(default)]
    pub sketch_binarized: TrainingOverride,
}

impl TrainingSettings {
    pub fn late_unimodal(&self) -> Recipe {
        self.late_unimodal.resolve(Architecture::AmazonEarly, Preset::AmazonLate)
    }

    pub fn late_head(&self) -> Recipe {
        self.late_head.resolve(Architecture::AmazonLateHead, Preset::AmazonLate)
    }

    pub fn early(&self) -> Recipe {
        self.early.resolve(Architecture::AmazonEarly, Preset::AmazonEarly)
    }

    pub fn sketch(&self) -> Recipe {
        self.sketch.resolve(Architecture::AmazonSketch, Preset::AmazonSketch)
    }

    pub fn sketch_binarized(&self) -> Recipe {
        self.sketch_binarized.resolve(Architecture::AmazonSketch, Preset::AmazonBinarized)
    }

    fn all(&self) -> [(&'static str, Recipe); 5] {
        [
            ("late_unimodal", self.late_unimodal()),
            ("late_head", self.late_head()),
            ("early", self.early()),
            ("sketch", self.sketch()),
            ("sketch_binarized", self.sketch_binarized()),
        ]
    }
}

fn default_sketch() -> SketchSpec {
    SketchSpec {
        depth: 128,
        width: 512,
        seed: 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchSettings {
    #[serde(default = "default_sketch")]
    pub default: SketchSpec,
    #[serde(default)]
    pub per_modality: BTreeMap<String, SketchSpec>,
}

impl Default for SketchSettings {
    fn default() -> Self {
        SketchSettings {
            default: default_sketch(),
            per_modality: BTreeMap::new(),
        }
    }
}

impl SketchSettings {
    pub fn for_modality(&self, name: &str) -> SketchSpec {
        self.per_modality.get(name).copied().unwrap_or(self.default)
    }
}

fn default_split() -> SplitPlan {
    SplitPlan::fractions(0.6, 0.2, 0.2, 0)
}

fn default_runs() -> usize {
    10
}

fn default_combiner() -> Combiner {
    Combiner::ConcatHead
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dataset: DatasetSource,
    pub techniques: Vec<Technique>,
    /// Defaults to every non-empty subset of the dataset's modalities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality_subsets: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub sketch: SketchSettings,
    #[serde(default)]
    pub training: TrainingSettings,
    #[serde(default = "default_combiner")]
    pub late_combiner: Combiner,
    #[serde(default)]
    pub logreg: LogRegConfig,
    #[serde(default = "default_split")]
    pub split: SplitPlan,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Worker threads; all available cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid experiment config: {e}")))
    }

    /// Reads a config file and resolves a relative manifest path against
    /// the file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let DatasetSource::Manifest(p) = &mut cfg.dataset {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load_dataset(&self) -> Result<Dataset<f64>> {
        match &self.dataset {
            DatasetSource::Manifest(p) => Dataset::load(p),
            DatasetSource::Synth(spec) => crate::store::synth_generate(spec),
        }
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_runs == 0 {
            return bad("n_runs must be >= 1".into());
        }
        if self.techniques.is_empty() {
            return bad("no techniques selected".into());
        }
        let unique: BTreeSet<_> = self.techniques.iter().collect();
        if unique.len() != self.techniques.len() {
            return bad("techniques listed twice".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1".into());
        }
        self.sketch.default.validate()?;
        for (name, s) in &self.sketch.per_modality {
            s.validate()
                .map_err(|e| Error::Config(format!("sketch spec for `{name}`: {e}")))?;
        }
        for (name, r) in self.training.all() {
            if !(r.hidden_scale > 0.0 && r.hidden_scale.is_finite()) {
                return bad(format!("{name}: hidden_scale must be positive"));
            }
            r.train
                .validate()
                .map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        self.logreg.validate()?;
        if let DatasetSource::Synth(spec) = &self.dataset {
            spec.validate()
                .map_err(|e| Error::Config(format!("synth dataset: {e}")))?;
        }
        Ok(())
    }

    /// Checks against a loaded dataset; returns the modality subsets as
    /// modality indices, each sorted in dataset order.
    pub fn validate_against<T: crate::scalar::Scalar>(&self, data: &Dataset<T>) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        let names = data.modality_names();
        let subsets = match &self.modality_subsets {
            None => default_subsets(names.len()),
            Some(list) => {
                let mut out = Vec::with_capacity(list.len());
                for s in list {
                    if s.is_empty() {
                        return Err(Error::Config("empty modality subset".into()));
                    }
                    let mut idx = Vec::with_capacity(s.len());
                    for n in s {
                        let i = data
                            .modality_index(n)
                            .ok_or_else(|| Error::Config(format!("unknown modality `{n}` in modality_subsets")))?;
                        idx.push(i);
                    }
                    idx.sort_unstable();
                    if idx.windows(2).any(|w| w[0] == w[1]) {
                        return Err(Error::Config(format!("modality repeated in subset {s:?}")));
                    }
                    if out.contains(&idx) {
                        return Err(Error::Config(format!("subset {s:?} listed twice")));
                    }
                    out.push(idx);
                }
                out
            }
        };
        for name in self.sketch.per_modality.keys() {
            if !names.contains(name) {
                return Err(Error::Config(format!("sketch spec for unknown modality `{name}`")));
            }
        }
        let task = data.manifest.task;
        let users = data.manifest.interactions.is_some();
        if users {
            if let Some(t) = self.techniques.iter().find(|t| **t != Technique::Sketch) {
                return Err(Error::Config(format!(
                    "user-level tasks support only the sketch technique, got `{t}`"
                )));
            }
        }
        if self.techniques.contains(&Technique::Late) && self.late_combiner != Combiner::ConcatHead && task != Task::Multiclass {
            return Err(Error::Config("mean and majority-vote late fusion need a multiclass task".into()));
        }
        let n_targets = data.manifest.target_ids().len();
        make_split(n_targets, &self.split).map_err(|e| Error::Config(format!("split: {e}")))?;
        Ok(subsets)
    }
}

/// Every non-empty subset of `m` modalities, ordered by size and then
/// lexicographically by modality index.
pub fn default_subsets(m: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (1u32..(1 << m))
        .map(|mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}
