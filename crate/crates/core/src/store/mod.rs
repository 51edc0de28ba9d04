//! Per-modality embedding datasets: records, on-disk formats, manifests,
//! splits and a seeded synthetic generator.

mod emb;
mod manifest;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use emb::{load_embeddings, save_csv, save_embeddings, EMB1_MAGIC};
pub use manifest::{
    validate_manifest, Dataset, DatasetManifest, LabelSet, LabelTarget, LabelValue,
    ModalityEntry, ValidationReport,
};
pub use split::{make_split, SplitIndices, SplitKind, SplitPlan};
pub use synth::{synth_generate, SynthModality, SynthSpec, SynthTask, SynthUsers};

/// A modality name with its declared embedding width.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalityId {
    pub name: String,
    pub dim: usize,
}

impl ModalityId {
    pub fn new(name: impl Into<String>, dim: usize) -> Result<Self> {
        let name = name.into();
        if dim == 0 {
            return Err(Error::Spec(format!("modality `{name}` has dim 0")));
        }
        Ok(ModalityId { name, dim })
    }
}

/// One item's vector for one modality.
///
/// Absent modalities carry the all-zeros sentinel and `present = false`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord<T> {
    pub item_id: String,
    pub modality: ModalityId,
    pub vector: Vec<T>,
    pub present: bool,
    /// Permits a present all-zero vector.
    pub allow_zero: bool,
}

impl<T: Scalar> EmbeddingRecord<T> {
    pub fn present(
        item_id: impl Into<String>,
        modality: &ModalityId,
        vector: Vec<T>,
    ) -> Result<Self> {
        let item_id = item_id.into();
        if vector.len() != modality.dim {
            return Err(Error::dim(
                format!("item `{item_id}` modality `{}`", modality.name),
                vector.len(),
                modality.dim,
            ));
        }
        if vector.iter().all(|v| v.is_zero()) {
            return Err(Error::Format(format!(
                "item `{item_id}`: present vector is all zeros (mark it absent or allow_zero)"
            )));
        }
        Ok(EmbeddingRecord {
            item_id,
            modality: modality.clone(),
            vector,
            present: true,
            allow_zero: false,
        })
    }

    pub fn absent(item_id: impl Into<String>, modality: &ModalityId) -> Self {
        EmbeddingRecord {
            item_id: item_id.into(),
            modality: modality.clone(),
            vector: vec![T::zero(); modality.dim],
            present: false,
            allow_zero: false,
        }
    }

    /// On-disk flag byte: 0 absent, 1 present, 2 present with zeros allowed.
    pub(crate) fn flag(&self) -> u8 {
        match (self.present, self.allow_zero) {
            (false, _) => 0,
            (true, false) => 1,
            (true, true) => 2,
        }
    }
}
