use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_embeddings, save_embeddings, EmbeddingRecord, ModalityId};
use crate::error::{Error, Result};
use crate::labels::{Labels, Task};
use crate::scalar::Scalar;

/// A declared modality plus the embedding file that holds it, relative to
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityEntry {
    pub name: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl ModalityEntry {
    pub fn id(&self) -> ModalityId {
        ModalityId {
            name: self.name.clone(),
            dim: self.dim,
        }
    }
}

/// Whether labels are attached to items or to users (interaction lists).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelTarget {
    #[default]
    Items,
    Users,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelValue {
    Class(usize),
    Hot(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    /// K for multiclass/multilabel; ignored (2) for binary.
    #[serde(default)]
    pub num_classes: usize,
    #[serde(default)]
    pub target: LabelTarget,
    pub values: BTreeMap<String, LabelValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: Task,
    pub modalities: Vec<ModalityEntry>,
    pub items: Vec<String>,
    pub labels: LabelSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interactions: Option<BTreeMap<String, Vec<String>>>,
}

impl DatasetManifest {
    pub fn from_path(path: &Path) -> Result<Self> {
        let f = File::open(path)?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    /// Ids the labels are aligned to: items in declared order, or users in
    /// lexicographic order.
    pub fn target_ids(&self) -> Vec<String> {
        match self.labels.target {
            LabelTarget::Items => self.items.clone(),
            LabelTarget::Users => self
                .interactions
                .as_ref()
                .map(|m| m.keys().cloned().collect())
                .unwrap_or_default(),
        }
    }

    /// Resolves labels for `target_ids()`, checking arity.
    pub fn resolve_labels(&self) -> Result<Labels> {
        let ids = self.target_ids();
        let k = self.labels.num_classes;
        let lookup = |id: &String| {
            self.labels.values.get(id).ok_or_else(|| Error::Manifest {
                id: id.clone(),
                reason: "no label".into(),
            })
        };
        let arity = |id: &String, why: &str| Error::Manifest {
            id: id.clone(),
            reason: format!("label arity mismatch: {why}"),
        };
        let labels = match self.task {
            Task::Multiclass => {
                if k < 2 {
                    return Err(arity(&"labels".into(), "multiclass needs num_classes >= 2"));
                }
                let mut classes = Vec::with_capacity(ids.len());
                for id in &ids {
                    match lookup(id)? {
                        LabelValue::Class(c) if *c < k => classes.push(*c),
                        LabelValue::Class(c) => {
                            return Err(arity(id, &format!("class {c} >= K={k}")))
                        }
                        LabelValue::Hot(_) => return Err(arity(id, "expected a class index")),
                    }
                }
                Labels::Multiclass { k, classes }
            }
            Task::Multilabel => {
                if k < 1 {
                    return Err(arity(&"labels".into(), "multilabel needs num_classes >= 1"));
                }
                let mut hot = Vec::with_capacity(ids.len());
                for id in &ids {
                    match lookup(id)? {
                        LabelValue::Hot(h) if h.len() == k && h.iter().all(|&b| b <= 1) => {
                            hot.push(h.clone())
                        }
                        _ => return Err(arity(id, &format!("expected a {k}-hot 0/1 vector"))),
                    }
                }
                Labels::Multilabel { k, hot }
            }
            Task::Binary => {
                let mut y = Vec::with_capacity(ids.len());
                for id in &ids {
                    match lookup(id)? {
                        LabelValue::Class(c) if *c <= 1 => y.push(*c as u8),
                        _ => return Err(arity(id, "binary label must be 0 or 1")),
                    }
                }
                Labels::Binary(y)
            }
        };
        Ok(labels)
    }

    /// Structural checks that do not need embedding data.
    pub fn check_structure(&self) -> Result<()> {
        let mut names = HashSet::new();
        for m in &self.modalities {
            if m.dim == 0 {
                return Err(Error::Manifest {
                    id: m.name.clone(),
                    reason: "modality dim must be >= 1".into(),
                });
            }
            if !names.insert(m.name.as_str()) {
                return Err(Error::Manifest {
                    id: m.name.clone(),
                    reason: "duplicate modality name".into(),
                });
            }
        }
        let mut items = HashSet::with_capacity(self.items.len());
        for it in &self.items {
            if !items.insert(it.as_str()) {
                return Err(Error::Manifest {
                    id: it.clone(),
                    reason: "duplicate item id".into(),
                });
            }
        }
        if let Some(inter) = &self.interactions {
            for (user, list) in inter {
                if list.is_empty() {
                    return Err(Error::Manifest {
                        id: user.clone(),
                        reason: "empty interaction list".into(),
                    });
                }
                if let Some(bad) = list.iter().find(|i| !items.contains(i.as_str())) {
                    return Err(Error::Manifest {
                        id: bad.clone(),
                        reason: format!("interaction of user `{user}` references unknown item"),
                    });
                }
            }
        }
        if self.labels.target == LabelTarget::Users && self.interactions.is_none() {
            return Err(Error::Manifest {
                id: "labels".into(),
                reason: "user-targeted labels need interactions".into(),
            });
        }
        let targets: HashSet<String> = self.target_ids().into_iter().collect();
        if let Some(extra) = self.labels.values.keys().find(|k| !targets.contains(*k)) {
            return Err(Error::Manifest {
                id: extra.clone(),
                reason: "label for an undeclared id".into(),
            });
        }
        self.resolve_labels()?;
        Ok(())
    }
}

/// A manifest with its embeddings loaded and aligned to `manifest.items`.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub manifest: DatasetManifest,
    /// `embeddings[m][i]` is modality `m` for item `i`.
    pub embeddings: Vec<Vec<EmbeddingRecord<T>>>,
    item_index: HashMap<String, usize>,
}

impl<T: Scalar> Dataset<T> {
    /// Aligns per-modality record lists to the manifest's item order.
    pub fn assemble(
        manifest: DatasetManifest,
        by_modality: Vec<Vec<EmbeddingRecord<T>>>,
    ) -> Result<Self> {
        manifest.check_structure()?;
        if by_modality.len() != manifest.modalities.len() {
            return Err(Error::dim(
                "record lists per modality",
                by_modality.len(),
                manifest.modalities.len(),
            ));
        }
        let item_index: HashMap<String, usize> = manifest
            .items
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let mut embeddings = Vec::with_capacity(by_modality.len());
        for (entry, records) in manifest.modalities.iter().zip(by_modality) {
            let mut slots: Vec<Option<EmbeddingRecord<T>>> = vec![None; manifest.items.len()];
            for r in records {
                if r.vector.len() != entry.dim {
                    return Err(Error::dim(
                        format!("item `{}` modality `{}`", r.item_id, entry.name),
                        r.vector.len(),
                        entry.dim,
                    ));
                }
                let Some(&i) = item_index.get(&r.item_id) else {
                    return Err(Error::Manifest {
                        id: r.item_id,
                        reason: format!("record in `{}` for undeclared item", entry.name),
                    });
                };
                if slots[i].is_some() {
                    return Err(Error::Duplicate(r.item_id));
                }
                slots[i] = Some(r);
            }
            let aligned = slots
                .into_iter()
                .enumerate()
                .map(|(i, s)| {
                    s.ok_or_else(|| Error::Manifest {
                        id: manifest.items[i].clone(),
                        reason: format!("no record for modality `{}`", entry.name),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            embeddings.push(aligned);
        }
        Ok(Dataset {
            manifest,
            embeddings,
            item_index,
        })
    }

    /// Loads a manifest and the embedding files it references.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::from_path(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut by_modality = Vec::with_capacity(manifest.modalities.len());
        for m in &manifest.modalities {
            let file = m.file.as_ref().ok_or_else(|| Error::Manifest {
                id: m.name.clone(),
                reason: "modality has no embedding file".into(),
            })?;
            let f = File::open(base.join(file))?;
            by_modality.push(load_embeddings(BufReader::new(f), &m.id())?);
        }
        Self::assemble(manifest, by_modality)
    }

    /// Writes `manifest.json` plus one `<modality>.emb` file per modality.
    /// Returns the manifest path.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = self.manifest.clone();
        for (entry, records) in manifest.modalities.iter_mut().zip(&self.embeddings) {
            let file = format!("{}.emb", entry.name);
            let out = BufWriter::new(File::create(dir.join(&file))?);
            save_embeddings(records, entry.dim, out)?;
            entry.file = Some(file);
        }
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    pub fn n_items(&self) -> usize {
        self.manifest.items.len()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn modality_index(&self, name: &str) -> Option<usize> {
        self.manifest.modalities.iter().position(|m| m.name == name)
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.manifest.modalities.iter().map(|m| m.name.clone()).collect()
    }

    pub fn labels(&self) -> Result<Labels> {
        self.manifest.resolve_labels()
    }

    /// Per-user item indices, in `target_ids()` order.
    pub fn user_item_indices(&self) -> Option<Vec<Vec<usize>>> {
        let inter = self.manifest.interactions.as_ref()?;
        Some(
            inter
                .values()
                .map(|list| list.iter().map(|id| self.item_index[id]).collect())
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub task: Task,
    pub n_items: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_users: Option<usize>,
    pub dimensions: BTreeMap<String, usize>,
    pub missing_rate: BTreeMap<String, f64>,
    /// Examples per class (multiclass), positives per class (multilabel) or
    /// `[negatives, positives]` (binary).
    pub class_counts: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_interactions: Option<usize>,
}

/// Summarizes a loaded dataset; fails only on structural violations.
pub fn validate_manifest<T: Scalar>(dataset: &Dataset<T>) -> Result<ValidationReport> {
    let manifest = &dataset.manifest;
    manifest.check_structure()?;
    let labels = manifest.resolve_labels()?;
    let n = manifest.items.len();
    let mut dimensions = BTreeMap::new();
    let mut missing_rate = BTreeMap::new();
    for (entry, records) in manifest.modalities.iter().zip(&dataset.embeddings) {
        dimensions.insert(entry.name.clone(), entry.dim);
        let absent = records.iter().filter(|r| !r.present).count();
        let rate = if n == 0 { 0.0 } else { absent as f64 / n as f64 };
        missing_rate.insert(entry.name.clone(), rate);
    }
    let class_counts = match &labels {
        Labels::Multiclass { k, classes } => {
            let mut c = vec![0; *k];
            for &y in classes {
                c[y] += 1;
            }
            c
        }
        Labels::Multilabel { k, hot } => {
            let mut c = vec![0; *k];
            for row in hot {
                for (j, &b) in row.iter().enumerate() {
                    c[j] += b as usize;
                }
            }
            c
        }
        Labels::Binary(y) => {
            let pos = y.iter().filter(|&&b| b == 1).count();
            vec![y.len() - pos, pos]
        }
    };
    let inter = manifest.interactions.as_ref();
    Ok(ValidationReport {
        task: manifest.task,
        n_items: n,
        n_users: inter.map(|m| m.len()),
        dimensions,
        missing_rate,
        class_counts,
        min_interactions: inter.and_then(|m| m.values().map(Vec::len).min()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(missing_every: Option<usize>) -> Dataset<f64> {
        let items: Vec<String> = (0..8).map(|i| format!("i{i}")).collect();
        let title = ModalityId::new("title", 2).unwrap();
        let desc = ModalityId::new("description", 3).unwrap();
        let manifest = DatasetManifest {
            task: Task::Multiclass,
            modalities: vec![
                ModalityEntry { name: "title".into(), dim: 2, file: None },
                ModalityEntry { name: "description".into(), dim: 3, file: None },
            ],
            items: items.clone(),
            labels: LabelSet {
                num_classes: 2,
                target: LabelTarget::Items,
                values: items
                    .iter()
                    .enumerate()
                    .map(|(i, id)| (id.clone(), LabelValue::Class(i % 2)))
                    .collect(),
            },
            interactions: None,
        };
        let t = items
            .iter()
            .map(|id| EmbeddingRecord::present(id.clone(), &title, vec![1.0, 2.0]).unwrap())
            .collect();
        let d = items
            .iter()
            .enumerate()
            .map(|(i, id)| match missing_every {
                Some(k) if i % k == 0 => EmbeddingRecord::absent(id.clone(), &desc),
                _ => EmbeddingRecord::present(id.clone(), &desc, vec![1.0, 0.0, 1.0]).unwrap(),
            })
            .collect();
        Dataset::assemble(manifest, vec![t, d]).unwrap()
    }

    #[test]
    fn quarter_of_descriptions_missing() {
        let report = validate_manifest(&tiny(Some(4))).unwrap();
        assert_eq!(report.missing_rate["description"], 0.25);
        assert_eq!(report.missing_rate["title"], 0.0);
        assert_eq!(report.class_counts, vec![4, 4]);
    }

    #[test]
    fn all_present_means_zero_missing() {
        let report = validate_manifest(&tiny(None)).unwrap();
        assert!(report.missing_rate.values().all(|&r| r == 0.0));
    }

    #[test]
    fn interaction_with_unknown_item() {
        let mut m = tiny(None).manifest;
        m.interactions = Some(BTreeMap::from([(
            "u0".to_string(),
            vec!["i1".to_string(), "ghost".to_string()],
        )]));
        let err = m.check_structure().unwrap_err();
        assert!(matches!(err, Error::Manifest { ref id, .. } if id == "ghost"), "{err}");
    }

    #[test]
    fn empty_interaction_list_rejected() {
        let mut m = tiny(None).manifest;
        m.interactions = Some(BTreeMap::from([("u0".to_string(), vec![])]));
        assert!(matches!(m.check_structure(), Err(Error::Manifest { .. })));
    }

    #[test]
    fn label_arity_mismatch() {
        let mut m = tiny(None).manifest;
        m.labels.values.insert("i3".into(), LabelValue::Class(5));
        let err = m.check_structure().unwrap_err();
        assert!(matches!(err, Error::Manifest { ref id, .. } if id == "i3"));
    }

    #[test]
    fn assemble_rejects_missing_record() {
        let ds = tiny(None);
        let mut by = ds.embeddings.clone();
        by[1].pop();
        assert!(matches!(
            Dataset::assemble(ds.manifest.clone(), by),
            Err(Error::Manifest { .. })
        ));
    }

    #[test]
    fn write_and_reload() {
        let ds = tiny(Some(3));
        let dir = tempfile::tempdir().unwrap();
        let path = ds.write_to_dir(dir.path()).unwrap();
        let back: Dataset<f64> = Dataset::load(&path).unwrap();
        assert_eq!(back.embeddings, ds.embeddings);
        assert_eq!(back.labels().unwrap(), ds.labels().unwrap());
    }
}
