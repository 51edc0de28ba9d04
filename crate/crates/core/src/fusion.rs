//! Early, late and sketch-level fusion of per-modality representations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::store::{EmbeddingRecord, ModalityId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    Mean,
    MajorityVote,
    /// Concatenate outputs and feed a head model.
    ConcatHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FusionTechnique {
    EarlyConcat,
    Late { combiner: Combiner },
    SketchConcat,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Zeros,
    SkipItem,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionPlan {
    pub technique: FusionTechnique,
    /// Concatenation order.
    pub modalities: Vec<ModalityId>,
    #[serde(default)]
    pub missing_policy: MissingPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub modality: String,
    pub offset: usize,
    pub length: usize,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedVector<T> {
    pub item_id: String,
    pub values: Vec<T>,
    pub provenance: Vec<Segment>,
}

impl<T: Scalar> FusedVector<T> {
    /// Appends `other`'s segments after this vector's.
    pub fn concat(mut self, other: &FusedVector<T>) -> FusedVector<T> {
        let base = self.values.len();
        self.values.extend_from_slice(&other.values);
        self.provenance.extend(other.provenance.iter().map(|s| Segment {
            offset: s.offset + base,
            ..s.clone()
        }));
        self
    }
}

/// Concatenates one record per plan modality, in plan order. Returns `None`
/// when the item is dropped under [`MissingPolicy::SkipItem`].
pub fn early_fuse<T: Scalar>(
    records: &[&EmbeddingRecord<T>],
    plan: &FusionPlan,
) -> Result<Option<FusedVector<T>>> {
    if plan.technique != FusionTechnique::EarlyConcat {
        return Err(Error::Spec("early_fuse needs an early_concat plan".into()));
    }
    if records.len() != plan.modalities.len() {
        return Err(Error::dim("records per item", records.len(), plan.modalities.len()));
    }
    let item_id = records.first().map(|r| r.item_id.clone()).unwrap_or_default();
    let total: usize = plan.modalities.iter().map(|m| m.dim).sum();
    let mut values = Vec::with_capacity(total);
    let mut provenance = Vec::with_capacity(plan.modalities.len());
    for m in &plan.modalities {
        let missing = || Error::MissingModality {
            item: item_id.clone(),
            modality: m.name.clone(),
        };
        let rec = records
            .iter()
            .find(|r| r.modality.name == m.name)
            .ok_or_else(missing)?;
        if rec.vector.len() != m.dim {
            return Err(Error::dim(
                format!("item `{item_id}` modality `{}`", m.name),
                rec.vector.len(),
                m.dim,
            ));
        }
        provenance.push(Segment {
            modality: m.name.clone(),
            offset: values.len(),
            length: m.dim,
            present: rec.present,
        });
        if rec.present {
            values.extend_from_slice(&rec.vector);
        } else {
            match plan.missing_policy {
                MissingPolicy::Zeros => values.extend(std::iter::repeat_n(T::zero(), m.dim)),
                MissingPolicy::SkipItem => return Ok(None),
                MissingPolicy::Error => return Err(missing()),
            }
        }
    }
    Ok(Some(FusedVector {
        item_id,
        values,
        provenance,
    }))
}

/// One flattened sketch; `values = None` marks a missing modality, which
/// contributes an all-zero segment of `length` (nothing was hashed).
#[derive(Debug, Clone, Copy)]
pub struct SketchPart<'a, T> {
    pub modality: &'a str,
    pub values: Option<&'a [T]>,
    pub length: usize,
}

pub fn sketch_fuse<T: Scalar>(item_id: &str, parts: &[SketchPart<'_, T>]) -> Result<FusedVector<T>> {
    let total = parts.iter().map(|p| p.length).sum();
    let mut values = Vec::with_capacity(total);
    let mut provenance = Vec::with_capacity(parts.len());
    for p in parts {
        provenance.push(Segment {
            modality: p.modality.to_owned(),
            offset: values.len(),
            length: p.length,
            present: p.values.is_some(),
        });
        match p.values {
            Some(v) => {
                if v.len() != p.length {
                    return Err(Error::dim(format!("sketch `{}`", p.modality), v.len(), p.length));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("sketch `{}`", p.modality)));
                }
                values.extend_from_slice(v);
            }
            None => values.extend(std::iter::repeat_n(T::zero(), p.length)),
        }
    }
    Ok(FusedVector {
        item_id: item_id.to_owned(),
        values,
        provenance,
    })
}

/// Uniform distribution: the output of a modality that abstains.
pub fn abstain<T: Scalar>(k: usize) -> Vec<T> {
    vec![T::one() / T::of_usize(k); k]
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Combines per-modality outputs. `Mean` and `MajorityVote` require
/// probability vectors; vote ties go to the lowest class index, both for the
/// per-model argmax and for the vote count.
pub fn late_combine<T: Scalar, V: AsRef<[T]>>(outputs: &[V], combiner: Combiner) -> Result<Vec<T>> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::Spec("late_combine needs at least one output".into()))?;
    let k = first.as_ref().len();
    for (i, o) in outputs.iter().enumerate() {
        let o = o.as_ref();
        if o.len() != k {
            return Err(Error::dim(format!("late output {i}"), o.len(), k));
        }
        if combiner != Combiner::ConcatHead {
            let s: T = o.iter().copied().sum();
            if (s - T::one()).abs() > T::of(1e-6) || o.iter().any(|p| *p < T::zero()) {
                return Err(Error::Spec(format!("late output {i} is not a probability vector")));
            }
        }
    }
    Ok(match combiner {
        Combiner::Mean => {
            let n = T::of_usize(outputs.len());
            let mut acc = vec![T::zero(); k];
            for o in outputs {
                for (a, p) in acc.iter_mut().zip(o.as_ref()) {
                    *a += *p;
                }
            }
            acc.into_iter().map(|a| a / n).collect()
        }
        Combiner::MajorityVote => {
            let mut votes = vec![0usize; k];
            for o in outputs {
                votes[argmax(o.as_ref())] += 1;
            }
            let winner = argmax(&votes.iter().map(|&v| T::of_usize(v)).collect::<Vec<T>>());
            let mut out = vec![T::zero(); k];
            out[winner] = T::one();
            out
        }
        Combiner::ConcatHead => outputs.iter().flat_map(|o| o.as_ref().iter().copied()).collect(),
    })
}
