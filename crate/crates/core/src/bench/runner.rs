use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Recipe, SketchSettings, Technique};
use crate::error::{Error, Result};
use crate::fusion::{abstain, early_fuse, late_combine, sketch_fuse, Combiner, FusionPlan, FusionTechnique, MissingPolicy, SketchPart};
use crate::labels::{Labels, Task};
use crate::matrix::Matrix;
use crate::metrics::{EvalReport, MetricSummary, Predictions};
use crate::neural::{build_paper_architecture, fit_logreg, train, Head, Loss};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::sketch::{aggregate, build_bank, flatten, normalize_widthwise, BinarySketch, ClassicalSketch, HyperplaneBank};
use crate::store::{make_split, Dataset, EmbeddingRecord, SplitIndices, SplitPlan};

/// Result of one (technique, modality subset, run) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub technique: Technique,
    pub modalities: Vec<String>,
    pub run_index: usize,
    /// `base_seed + run_index`.
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Wall-clock time of one (technique, run) job, covering all its subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub technique: Technique,
    pub run_index: usize,
    pub seconds: f64,
}

/// Rows a model was fitted on versus rows it was scored on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub technique: Technique,
    pub run_index: usize,
    /// `test`, or `fold<f>` for cross-validation folds.
    pub partition: String,
    pub n_train: usize,
    pub n_eval: usize,
    /// Target ids present in both sets; must be 0.
    pub overlap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub task: Task,
    pub split: SplitPlan,
    pub records: Vec<RunRecord>,
    pub reports: Vec<EvalReport>,
    pub timings: Vec<Timing>,
    pub audit: Vec<AuditEntry>,
}

impl ExperimentOutput {
    pub fn total_overlap(&self) -> usize {
        self.audit.iter().map(|a| a.overlap).sum()
    }

    /// Cells in which every run failed.
    pub fn failed_cells(&self) -> Vec<(Technique, Vec<String>)> {
        cell_keys(&self.records)
            .into_iter()
            .filter(|(t, m)| {
                self.records
                    .iter()
                    .filter(|r| r.technique == *t && &r.modalities == m)
                    .all(|r| r.error.is_some())
            })
            .collect()
    }
}

fn cell_keys(records: &[RunRecord]) -> Vec<(Technique, Vec<String>)> {
    let mut keys: Vec<(Technique, Vec<String>)> = Vec::new();
    for r in records {
        let k = (r.technique, r.modalities.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys
}

/// Per-cell summaries (mean and sample std over successful runs), in the
/// order cells first appear in `records`.
pub fn summarize(records: &[RunRecord]) -> Vec<EvalReport> {
    cell_keys(records)
        .into_iter()
        .map(|(technique, modalities)| {
            let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in records
                .iter()
                .filter(|r| r.technique == technique && r.modalities == modalities && r.error.is_none())
            {
                for (k, v) in &r.metrics {
                    values.entry(k.clone()).or_default().push(*v);
                }
            }
            EvalReport {
                technique: technique.name().to_owned(),
                modalities,
                metrics: values
                    .into_iter()
                    .filter_map(|(k, v)| MetricSummary::from_values(&v).map(|s| (k, s)))
                    .collect(),
            }
        })
        .collect()
}

/// Per-target feature rows of one modality; `None` where the modality is
/// missing.
struct Block<T> {
    name: String,
    len: usize,
    rows: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Block<T> {
    fn present(&self, i: usize) -> bool {
        self.rows[i].is_some()
    }
}

fn concat_blocks<T: Scalar>(blocks: &[&Block<T>], ids: &[String]) -> Result<Matrix<T>> {
    let width: usize = blocks.iter().map(|b| b.len).sum();
    let mut data = Vec::with_capacity(ids.len() * width);
    for (i, id) in ids.iter().enumerate() {
        let parts: Vec<SketchPart<'_, T>> = blocks
            .iter()
            .map(|b| SketchPart {
                modality: &b.name,
                values: b.rows[i].as_deref(),
                length: b.len,
            })
            .collect();
        data.extend(sketch_fuse(id, &parts)?.values);
    }
    Matrix::from_vec(ids.len(), width, data)
}

/// Early-fusion design matrix: concatenated embeddings of `subset`
/// (modality indices), zeros for missing modalities.
pub fn early_features<T: Scalar>(data: &Dataset<T>, subset: &[usize]) -> Result<Matrix<T>> {
    let plan = FusionPlan {
        technique: FusionTechnique::EarlyConcat,
        modalities: subset.iter().map(|&m| data.manifest.modalities[m].id()).collect(),
        missing_policy: MissingPolicy::Zeros,
    };
    let width = plan.modalities.iter().map(|m| m.dim).sum();
    let mut out = Vec::with_capacity(data.n_items() * width);
    for i in 0..data.n_items() {
        let records: Vec<_> = subset.iter().map(|&m| &data.embeddings[m][i]).collect();
        let fused = early_fuse(&records, &plan)?.expect("zeros policy never skips");
        out.extend(fused.values);
    }
    Matrix::from_vec(data.n_items(), width, out)
}

/// Classical sketches of every present item of modality `m`.
fn item_sketches<T: Scalar>(data: &Dataset<T>, m: usize, sketch: &SketchSettings) -> Result<Vec<Option<ClassicalSketch>>> {
    let entry = &data.manifest.modalities[m];
    let bank = build_bank::<T>(sketch.for_modality(&entry.name), entry.dim)?;
    Ok(present_sketches(&bank, &data.embeddings[m])?
        .into_iter()
        .map(|s| s.map(|s| s.to_classical()))
        .collect())
}

/// Sign-bit sketches of the present records, `None` for absent ones.
fn present_sketches<T: Scalar>(bank: &HyperplaneBank<T>, records: &[EmbeddingRecord<T>]) -> Result<Vec<Option<BinarySketch>>> {
    let present: Vec<&[T]> = records.iter().filter(|r| r.present).map(|r| r.vector.as_slice()).collect();
    let mut sketches = bank.sketch_binary_batch(&present).into_iter();
    records
        .iter()
        .map(|r| {
            if r.present {
                Ok(Some(sketches.next().expect("one sketch per present record")?))
            } else {
                Ok(None)
            }
        })
        .collect()
}

/// Item-level one-hot (`binarized = false`) or sign-bit sketches.
fn item_sketch_block<T: Scalar>(data: &Dataset<T>, m: usize, sketch: &SketchSettings, binarized: bool) -> Result<Block<T>> {
    let entry = &data.manifest.modalities[m];
    let spec = sketch.for_modality(&entry.name);
    let bank = build_bank::<T>(spec, entry.dim)?;
    let rows = present_sketches(&bank, &data.embeddings[m])?
        .into_iter()
        .map(|s| s.map(|s| if binarized { s.flatten() } else { s.to_classical().flatten() }))
        .collect();
    Ok(Block {
        name: entry.name.clone(),
        len: if binarized { spec.total_bits() } else { spec.depth * spec.width },
        rows,
    })
}

/// Per-user aggregated sketch of modality `m`: sum of the user's item
/// sketches, L2-normalized per depth row, flattened. `None` when none of the
/// user's items has the modality.
fn user_block<T: Scalar>(data: &Dataset<T>, m: usize, sketch: &SketchSettings) -> Result<Block<T>> {
    let entry = &data.manifest.modalities[m];
    let spec = sketch.for_modality(&entry.name);
    let per_item = item_sketches(data, m, sketch)?;
    let users = data
        .user_item_indices()
        .ok_or_else(|| Error::Config("dataset has no user interactions".into()))?;
    let rows = users
        .iter()
        .map(|items| {
            let own: Vec<ClassicalSketch> = items.iter().filter_map(|&i| per_item[i].clone()).collect();
            if own.is_empty() {
                return Ok(None);
            }
            let counts = aggregate::<T>(&own)?;
            Ok(Some(flatten(&normalize_widthwise(&counts))))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Block {
        name: entry.name.clone(),
        len: spec.depth * spec.width,
        rows,
    })
}

/// User design matrix for `subset`: per-modality aggregated sketches,
/// concatenated in subset order, zeros where a user has no item with that
/// modality. Rows follow the manifest's user order.
pub fn user_sketch_features<T: Scalar>(data: &Dataset<T>, subset: &[usize], sketch: &SketchSettings) -> Result<Matrix<T>> {
    let blocks = subset
        .iter()
        .map(|&m| user_block(data, m, sketch))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Block<T>> = blocks.iter().collect();
    concat_blocks(&refs, &data.manifest.target_ids())
}

struct Partition<'a> {
    name: String,
    train: std::borrow::Cow<'a, [usize]>,
    val: &'a [usize],
    eval: &'a [usize],
    /// Distinguishes fold models from main-split models.
    salt: Option<usize>,
}

fn partitions(split: &SplitIndices) -> Vec<Partition<'_>> {
    let mut out = vec![Partition {
        name: "test".into(),
        train: split.train.as_slice().into(),
        val: &split.val,
        eval: &split.test,
        salt: None,
    }];
    for (f, fold) in split.folds.iter().enumerate() {
        out.push(Partition {
            name: format!("fold{f}"),
            train: split.fold_train(f).into(),
            val: &[],
            eval: fold,
            salt: Some(f),
        });
    }
    out
}

fn overlap(a: &[usize], b: &[usize]) -> usize {
    let set: HashSet<usize> = a.iter().copied().collect();
    b.iter().filter(|i| set.contains(i)).count()
}

struct Context<'a, T> {
    cfg: &'a ExperimentConfig,
    data: &'a Dataset<T>,
    subsets: &'a [Vec<usize>],
    labels: Labels,
    targets: Matrix<T>,
    ids: Vec<String>,
    split: SplitIndices,
    users: bool,
    /// Indexed by modality; filled only for what the techniques need.
    early: Vec<Option<Block<T>>>,
    sketch: Vec<Option<Block<T>>>,
    binarized: Vec<Option<Block<T>>>,
}

type CellResult = std::result::Result<BTreeMap<String, f64>, String>;

impl<'a, T: Scalar> Context<'a, T> {
    fn new(cfg: &'a ExperimentConfig, data: &'a Dataset<T>, subsets: &'a [Vec<usize>]) -> Result<Self> {
        let labels = data.labels()?;
        let ids = data.manifest.target_ids();
        let split = make_split(ids.len(), &cfg.split)?;
        let users = data.manifest.interactions.is_some();
        let used: Vec<usize> = {
            let mut u: Vec<usize> = subsets.iter().flatten().copied().collect();
            u.sort_unstable();
            u.dedup();
            u
        };
        let n_mod = data.manifest.modalities.len();
        let wants = |t: Technique| cfg.techniques.contains(&t);
        let mut early: Vec<Option<Block<T>>> = (0..n_mod).map(|_| None).collect();
        let mut sketch: Vec<Option<Block<T>>> = (0..n_mod).map(|_| None).collect();
        let mut binarized: Vec<Option<Block<T>>> = (0..n_mod).map(|_| None).collect();
        for &m in &used {
            if !users && (wants(Technique::Early) || wants(Technique::Late)) {
                let entry = &data.manifest.modalities[m];
                early[m] = Some(Block {
                    name: entry.name.clone(),
                    len: entry.dim,
                    rows: data.embeddings[m]
                        .iter()
                        .map(|r| r.present.then(|| r.vector.clone()))
                        .collect(),
                });
            }
            if wants(Technique::Sketch) {
                sketch[m] = Some(if users {
                    user_block(data, m, &cfg.sketch)?
                } else {
                    item_sketch_block(data, m, &cfg.sketch, false)?
                });
            }
            if wants(Technique::SketchBinarized) {
                binarized[m] = Some(item_sketch_block(data, m, &cfg.sketch, true)?);
            }
        }
        Ok(Context {
            cfg,
            data,
            subsets,
            targets: labels.to_targets(),
            labels,
            ids,
            split,
            users,
            early,
            sketch,
            binarized,
        })
    }

    fn task(&self) -> Task {
        self.labels.task()
    }

    fn k(&self) -> usize {
        self.labels.output_dim()
    }

    fn subset_names(&self, subset: &[usize]) -> Vec<String> {
        subset
            .iter()
            .map(|&m| self.data.manifest.modalities[m].name.clone())
            .collect()
    }

    fn cell_seed(&self, run_seed: u64, technique: Technique, subset: &[usize], salt: Option<usize>) -> u64 {
        let seed = derive_seed(run_seed, &format!("{}/{}", technique.name(), self.subset_names(subset).join("+")));
        match salt {
            Some(f) => derive_seed(seed, &format!("fold{f}")),
            None => seed,
        }
    }

    fn blocks(&self, technique: Technique, subset: &[usize]) -> Vec<&Block<T>> {
        let source = match technique {
            Technique::Sketch => &self.sketch,
            Technique::SketchBinarized => &self.binarized,
            Technique::Early | Technique::Late => &self.early,
        };
        subset
            .iter()
            .map(|&m| source[m].as_ref().expect("block prepared for every used modality"))
            .collect()
    }

    fn abstention(&self) -> Vec<T> {
        match self.task() {
            Task::Multiclass => abstain(self.k()),
            Task::Multilabel | Task::Binary => vec![T::of(0.5); self.k()],
        }
    }

    /// Trains `recipe` on `train` rows of `x` and scores `score` rows.
    fn fit_predict(
        &self,
        recipe: &Recipe,
        x: &Matrix<T>,
        train_rows: &[usize],
        val_rows: &[usize],
        score_rows: &[usize],
        seed: u64,
    ) -> Result<Matrix<T>> {
        let (head, loss): (Head, Loss) = Head::for_task(self.task(), self.k());
        let spec = build_paper_architecture(recipe.architecture, x.cols(), self.k())
            .scaled(recipe.hidden_scale)
            .with_head(head, loss)
            .with_seed(derive_seed(seed, "init"));
        let cfg = recipe.train.with_seed(derive_seed(seed, "shuffle"));
        let xt = x.select_rows(train_rows);
        let yt = self.targets.select_rows(train_rows);
        let (xv, yv) = (x.select_rows(val_rows), self.targets.select_rows(val_rows));
        let validation = (!val_rows.is_empty()).then_some((&xv, &yv));
        let model = train(spec, &xt, &yt, &cfg, validation)?;
        model.predict_proba(&x.select_rows(score_rows))
    }

    fn evaluate(&self, scores: Matrix<T>, rows: &[usize]) -> Result<BTreeMap<String, f64>> {
        Predictions::new(scores, self.labels.select(rows))?.evaluate()
    }

    /// Unimodal late-fusion outputs for every target, abstaining where the
    /// modality is missing.
    fn unimodal_outputs(&self, m: usize, p: &Partition<'_>, run_seed: u64) -> Result<Matrix<T>> {
        let block = self.early[m].as_ref().expect("embedding block");
        let x = concat_blocks(&[block], &self.ids)?;
        let train_rows: Vec<usize> = p.train.iter().copied().filter(|&i| block.present(i)).collect();
        let val_rows: Vec<usize> = p.val.iter().copied().filter(|&i| block.present(i)).collect();
        if train_rows.is_empty() {
            return Err(Error::MissingModality {
                item: "<all training items>".into(),
                modality: block.name.clone(),
            });
        }
        let all: Vec<usize> = (0..self.ids.len()).collect();
        let seed = self.cell_seed(run_seed, Technique::Late, &[m], p.salt);
        let mut out = self.fit_predict(&self.cfg.training.late_unimodal(), &x, &train_rows, &val_rows, &all, seed)?;
        let fallback = self.abstention();
        for i in 0..self.ids.len() {
            if !block.present(i) {
                out.row_mut(i).copy_from_slice(&fallback);
            }
        }
        Ok(out)
    }

    fn late_scores(
        &self,
        subset: &[usize],
        unimodal: &BTreeMap<usize, Matrix<T>>,
        p: &Partition<'_>,
        run_seed: u64,
    ) -> Result<Matrix<T>> {
        let outputs: Vec<&Matrix<T>> = subset.iter().map(|m| &unimodal[m]).collect();
        if let [single] = outputs.as_slice() {
            return Ok(single.select_rows(p.eval));
        }
        match self.cfg.late_combiner {
            Combiner::ConcatHead => {
                let x = Matrix::hstack(&outputs)?;
                let seed = derive_seed(self.cell_seed(run_seed, Technique::Late, subset, p.salt), "head");
                self.fit_predict(&self.cfg.training.late_head(), &x, &p.train, p.val, p.eval, seed)
            }
            combiner => {
                let mut data = Vec::with_capacity(p.eval.len() * self.k());
                for &i in p.eval {
                    let rows: Vec<&[T]> = outputs.iter().map(|o| o.row(i)).collect();
                    data.extend(late_combine(&rows, combiner)?);
                }
                Matrix::from_vec(p.eval.len(), self.k(), data)
            }
        }
    }

    fn user_scores(&self, subset: &[usize], p: &Partition<'_>) -> Result<Matrix<T>> {
        let x = concat_blocks(&self.blocks(Technique::Sketch, subset), &self.ids)?;
        let y: Vec<u8> = match self.labels.select(&p.train) {
            Labels::Binary(v) => v,
            other => return Err(Error::TaskMismatch(format!("user pipeline needs binary labels, got {:?}", other.task()))),
        };
        let model = fit_logreg(&x.select_rows(&p.train), &y, &self.cfg.logreg)?;
        model.predict_proba(&x.select_rows(p.eval))
    }

    /// Every subset of one (technique, run), over the main split and any
    /// cross-validation folds.
    fn run_job(&self, technique: Technique, run_index: usize) -> (Vec<RunRecord>, Timing, Vec<AuditEntry>) {
        let start = Instant::now();
        let run_seed = self.cfg.base_seed.wrapping_add(run_index as u64);
        let parts = partitions(&self.split);
        let mut per_subset: Vec<std::result::Result<Vec<BTreeMap<String, f64>>, String>> =
            (0..self.subsets.len()).map(|_| Ok(Vec::new())).collect();
        let mut audit = Vec::new();
        for p in &parts {
            audit.push(AuditEntry {
                technique,
                run_index,
                partition: p.name.clone(),
                n_train: p.train.len(),
                n_eval: p.eval.len(),
                overlap: overlap(&p.train, p.eval),
            });
            let unimodal: std::result::Result<BTreeMap<usize, Matrix<T>>, String> = if technique == Technique::Late {
                let mut needed: Vec<usize> = self.subsets.iter().flatten().copied().collect();
                needed.sort_unstable();
                needed.dedup();
                needed
                    .par_iter()
                    .map(|&m| Ok((m, self.unimodal_outputs(m, p, run_seed)?)))
                    .collect::<Result<Vec<_>>>()
                    .map(|v| v.into_iter().collect())
                    .map_err(|e| e.to_string())
            } else {
                Ok(BTreeMap::new())
            };
            let cells: Vec<CellResult> = self
                .subsets
                .par_iter()
                .map(|subset| {
                    let scores = match (technique, &unimodal) {
                        (_, Err(e)) => return Err(e.clone()),
                        (Technique::Late, Ok(u)) => self.late_scores(subset, u, p, run_seed),
                        (Technique::Sketch, _) if self.users => self.user_scores(subset, p),
                        (t, _) => {
                            let recipe = match t {
                                Technique::Early => self.cfg.training.early(),
                                Technique::Sketch => self.cfg.training.sketch(),
                                _ => self.cfg.training.sketch_binarized(),
                            };
                            concat_blocks(&self.blocks(t, subset), &self.ids).and_then(|x| {
                                let seed = self.cell_seed(run_seed, t, subset, p.salt);
                                self.fit_predict(&recipe, &x, &p.train, p.val, p.eval, seed)
                            })
                        }
                    };
                    scores.and_then(|s| self.evaluate(s, p.eval)).map_err(|e| e.to_string())
                })
                .collect();
            for (acc, cell) in per_subset.iter_mut().zip(cells) {
                if let Ok(list) = acc {
                    match cell {
                        Ok(m) => list.push(m),
                        Err(e) => *acc = Err(e),
                    }
                }
            }
        }
        let records = self
            .subsets
            .iter()
            .zip(per_subset)
            .map(|(subset, res)| {
                let mut rec = RunRecord {
                    technique,
                    modalities: self.subset_names(subset),
                    run_index,
                    seed: run_seed,
                    metrics: BTreeMap::new(),
                    error: None,
                };
                match res {
                    Ok(list) => {
                        let mut it = list.into_iter();
                        rec.metrics = it.next().unwrap_or_default();
                        let folds: Vec<_> = it.collect();
                        if !folds.is_empty() {
                            let mut sums: BTreeMap<String, Vec<f64>> = BTreeMap::new();
                            for f in &folds {
                                for (k, v) in f {
                                    sums.entry(format!("cv_{k}")).or_default().push(*v);
                                }
                            }
                            for (k, v) in sums {
                                rec.metrics.insert(k, v.iter().sum::<f64>() / v.len() as f64);
                            }
                        }
                    }
                    Err(e) => rec.error = Some(e),
                }
                rec
            })
            .collect();
        let timing = Timing {
            technique,
            run_index,
            seconds: start.elapsed().as_secs_f64(),
        };
        (records, timing, audit)
    }
}

/// Runs every (technique, subset, run) cell of the ablation grid.
///
/// Configuration problems are reported before any training. Failures inside
/// a run are recorded on its [`RunRecord`] and do not stop the experiment.
/// Records are ordered by technique (config order), subset, then run, and do
/// not depend on the thread count.
pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig, data: &Dataset<T>) -> Result<ExperimentOutput> {
    let subsets = cfg.validate_against(data)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let ctx = Context::new(cfg, data, &subsets)?;
        let jobs: Vec<(Technique, usize)> = cfg
            .techniques
            .iter()
            .flat_map(|&t| (0..cfg.n_runs).map(move |r| (t, r)))
            .collect();
        let results: Vec<_> = jobs.par_iter().map(|&(t, r)| ctx.run_job(t, r)).collect();
        let mut records = Vec::new();
        let mut timings = Vec::new();
        let mut audit = Vec::new();
        for (t_idx, _) in cfg.techniques.iter().enumerate() {
            let block = &results[t_idx * cfg.n_runs..(t_idx + 1) * cfg.n_runs];
            for s in 0..subsets.len() {
                records.extend(block.iter().map(|(recs, _, _)| recs[s].clone()));
            }
            for (_, timing, a) in block {
                timings.push(timing.clone());
                audit.extend(a.iter().cloned());
            }
        }
        if let Some(bad) = audit.iter().find(|a| a.overlap > 0) {
            return Err(Error::Split(format!(
                "{} rows used for both training and evaluation ({} run {}, {})",
                bad.overlap, bad.technique, bad.run_index, bad.partition
            )));
        }
        Ok(ExperimentOutput {
            task: ctx.task(),
            split: cfg.split,
            reports: summarize(&records),
            records,
            timings,
            audit,
        })
    })
}
