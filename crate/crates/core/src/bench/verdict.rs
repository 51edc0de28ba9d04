use serde::{Deserialize, Serialize};

use crate::metrics::{EvalReport, MetricSummary};

/// A multimodal cell compared with its best unimodal constituent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellVerdict {
    pub modalities: Vec<String>,
    pub mean: f64,
    pub best_unimodal: String,
    pub best_unimodal_mean: f64,
    /// Strictly better than the best unimodal cell.
    pub boost: bool,
    pub margin: f64,
}

/// Effect of adding one modality, averaged over every subset pair
/// `(S \ {m}, S)` present in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityVerdict {
    pub modality: String,
    pub comparisons: usize,
    pub mean_delta: f64,
    /// Mean standard error of the compared differences.
    pub standard_error: f64,
    /// `mean_delta` exceeds `standard_error`.
    pub contributing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechniqueVerdict {
    pub technique: String,
    pub metric: String,
    pub cells: Vec<CellVerdict>,
    pub modalities: Vec<ModalityVerdict>,
}

fn same_set(a: &[String], b: &[String]) -> bool {
    a.len() == b.len() && a.iter().all(|x| b.contains(x))
}

fn std_error(s: &MetricSummary) -> f64 {
    s.std / (s.n_runs.max(1) as f64).sqrt()
}

/// Boost flags per multimodal cell and contribution flags per modality, for
/// each technique in `reports`, judged on `metric`.
pub fn ablation_verdict(reports: &[EvalReport], metric: &str) -> Vec<TechniqueVerdict> {
    let mut techniques: Vec<&str> = Vec::new();
    for r in reports {
        if !techniques.contains(&r.technique.as_str()) {
            techniques.push(&r.technique);
        }
    }
    techniques
        .into_iter()
        .map(|technique| {
            let cells: Vec<(&[String], &MetricSummary)> = reports
                .iter()
                .filter(|r| r.technique == technique)
                .filter_map(|r| r.metrics.get(metric).map(|m| (r.modalities.as_slice(), m)))
                .collect();
            let find = |set: &[String]| cells.iter().find(|(s, _)| same_set(s, set)).map(|(_, m)| *m);

            let mut cell_verdicts = Vec::new();
            for (mods, summary) in cells.iter().filter(|(s, _)| s.len() > 1) {
                let best = mods
                    .iter()
                    .filter_map(|m| find(std::slice::from_ref(m)).map(|s| (m, s.mean)))
                    .fold(None::<(&String, f64)>, |acc, (m, v)| match acc {
                        Some((_, b)) if b >= v => acc,
                        _ => Some((m, v)),
                    });
                if let Some((name, best_mean)) = best {
                    cell_verdicts.push(CellVerdict {
                        modalities: mods.to_vec(),
                        mean: summary.mean,
                        best_unimodal: name.clone(),
                        best_unimodal_mean: best_mean,
                        boost: summary.mean > best_mean,
                        margin: summary.mean - best_mean,
                    });
                }
            }

            let mut names: Vec<String> = Vec::new();
            for (mods, _) in &cells {
                for m in mods.iter() {
                    if !names.contains(m) {
                        names.push(m.clone());
                    }
                }
            }
            let modality_verdicts = names
                .into_iter()
                .map(|m| {
                    let mut deltas = Vec::new();
                    let mut errors = Vec::new();
                    for (mods, with) in cells.iter().filter(|(s, _)| s.len() > 1 && s.contains(&m)) {
                        let rest: Vec<String> = mods.iter().filter(|x| **x != m).cloned().collect();
                        if let Some(without) = find(&rest) {
                            deltas.push(with.mean - without.mean);
                            errors.push((std_error(with).powi(2) + std_error(without).powi(2)).sqrt());
                        }
                    }
                    let n = deltas.len();
                    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
                    let mean_delta = mean(&deltas);
                    let standard_error = mean(&errors);
                    ModalityVerdict {
                        modality: m,
                        comparisons: n,
                        mean_delta,
                        standard_error,
                        contributing: n > 0 && mean_delta > standard_error,
                    }
                })
                .collect();

            TechniqueVerdict {
                technique: technique.to_owned(),
                metric: metric.to_owned(),
                cells: cell_verdicts,
                modalities: modality_verdicts,
            }
        })
        .collect()
}
