use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::Technique;
use super::runner::{summarize, RunRecord};
use crate::error::{Error, Result};
use crate::labels::Task;
use crate::metrics::EvalReport;
use crate::store::{SplitKind, SplitPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format `{other}` (json or md)"))),
        }
    }
}

/// The JSON report: raw records plus per-cell summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub task: Task,
    pub primary_metric: String,
    pub split: SplitPlan,
    pub records: Vec<RunRecord>,
    pub reports: Vec<EvalReport>,
}

impl ReportDocument {
    pub fn new(task: Task, split: SplitPlan, records: Vec<RunRecord>) -> Self {
        ReportDocument {
            task,
            primary_metric: task.primary_metric().to_owned(),
            split,
            reports: summarize(&records),
            records,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc: ReportDocument =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("invalid report document: {e}")))?;
        doc.reports = summarize(&doc.records);
        Ok(doc)
    }
}

pub fn emit_report(task: Task, split: SplitPlan, records: &[RunRecord], format: ReportFormat) -> Result<String> {
    let doc = ReportDocument::new(task, split, records.to_vec());
    Ok(match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&doc)?;
            s.push('\n');
            s
        }
        ReportFormat::Markdown => markdown(&doc),
    })
}

fn describe_split(split: &SplitPlan) -> String {
    match split.kind {
        SplitKind::Fractions { train, val, test } => {
            format!("train/val/test = {train}/{val}/{test}, seed {}", split.seed)
        }
        SplitKind::HoldoutPlusKfold { test_fraction, k } => {
            format!("test fraction {test_fraction} with {k}-fold cross-validation on the rest, seed {}", split.seed)
        }
    }
}

/// Rows are modality subsets, columns techniques, cells `mean ± std` of the
/// task's primary metric; the best mean per column is bold.
fn markdown(doc: &ReportDocument) -> String {
    let metric = &doc.primary_metric;
    let mut techniques: Vec<Technique> = Vec::new();
    let mut subsets: Vec<Vec<String>> = Vec::new();
    for r in &doc.records {
        if !techniques.contains(&r.technique) {
            techniques.push(r.technique);
        }
        if !subsets.contains(&r.modalities) {
            subsets.push(r.modalities.clone());
        }
    }
    let cell = |t: Technique, s: &[String]| {
        doc.reports
            .iter()
            .find(|r| r.technique == t.name() && r.modalities == s)
            .and_then(|r| r.metrics.get(metric))
    };
    let best: Vec<Option<f64>> = techniques
        .iter()
        .map(|&t| {
            subsets
                .iter()
                .filter_map(|s| cell(t, s).map(|m| m.mean))
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        })
        .collect();

    let mut out = String::new();
    out.push_str("| Modalities |");
    for t in &techniques {
        let _ = write!(out, " {} |", t.title());
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(techniques.len()));
    out.push('\n');
    for s in &subsets {
        let _ = write!(out, "| {} |", s.join(" + "));
        for (ti, &t) in techniques.iter().enumerate() {
            match cell(t, s) {
                Some(m) => {
                    let text = format!("{:.3} ± {:.3}", m.mean, m.std);
                    // bold only the first cell reaching the column maximum
                    let is_best = best[ti] == Some(m.mean)
                        && subsets
                            .iter()
                            .take_while(|o| *o != s)
                            .all(|o| cell(t, o).map(|x| x.mean) != Some(m.mean));
                    if is_best {
                        let _ = write!(out, " **{text}** |");
                    } else {
                        let _ = write!(out, " {text} |");
                    }
                }
                None => out.push_str(" n/a |"),
            }
        }
        out.push('\n');
    }
    let runs = doc.records.iter().map(|r| r.run_index + 1).max().unwrap_or(0);
    let _ = writeln!(
        out,
        "\n{metric}: mean ± sample standard deviation over {runs} run(s). Split: {}.",
        describe_split(&doc.split)
    );
    out
}
