//! Ablation-grid experiment runner and report rendering.

pub mod config;
pub mod report;
pub mod runner;
pub mod verdict;

pub use config::{
    default_subsets, DatasetSource, ExperimentConfig, Recipe, SketchSettings, Technique, TrainingOverride,
    TrainingSettings,
};
pub use report::{emit_report, ReportDocument, ReportFormat};
pub use runner::{
    early_features, run_experiment, summarize, user_sketch_features, AuditEntry, ExperimentOutput, RunRecord, Timing,
};
pub use verdict::{ablation_verdict, CellVerdict, ModalityVerdict, TechniqueVerdict};
