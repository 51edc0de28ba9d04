use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mmrep::bench::{ablation_verdict, emit_report, run_experiment, ExperimentConfig, ReportDocument, ReportFormat};
use mmrep::error::Error;
use mmrep::store::{synth_generate, validate_manifest, Dataset, SynthSpec};

#[derive(Parser)]
#[command(name = "mmrep", version, about = "Multimodal representation benchmarks: late fusion, early fusion and LSH sketches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (manifest plus embedding files).
    Synth {
        /// Synthetic dataset spec, or an experiment config with a synth dataset.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a manifest, or an experiment config together with its dataset.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the ablation grid of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Directory for records.json, report.md, verdict.json, timings.jsonl and audit.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides n_runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Overrides base_seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Report printed to stdout.
        #[arg(long, default_value = "md")]
        format: String,
    },
    /// Re-render a records.json produced by `run`.
    Report {
        records: PathBuf,
        #[arg(long, default_value = "md")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_TRAINING: u8 = 4;

/// A failure with its exit status.
struct Failure(u8, anyhow::Error);

fn classify(e: anyhow::Error) -> Failure {
    let code = match e.downcast_ref::<Error>() {
        Some(
            Error::Config(_) | Error::Spec(_) | Error::Split(_) | Error::UnknownArchitecture(_) | Error::Json(_),
        ) => EXIT_CONFIG,
        Some(Error::TrainingDiverged { .. }) => EXIT_TRAINING,
        _ => EXIT_DATA,
    };
    Failure(code, e)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let text = fs::read_to_string(config)
        .map_err(|e| Failure(EXIT_CONFIG, anyhow::anyhow!("cannot read {}: {e}", config.display())))?;
    let mut spec: SynthSpec = match serde_json::from_str(&text) {
        Ok(s) => s,
        Err(_) => match ExperimentConfig::from_json(&text).map_err(|e| classify(e.into()))?.dataset {
            mmrep::bench::DatasetSource::Synth(s) => s,
            _ => {
                return Err(Failure(
                    EXIT_CONFIG,
                    anyhow::anyhow!("{} holds neither a synth spec nor a synth experiment", config.display()),
                ))
            }
        },
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data: Dataset<f64> = synth_generate(&spec).map_err(|e| classify(e.into()))?;
    let manifest = data.write_to_dir(out).map_err(|e| classify(e.into()))?;
    emit(&format!("{}\n", manifest.display()));
    Ok(())
}

fn validate(config: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(config)
        .map_err(|e| Failure(EXIT_CONFIG, anyhow::anyhow!("cannot read {}: {e}", config.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure(EXIT_CONFIG, anyhow::anyhow!("invalid JSON: {e}")))?;
    let report = if value.get("dataset").is_some() {
        let cfg = ExperimentConfig::from_path(config).map_err(|e| classify(e.into()))?;
        cfg.validate().map_err(|e| classify(e.into()))?;
        let data = cfg.load_dataset().map_err(|e| Failure(EXIT_DATA, e.into()))?;
        cfg.validate_against(&data).map_err(|e| classify(e.into()))?;
        validate_manifest(&data)
    } else {
        let data: Dataset<f64> = Dataset::load(config).map_err(|e| Failure(EXIT_DATA, e.into()))?;
        validate_manifest(&data)
    }
    .map_err(|e| Failure(EXIT_DATA, e.into()))?;
    emit(&(serde_json::to_string_pretty(&report).map_err(|e| Failure(EXIT_DATA, e.into()))? + "\n"));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: &Path,
    out: Option<&Path>,
    runs: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    format: &str,
) -> Result<(), Failure> {
    let format: ReportFormat = format.parse().map_err(|e: Error| classify(e.into()))?;
    let mut cfg = ExperimentConfig::from_path(config).map_err(|e| classify(e.into()))?;
    if let Some(n) = runs {
        cfg.n_runs = n;
    }
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    cfg.validate().map_err(|e| classify(e.into()))?;
    let data = cfg.load_dataset().map_err(|e| Failure(EXIT_DATA, e.into()))?;
    let output = run_experiment(&cfg, &data).map_err(|e| classify(e.into()))?;

    let io = |e: anyhow::Error| Failure(EXIT_DATA, e);
    if let Some(dir) = out {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(io)?;
        let json = emit_report(output.task, output.split, &output.records, ReportFormat::Json).map_err(|e| io(e.into()))?;
        write_file(&dir.join("records.json"), &json).map_err(io)?;
        let md = emit_report(output.task, output.split, &output.records, ReportFormat::Markdown).map_err(|e| io(e.into()))?;
        write_file(&dir.join("report.md"), &md).map_err(io)?;
        let verdict = ablation_verdict(&output.reports, output.task.primary_metric());
        let mut text = serde_json::to_string_pretty(&verdict).map_err(|e| io(e.into()))?;
        text.push('\n');
        write_file(&dir.join("verdict.json"), &text).map_err(io)?;
        let lines = |items: Vec<String>| items.into_iter().map(|l| l + "\n").collect::<String>();
        let timings = output
            .timings
            .iter()
            .map(|t| serde_json::to_string(t).expect("serializable"))
            .collect();
        write_file(&dir.join("timings.jsonl"), &lines(timings)).map_err(io)?;
        let audit = output
            .audit
            .iter()
            .map(|a| serde_json::to_string(a).expect("serializable"))
            .collect();
        write_file(&dir.join("audit.jsonl"), &lines(audit)).map_err(io)?;
    }
    let doc = emit_report(output.task, output.split, &output.records, format).map_err(|e| io(e.into()))?;
    emit(&doc.to_string());
    let _ = std::io::stdout().flush();

    for r in output.records.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "warning: {} {:?} run {} failed: {}",
            r.technique,
            r.modalities,
            r.run_index,
            r.error.as_deref().unwrap_or_default()
        );
    }
    let failed = output.failed_cells();
    if !failed.is_empty() {
        let cells: Vec<String> = failed.iter().map(|(t, m)| format!("{t} {}", m.join("+"))).collect();
        return Err(Failure(
            EXIT_TRAINING,
            anyhow::anyhow!("every run failed in: {}", cells.join(", ")),
        ));
    }
    Ok(())
}

fn report(records: &Path, format: &str, out: Option<&Path>) -> Result<(), Failure> {
    let format: ReportFormat = format.parse().map_err(|e: Error| classify(e.into()))?;
    let text = fs::read_to_string(records)
        .map_err(|e| Failure(EXIT_DATA, anyhow::anyhow!("cannot read {}: {e}", records.display())))?;
    let doc = ReportDocument::parse(&text).map_err(|e| Failure(EXIT_DATA, e.into()))?;
    let rendered = emit_report(doc.task, doc.split, &doc.records, format).map_err(|e| Failure(EXIT_DATA, e.into()))?;
    match out {
        Some(p) => write_file(p, &rendered).map_err(|e| Failure(EXIT_DATA, e))?,
        None => emit(&rendered),
    }
    Ok(())
}

/// Writes to stdout; a closed pipe (`mmrep ... | head`) is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|()| out.flush());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth { config, out, seed } => synth(config, out, *seed),
        Command::Validate { config } => validate(config),
        Command::Run {
            config,
            out,
            runs,
            seed,
            threads,
            format,
        } => run(config, out.as_deref(), *runs, *seed, *threads, format),
        Command::Report { records, format, out } => report(records, format, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
