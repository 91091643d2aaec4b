//! Command-line entry points.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use btrads_core::evaluation::{evaluate_reports, render_tables, Exclusion};
use btrads_core::extractor::{build_extractor, BackendKind, ExtractionBackendConfig};
use btrads_core::fixtures::{paper_profile, write_fixture_set, PAPER_PROFILE_SEED};
use btrads_core::pipeline::{
    load_cases, read_jsonl, write_jsonl, CaseReport, CaseStatus, FailureKind, Pipeline, PipelineConfig,
};
use btrads_core::store::CaseStore;
use btrads_core::{ExtractError, PipelineError};
use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::api::{router, AppState, EXCLUSIONS_FILE};

pub const ENV_TOKEN: &str = "BTRADS_API_TOKEN";

#[derive(Debug, Parser)]
#[command(name = "btrads", version, about = "BT-RADS scoring, evaluation and review service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a batch of cases and write one report per evaluable case.
    Score {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the batch evaluation as JSON.
        #[arg(long)]
        evaluation: Option<PathBuf>,
        /// Also write excluded cases as JSON lines.
        #[arg(long)]
        exclusions: Option<PathBuf>,
        /// Import cases and reports into a review store.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Compute the evaluation report from stored case reports.
    Evaluate {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        exclusions: Option<PathBuf>,
        /// Write the system confusion matrix as CSV.
        #[arg(long)]
        confusion: Option<PathBuf>,
    },
    /// Extract clinical variables from one note.
    Extract {
        #[arg(long)]
        note: PathBuf,
        #[arg(long, value_enum, default_value_t = Backend::Patterns)]
        backend: Backend,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve the review API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        store: PathBuf,
        /// Shared token required in the x-api-token header.
        #[arg(long, env = ENV_TOKEN)]
        token: Option<String>,
    },
    /// Synthetic datasets.
    Fixtures {
        #[command(subcommand)]
        command: FixturesCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum FixturesCommand {
    Generate {
        #[arg(long, value_enum)]
        profile: Profile,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = PAPER_PROFILE_SEED)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Patterns,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Paper,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Transport(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Transport(_) => 3,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Extract(x) => x.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ExtractError> for CliError {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::Transport(_) => CliError::Transport(e.to_string()),
            ExtractError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => {
            let mut cfg = PipelineConfig::default();
            cfg.backend = cfg.backend.with_env_overrides();
            Ok(cfg)
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// True when there were cases and every one failed on the transport.
pub fn all_transport_failures(reports: &[CaseReport]) -> bool {
    !reports.is_empty()
        && reports.iter().all(|r| {
            r.status == CaseStatus::Failed && r.failure.as_ref().is_some_and(|f| f.kind == FailureKind::Transport)
        })
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Score {
            cases,
            config,
            out,
            evaluation,
            exclusions,
            store,
        } => score(&cases, config.as_deref(), &out, evaluation.as_deref(), exclusions.as_deref(), store.as_deref()),
        Command::Evaluate {
            reports,
            out,
            config,
            exclusions,
            confusion,
        } => evaluate(&reports, &out, config.as_deref(), exclusions.as_deref(), confusion.as_deref()),
        Command::Extract { note, backend, config } => extract(&note, backend, config.as_deref()),
        Command::Serve {
            port,
            host,
            store,
            token,
        } => serve(&host, port, &store, token),
        Command::Fixtures {
            command: FixturesCommand::Generate { profile, out, seed },
        } => {
            let Profile::Paper = profile;
            let set = paper_profile(seed)?;
            write_fixture_set(&out, &set)?;
            println!("wrote {} cases to {}", set.cases.len(), out.display());
            Ok(())
        }
    }
}

fn score(
    cases_path: &Path,
    config_path: Option<&Path>,
    out: &Path,
    evaluation_path: Option<&Path>,
    exclusions_path: Option<&Path>,
    store_dir: Option<&Path>,
) -> Result<(), CliError> {
    let config = load_config(config_path)?;
    let cases = load_cases(cases_path)?;
    let pipeline = Pipeline::new(config.clone())?;
    let output = pipeline.run_batch(&cases)?;
    write_jsonl(out, &output.reports)?;
    let excluded = &output.evaluation.cohort.exclusions;
    if let Some(p) = evaluation_path {
        write_json(p, &output.evaluation)?;
    }
    if let Some(p) = exclusions_path {
        write_jsonl(p, excluded)?;
    }
    if let Some(dir) = store_dir {
        let store = if dir.join("config.json").exists() {
            CaseStore::open(dir)?
        } else {
            CaseStore::create(dir, config)?
        };
        let scored: std::collections::HashSet<&str> = output.reports.iter().map(|r| r.case_id.as_str()).collect();
        let records: Vec<_> = cases.iter().filter(|c| scored.contains(c.case_id.as_str())).cloned().collect();
        store.import(&records, &output.reports)?;
        write_jsonl(dir.join(EXCLUSIONS_FILE), excluded)?;
    }
    let cohort = &output.evaluation.cohort;
    println!(
        "scored {} of {} evaluable cases ({} excluded, {} failed); accuracy {}/{}",
        cohort.n_scored,
        cohort.n_evaluable,
        cohort.n_excluded(),
        cohort.n_failed,
        output.evaluation.system_accuracy.correct,
        output.evaluation.system_accuracy.n
    );
    if all_transport_failures(&output.reports) {
        return Err(CliError::Transport("every case failed on the extraction transport".into()));
    }
    Ok(())
}

fn evaluate(
    reports_path: &Path,
    out: &Path,
    config_path: Option<&Path>,
    exclusions_path: Option<&Path>,
    confusion_path: Option<&Path>,
) -> Result<(), CliError> {
    let config = load_config(config_path)?;
    let reports: Vec<CaseReport> = read_jsonl(reports_path)?;
    let exclusions: Vec<Exclusion> = match exclusions_path {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let n_input = (reports.len() + exclusions.len()) as u64;
    let report = evaluate_reports(&reports, &exclusions, n_input, &config)?;
    write_json(out, &report)?;
    if let Some(p) = confusion_path {
        fs::write(p, report.confusion_system.to_delimited()).map_err(|e| io_err(p, e))?;
    }
    print!("{}", render_tables(&report));
    Ok(())
}

fn extract(note_path: &Path, backend: Backend, config_path: Option<&Path>) -> Result<(), CliError> {
    let note = fs::read_to_string(note_path).map_err(|e| io_err(note_path, e))?;
    let mut backend_config: ExtractionBackendConfig = load_config(config_path)?.backend;
    backend_config.kind = match backend {
        Backend::Patterns => BackendKind::PatternRules,
        Backend::Llm => BackendKind::RemoteLlm,
    };
    let vars = build_extractor(&backend_config)?.extract(&note)?;
    let text = serde_json::to_string_pretty(&vars).map_err(|e| CliError::Data(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn serve(host: &str, port: u16, store_dir: &Path, token: Option<String>) -> Result<(), CliError> {
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::Usage(format!("bad listen address {host}:{port}: {e}")))?;
    let store = CaseStore::open(store_dir)?;
    let app = router(AppState::new(store, token));
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
        tracing::info!(%addr, "serving review API");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Data(e.to_string()))
    })
}
