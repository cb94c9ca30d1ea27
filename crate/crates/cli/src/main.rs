//! `dxassist`: questionnaire-guided symptom annotation with LLMs.
//!
//! Exit codes: 0 success, 1 data error, 2 usage error, 3 network/endpoint
//! error.

mod annotate;
mod config;
mod evaluate;
mod serve;
mod simple;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dxassist_core::evaluation::Averaging;
use dxassist_core::questionnaire::QuestionnaireId;
use dxassist_gateway::{CassetteMode, GatewayError};
use dxassist_review::ConsensusPolicy;

#[derive(Debug)]
pub enum CliError {
    Data(String),
    Usage(String),
    Network(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Network(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Data(m) | CliError::Usage(m) | CliError::Network(m) => f.write_str(m),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidEndpoint(_)
            | GatewayError::InvalidPolicy(_)
            | GatewayError::MissingApiKey(_)
            | GatewayError::Precondition(_) => CliError::Usage(e.to_string()),
            GatewayError::Cassette { .. } => CliError::Data(e.to_string()),
            _ => CliError::Network(e.to_string()),
        }
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

pub fn write_file(path: &std::path::Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

#[derive(Debug, Parser)]
#[command(name = "dxassist", version, about = "Questionnaire-guided symptom annotation with LLMs")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML). Flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// phq9 or gad7
    #[arg(long, global = true)]
    pub questionnaire: Option<QuestionnaireId>,
    /// Cassette mode: record, replay or passthrough.
    #[arg(long, global = true)]
    pub mode: Option<CassetteMode>,
    #[arg(long, global = true)]
    pub cassette: Option<PathBuf>,
    /// Endpoint name from the config's [endpoints] table.
    #[arg(long = "endpoint-name", global = true)]
    pub endpoint_name: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Reject unknown symptom keys in model output.
    #[arg(long, global = true)]
    pub strict: bool,
    /// micro or macro
    #[arg(long, global = true)]
    pub averaging: Option<Averaging>,
    /// Review consensus policy: unanimous or majority.
    #[arg(long, global = true)]
    pub policy: Option<ConsensusPolicy>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Json,
    Text,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check that corpus files load; report bad records by index.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Prompt a model for every post and write its span annotations.
    Annotate {
        /// Input corpora (either format); defaults to the config's `corpus`.
        inputs: Vec<PathBuf>,
    },
    /// Score predictions against span ground truth.
    Evaluate {
        /// Annotation files written by `annotate`, one per model.
        #[arg(long = "predictions", required = true, num_args = 1..)]
        predictions: Vec<PathBuf>,
        /// Span ground truth; defaults to the config's `truth`.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        format: ReportFormat,
        /// Join predictions to truth by post text instead of post id.
        #[arg(long)]
        join_by_text: bool,
    },
    /// Write instruction-tuning records (JSONL or single-column CSV).
    ExportFinetune {
        input: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: dxassist_core::finetune::ExportFormat,
        /// Leave the post title out of the input text.
        #[arg(long)]
        no_title: bool,
    },
    /// Post counts per dataset file.
    Stats {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Run the clinician review service.
    Serve {
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
        /// Event log; defaults to the config's review.log or <out>/review/events.jsonl.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Annotation files whose posts are queued for review.
        #[arg(long)]
        enqueue: Vec<PathBuf>,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let settings = config::Settings::resolve(&cli.global)?;
    match cli.command {
        Command::Validate { paths } => simple::validate(&settings, &paths),
        Command::Annotate { inputs } => annotate::run(&settings, &inputs),
        Command::Evaluate {
            predictions,
            truth,
            format,
            join_by_text,
        } => evaluate::run(&settings, &predictions, truth, format, join_by_text),
        Command::ExportFinetune {
            input,
            format,
            no_title,
        } => simple::export_finetune(&settings, &input, format, !no_title),
        Command::Stats { paths } => simple::stats(&settings, &paths),
        Command::Serve {
            bind,
            log,
            enqueue,
            ui_dir,
        } => serve::run(&settings, bind, log, &enqueue, ui_dir),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("DXASSIST_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
