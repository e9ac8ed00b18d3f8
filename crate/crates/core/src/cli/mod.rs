//! Command-line front end: dataset building, staged training, evaluation and
//! generation driven by a config file plus flag overrides.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 state (missing checkpoint,
//! frozen-parameter violation).

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

use crate::evalsuite::EvalError;
use crate::moit::MoitError;
use crate::pipeline::PipelineError;
use crate::textlm::PromptMode;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_STATE: u8 = 4;

/// Environment variable holding the worker count for data preparation;
/// 0 lets the pool pick.
pub const WORKERS_ENV: &str = "MOLM_NUM_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("{path}: {source}")]
    Input { path: PathBuf, source: MoitError },
    #[error("{0}")]
    Data(String),
    #[error("i/o error at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Moit(#[from] MoitError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => EXIT_USAGE,
            CliError::Pipeline(e) => match e {
                PipelineError::MissingCheckpoint(_)
                | PipelineError::FrozenViolation(_)
                | PipelineError::DigestMismatch { .. }
                | PipelineError::VersionUnsupported(_) => EXIT_STATE,
                PipelineError::InvalidConfig(_)
                | PipelineError::InvalidSchedule(_)
                | PipelineError::NoDatasets
                | PipelineError::SpecialistNeedsOne(_)
                | PipelineError::Lora(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            },
            CliError::Input { .. } | CliError::Data(_) | CliError::Io { .. } | CliError::Moit(_) | CliError::Eval(_) => {
                EXIT_DATA
            }
        }
    }

    fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.into(), message: e.to_string() }
    }
}

#[derive(Debug, Parser)]
#[command(name = "molm", version, about = "3D molecule-text modeling: datasets, staged training, evaluation, generation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Config file of `key = value` lines with `[section]` headers.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "MODE", value_parser = parse_mode)]
    pub prompt_mode: Option<PromptMode>,
    /// Training batch size, or the retrieval batch size for `eval retrieval`.
    #[arg(long, global = true, value_name = "INT")]
    pub batch_size: Option<usize>,
    /// Recall cut-off for retrieval.
    #[arg(long, global = true, value_name = "INT")]
    pub k: Option<usize>,
    #[arg(long, global = true, value_name = "INT")]
    pub max_new: Option<usize>,
    /// Rescore each molecule's top-k texts with the matching head.
    #[arg(long, global = true, value_name = "INT")]
    pub rerank_mtm: Option<usize>,
}

fn parse_mode(s: &str) -> Result<PromptMode, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, split or enrich JSONL datasets.
    Dataset {
        #[command(subcommand)]
        action: DatasetCmd,
    },
    /// Run one training stage.
    Train {
        #[command(subcommand)]
        stage: TrainCmd,
    },
    /// Evaluate a checkpoint and update `report.json`.
    Eval {
        #[command(subcommand)]
        task: EvalCmd,
    },
    /// Greedy response for one molecule and prompt.
    Generate {
        checkpoint: PathBuf,
        /// JSONL molecule file; the first record is used.
        molecule: PathBuf,
        prompt: String,
    },
}

#[derive(Clone, Copy, Debug, Subcommand)]
pub enum DatasetCmd {
    /// Render instruction records from molecule records.
    Build,
    /// Hash-split molecules (and their instructions) into train/valid/test.
    Split,
    /// Rewrite descriptions with the offline enricher.
    Enrich,
}

#[derive(Clone, Copy, Debug, Subcommand)]
pub enum TrainCmd {
    Stage1,
    Stage2,
    Stage3,
}

#[derive(Clone, Copy, Debug, Subcommand)]
pub enum EvalCmd {
    Retrieval,
    Caption,
    Qa,
}

/// Loads the config file and applies flag overrides.
pub fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let f = &cli.flags;
    let mut cfg = RunConfig::load(f.config.as_deref())?;
    if let Some(s) = f.seed {
        cfg.set("seed", s.to_string())?;
    }
    if let Some(o) = &f.out {
        cfg.set("out", o.display().to_string())?;
    }
    if let Some(m) = f.prompt_mode {
        cfg.set("prompt_mode", m.to_string())?;
    }
    if let Some(b) = f.batch_size {
        let key = if matches!(cli.command, Command::Eval { .. }) { "eval.batch_size" } else { "train.batch_size" };
        cfg.set(key, b.to_string())?;
    }
    if let Some(k) = f.k {
        cfg.set("eval.k", k.to_string())?;
    }
    if let Some(n) = f.max_new {
        cfg.set("eval.max_new", n.to_string())?;
    }
    if let Some(r) = f.rerank_mtm {
        cfg.set("eval.rerank_mtm", r.to_string())?;
    }
    Ok(cfg)
}

fn init_workers() -> Result<(), CliError> {
    let Ok(v) = std::env::var(WORKERS_ENV) else { return Ok(()) };
    let n: usize =
        v.trim().parse().map_err(|_| CliError::Usage(format!("{WORKERS_ENV} must be a non-negative integer, got {v:?}")))?;
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::debug!("worker pool already configured: {e}");
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    init_workers()?;
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Dataset { action } => commands::dataset(*action, &cfg),
        Command::Train { stage } => commands::train(*stage, &cfg),
        Command::Eval { task } => commands::eval(*task, &cfg),
        Command::Generate { checkpoint, molecule, prompt } => commands::generate(&cfg, checkpoint, molecule, prompt),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
