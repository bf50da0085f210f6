//! `verimap` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::BackendKind;

#[derive(Debug, Parser)]
#[command(name = "verimap", version, about = "Plan, execute and verify tasks with language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one or more tasks end to end.
    Run(RunArgs),
    /// Check a plan file for structural problems.
    Validate {
        /// Plan JSON file.
        plan: PathBuf,
    },
    /// Summarize cost, iterations and verification usage from traces.
    Report(ReportArgs),
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Task file: plain text, or JSON `{"task_id", "task"}`. Repeatable.
    #[arg(long = "task-file", required = true)]
    pub task_files: Vec<PathBuf>,
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Script for the scripted backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long)]
    pub max_retries: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Append trace events (JSONL) to this file.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    /// Logical timestamps and sequential run ids, for reproducible traces.
    #[arg(long)]
    pub deterministic: bool,
    /// Number of tasks run concurrently.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Trace files (JSONL).
    #[arg(long = "traces", required = true, num_args = 1..)]
    pub traces: Vec<PathBuf>,
    /// Price table (JSON); defaults to the built-in reference rates.
    #[arg(long)]
    pub prices: Option<PathBuf>,
    /// Ground-truth labels (JSONL of `{"task_id", "final_answer_correct"}`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: ReportFormat,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => commands::run(&args),
        Command::Validate { plan } => commands::validate(&plan),
        Command::Report(args) => commands::report(&args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::EXIT_ENGINE_ERROR)
        }
    }
}
