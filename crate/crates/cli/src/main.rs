//! `equilibra`: find, continue, certify and simulate relative equilibria
//! from JSON run configurations.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 mathematical or
//! convergence failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "equilibra", version, about = "Relative equilibria of n-body problems on space forms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Sample the admissibility conditions of the configured force law.
    ValidateLaw(#[command(flatten)] CommonArgs),
    /// Solve for one relative equilibrium.
    Find(#[command(flatten)] CommonArgs),
    /// Continue a family over a parameter grid and issue certificates.
    Sweep(#[command(flatten)] CommonArgs),
    /// Run a divergence or identity probe.
    Certify(#[command(flatten)] CommonArgs),
    /// Integrate a relative equilibrium and report its rigidity.
    Simulate(#[command(flatten)] CommonArgs),
}

#[derive(Debug, Clone, clap::Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's `outputs.dir`, else `.`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel probes.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    /// Mathematical or convergence failure; the report is already written.
    #[error("{kind}: {message}")]
    Math { kind: String, message: String },
}

impl CliError {
    pub fn config(e: equilibra::Error) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn math(e: &equilibra::Error) -> Self {
        CliError::Math {
            kind: error_kind(e),
            message: e.to_string(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Math { .. } => 2,
        }
    }
}

/// Variant name of a library error, e.g. `CollisionSingularity`.
pub fn error_kind(e: &equilibra::Error) -> String {
    format!("{e:?}").chars().take_while(|c| c.is_alphanumeric()).collect()
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("EQUILIBRA_LOG", "error");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn run(cmd: Command) -> Result<(), CliError> {
    let (Command::ValidateLaw(args)
    | Command::Find(args)
    | Command::Sweep(args)
    | Command::Certify(args)
    | Command::Simulate(args)) = &cmd;
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = RunConfig::load(&args.config)?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.outputs.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    let ctx = commands::Context { cfg, out };
    match &cmd {
        Command::ValidateLaw(_) => commands::validate_law(&ctx),
        Command::Find(_) => commands::find(&ctx),
        Command::Sweep(_) => commands::sweep(&ctx),
        Command::Certify(_) => commands::certify(&ctx),
        Command::Simulate(_) => commands::simulate(&ctx),
    }
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
