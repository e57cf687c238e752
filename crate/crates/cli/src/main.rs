mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use crate::args::{Cli, Command};
use crate::config::Resolved;

/// Exit status: validation failures are 1, everything the user must fix in
/// their invocation, config or inputs is 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Config(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) | CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("winoforge: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = Resolved::new(&cli.global)?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async {
        match cli.command {
            Command::Generate(a) => commands::generate(&cfg, a).await,
            Command::Validate(a) => commands::validate(a),
            Command::Dedup(a) => commands::dedup(a),
            Command::Split(a) => commands::split(&cfg, a),
            Command::Stats(a) => commands::stats(a),
            Command::Annotate(a) => commands::annotate(&cfg, a).await,
            Command::Evaluate(a) => commands::evaluate(&cfg, a).await,
            Command::Analyze(a) => commands::analyze(a),
            Command::Report(a) => commands::report(a),
        }
    })
}
