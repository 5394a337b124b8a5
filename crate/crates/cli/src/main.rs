use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use singular_elliptic_cli::config::{load_config, CliArgs, Command};
use singular_elliptic_cli::run::{run, EXIT_CONFIG_ERROR};

/// Solver, obstacle minimizer and verification harness for -Δu = f/u^β with
/// zero Dirichlet data.
#[derive(Parser)]
#[command(name = "se", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve the singular problem by continuation.
    Solve(Common),
    /// Minimize the truncated functional below the computed solution.
    Obstacle(Common),
    /// Run a verification suite.
    Verify(Common),
    /// Solve over a grid of (beta, m, growth) values.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file (flat `key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace a configuration value, e.g. `--override m=257`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn init_logging() {
    let level = match std::env::var("SE_LOG").as_deref() {
        Ok("debug") => log::LevelFilter::Debug,
        Ok("quiet") => log::LevelFilter::Off,
        _ => log::LevelFilter::Info,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG_ERROR as u8);
        }
    };
    init_logging();
    let (command, common) = match cli.command {
        Sub::Solve(c) => (Command::Solve, c),
        Sub::Obstacle(c) => (Command::Obstacle, c),
        Sub::Verify(c) => (Command::Verify, c),
        Sub::Sweep(c) => (Command::Sweep, c),
    };
    let args = CliArgs {
        command,
        out: common.out,
        overrides: common.overrides,
    };
    match load_config(&common.config, &args) {
        Ok(cfg) => ExitCode::from(run(&cfg) as u8),
        Err(e) => {
            log::error!("{}: {e}", common.config.display());
            ExitCode::from(EXIT_CONFIG_ERROR as u8)
        }
    }
}
