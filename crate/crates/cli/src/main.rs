//! mcflab: configuration-driven driver for the mean curvature flow
//! laboratory. Loads meshes and ambient spaces, runs flows, computes the
//! entropy, executes verification suites, and emits reports and plot-ready
//! CSV series.

mod config;
mod execute;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "mcflab", version, about = "mean curvature flow laboratory")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Integrate a (possibly forced) mean curvature flow.
    Flow(CommonArgs),
    /// Compute the entropy of a mesh by multistart gradient ascent.
    Entropy(CommonArgs),
    /// Run verification suites on a trajectory.
    Verify(CommonArgs),
    /// Parabolically rescale a stored trajectory.
    Rescale(CommonArgs),
    /// Piecewise flow with entropy-decreasing replacements.
    Piecewise(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for optimizer start jitter (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        CliCommand::Flow(a) => (config::Command::Flow, a),
        CliCommand::Entropy(a) => (config::Command::Entropy, a),
        CliCommand::Verify(a) => (config::Command::Verify, a),
        CliCommand::Rescale(a) => (config::Command::Rescale, a),
        CliCommand::Piecewise(a) => (config::Command::Piecewise, a),
    };
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", args.config.display());
            return ExitCode::from(execute::EXIT_INPUT);
        }
    };
    let mut run_config = match config::parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(execute::EXIT_INPUT);
        }
    };
    if let Some(cfg_command) = run_config.command {
        if cfg_command != command {
            eprintln!("error: config names a different command than the command line");
            return ExitCode::from(execute::EXIT_INPUT);
        }
    }
    run_config.command = Some(command);
    if let Some(seed) = args.seed {
        run_config.seed = seed;
    }
    let base = args
        .config
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    let out_dir = args
        .out
        .or_else(|| run_config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    ExitCode::from(execute::execute(command, &run_config, &out_dir, &base))
}
