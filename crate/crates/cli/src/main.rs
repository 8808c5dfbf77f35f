use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdde_cli::{execute, CliError, Command, Overrides};

#[derive(Parser)]
#[command(
    name = "sdde",
    version,
    about = "Truncated Euler-Maruyama experiments for the delay Ait-Sahalia model with jumps"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate paths and write one CSV per path.
    Simulate(Args),
    /// Estimate strong errors over a step-size ladder and fit the order.
    Converge(Args),
    /// Estimate moments and inverse moments over time.
    Moments(Args),
    /// Price the configured bond and barrier option on each rung.
    Price(Args),
}

#[derive(clap::Args)]
struct Args {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces `run.seed`.
    #[arg(long)]
    seed_override: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Converge(a) => (Command::Converge, a),
        Cmd::Moments(a) => (Command::Moments, a),
        Cmd::Price(a) => (Command::Price, a),
    };
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let overrides = Overrides {
        out: args.out,
        seed: args.seed_override,
    };
    match execute(command, &text, &overrides) {
        Ok(manifest) => {
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(c) = &manifest.convergence {
                eprintln!(
                    "fitted slope {:.4} (errors strictly decreasing: {})",
                    c.slope, c.strictly_decreasing
                );
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit(&e)
        }
    }
}

fn exit(e: &CliError) -> ExitCode {
    ExitCode::from(e.exit_code() as u8)
}
