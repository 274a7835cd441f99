//! `hetlink` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "hetlink", version, about = "Link prediction across the feature-similarity spectrum")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// JSON config file for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More log output; repeat for debug level.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate quantile-wired graphs over Gaussian features.
    Synthgen(commands::SynthgenArgs),
    /// Similarity statistics and task classification of a graph.
    Simstats(commands::SimstatsArgs),
    /// Train a model from a run config.
    Train(commands::TrainArgs),
    /// Evaluate a trained checkpoint.
    Eval(commands::EvalArgs),
    /// Bucket grids and report differences.
    Buckets(commands::BucketsArgs),
    /// Evaluate a structural heuristic.
    Heuristic(commands::HeuristicArgs),
    /// Check a theoretical result numerically.
    Verify(commands::VerifyArgs),
    /// Run the quantile-graph × method sweep.
    Sweep(commands::SweepArgs),
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    if commands::verification_failed(err) {
        return "verification";
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<hetlink::Error>() {
            return e.kind();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "json";
        }
    }
    "failure"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let g = &cli.global;
    let result = match cli.command {
        Command::Synthgen(a) => commands::synthgen(g, a),
        Command::Simstats(a) => commands::simstats(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::Buckets(a) => commands::buckets(g, a),
        Command::Heuristic(a) => commands::heuristic(g, a),
        Command::Verify(a) => commands::verify(g, a),
        Command::Sweep(a) => commands::sweep(g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let body = json!({
                "error": {
                    "kind": error_kind(&err),
                    "message": format!("{err:#}"),
                }
            });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
