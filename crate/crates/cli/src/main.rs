use beamopt_cli::commands;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "beamopt",
    version,
    about = "Task-driven LiDAR beam-configuration optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a frozen environment snapshot (scene, map, eval poses, stats).
    GenEnv {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for snapshot.bin and its side files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a search against the configured environment.
    Search {
        #[arg(long)]
        config: PathBuf,
        /// egs, random, or exhaustive.
        #[arg(long, default_value = "egs")]
        method: String,
        /// Overrides search.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize the whole route for one beam selection, with reference rows.
    Eval {
        #[arg(long)]
        snapshot: PathBuf,
        /// Comma-separated beam IDs, e.g. 1,5,9,13.
        #[arg(long)]
        beam_ids: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize result files into best-so-far curves and a table.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Result JSON files produced by `search`.
        #[arg(required = true)]
        results: Vec<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenEnv { config, out } => commands::cmd_gen_env(&config, &out).map(|_| ()),
        Command::Search {
            config,
            method,
            seed,
            out,
        } => commands::cmd_search(&config, &method, seed, &out).map(|_| ()),
        Command::Eval {
            snapshot,
            beam_ids,
            out,
        } => commands::cmd_eval(&snapshot, &beam_ids, &out),
        Command::Report { out, results } => commands::cmd_report(&results, &out),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
