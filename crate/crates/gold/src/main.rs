use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gold::config::parse_config;
use gold::runner;

/// Off-policy learning of sequence generators from demonstrations, on
/// synthetic tasks whose generating distribution is known exactly.
#[derive(Parser)]
#[command(name = "gold", version)]
struct Cli {
    /// Experiment description (JSON).
    #[arg(long)]
    config: PathBuf,

    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the config's output root.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Suppress progress lines.
    #[arg(long)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the task tables and per-seed train/dev splits.
    GenData,
    /// Train the configured learner pipeline for every seed.
    Train,
    /// Decode the trained model across the configured sweep.
    Decode,
    /// Score the trained model on the dev split.
    Evaluate,
    /// Train and evaluate mle, gold-s, gold-p (and the configured learner)
    /// side by side on shared data, writing a combined verdict report.
    Compare,
}

fn run(cli: Cli) -> gold::Result<()> {
    let mut cfg = parse_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    let root = cfg.out_dir.join(runner::run_id(&cfg));
    if !cli.quiet {
        eprintln!("run directory: {}", root.display());
    }
    match cli.command {
        Command::GenData => runner::gen_data(&cfg),
        Command::Train => runner::train(&cfg),
        Command::Decode => runner::decode(&cfg),
        Command::Evaluate => runner::evaluate(&cfg),
        Command::Compare => runner::compare(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.quiet;
    match run(cli) {
        Ok(()) => {
            if !quiet {
                eprintln!("ok");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
