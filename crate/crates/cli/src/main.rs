use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use jsqgame_cli::{cmd_bound, cmd_collect, cmd_evaluate, cmd_solve_exact, cmd_train};

/// Solvers, trainers, and diagnostics for the attacker-defender routing game.
#[derive(Parser)]
#[command(name = "jsqgame", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration document for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "./out")]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppresses progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Full-state-space equilibrium solve.
    SolveExact,
    /// Minimax least-squares policy iteration.
    Train,
    /// Monte Carlo rollout evaluation of a stored policy.
    Evaluate,
    /// Evaluation-error bound report over a stored dataset.
    Bound,
    /// Dataset generation only.
    Collect,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(path) => path.clone(),
        None => {
            eprintln!("error: --config PATH is required");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::SolveExact => cmd_solve_exact(&config, &cli.out, cli.quiet),
        Command::Train => cmd_train(&config, &cli.out, cli.seed, cli.quiet),
        Command::Evaluate => cmd_evaluate(&config, &cli.out, cli.seed, cli.quiet),
        Command::Bound => cmd_bound(&config, &cli.out, cli.quiet),
        Command::Collect => cmd_collect(&config, &cli.out, cli.seed, cli.quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
