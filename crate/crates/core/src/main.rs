use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use jumpmfg::cli::{load_config, run, Command, Engine, RunOptions};

/// Mean-field game solver for controlled jump-diffusions.
#[derive(Parser)]
#[command(name = "jumpmfg", version)]
struct Args {
    #[command(subcommand)]
    command: Sub,
    /// Scenario config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Monte Carlo master seed; overrides `numerics.montecarlo.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    quiet: bool,
    #[arg(long, global = true, hide = true)]
    perturb_engine: Option<Engine>,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// A, B, C on the time grid and a blow-up report.
    Riccati,
    /// E(t) by every applicable route.
    Expect,
    /// Density slices by transform inversion and finite differences.
    Density,
    /// Monte Carlo statistics at the report times.
    Simulate,
    /// Opinion regime report and expectation path.
    Investor,
    /// Cross-check table over all engines.
    Validate,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let Some(path) = args.config else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(1);
    };
    let command = match args.command {
        Sub::Riccati => Command::Riccati,
        Sub::Expect => Command::Expect,
        Sub::Density => Command::Density,
        Sub::Simulate => Command::Simulate,
        Sub::Investor => Command::Investor,
        Sub::Validate => Command::Validate,
    };
    let opts = RunOptions { out: args.out, seed: args.seed, quiet: args.quiet, perturb: args.perturb_engine };
    match load_config(&path).and_then(|cfg| run(command, &cfg, &opts)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
