use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use optcurve::cli::{dispatch, parse_point, Command, ExperimentConfig, Status};
use optcurve::Result;

/// Gradient descent and gradient flow on smooth convex functions, with
/// checks on the shape of the optimization curve.
#[derive(Parser)]
#[command(name = "optcurve", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Gradient descent trajectory and curve report.
    RunGd(Flags),
    /// Reference gradient flow, optionally compared with its Euler curve.
    RunFlow(Flags),
    /// Curve verdicts over a step-size grid, with the bisected threshold.
    Scan(Flags),
    /// Two-step non-convex curve on the Huber-type function.
    Counterexample(Flags),
    /// Randomized checks of the six curve properties.
    Verify(Flags),
    /// Random search for non-convex curves.
    Fuzz(Flags),
}

#[derive(Args, Default)]
#[command(allow_negative_numbers = true)]
struct Flags {
    /// Catalogue address, e.g. `square`, `huber_l=4`, `quadratic_d0=1,d1=3`.
    #[arg(long = "fn", value_name = "ID")]
    function: Option<String>,
    /// Start point, comma separated.
    #[arg(long, value_name = "X", allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    eta_min: Option<f64>,
    #[arg(long)]
    eta_max: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Number of step sizes in a scan.
    #[arg(long)]
    grid: Option<usize>,
    /// Fuzzing regime: `safe` or `danger`.
    #[arg(long)]
    mode: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tolerance override for curve checks.
    #[arg(long)]
    tol: Option<f64>,
    /// key=value file; flags given on the command line take precedence.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

fn build_config(command: Command, flags: Flags) -> Result<ExperimentConfig> {
    let mut given = ExperimentConfig::new(command);
    given.function = flags.function;
    given.x0 = flags.x0.as_deref().map(parse_point).transpose()?;
    given.eta = flags.eta;
    given.eta_min = flags.eta_min;
    given.eta_max = flags.eta_max;
    given.steps = flags.steps;
    given.horizon = flags.horizon;
    given.seed = flags.seed;
    given.trials = flags.trials;
    given.grid = flags.grid;
    given.mode = flags.mode.as_deref().map(str::parse).transpose()?;
    given.out = flags.out;
    given.tol = flags.tol;
    match flags.config {
        None => Ok(given),
        Some(path) => {
            let mut cfg = ExperimentConfig::from_file(&path)?;
            cfg.overlay(&given)?;
            Ok(cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match cli.command {
        Cmd::RunGd(f) => (Command::RunGd, f),
        Cmd::RunFlow(f) => (Command::RunFlow, f),
        Cmd::Scan(f) => (Command::Scan, f),
        Cmd::Counterexample(f) => (Command::Counterexample, f),
        Cmd::Verify(f) => (Command::Verify, f),
        Cmd::Fuzz(f) => (Command::Fuzz, f),
    };
    let result = build_config(command, flags).and_then(|cfg| dispatch(&cfg));
    match result {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            ExitCode::from(outcome.status.code() as u8)
        }
        Err(e) => {
            eprintln!("optcurve {command}: {e}");
            let status = e.status();
            if status == Status::UsageError {
                eprintln!("run `optcurve {command} --help` for usage");
            }
            ExitCode::from(status.code() as u8)
        }
    }
}
