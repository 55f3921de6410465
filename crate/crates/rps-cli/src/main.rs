use clap::{Args, Parser, Subcommand};
use rps_cli::commands::{self, CliError, Verdict};
use rps_cli::config::parse_config;
use std::path::PathBuf;
use std::process::ExitCode;

/// Pathwise random periodic and stationary solutions of semilinear
/// hyperbolic SDEs: solve ensembles, verify the defining identities, and
/// emit plot-ready CSV/JSON artifacts.
#[derive(Parser)]
#[command(name = "rps", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override monte_carlo.master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override monte_carlo.n_paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Directory artifacts are written into.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the ensemble and write the per-node state series.
    Solve(RunArgs),
    /// Check the semiflow and periodicity identities of solved paths.
    Verify(RunArgs),
    /// Check stationarity of an autonomous problem against closed-form
    /// moments when available.
    Stationary(RunArgs),
    /// Surface the dissipativity ledger and derived cutoff radius.
    Bounds(RunArgs),
    /// Re-run the solve across a swept parameter, one summary row each.
    Sweep(RunArgs),
}

/// Worker count override; unset leaves the library default in place.
fn workers_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var("RPS_WORKERS") {
        Err(_) => Ok(None),
        Ok(raw) if raw.trim().is_empty() => Ok(None),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!(
                "RPS_WORKERS must be a positive integer, got \"{raw}\""
            ))),
        },
    }
}

fn dispatch(cmd: &Cmd) -> Result<Verdict, CliError> {
    let args = match cmd {
        Cmd::Solve(a) | Cmd::Verify(a) | Cmd::Stationary(a) | Cmd::Bounds(a) | Cmd::Sweep(a) => a,
    };
    let text = std::fs::read_to_string(&args.config)?;
    let mut exp = parse_config(&text)?;
    if let Some(seed) = args.seed {
        exp.solver.master_seed = seed;
    }
    if let Some(paths) = args.paths {
        if paths == 0 {
            return Err(CliError::Usage("--paths must be at least 1".into()));
        }
        exp.solver.n_paths = paths;
    }
    let workers = workers_from_env()?;
    rps_core::exec::with_workers(workers, || match cmd {
        Cmd::Solve(a) => commands::run_solve(&exp, &a.out_dir),
        Cmd::Verify(a) => commands::run_verify(&exp, &a.out_dir),
        Cmd::Stationary(a) => commands::run_stationary(&exp, &a.out_dir),
        Cmd::Bounds(a) => commands::run_bounds(&exp, &a.out_dir),
        Cmd::Sweep(a) => commands::run_sweep(&exp, &a.out_dir),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(verdict) => ExitCode::from(verdict.exit_code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
