use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use couplex_cli::suite::run_suite;
use couplex_cli::{exit_code, run_to_dir, ExperimentConfig, Operation, EXIT_ERROR};

#[derive(Parser)]
#[command(name = "couplex", version, about = "Coupling and Markov-Dobrushin experiments for diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config (a suite file for `suite`).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "COUPLEX_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample trajectories.
    Simulate(RunArgs),
    /// Estimate the MD coefficient of a kernel family.
    EstimateMd(RunArgs),
    /// Maximal coupling of two discrete laws.
    Couple(RunArgs),
    /// Intersection coupling and meeting probabilities in 1D.
    #[command(name = "meet-1d")]
    Meet1d(RunArgs),
    /// Girsanov weights, reweighted kernels and MD.
    GirsanovCheck(RunArgs),
    /// Parabolic Harnack ratio and MD on the cylinder boundary.
    HarnackParabolic(RunArgs),
    /// Elliptic Harnack ratio from exit laws of a ball.
    HarnackElliptic(RunArgs),
    /// MD over exit places with a ladder of horizons.
    MdElliptic(RunArgs),
    /// TV distance to stationarity over time.
    TvCurve(RunArgs),
    /// Exact reference values.
    Oracle(RunArgs),
    /// Run a list of configs and print a summary table.
    Suite(RunArgs),
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("cannot configure the thread pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    let (op, args) = match cli.command {
        Command::Simulate(a) => (Some(Operation::Simulate), a),
        Command::EstimateMd(a) => (Some(Operation::EstimateMd), a),
        Command::Couple(a) => (Some(Operation::Couple), a),
        Command::Meet1d(a) => (Some(Operation::Meet1d), a),
        Command::GirsanovCheck(a) => (Some(Operation::GirsanovCheck), a),
        Command::HarnackParabolic(a) => (Some(Operation::HarnackParabolic), a),
        Command::HarnackElliptic(a) => (Some(Operation::HarnackElliptic), a),
        Command::MdElliptic(a) => (Some(Operation::MdElliptic), a),
        Command::TvCurve(a) => (Some(Operation::TvCurve), a),
        Command::Oracle(a) => (Some(Operation::Oracle), a),
        Command::Suite(a) => (None, a),
    };
    init_threads(args.threads)?;
    match op {
        Some(op) => {
            let mut cfg = ExperimentConfig::load(&args.config)?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            let report = run_to_dir(op, &cfg, 1.0, &args.out)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("report: {}", args.out.join(format!("{}.json", op.name())).display());
            Ok(exit_code(&report))
        }
        None => {
            let report = run_suite(&args.config, args.seed, &args.out)?;
            print!("{}", report.table());
            Ok(report.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = run(cli).unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        EXIT_ERROR
    });
    ExitCode::from(code as u8)
}
