//! Configuration-driven experiment runner for `couplex`.
//!
//! Every subcommand reads a TOML [`config::ExperimentConfig`], runs one
//! library operation and writes a JSON [`report::Report`] plus CSV data.
//! Reports hold no timestamps, so reruns with the same seed are
//! byte-identical; timing goes to a `.meta.json` sidecar.

pub mod config;
pub mod ops;
pub mod report;
pub mod suite;

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Result};

pub use config::{ExperimentConfig, ResolvedConfig};
pub use ops::Operation;
pub use report::{Check, Report};

/// Exit status: success.
pub const EXIT_OK: i32 = 0;
/// Exit status: error (bad config, I/O, numerical failure).
pub const EXIT_ERROR: i32 = 1;
/// Exit status: the run completed but a check failed.
pub const EXIT_CHECK_FAILED: i32 = 2;

/// Runs one operation without touching the filesystem.
pub fn execute(op: Operation, cfg: &ExperimentConfig, tolerance_scale: f64) -> Result<(Report, Vec<(String, String)>)> {
    cfg.validate()?;
    if let Some(named) = &cfg.operation {
        if named != op.name() {
            bail!("config is for operation '{named}', not '{}'", op.name());
        }
    }
    let out = ops::run(op, &ops::Ctx { cfg, tol_scale: tolerance_scale })?;
    let resolved = ResolvedConfig {
        schema_version: cfg.schema_version,
        command: op.name().to_string(),
        seed: cfg.seed,
        model: cfg.model.clone(),
        step: cfg.step,
        params: out.params.clone(),
        expect: cfg.expect.clone(),
        tolerance_scale,
    };
    Ok(report::assemble(op.name(), resolved, out, cfg.output.csv))
}

/// Runs one operation and writes its report, data files and sidecar
/// into `out_dir`.
pub fn run_to_dir(op: Operation, cfg: &ExperimentConfig, tolerance_scale: f64, out_dir: &Path) -> Result<Report> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();
    let (report, files) = execute(op, cfg, tolerance_scale)?;
    let meta = report::RunMeta {
        command: op.name().to_string(),
        started_at_unix: started,
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        version: env!("CARGO_PKG_VERSION"),
    };
    report::write_outputs(out_dir, &report, &files, &meta)?;
    Ok(report)
}

/// Exit status for a finished report.
pub fn exit_code(report: &Report) -> i32 {
    if report.passed {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}
