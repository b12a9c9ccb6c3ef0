//! Suites: a list of named runs executed in order with one summary table.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::ops::Operation;
use crate::{run_to_dir, EXIT_CHECK_FAILED, EXIT_ERROR, EXIT_OK};

fn full_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteEntry {
    pub name: String,
    pub command: String,
    /// Experiment config, relative to the suite file.
    pub config: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub schema_version: u32,
    /// Multiplier for every sample size; tolerances widen by `1/sqrt`.
    #[serde(default = "full_scale")]
    pub scale_n: f64,
    #[serde(default)]
    pub runs: Vec<SuiteEntry>,
}

impl SuiteConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).context("suite does not match the schema")?;
        if s.schema_version != SCHEMA_VERSION {
            bail!("schema_version {} is not supported (expected {SCHEMA_VERSION})", s.schema_version);
        }
        if !(s.scale_n.is_finite() && s.scale_n > 0.0) {
            bail!("scale_n must be positive");
        }
        let mut names = std::collections::BTreeSet::new();
        for r in &s.runs {
            Operation::parse(&r.command)?;
            if r.name.is_empty() || r.name.contains(['/', '\\']) || r.name.starts_with('.') {
                bail!("run name '{}' is not a plain directory name", r.name);
            }
            if !names.insert(r.name.as_str()) {
                bail!("duplicate run name '{}'", r.name);
            }
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read suite {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid suite {}", path.display()))
    }

    /// Tolerance multiplier for reduced sample sizes; never tightens.
    pub fn tolerance_scale(&self) -> f64 {
        (1.0 / self.scale_n.sqrt()).max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteRow {
    pub name: String,
    pub command: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub failed_checks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub scale_n: f64,
    pub tolerance_scale: f64,
    pub seed_override: Option<u64>,
    pub rows: Vec<SuiteRow>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn exit_code(&self) -> i32 {
        if self.rows.iter().any(|r| r.error.is_some()) {
            EXIT_ERROR
        } else if self.passed {
            EXIT_OK
        } else {
            EXIT_CHECK_FAILED
        }
    }

    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        let mut s = format!("{:<width$}  {:<18}  result\n", "run", "command");
        for r in &self.rows {
            let result = match (&r.error, r.passed) {
                (Some(e), _) => format!("ERROR {e}"),
                (None, true) => "PASS".to_string(),
                (None, false) => format!("FAIL {}", r.failed_checks.join(", ")),
            };
            s.push_str(&format!("{:<width$}  {:<18}  {result}\n", r.name, r.command));
        }
        s
    }
}

/// Runs every entry into `out/<name>/` and writes `out/suite.json`.
/// Entries run one after another; each run parallelizes internally.
pub fn run_suite(suite_path: &Path, seed: Option<u64>, out: &Path) -> Result<SuiteReport> {
    let suite = SuiteConfig::load(suite_path)?;
    let base = suite_path.parent().unwrap_or(Path::new("."));
    let tol = suite.tolerance_scale();
    let mut rows = Vec::with_capacity(suite.runs.len());
    for entry in &suite.runs {
        let outcome = (|| -> Result<crate::Report> {
            let op = Operation::parse(&entry.command)?;
            let mut cfg = ExperimentConfig::load(&base.join(&entry.config))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.scale_samples(suite.scale_n);
            run_to_dir(op, &cfg, tol, &out.join(&entry.name))
        })();
        rows.push(match outcome {
            Ok(r) => SuiteRow {
                name: entry.name.clone(),
                command: entry.command.clone(),
                passed: r.passed,
                error: None,
                failed_checks: r.failed_checks().map(|c| c.name.clone()).collect(),
            },
            Err(e) => SuiteRow {
                name: entry.name.clone(),
                command: entry.command.clone(),
                passed: false,
                error: Some(format!("{e:#}")),
                failed_checks: Vec::new(),
            },
        });
    }
    let report = SuiteReport {
        schema_version: SCHEMA_VERSION,
        scale_n: suite.scale_n,
        tolerance_scale: tol,
        seed_override: seed,
        passed: rows.iter().all(|r| r.passed),
        rows,
    };
    std::fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    std::fs::write(out.join("suite.json"), json).context("cannot write suite.json")?;
    Ok(report)
}
