//! Report schema, expectation checks and report writing.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::{Expectation, ResolvedConfig, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// What an operation hands back to the runner.
#[derive(Debug, Clone, Default)]
pub struct OpOutput {
    /// Typed parameters after defaults, serialized.
    pub params: serde_json::Value,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub result: serde_json::Value,
    /// `(suffix, contents)`; written as `{command}_{suffix}`.
    pub files: Vec<(String, String)>,
}

impl OpOutput {
    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    pub fn file(&mut self, suffix: impl Into<String>, contents: String) {
        self.files.push((suffix.into(), contents));
    }
}

/// One report per run. Contains nothing time- or machine-dependent, so a
/// rerun with the same config is byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub config: ResolvedConfig,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub result: serde_json::Value,
    pub files: Vec<String>,
}

impl Report {
    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Run timing and environment, kept out of the report.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub command: String,
    pub started_at_unix: f64,
    pub elapsed_seconds: f64,
    pub threads: usize,
    pub version: &'static str,
}

pub fn evaluate_expectation(e: &Expectation, metrics: &BTreeMap<String, f64>, tolerance_scale: f64) -> Check {
    let name = format!("expect_{}", e.metric);
    let Some(&v) = metrics.get(&e.metric) else {
        return Check { name, passed: false, detail: format!("metric '{}' was not reported", e.metric) };
    };
    let mut passed = v.is_finite();
    let mut parts = vec![format!("{} = {v}", e.metric)];
    if let (Some(target), Some(tol)) = (e.value, e.tolerance) {
        let tol = if e.scales_with_n { tol * tolerance_scale } else { tol };
        passed &= (v - target).abs() <= tol;
        parts.push(format!("target {target} +- {tol}"));
    }
    if let Some(lo) = e.min {
        passed &= v >= lo;
        parts.push(format!("min {lo}"));
    }
    if let Some(hi) = e.max {
        passed &= v <= hi;
        parts.push(format!("max {hi}"));
    }
    Check { name, passed, detail: parts.join(", ") }
}

pub fn assemble(command: &str, config: ResolvedConfig, mut out: OpOutput, write_csv: bool) -> (Report, Vec<(String, String)>) {
    for e in &config.expect {
        let c = evaluate_expectation(e, &out.metrics, config.tolerance_scale);
        out.checks.push(c);
    }
    let files: Vec<(String, String)> = if write_csv {
        out.files.into_iter().map(|(suffix, body)| (format!("{command}_{suffix}"), body)).collect()
    } else {
        Vec::new()
    };
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command: command.to_string(),
        config,
        passed: out.checks.iter().all(|c| c.passed),
        metrics: out.metrics,
        checks: out.checks,
        result: out.result,
        files: files.iter().map(|f| f.0.clone()).collect(),
    };
    (report, files)
}

/// Writes `{command}.json`, the data files and the timing sidecar.
pub fn write_outputs(dir: &Path, report: &Report, files: &[(String, String)], meta: &RunMeta) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let write = |name: &str, body: &str| {
        let path = dir.join(name);
        std::fs::write(&path, body).with_context(|| format!("cannot write {}", path.display()))
    };
    write(&format!("{}.json", report.command), &report.to_json()?)?;
    for (name, body) in files {
        write(name, body)?;
    }
    let mut m = serde_json::to_string_pretty(meta)?;
    m.push('\n');
    write(&format!("{}.meta.json", report.command), &m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expect(value: f64, tolerance: f64) -> Expectation {
        Expectation { metric: "kappa".into(), value: Some(value), tolerance: Some(tolerance), min: None, max: None, scales_with_n: true }
    }

    #[test]
    fn expectations_use_scaled_tolerance() {
        let metrics = BTreeMap::from([("kappa".to_string(), 0.58)]);
        assert!(!evaluate_expectation(&expect(0.5383, 0.03), &metrics, 1.0).passed);
        assert!(evaluate_expectation(&expect(0.5383, 0.03), &metrics, 2.0).passed);
    }

    #[test]
    fn missing_metric_fails() {
        assert!(!evaluate_expectation(&expect(0.0, 1.0), &BTreeMap::new(), 1.0).passed);
    }
}
