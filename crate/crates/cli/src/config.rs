//! Experiment configuration (TOML) and its resolved, report-embedded form.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Parameter keys holding sample sizes; scaled by suite `scale_n`.
pub const SAMPLE_KEYS: &[&str] = &["n", "draws", "md_n", "long_run_n"];

fn default_step() -> f64 {
    1e-3
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_true")]
    pub csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { csv: true }
    }
}

/// A named scalar the report must satisfy: `|metric - value| <= tolerance`
/// and/or `min <= metric <= max`. Tolerances of sampled metrics widen by
/// `1 / sqrt(scale_n)` when a suite runs with reduced sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default = "default_true")]
    pub scales_with_n: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Mandatory: runs never draw entropy from the environment.
    pub seed: u64,
    /// Optional; must match the subcommand when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub params: toml::Table,
    #[serde(default)]
    pub expect: Vec<Expectation>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("config does not match the schema")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version);
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            bail!("step must be positive, got {}", self.step);
        }
        for e in &self.expect {
            if e.value.is_some() != e.tolerance.is_some() {
                bail!("expectation on '{}' needs both value and tolerance", e.metric);
            }
            if e.value.is_none() && e.min.is_none() && e.max.is_none() {
                bail!("expectation on '{}' checks nothing", e.metric);
            }
        }
        Ok(())
    }

    /// Typed operation parameters; unknown keys are rejected.
    pub fn params<T: DeserializeOwned>(&self) -> Result<T> {
        toml::Value::Table(self.params.clone()).try_into().context("invalid [params]")
    }

    /// Multiplies every sample-size parameter by `factor` (at least 1).
    pub fn scale_samples(&mut self, factor: f64) {
        for key in SAMPLE_KEYS {
            if let Some(toml::Value::Integer(v)) = self.params.get_mut(*key) {
                *v = ((*v as f64 * factor).round() as i64).max(1);
            }
        }
    }
}

/// Config as embedded in a report: everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub step: f64,
    /// Parameters after defaults were applied.
    pub params: serde_json::Value,
    pub expect: Vec<Expectation>,
    pub tolerance_scale: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        let err = ExperimentConfig::parse("schema_version = 1\nmodel = \"bm\"\n").unwrap_err();
        assert!(format!("{err:#}").contains("seed"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("schema_version = 1\nseed = 1\nsed = 2\n").is_err());
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        assert!(ExperimentConfig::parse("schema_version = 7\nseed = 1\n").is_err());
    }

    #[test]
    fn sample_sizes_scale() {
        let mut c = ExperimentConfig::parse("schema_version = 1\nseed = 1\n[params]\nn = 1000\nhorizon = 2.0\n").unwrap();
        c.scale_samples(0.1);
        assert_eq!(c.params["n"].as_integer(), Some(100));
        assert_eq!(c.params["horizon"].as_float(), Some(2.0));
    }
}
