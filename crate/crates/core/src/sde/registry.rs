//! Named model registry.
//!
//! Models are addressed by a compact spec string, `name{key=value, ...}`,
//! e.g. `ou{theta=1}` or `bm{d=2}`. All parameters are real numbers; integer
//! parameters such as `d` must be whole. User models are added with
//! [`ModelRegistry::register`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sde::model::{CoefficientBounds, SdeModel};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub params: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), params: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn real(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.params.get(key).copied().unwrap_or(default);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Parse(format!("{}: parameter {key} must be finite", self.name)))
        }
    }

    pub fn count(&self, key: &str, default: usize) -> Result<usize> {
        match self.params.get(key) {
            None => Ok(default),
            Some(&v) if v >= 1.0 && v.fract() == 0.0 && v < 1e6 => Ok(v as usize),
            Some(&v) => Err(Error::Parse(format!(
                "{}: parameter {key} = {v} must be a positive integer",
                self.name
            ))),
        }
    }

    /// Rejects parameters not in `allowed`.
    pub fn expect_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Parse(format!(
                "{}: unknown parameter `{k}` (expected one of {allowed:?})",
                self.name
            ))),
            None => Ok(()),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, body) = match s.find('{') {
            None => (s, None),
            Some(open) => {
                let body = s[open + 1..]
                    .strip_suffix('}')
                    .ok_or_else(|| Error::Parse(format!("`{s}`: missing closing brace")))?;
                (&s[..open], Some(body))
            }
        };
        let name = name.trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::Parse(format!("`{s}`: invalid model name")));
        }
        let mut spec = ModelSpec::new(name);
        for item in body.unwrap_or("").split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("`{item}`: expected key=value")))?;
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("`{item}`: value is not a number")))?;
            if spec.params.insert(k.trim().to_string(), value).is_some() {
                return Err(Error::Parse(format!("`{s}`: duplicate parameter {}", k.trim())));
            }
        }
        Ok(spec)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if !self.params.is_empty() {
            let body: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
            write!(f, "{{{}}}", body.join(","))?;
        }
        Ok(())
    }
}

pub type ModelBuilder = Arc<dyn Fn(&ModelSpec) -> Result<SdeModel> + Send + Sync>;

#[derive(Clone)]
pub struct ModelRegistry {
    builders: BTreeMap<String, ModelBuilder>,
}

impl fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelRegistry").field("models", &self.names()).finish()
    }
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self { builders: BTreeMap::new() }
    }

    /// Registry with the shipped models:
    ///
    /// | name | drift | diffusion |
    /// |---|---|---|
    /// | `zero{d}` | 0 | 0 |
    /// | `bm{d, sigma}` | 0 | `sigma I` |
    /// | `ou{d, theta, sigma}` | `-theta x` | `sigma I` |
    /// | `bounded_drift_1d{a, s0, s1}` | `-a tanh(x)` | `s0 + s1 sin(x)` |
    /// | `sign_drift{d, c, sigma}` | `-c sgn(x_i)` per axis | `sigma I` |
    /// | `const_drift{d, c, sigma}` | `c` per axis | `sigma I` |
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("zero", |s| {
            s.expect_keys(&["d"])?;
            zero(s.count("d", 1)?)
        });
        r.register("bm", |s| {
            s.expect_keys(&["d", "sigma"])?;
            brownian(s.count("d", 1)?, s.real("sigma", 1.0)?)
        });
        r.register("ou", |s| {
            s.expect_keys(&["d", "theta", "sigma"])?;
            ornstein_uhlenbeck(s.count("d", 1)?, s.real("theta", 1.0)?, s.real("sigma", 1.0)?)
        });
        r.register("bounded_drift_1d", |s| {
            s.expect_keys(&["a", "s0", "s1"])?;
            bounded_drift_1d(s.real("a", 1.0)?, s.real("s0", 1.0)?, s.real("s1", 0.5)?)
        });
        r.register("sign_drift", |s| {
            s.expect_keys(&["d", "c", "sigma"])?;
            sign_drift(s.count("d", 1)?, s.real("c", 1.0)?, s.real("sigma", 1.0)?)
        });
        r.register("const_drift", |s| {
            s.expect_keys(&["d", "c", "sigma"])?;
            const_drift(s.count("d", 1)?, s.real("c", 1.0)?, s.real("sigma", 1.0)?)
        });
        r
    }

    pub fn register<F>(&mut self, name: &str, builder: F)
    where
        F: Fn(&ModelSpec) -> Result<SdeModel> + Send + Sync + 'static,
    {
        self.builders.insert(name.to_string(), Arc::new(builder));
    }

    pub fn names(&self) -> Vec<String> {
        self.builders.keys().cloned().collect()
    }

    pub fn build_spec(&self, spec: &ModelSpec) -> Result<SdeModel> {
        let builder = self
            .builders
            .get(&spec.name)
            .ok_or_else(|| Error::UnknownModel(spec.name.clone()))?;
        builder(spec)
    }

    pub fn build(&self, spec: &str) -> Result<SdeModel> {
        self.build_spec(&spec.parse()?)
    }
}

fn identity_diffusion(d: usize, sigma: f64) -> impl Fn(&[f64], &mut [f64]) + Send + Sync {
    move |_x, out| {
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = sigma;
        }
    }
}

fn isotropic_bounds(sigma: f64) -> (Option<f64>, Option<f64>) {
    let inv = if sigma > 0.0 { Some(1.0 / sigma) } else { None };
    (Some(sigma.abs()), inv)
}

fn positive(name: &str, key: &str, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Parse(format!("{name}: {key} must be positive, got {v}")))
    }
}

pub fn zero(d: usize) -> Result<SdeModel> {
    SdeModel::new(
        format!("zero{{d={d}}}"),
        d,
        |_x, out| out.fill(0.0),
        |_x, out| out.fill(0.0),
        CoefficientBounds { drift: Some(0.0), diffusion: Some(0.0), inverse_diffusion: None },
    )
}

pub fn brownian(d: usize, sigma: f64) -> Result<SdeModel> {
    let sigma = positive("bm", "sigma", sigma)?;
    let (diffusion, inverse_diffusion) = isotropic_bounds(sigma);
    SdeModel::new(
        format!("bm{{d={d},sigma={sigma}}}"),
        d,
        |_x, out| out.fill(0.0),
        identity_diffusion(d, sigma),
        CoefficientBounds { drift: Some(0.0), diffusion, inverse_diffusion },
    )
}

pub fn ornstein_uhlenbeck(d: usize, theta: f64, sigma: f64) -> Result<SdeModel> {
    let theta = positive("ou", "theta", theta)?;
    let sigma = positive("ou", "sigma", sigma)?;
    let (diffusion, inverse_diffusion) = isotropic_bounds(sigma);
    SdeModel::new(
        format!("ou{{d={d},theta={theta},sigma={sigma}}}"),
        d,
        move |x, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = -theta * xi;
            }
        },
        identity_diffusion(d, sigma),
        CoefficientBounds { drift: None, diffusion, inverse_diffusion },
    )
}

/// One-dimensional model with bounded smooth drift and bounded, uniformly
/// elliptic, state-dependent diffusion.
pub fn bounded_drift_1d(a: f64, s0: f64, s1: f64) -> Result<SdeModel> {
    if !(a >= 0.0 && s1 >= 0.0 && s0 > s1) {
        return Err(Error::Parse(format!(
            "bounded_drift_1d: need a >= 0 and s0 > s1 >= 0, got a={a}, s0={s0}, s1={s1}"
        )));
    }
    SdeModel::new(
        format!("bounded_drift_1d{{a={a},s0={s0},s1={s1}}}"),
        1,
        move |x, out| out[0] = -a * x[0].tanh(),
        move |x, out| out[0] = s0 + s1 * x[0].sin(),
        CoefficientBounds {
            drift: Some(a),
            diffusion: Some(s0 + s1),
            inverse_diffusion: Some(1.0 / (s0 - s1)),
        },
    )
}

/// Mean-reverting drift `-c sgn(x_i)` on each axis: bounded and
/// discontinuous on the coordinate hyperplanes. `sgn(0) = 0`.
pub fn sign_drift(d: usize, c: f64, sigma: f64) -> Result<SdeModel> {
    let sigma = positive("sign_drift", "sigma", sigma)?;
    let (diffusion, inverse_diffusion) = isotropic_bounds(sigma);
    SdeModel::new(
        format!("sign_drift{{d={d},c={c},sigma={sigma}}}"),
        d,
        move |x, out| {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = -c * signum0(*xi);
            }
        },
        identity_diffusion(d, sigma),
        CoefficientBounds {
            drift: Some(c.abs() * (d as f64).sqrt()),
            diffusion,
            inverse_diffusion,
        },
    )
}

pub fn const_drift(d: usize, c: f64, sigma: f64) -> Result<SdeModel> {
    let sigma = positive("const_drift", "sigma", sigma)?;
    let (diffusion, inverse_diffusion) = isotropic_bounds(sigma);
    SdeModel::new(
        format!("const_drift{{d={d},c={c},sigma={sigma}}}"),
        d,
        move |_x, out| out.fill(c),
        identity_diffusion(d, sigma),
        CoefficientBounds {
            drift: Some(c.abs() * (d as f64).sqrt()),
            diffusion,
            inverse_diffusion,
        },
    )
}

pub(crate) fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
