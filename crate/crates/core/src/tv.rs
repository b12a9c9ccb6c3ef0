//! Total variation distances, TV curves and the coupling inequality.
//!
//! TV is reported in `[0, 1]`; the norm `||P - Q||_TV` is twice this. TV
//! between continuous laws is always taken at a histogram resolution, which
//! underestimates the true distance.

use serde::{Deserialize, Serialize};

use crate::binning::{Binning, KernelHistogram};
use crate::coupling::{CouplingResult, DiscreteDistribution, TV_CONVENTION};
use crate::error::{invalid, Result};
use crate::oracle::{chain_marginal, FiniteChain};
use crate::rng::Lane;
use crate::sde::{sample_snapshots, sample_transition_lane, IntegratorConfig, SdeModel};
use crate::stats::binomial_se;

/// Tolerance for violations on exactly computed curves.
pub const EXACT_TOLERANCE: f64 = 1e-12;

/// `(1/2) sum |p - q|` over shared cells; equals `1 - overlap`.
pub fn tv_exact(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    Ok(1.0 - p.overlap(q)?)
}

/// `(1/2) sum |p - q|` for two mass vectors on the same cells.
pub fn tv_masses(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(crate::Error::IncompatibleSupport(format!("{} cells vs {} cells", p.len(), q.len())));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub exact: bool,
    pub convention: String,
    /// Histogram resolution for estimated curves.
    pub resolution: Option<String>,
}

impl TvCurve {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Least-squares rate `r` in `log tv ~ a - r t` over positive values.
    /// Reporting aid only.
    pub fn fit_exponential_rate(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> =
            self.times.iter().zip(&self.values).filter(|(_, v)| **v > 0.0).map(|(t, v)| (*t, v.ln())).collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        (sxx > 0.0).then(|| -sxy / sxx)
    }
}

/// Exact TV between `initial P^t` and `target` (default: the stationary
/// law of `chain`) at each integer time.
pub fn tv_curve_chain(chain: &FiniteChain, initial: &[f64], target: Option<&[f64]>, times: &[u64]) -> Result<TvCurve> {
    let target = match target {
        Some(t) => t.to_vec(),
        None => chain.stationary()?,
    };
    if target.len() != chain.len() {
        return invalid("target law has the wrong number of states");
    }
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        let mu = chain_marginal(chain, initial, t)?;
        values.push(tv_masses(&mu, &target)?);
    }
    Ok(TvCurve {
        times: times.iter().map(|&t| t as f64).collect(),
        stderr: vec![0.0; values.len()],
        values,
        exact: true,
        convention: TV_CONVENTION.into(),
        resolution: None,
    })
}

/// Long-run histogram standing in for an unknown stationary law.
pub fn stationary_histogram_long_run(
    model: &SdeModel,
    x0: &[f64],
    horizon: f64,
    n: usize,
    binning: &Binning,
    cfg: &IntegratorConfig,
) -> Result<KernelHistogram> {
    let sample = sample_transition_lane(model, x0, horizon, n, cfg, Lane::AUXILIARY)?;
    KernelHistogram::from_points(binning, sample.points(), None)
}

fn with_outside(h: &KernelHistogram) -> Vec<f64> {
    let mut m = h.masses().to_vec();
    m.push(h.outside());
    m
}

/// TV at histogram resolution between the law of `X_t` from `x0` and a
/// stationary histogram (exact or long-run), at each time in `times`.
/// All times are read off the same paths.
pub fn tv_curve_model(
    model: &SdeModel,
    x0: &[f64],
    stationary: &KernelHistogram,
    times: &[f64],
    n: usize,
    cfg: &IntegratorConfig,
) -> Result<TvCurve> {
    let binning = stationary.binning();
    if binning.dim() != model.dim() {
        return invalid("binning dimension does not match the model");
    }
    let target = with_outside(stationary);
    let snaps = sample_snapshots(model, x0, times, n, cfg)?;
    let mut values = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for s in &snaps {
        let h = KernelHistogram::from_points(binning, s.points(), None)?;
        let p = with_outside(&h);
        values.push(tv_masses(&p, &target)?);
        let mut se: f64 = (0..binning.cell_count()).map(|c| h.cell_se(c).max(stationary.cell_se(c))).sum();
        se += binomial_se(h.outside(), n).max(binomial_se(stationary.outside(), stationary.samples().max(1)));
        stderr.push(0.5 * se);
    }
    let approx = if stationary.is_exact() { "exact stationary law" } else { "long-run stationary histogram (approximate)" };
    Ok(TvCurve {
        times: times.to_vec(),
        values,
        stderr,
        exact: false,
        convention: TV_CONVENTION.into(),
        resolution: Some(format!(
            "TV at resolution: {} cells plus one outside cell, {approx}; underestimates the true TV",
            binning.cell_count()
        )),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityViolation {
    pub earlier: f64,
    pub later: f64,
    /// `psi(later) - psi(earlier)` minus the allowed slack.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityVerdict {
    pub holds: bool,
    pub violations: Vec<MonotonicityViolation>,
    pub max_violation: f64,
    /// Number of raw increases, including those inside the noise band.
    pub raw_increases: usize,
    pub tolerance: String,
}

/// Checks `psi(t) <= psi(s)` for all `s < t`: exactly (up to 1e-12) on
/// exact curves, with a `3 sigma` band on Monte Carlo curves.
pub fn check_tv_monotonicity(curve: &TvCurve) -> MonotonicityVerdict {
    let mut violations = Vec::new();
    let mut raw_increases = 0;
    let mut max_violation: f64 = 0.0;
    for s in 0..curve.len() {
        for t in s + 1..curve.len() {
            let rise = curve.values[t] - curve.values[s];
            if rise > 0.0 {
                raw_increases += 1;
            }
            let slack = if curve.exact {
                EXACT_TOLERANCE
            } else {
                3.0 * (curve.stderr[s].powi(2) + curve.stderr[t].powi(2)).sqrt()
            };
            if rise > slack {
                max_violation = max_violation.max(rise - slack);
                violations.push(MonotonicityViolation {
                    earlier: curve.times[s],
                    later: curve.times[t],
                    excess: rise - slack,
                });
            }
        }
    }
    MonotonicityVerdict {
        holds: violations.is_empty(),
        violations,
        max_violation,
        raw_increases,
        tolerance: if curve.exact { "exact (1e-12)".into() } else { "3 sigma".into() },
    }
}

/// Exact monotonicity check of a finite chain from `initial` up to `t_max`.
pub fn check_chain_monotonicity(chain: &FiniteChain, initial: &[f64], target: Option<&[f64]>, t_max: u64) -> Result<MonotonicityVerdict> {
    let times: Vec<u64> = (0..=t_max).collect();
    Ok(check_tv_monotonicity(&tv_curve_chain(chain, initial, target, &times)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    /// Mismatch must equal TV.
    Maximal,
    /// TV must not exceed the mismatch rate.
    Inequality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingVerdict {
    pub kind: CouplingKind,
    pub mismatches: u64,
    pub n: usize,
    pub mismatch_rate: f64,
    pub stderr: f64,
    pub tv: f64,
    pub holds: bool,
}

pub fn mismatch_count<T>(draws: &[CouplingResult<T>]) -> u64 {
    draws.iter().filter(|d| !d.coalesced).count() as u64
}

/// Compares a mismatch frequency with a TV value at `3 sigma`.
pub fn coupling_bound_check(kind: CouplingKind, mismatches: u64, n: usize, tv: f64) -> Result<CouplingVerdict> {
    if n == 0 || mismatches > n as u64 {
        return invalid("need 0 <= mismatches <= n and n > 0");
    }
    if !(0.0..=1.0).contains(&tv) {
        return invalid("TV must lie in [0, 1]");
    }
    let rate = mismatches as f64 / n as f64;
    let (stderr, holds) = match kind {
        CouplingKind::Maximal => {
            let se = binomial_se(tv, n);
            (se, (rate - tv).abs() <= 3.0 * se)
        }
        CouplingKind::Inequality => {
            let se = binomial_se(rate, n);
            (se, tv <= rate + 3.0 * se)
        }
    };
    Ok(CouplingVerdict { kind, mismatches, n, mismatch_rate: rate, stderr, tv, holds })
}
