//! Stochastic exponentials for drift-split models `b = b1 + b2`.
//!
//! With `b2~ = sigma^{-1} b2`, the weight
//! `rho_T = exp(s * int b2~(X) . dW - 1/2 int |b2~(X)|^2 dt)` is a
//! probability density for either sign `s`. `Direction::AddDrift` (`s = +1`)
//! turns samples of the `b1` equation into samples of the `b1 + b2` law;
//! `Direction::RemoveDrift` (`s = -1`) goes the other way. Both integrals
//! use left-endpoint sums on the simulation grid, so the discrete weights
//! are exact martingales and `E rho_T = 1` holds for the simulated chain.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::{Binning, KernelHistogram, Region};
use crate::error::{invalid, Error, Result};
use crate::md::{md_from_histograms, MdReport};
use crate::rng::Lane;
use crate::sde::registry::signum0;
use crate::sde::{grid_time, solve_diffusion, steps_for, CoefficientBounds, IntegratorConfig, ModelSpec, Path, SdeModel, Stepper, VectorField};
use crate::stats::mean_and_se;

/// Effective sample size below which a weighted kernel is flagged.
pub const LOW_EFFECTIVE_SAMPLE: f64 = 100.0;

/// Largest log-weight whose exponential is finite.
const MAX_LOG_WEIGHT: f64 = 709.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    AddDrift,
    RemoveDrift,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::AddDrift => 1.0,
            Direction::RemoveDrift => -1.0,
        }
    }
}

/// Base model with drift `b1` plus a bounded extra drift `b2`.
#[derive(Clone)]
pub struct DriftSplitModel {
    base: SdeModel,
    extra: VectorField,
    extra_sup: f64,
    extra_name: String,
}

impl std::fmt::Debug for DriftSplitModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriftSplitModel")
            .field("base", &self.base)
            .field("extra", &self.extra_name)
            .field("extra_sup", &self.extra_sup)
            .finish()
    }
}

impl DriftSplitModel {
    pub fn new<F>(base: SdeModel, name: impl Into<String>, extra: F, extra_sup: f64) -> Result<Self>
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if !(extra_sup.is_finite() && extra_sup >= 0.0) {
            return invalid("sup |b2| must be finite and nonnegative");
        }
        base.require_nondegenerate()?;
        Ok(Self { base, extra: Arc::new(extra), extra_sup, extra_name: name.into() })
    }

    /// Extra drift from a spec: `none`, `const{c}`, `sign{c}` or `tanh{c}`,
    /// applied coordinate-wise.
    pub fn from_spec(base: SdeModel, spec: &str) -> Result<Self> {
        let spec: ModelSpec = spec.parse()?;
        let d = base.dim();
        let sqrt_d = (d as f64).sqrt();
        match spec.name.as_str() {
            "none" => {
                spec.expect_keys(&[])?;
                Self::new(base, "none", |_, out: &mut [f64]| out.fill(0.0), 0.0)
            }
            "const" => {
                spec.expect_keys(&["c"])?;
                let c = spec.real("c", 1.0)?;
                Self::new(base, spec.to_string(), move |_, out: &mut [f64]| out.fill(c), c.abs() * sqrt_d)
            }
            "sign" => {
                spec.expect_keys(&["c"])?;
                let c = spec.real("c", 1.0)?;
                Self::new(
                    base,
                    spec.to_string(),
                    move |x: &[f64], out: &mut [f64]| {
                        for (o, v) in out.iter_mut().zip(x) {
                            *o = -c * signum0(*v);
                        }
                    },
                    c.abs() * sqrt_d,
                )
            }
            "tanh" => {
                spec.expect_keys(&["c"])?;
                let c = spec.real("c", 1.0)?;
                Self::new(
                    base,
                    spec.to_string(),
                    move |x: &[f64], out: &mut [f64]| {
                        for (o, v) in out.iter_mut().zip(x) {
                            *o = -c * v.tanh();
                        }
                    },
                    c.abs() * sqrt_d,
                )
            }
            other => Err(Error::UnknownModel(format!("extra drift '{other}'"))),
        }
    }

    pub fn base(&self) -> &SdeModel {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn extra_sup(&self) -> f64 {
        self.extra_sup
    }

    pub fn extra_name(&self) -> &str {
        &self.extra_name
    }

    pub fn extra_drift(&self, x: &[f64], out: &mut [f64]) {
        (self.extra)(x, out)
    }

    /// The model with drift `b1 + b2`.
    pub fn full_model(&self) -> SdeModel {
        let base = self.base.clone();
        let extra = self.extra.clone();
        let d = self.dim();
        let b = self.base.bounds();
        let bounds = CoefficientBounds {
            drift: b.drift.map(|s| s + self.extra_sup),
            diffusion: b.diffusion,
            inverse_diffusion: b.inverse_diffusion,
        };
        let diffusion_model = self.base.clone();
        SdeModel::new(
            format!("{}+{}", self.base.name(), self.extra_name),
            d,
            move |x: &[f64], out: &mut [f64]| {
                base.drift(x, out);
                let mut e = vec![0.0; out.len()];
                extra(x, &mut e);
                for (o, v) in out.iter_mut().zip(e) {
                    *o += v;
                }
            },
            move |x: &[f64], out: &mut [f64]| diffusion_model.diffusion(x, out),
            bounds,
        )
        .expect("full model inherits a valid base")
    }

    /// `sup |sigma^{-1} b2|` when the base declares `sup |sigma^{-1}|`.
    pub fn scaled_extra_sup(&self) -> Option<f64> {
        self.base.bounds().inverse_diffusion.map(|s| s * self.extra_sup)
    }
}

/// Running sums `int b2~ . dW` and `int |b2~|^2 dt`.
struct WeightAccumulator {
    stochastic: f64,
    quadratic: f64,
    sigma: Vec<f64>,
    b2: Vec<f64>,
    scaled: Vec<f64>,
}

impl WeightAccumulator {
    fn new(d: usize) -> Self {
        Self { stochastic: 0.0, quadratic: 0.0, sigma: vec![0.0; d * d], b2: vec![0.0; d], scaled: vec![0.0; d] }
    }

    /// Adds the step starting at `x` with increment `dw` over `dt`.
    fn add(&mut self, split: &DriftSplitModel, x: &[f64], dw: &[f64], dt: f64) -> Result<()> {
        split.extra_drift(x, &mut self.b2);
        if self.b2.iter().all(|v| *v == 0.0) {
            return Ok(());
        }
        split.base.diffusion(x, &mut self.sigma);
        solve_diffusion(&self.sigma, &self.b2, &mut self.scaled)?;
        if self.scaled.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateDiffusion);
        }
        self.stochastic += self.scaled.iter().zip(dw).map(|(a, w)| a * w).sum::<f64>();
        self.quadratic += self.scaled.iter().map(|a| a * a).sum::<f64>() * dt;
        Ok(())
    }

    fn log_weight(&self, direction: Direction) -> f64 {
        direction.sign() * self.stochastic - 0.5 * self.quadratic
    }
}

/// Terminal state with its weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub terminal: Vec<f64>,
    pub log_weight: f64,
    /// `exp(log_weight)`, or `f64::MAX` when that overflows.
    pub weight: f64,
    pub overflow: bool,
}

impl WeightedSample {
    fn new(terminal: Vec<f64>, log_weight: f64) -> Result<Self> {
        if !log_weight.is_finite() {
            return Err(Error::NumericalBlowup { state: terminal, time: f64::NAN });
        }
        let overflow = log_weight > MAX_LOG_WEIGHT;
        let weight = if overflow { f64::MAX } else { log_weight.exp() };
        Ok(Self { terminal, log_weight, weight, overflow })
    }
}

/// Log-weight over grid steps `from..to` of a recorded path.
pub fn log_weight_between(
    split: &DriftSplitModel,
    path: &Path,
    direction: Direction,
    from: usize,
    to: usize,
) -> Result<f64> {
    if !path.has_increments() {
        return invalid("path does not carry its Brownian increments");
    }
    if path.dim() != split.dim() {
        return invalid("path dimension does not match the model");
    }
    if from > to || to >= path.len() {
        return invalid("step range out of bounds");
    }
    let times = path.times();
    let mut acc = WeightAccumulator::new(split.dim());
    for k in from..to {
        let dw = path.increment(k).expect("increments present");
        acc.add(split, path.state(k), dw, times[k + 1] - times[k])?;
    }
    Ok(acc.log_weight(direction))
}

/// `rho_T` along a path that carries its increments.
pub fn stochastic_exponential(split: &DriftSplitModel, path: &Path, direction: Direction) -> Result<WeightedSample> {
    let lw = log_weight_between(split, path, direction, 0, path.len() - 1)?;
    WeightedSample::new(path.terminal().to_vec(), lw)
}

/// Path-wise bound `sup|b2~| sum |dW| + 1/2 sup|b2~|^2 T`, when available.
pub fn log_weight_bound(split: &DriftSplitModel, path: &Path) -> Option<f64> {
    let s = split.scaled_extra_sup()?;
    let total: f64 = (0..path.len().saturating_sub(1))
        .map(|k| path.increment(k).map(|w| w.iter().map(|v| v * v).sum::<f64>().sqrt()).unwrap_or(0.0))
        .sum();
    let horizon = path.times()[path.len() - 1] - path.times()[0];
    Some(s * total + 0.5 * s * s * horizon)
}

/// Simulates path `index` of the model matching `direction` (base model for
/// `AddDrift`, full model for `RemoveDrift`) and returns its weighted endpoint.
pub fn weighted_endpoint(
    split: &DriftSplitModel,
    simulated: &SdeModel,
    x0: &[f64],
    horizon: f64,
    direction: Direction,
    cfg: &IntegratorConfig,
    index: u64,
) -> Result<WeightedSample> {
    let h = cfg.step;
    let n = steps_for(horizon, h);
    let mut rng = cfg.rng(Lane::PRIMARY, index);
    let mut stepper = Stepper::new(simulated);
    let mut acc = WeightAccumulator::new(split.dim());
    let mut x = x0.to_vec();
    for k in 0..n {
        let t0 = grid_time(k, n, h, horizon);
        let t1 = grid_time(k + 1, n, h, horizon);
        stepper.draw(t1 - t0, &mut rng);
        acc.add(split, &x, &stepper.dw, t1 - t0)?;
        stepper.apply(&mut x, t1 - t0, t0)?;
    }
    WeightedSample::new(x, acc.log_weight(direction))
}

/// `n` weighted endpoints from `x0`.
pub fn weighted_ensemble(
    split: &DriftSplitModel,
    x0: &[f64],
    horizon: f64,
    n: usize,
    direction: Direction,
    cfg: &IntegratorConfig,
) -> Result<Vec<WeightedSample>> {
    if x0.len() != split.dim() {
        return invalid("start point dimension does not match the model");
    }
    if n == 0 {
        return invalid("sample count must be at least 1");
    }
    let cfg = cfg.with_horizon(horizon);
    cfg.validate()?;
    let simulated = match direction {
        Direction::AddDrift => split.base.clone(),
        Direction::RemoveDrift => split.full_model(),
    };
    simulated.check_bounds_at(x0)?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| weighted_endpoint(split, &simulated, x0, horizon, direction, &cfg, i))
        .collect()
}

/// Sample mean of `rho_T` with its standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMoments {
    pub mean: f64,
    pub stderr: f64,
    pub n_eff: f64,
    pub overflows: usize,
}

impl WeightMoments {
    pub fn from_samples(samples: &[WeightedSample]) -> Self {
        let w: Vec<f64> = samples.iter().map(|s| s.weight).collect();
        let (mean, stderr) = mean_and_se(&w);
        Self { mean, stderr, n_eff: effective_sample_size(&w), overflows: samples.iter().filter(|s| s.overflow).count() }
    }

    /// `|mean - 1| <= sigmas * stderr`.
    pub fn unbiased_at(&self, sigmas: f64) -> bool {
        (self.mean - 1.0).abs() <= sigmas * self.stderr
    }
}

/// `(sum w)^2 / sum w^2`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Weighted histogram estimate of the full-model kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedKernel {
    pub histogram: KernelHistogram,
    pub moments: WeightMoments,
    pub normalized: bool,
    pub warnings: Vec<String>,
}

/// Histogram of base-model endpoints weighted by the `AddDrift` exponential.
/// With `normalize`, weights are divided by their sample mean.
pub fn reweighted_kernel(
    split: &DriftSplitModel,
    x0: &[f64],
    horizon: f64,
    n: usize,
    binning: &Binning,
    cfg: &IntegratorConfig,
    normalize: bool,
) -> Result<WeightedKernel> {
    if binning.dim() != split.dim() {
        return invalid("binning dimension does not match the model");
    }
    let samples = weighted_ensemble(split, x0, horizon, n, Direction::AddDrift, cfg)?;
    let moments = WeightMoments::from_samples(&samples);
    let scale = if normalize { moments.mean } else { 1.0 };
    let weights: Vec<f64> = samples.iter().map(|s| s.weight / scale).collect();
    let histogram = KernelHistogram::from_points(binning, samples.iter().map(|s| s.terminal.as_slice()), Some(&weights))?;
    let mut warnings = Vec::new();
    if moments.n_eff < LOW_EFFECTIVE_SAMPLE {
        warnings.push(format!("low effective sample size: n_eff = {:.1}", moments.n_eff));
    }
    if moments.overflows > 0 {
        warnings.push(format!("{} weights overflowed", moments.overflows));
    }
    Ok(WeightedKernel { histogram, moments, normalized: normalize, warnings })
}

/// Start grid for a ball: the center and `+-R e_i`.
pub fn ball_grid(dim: usize, radius: f64) -> Vec<Vec<f64>> {
    let mut grid = vec![vec![0.0; dim]];
    for i in 0..dim {
        for s in [-1.0, 1.0] {
            let mut p = vec![0.0; dim];
            p[i] = s * radius;
            grid.push(p);
        }
    }
    grid
}

/// `kappa(R, T)` from reweighted kernels: starts on `start_grid` (default
/// `ball_grid(d, R)`), overlap over `B_R` binned on `[-R, R]^d`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_md_girsanov(
    split: &DriftSplitModel,
    radius: f64,
    horizon: f64,
    n: usize,
    bins: usize,
    cfg: &IntegratorConfig,
    start_grid: Option<&[Vec<f64>]>,
    normalize: bool,
) -> Result<MdReport> {
    if !(radius.is_finite() && radius > 0.0) {
        return invalid("radius must be positive");
    }
    let d = split.dim();
    let default_grid;
    let grid = match start_grid {
        Some(g) => g,
        None => {
            default_grid = ball_grid(d, radius);
            &default_grid
        }
    };
    let ball = Region::centered_ball(d, radius);
    if let Some(p) = grid.iter().find(|p| !ball.contains(p)) {
        return invalid(format!("start point {p:?} is outside B_R"));
    }
    let binning = Binning::cube(d, radius, bins)?;
    let mut hists = Vec::with_capacity(grid.len());
    let mut warnings = Vec::new();
    for x in grid {
        let k = reweighted_kernel(split, x, horizon, n, &binning, cfg, normalize)?;
        warnings.extend(k.warnings.iter().map(|w| format!("start {x:?}: {w}")));
        hists.push(k.histogram);
    }
    let mut report = md_from_histograms(&hists, grid, &ball.mask(&binning), horizon)?;
    report.diagnostics.extend(warnings);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::registry::brownian;
    use crate::sde::simulate_path_indexed;

    fn bm_split(extra: &str) -> DriftSplitModel {
        DriftSplitModel::from_spec(brownian(1, 1.0).unwrap(), extra).unwrap()
    }

    #[test]
    fn zero_extra_drift_has_unit_weight() {
        let s = bm_split("none");
        let cfg = IntegratorConfig::new(0.01, 1.0, 3).unwrap();
        let p = simulate_path_indexed(s.base(), &[0.2], &cfg, Lane::PRIMARY, 0, true).unwrap();
        for dir in [Direction::AddDrift, Direction::RemoveDrift] {
            let w = stochastic_exponential(&s, &p, dir).unwrap();
            assert_eq!(w.weight, 1.0);
            assert_eq!(w.log_weight, 0.0);
        }
    }

    #[test]
    fn constant_drift_closed_form() {
        let c = 0.7;
        let s = bm_split("const{c=0.7}");
        let cfg = IntegratorConfig::new(0.01, 1.0, 5).unwrap();
        for i in 0..20 {
            let p = simulate_path_indexed(s.base(), &[0.0], &cfg, Lane::PRIMARY, i, true).unwrap();
            let w_t = p.terminal()[0];
            let w = stochastic_exponential(&s, &p, Direction::RemoveDrift).unwrap();
            assert!((w.log_weight - (-c * w_t - c * c / 2.0)).abs() < 1e-12);
            let w = stochastic_exponential(&s, &p, Direction::AddDrift).unwrap();
            assert!((w.log_weight - (c * w_t - c * c / 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_multiply_across_a_split() {
        let s = bm_split("sign{c=1}");
        let cfg = IntegratorConfig::new(0.01, 1.0, 6).unwrap();
        let p = simulate_path_indexed(s.base(), &[0.1], &cfg, Lane::PRIMARY, 2, true).unwrap();
        let whole = log_weight_between(&s, &p, Direction::AddDrift, 0, 100).unwrap();
        let a = log_weight_between(&s, &p, Direction::AddDrift, 0, 37).unwrap();
        let b = log_weight_between(&s, &p, Direction::AddDrift, 37, 100).unwrap();
        assert!((whole - (a + b)).abs() < 1e-12);
        let bound = log_weight_bound(&s, &p).unwrap();
        assert!(whole.abs() <= bound);
    }

    #[test]
    fn streamed_and_recorded_weights_agree() {
        let s = bm_split("tanh{c=0.5}");
        let cfg = IntegratorConfig::new(0.02, 1.0, 8).unwrap();
        let p = simulate_path_indexed(s.base(), &[0.3], &cfg, Lane::PRIMARY, 4, true).unwrap();
        let a = stochastic_exponential(&s, &p, Direction::AddDrift).unwrap();
        let b = weighted_endpoint(&s, s.base(), &[0.3], 1.0, Direction::AddDrift, &cfg, 4).unwrap();
        assert_eq!(a.terminal, b.terminal);
        assert!((a.log_weight - b.log_weight).abs() < 1e-12);
    }

    #[test]
    fn missing_increments_are_rejected() {
        let s = bm_split("const{c=1}");
        let cfg = IntegratorConfig::new(0.1, 1.0, 1).unwrap();
        let p = simulate_path_indexed(s.base(), &[0.0], &cfg, Lane::PRIMARY, 0, false).unwrap();
        assert!(stochastic_exponential(&s, &p, Direction::AddDrift).is_err());
    }

    #[test]
    fn zero_extra_drift_kernel_equals_plain_histogram() {
        let s = bm_split("none");
        let cfg = IntegratorConfig::new(0.05, 1.0, 2).unwrap();
        let b = Binning::interval(-2.0, 2.0, 20).unwrap();
        let k = reweighted_kernel(&s, &[0.0], 1.0, 2000, &b, &cfg, false).unwrap();
        let plain = crate::md::estimate_kernel_histogram(s.base(), &[0.0], 1.0, 2000, &b, &cfg).unwrap();
        assert_eq!(k.histogram.masses(), plain.masses());
    }

    #[test]
    fn full_model_adds_drifts() {
        let s = bm_split("const{c=2}");
        let full = s.full_model();
        assert_eq!(full.eval_drift(&[0.3]), vec![2.0]);
        assert_eq!(full.bounds().drift, Some(2.0));
    }

    #[test]
    fn unknown_extra_drift() {
        assert!(matches!(
            DriftSplitModel::from_spec(brownian(1, 1.0).unwrap(), "wobble{c=1}"),
            Err(Error::UnknownModel(_))
        ));
    }

    #[test]
    fn ball_grid_shape() {
        assert_eq!(ball_grid(1, 1.0), vec![vec![0.0], vec![-1.0], vec![1.0]]);
        assert_eq!(ball_grid(2, 0.5).len(), 5);
    }
}
