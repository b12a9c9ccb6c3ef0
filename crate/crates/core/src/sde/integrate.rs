//! Euler-Maruyama integration: single paths, endpoint ensembles and exit
//! records from balls.
//!
//! Exit is detected at grid points only, so a recorded exit state overshoots
//! the sphere by at most one increment; see [`overshoot_tolerance`].

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, Lane, StreamRng};
use crate::sde::model::SdeModel;

/// Default hard iteration budget for uncapped exit simulations.
pub const DEFAULT_EXIT_BUDGET: u64 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// Step size `h`.
    pub step: f64,
    /// Horizon `T` for plain path simulation.
    pub horizon: f64,
    pub seed: u64,
    pub substream: u64,
    /// Maximum number of steps for an exit simulation without a time cap.
    pub exit_budget: u64,
}

impl IntegratorConfig {
    pub fn new(step: f64, horizon: f64, seed: u64) -> Result<Self> {
        let cfg = Self { step, horizon, seed, substream: 0, exit_budget: DEFAULT_EXIT_BUDGET };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return invalid(format!("step size must be positive, got {}", self.step));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.step) {
            return invalid(format!(
                "horizon must be finite and at least one step (h = {}, T = {})",
                self.step, self.horizon
            ));
        }
        if steps_for(self.horizon, self.step) > u32::MAX as usize {
            return invalid("too many integration steps");
        }
        Ok(())
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_substream(mut self, substream: u64) -> Self {
        self.substream = substream;
        self
    }

    pub fn steps(&self) -> usize {
        steps_for(self.horizon, self.step)
    }

    pub(crate) fn rng(&self, lane: Lane, index: u64) -> StreamRng {
        stream_rng(self.seed, self.substream, lane, index)
    }
}

/// Number of steps covering `duration`; the last step may be short.
pub(crate) fn steps_for(duration: f64, h: f64) -> usize {
    let r = duration / h;
    let n = r.round();
    if (r - n).abs() < 1e-9 * r.max(1.0) {
        (n as usize).max(1)
    } else {
        r.ceil() as usize
    }
}

/// Time of grid node `k` in a grid of `n` steps covering `duration`.
pub(crate) fn grid_time(k: usize, n: usize, h: f64, duration: f64) -> f64 {
    if k >= n {
        duration
    } else {
        k as f64 * h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub substream: u64,
    pub lane: u64,
    pub index: u64,
}

/// A discretized trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    dim: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    increments: Option<Vec<f64>>,
    provenance: Provenance,
}

impl Path {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Brownian increments `dW` of step `i` (between nodes `i` and `i+1`),
    /// when recorded.
    pub fn increment(&self, i: usize) -> Option<&[f64]> {
        self.increments.as_ref().map(|w| &w[i * self.dim..(i + 1) * self.dim])
    }

    pub fn has_increments(&self) -> bool {
        self.increments.is_some()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Builds a path from raw parts. The grid must be strictly increasing and
    /// `states` must hold one `dim`-vector per node.
    pub fn from_parts(
        dim: usize,
        times: Vec<f64>,
        states: Vec<f64>,
        increments: Option<Vec<f64>>,
        provenance: Provenance,
    ) -> Result<Self> {
        if times.is_empty() || states.len() != times.len() * dim {
            return invalid("path state count must equal grid count");
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("path grid must be strictly increasing");
        }
        if let Some(w) = &increments {
            if w.len() != (times.len() - 1) * dim {
                return invalid("one increment vector per step is required");
            }
        }
        Ok(Self { dim, times, states, increments, provenance })
    }

    /// Overwrites the states from node `from` on with `other`'s states. Used
    /// to glue coupled trajectories after their meeting time.
    pub(crate) fn glue_from(&mut self, other: &Path, from: usize) {
        let d = self.dim;
        self.states[from * d..].copy_from_slice(&other.states[from * d..]);
    }
}

/// Euler-Maruyama step with reusable buffers.
pub(crate) struct Stepper<'m> {
    model: &'m SdeModel,
    drift: Vec<f64>,
    diffusion: Vec<f64>,
    pub(crate) dw: Vec<f64>,
}

impl<'m> Stepper<'m> {
    pub(crate) fn new(model: &'m SdeModel) -> Self {
        let d = model.dim();
        Self { model, drift: vec![0.0; d], diffusion: vec![0.0; d * d], dw: vec![0.0; d] }
    }

    pub(crate) fn draw(&mut self, dt: f64, rng: &mut StreamRng) {
        let sd = dt.sqrt();
        for w in self.dw.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = sd * z;
        }
    }

    /// Advances `x` by `dt` using the increments currently in `self.dw`.
    pub(crate) fn apply(&mut self, x: &mut [f64], dt: f64, t: f64) -> Result<()> {
        let d = x.len();
        self.model.drift(x, &mut self.drift);
        self.model.diffusion(x, &mut self.diffusion);
        if self.drift.iter().chain(&self.diffusion).any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup { state: x.to_vec(), time: t });
        }
        for i in 0..d {
            let row = &self.diffusion[i * d..(i + 1) * d];
            let noise: f64 = row.iter().zip(&self.dw).map(|(s, w)| s * w).sum();
            x[i] += self.drift[i] * dt + noise;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup { state: x.to_vec(), time: t + dt });
        }
        Ok(())
    }

    pub(crate) fn step(&mut self, x: &mut [f64], dt: f64, t: f64, rng: &mut StreamRng) -> Result<()> {
        self.draw(dt, rng);
        self.apply(x, dt, t)
    }
}

/// Advances `x` over `duration` with step `h` (last step possibly short).
pub(crate) fn advance(
    stepper: &mut Stepper<'_>,
    x: &mut [f64],
    duration: f64,
    h: f64,
    rng: &mut StreamRng,
) -> Result<()> {
    let n = steps_for(duration, h);
    for k in 0..n {
        let t0 = grid_time(k, n, h, duration);
        let t1 = grid_time(k + 1, n, h, duration);
        stepper.step(x, t1 - t0, t0, rng)?;
    }
    Ok(())
}

fn check_start(model: &SdeModel, x0: &[f64]) -> Result<()> {
    if x0.len() != model.dim() {
        return invalid(format!("start point has dimension {}, model has {}", x0.len(), model.dim()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return invalid("start point must be finite");
    }
    Ok(())
}

/// Euler-Maruyama trajectory from `x0` over `[0, cfg.horizon]` (path index 0).
pub fn simulate_path(model: &SdeModel, x0: &[f64], cfg: &IntegratorConfig) -> Result<Path> {
    simulate_path_indexed(model, x0, cfg, Lane::PRIMARY, 0, false)
}

/// Trajectory number `index` of the ensemble keyed by `cfg` and `lane`,
/// optionally recording the Brownian increments.
pub fn simulate_path_indexed(
    model: &SdeModel,
    x0: &[f64],
    cfg: &IntegratorConfig,
    lane: Lane,
    index: u64,
    record_increments: bool,
) -> Result<Path> {
    cfg.validate()?;
    check_start(model, x0)?;
    let d = model.dim();
    let n = cfg.steps();
    let mut rng = cfg.rng(lane, index);
    let mut stepper = Stepper::new(model);
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity((n + 1) * d);
    let mut increments = record_increments.then(|| Vec::with_capacity(n * d));
    let mut x = x0.to_vec();
    times.push(0.0);
    states.extend_from_slice(&x);
    for k in 0..n {
        let t0 = grid_time(k, n, cfg.step, cfg.horizon);
        let t1 = grid_time(k + 1, n, cfg.step, cfg.horizon);
        stepper.step(&mut x, t1 - t0, t0, &mut rng)?;
        if let Some(w) = increments.as_mut() {
            w.extend_from_slice(&stepper.dw);
        }
        times.push(t1);
        states.extend_from_slice(&x);
    }
    let provenance = Provenance { seed: cfg.seed, substream: cfg.substream, lane: lane.0, index };
    Ok(Path { dim: d, times, states, increments, provenance })
}

/// Samples of a transition kernel, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    pub seed: u64,
    pub substream: u64,
    pub lane: u64,
}

impl EmpiricalMeasure {
    pub fn from_points(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 {
            return invalid("point buffer length must be a multiple of the dimension");
        }
        Ok(Self { dim, points, seed: 0, substream: 0, lane: 0 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// All samples of coordinate `axis`.
    pub fn coordinate(&self, axis: usize) -> Vec<f64> {
        self.points().map(|p| p[axis]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.points() {
            for (a, v) in m.iter_mut().zip(p) {
                *a += v;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

/// `n` independent draws of `X_T` started at `x0`, `T = horizon`.
pub fn sample_transition(
    model: &SdeModel,
    x0: &[f64],
    horizon: f64,
    n: usize,
    cfg: &IntegratorConfig,
) -> Result<EmpiricalMeasure> {
    sample_transition_lane(model, x0, horizon, n, cfg, Lane::PRIMARY)
}

pub(crate) fn sample_transition_lane(
    model: &SdeModel,
    x0: &[f64],
    horizon: f64,
    n: usize,
    cfg: &IntegratorConfig,
    lane: Lane,
) -> Result<EmpiricalMeasure> {
    let cfg = cfg.with_horizon(horizon);
    cfg.validate()?;
    check_start(model, x0)?;
    if n == 0 {
        return invalid("sample count must be at least 1");
    }
    model.check_bounds_at(x0)?;
    let ends: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = cfg.rng(lane, i);
            let mut stepper = Stepper::new(model);
            let mut x = x0.to_vec();
            advance(&mut stepper, &mut x, horizon, cfg.step, &mut rng)?;
            Ok(x)
        })
        .collect::<Result<_>>()?;
    model.check_bounds_at(&ends[0])?;
    Ok(EmpiricalMeasure {
        dim: model.dim(),
        points: ends.concat(),
        seed: cfg.seed,
        substream: cfg.substream,
        lane: lane.0,
    })
}

/// Endpoint ensembles at several increasing times along the same paths.
pub fn sample_snapshots(
    model: &SdeModel,
    x0: &[f64],
    times: &[f64],
    n: usize,
    cfg: &IntegratorConfig,
) -> Result<Vec<EmpiricalMeasure>> {
    check_start(model, x0)?;
    if n == 0 {
        return invalid("sample count must be at least 1");
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("snapshot times must be nonnegative and strictly increasing");
    }
    let per_path: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = cfg.rng(Lane::PRIMARY, i);
            let mut stepper = Stepper::new(model);
            let mut x = x0.to_vec();
            let mut out = Vec::with_capacity(times.len() * x.len());
            let mut t = 0.0;
            for &target in times {
                if target > t {
                    advance(&mut stepper, &mut x, target - t, cfg.step, &mut rng)?;
                    t = target;
                }
                out.extend_from_slice(&x);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let d = model.dim();
    Ok((0..times.len())
        .map(|k| EmpiricalMeasure {
            dim: d,
            points: per_path.iter().flat_map(|p| p[k * d..(k + 1) * d].iter().copied()).collect(),
            seed: cfg.seed,
            substream: cfg.substream,
            lane: Lane::PRIMARY.0,
        })
        .collect())
}

/// First exit from the open ball `{|x| < radius}`, optionally capped in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    /// Exit time, or the time cap when `exited` is false.
    pub time: f64,
    pub state: Vec<f64>,
    pub exited: bool,
    pub radius: f64,
    pub time_cap: Option<f64>,
}

/// Documented overshoot tolerance `sup|sigma| * 3 sqrt(h) + sup|b| * h` of
/// grid-point exit detection. `None` when either bound is undeclared.
pub fn overshoot_tolerance(model: &SdeModel, h: f64) -> Option<f64> {
    let b = model.bounds();
    Some(b.diffusion? * 3.0 * h.sqrt() + b.drift? * h)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn simulate_exit(
    model: &SdeModel,
    x0: &[f64],
    radius: f64,
    time_cap: Option<f64>,
    cfg: &IntegratorConfig,
) -> Result<ExitRecord> {
    simulate_exit_indexed(model, x0, radius, time_cap, cfg, Lane::PRIMARY, 0)
}

pub(crate) fn validate_exit(model: &SdeModel, x0: &[f64], radius: f64, time_cap: Option<f64>) -> Result<()> {
    check_start(model, x0)?;
    if !(radius.is_finite() && radius > 0.0) {
        return invalid(format!("radius must be positive, got {radius}"));
    }
    if norm(x0) >= radius {
        return invalid(format!("start point {x0:?} is not inside the ball of radius {radius}"));
    }
    if let Some(cap) = time_cap {
        if !(cap.is_finite() && cap > 0.0) {
            return invalid(format!("time cap must be positive, got {cap}"));
        }
    }
    Ok(())
}

pub fn simulate_exit_indexed(
    model: &SdeModel,
    x0: &[f64],
    radius: f64,
    time_cap: Option<f64>,
    cfg: &IntegratorConfig,
    lane: Lane,
    index: u64,
) -> Result<ExitRecord> {
    if !(cfg.step.is_finite() && cfg.step > 0.0) {
        return invalid("step size must be positive");
    }
    validate_exit(model, x0, radius, time_cap)?;
    let mut rng = cfg.rng(lane, index);
    let mut stepper = Stepper::new(model);
    exit_loop(&mut stepper, x0, radius, time_cap, cfg.step, cfg.exit_budget, &mut rng)
}

pub(crate) fn exit_loop(
    stepper: &mut Stepper<'_>,
    x0: &[f64],
    radius: f64,
    time_cap: Option<f64>,
    h: f64,
    budget: u64,
    rng: &mut StreamRng,
) -> Result<ExitRecord> {
    let mut x = x0.to_vec();
    let r2 = radius * radius;
    let capped_steps = time_cap.map(|cap| steps_for(cap, h));
    let mut k: usize = 0;
    loop {
        let (t0, t1) = match (time_cap, capped_steps) {
            (Some(cap), Some(n)) => {
                if k >= n {
                    return Ok(ExitRecord { time: cap, state: x, exited: false, radius, time_cap });
                }
                (grid_time(k, n, h, cap), grid_time(k + 1, n, h, cap))
            }
            _ => {
                if k as u64 >= budget {
                    return Err(Error::ExitBudgetExceeded { radius, steps: budget });
                }
                (k as f64 * h, (k + 1) as f64 * h)
            }
        };
        stepper.step(&mut x, t1 - t0, t0, rng)?;
        k += 1;
        if x.iter().map(|v| v * v).sum::<f64>() >= r2 {
            return Ok(ExitRecord { time: t1, state: x, exited: true, radius, time_cap });
        }
    }
}

/// `n` exit records, record `i` on stream `(cfg, lane, i)`.
pub fn exit_ensemble(
    model: &SdeModel,
    x0: &[f64],
    radius: f64,
    time_cap: Option<f64>,
    n: usize,
    cfg: &IntegratorConfig,
    lane: Lane,
) -> Result<Vec<ExitRecord>> {
    validate_exit(model, x0, radius, time_cap)?;
    if !(cfg.step.is_finite() && cfg.step > 0.0) {
        return invalid("step size must be positive");
    }
    model.check_bounds_at(x0)?;
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = cfg.rng(lane, i);
            let mut stepper = Stepper::new(model);
            exit_loop(&mut stepper, x0, radius, time_cap, cfg.step, cfg.exit_budget, &mut rng)
        })
        .collect()
}
