//! Empirical Harnack ratios from exit distributions.
//!
//! Parabolic case: the cylinder `{|x| < 1} x (0, 1)` with exit time
//! `tau = inf{t : |X_t| >= 1}` (and `tau = 1` if the path never leaves). Its
//! parabolic boundary `Gamma_eps` splits into lateral cells
//! `{|x| = 1, eps <= t <= 1}` (time x angle) and top cells `{|x| <= 1, t = 1}`
//! (radius x angle). A process started at time 0 that exits before `eps`
//! is uncaptured. A process started at time `eps` runs for `1 - eps`.
//!
//! Elliptic case: exit places on the sphere `|x| = R`, in equal angular
//! cells.
//!
//! Ratios are only formed on cells where both masses reach the noise floor
//! `5 / n`; everything else is excluded and counted.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::binning::{Binning, Region};
use crate::error::{invalid, Error, Result};
use crate::md::{estimate_md, overlap_table, MdQuery, MdReport};
use crate::rng::Lane;
use crate::sde::{exit_ensemble, sample_transition_lane, ExitRecord, IntegratorConfig, SdeModel};
use crate::stats::binomial_se;

/// Minimum count (per `n` samples) for a cell to enter a ratio.
pub const NOISE_FLOOR_COUNT: f64 = 5.0;

const GRID_SLACK: f64 = 1e-12;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_dim(dim: usize, what: &'static str) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension { dim, what })
    }
}

/// Angular cell of a nonzero point: sign in d = 1, equal arcs in d = 2.
fn angle_cell(x: &[f64], bins: usize) -> usize {
    if x.len() == 1 {
        return usize::from(x[0] >= 0.0);
    }
    let mut theta = x[1].atan2(x[0]);
    if theta < 0.0 {
        theta += 2.0 * PI;
    }
    ((theta / (2.0 * PI) * bins as f64) as usize).min(bins - 1)
}

fn angle_label(dim: usize, bins: usize, a: usize) -> String {
    if dim == 1 {
        return if a == 0 { "x<0".into() } else { "x>0".into() };
    }
    let w = 360.0 / bins as f64;
    format!("angle [{:.1},{:.1}) deg", a as f64 * w, (a + 1) as f64 * w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartTime {
    Zero,
    Epsilon,
}

/// Partition of `Gamma_eps`. In d = 1 there are always two angular cells
/// (the two sides).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderCells {
    pub dim: usize,
    pub epsilon: f64,
    pub time_bins: usize,
    pub angle_bins: usize,
    pub radial_bins: usize,
}

impl CylinderCells {
    pub fn new(dim: usize, epsilon: f64, time_bins: usize, angle_bins: usize, radial_bins: usize) -> Result<Self> {
        check_dim(dim, "parabolic boundary cells")?;
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return invalid(format!("epsilon must lie in (0, 1), got {epsilon}"));
        }
        if time_bins == 0 || radial_bins == 0 || angle_bins == 0 {
            return invalid("cell counts must be positive");
        }
        let angle_bins = if dim == 1 { 2 } else { angle_bins };
        Ok(Self { dim, epsilon, time_bins, angle_bins, radial_bins })
    }

    pub fn lateral_count(&self) -> usize {
        self.time_bins * self.angle_bins
    }

    pub fn cell_count(&self) -> usize {
        self.lateral_count() + self.radial_bins * self.angle_bins
    }

    pub fn is_lateral(&self, cell: usize) -> bool {
        cell < self.lateral_count()
    }

    /// Lateral cell of an exit at absolute time `t >= eps`.
    pub fn lateral_cell(&self, t: f64, x: &[f64]) -> usize {
        let u = (t - self.epsilon) / (1.0 - self.epsilon);
        let tb = ((u * self.time_bins as f64).max(0.0) as usize).min(self.time_bins - 1);
        tb * self.angle_bins + angle_cell(x, self.angle_bins)
    }

    /// Top cell of a state at `t = 1`; radial cells have equal volume.
    pub fn top_cell(&self, x: &[f64]) -> usize {
        let r = norm(x).min(1.0);
        let u = if self.dim == 1 { r } else { r * r };
        let rb = ((u * self.radial_bins as f64) as usize).min(self.radial_bins - 1);
        self.lateral_count() + rb * self.angle_bins + angle_cell(x, self.angle_bins)
    }

    pub fn label(&self, cell: usize) -> String {
        let a = cell % self.angle_bins;
        let ang = angle_label(self.dim, self.angle_bins, a);
        if self.is_lateral(cell) {
            let tb = cell / self.angle_bins;
            let w = (1.0 - self.epsilon) / self.time_bins as f64;
            let t0 = self.epsilon + tb as f64 * w;
            format!("lateral t=[{:.3},{:.3}] {ang}", t0, t0 + w)
        } else {
            let rb = (cell - self.lateral_count()) / self.angle_bins;
            let k = self.radial_bins as f64;
            let (lo, hi) = if self.dim == 1 {
                (rb as f64 / k, (rb + 1) as f64 / k)
            } else {
                ((rb as f64 / k).sqrt(), ((rb + 1) as f64 / k).sqrt())
            };
            format!("top |x|=[{lo:.3},{hi:.3}] {ang}")
        }
    }
}

/// Equal angular cells on the sphere `|x| = R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereCells {
    pub dim: usize,
    pub radius: f64,
    pub angle_bins: usize,
}

impl SphereCells {
    pub fn new(dim: usize, radius: f64, angle_bins: usize) -> Result<Self> {
        check_dim(dim, "sphere cells")?;
        if !(radius.is_finite() && radius > 0.0) {
            return invalid("radius must be positive");
        }
        if angle_bins == 0 {
            return invalid("angle_bins must be positive");
        }
        let angle_bins = if dim == 1 { 2 } else { angle_bins };
        Ok(Self { dim, radius, angle_bins })
    }

    pub fn cell_count(&self) -> usize {
        self.angle_bins
    }

    pub fn cell_of(&self, x: &[f64]) -> usize {
        angle_cell(x, self.angle_bins)
    }

    pub fn label(&self, cell: usize) -> String {
        angle_label(self.dim, self.angle_bins, cell)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCells {
    Cylinder(CylinderCells),
    Sphere(SphereCells),
}

impl BoundaryCells {
    pub fn cell_count(&self) -> usize {
        match self {
            BoundaryCells::Cylinder(c) => c.cell_count(),
            BoundaryCells::Sphere(c) => c.cell_count(),
        }
    }

    pub fn label(&self, cell: usize) -> String {
        match self {
            BoundaryCells::Cylinder(c) => c.label(cell),
            BoundaryCells::Sphere(c) => c.label(cell),
        }
    }
}

/// Empirical boundary law: counts per cell out of `n` paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMeasure {
    pub cells: BoundaryCells,
    pub counts: Vec<u64>,
    pub n: usize,
    pub uncaptured: u64,
}

impl BoundaryMeasure {
    pub fn masses(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.n as f64).collect()
    }

    pub fn mass(&self, cell: usize) -> f64 {
        self.counts[cell] as f64 / self.n as f64
    }

    pub fn cell_se(&self, cell: usize) -> f64 {
        binomial_se(self.mass(cell), self.n)
    }

    pub fn captured(&self) -> f64 {
        self.counts.iter().sum::<u64>() as f64 / self.n as f64
    }

    pub fn captured_se(&self) -> f64 {
        binomial_se(self.captured(), self.n)
    }

    /// Lateral and top masses (cylinder cells only).
    pub fn lateral_top_split(&self) -> Option<(f64, f64)> {
        let BoundaryCells::Cylinder(c) = &self.cells else { return None };
        let lateral: u64 = self.counts[..c.lateral_count()].iter().sum();
        let top: u64 = self.counts[c.lateral_count()..].iter().sum();
        Some((lateral as f64 / self.n as f64, top as f64 / self.n as f64))
    }
}

fn check_grid(grid: &[Vec<f64>], dim: usize, radius: f64, name: &str) -> Result<()> {
    if grid.is_empty() {
        return invalid(format!("{name} is empty"));
    }
    for p in grid {
        if p.len() != dim {
            return invalid(format!("{name} point {p:?} has the wrong dimension"));
        }
        if norm(p) > radius + GRID_SLACK {
            return invalid(format!("{name} point {p:?} lies outside |x| <= {radius}"));
        }
    }
    Ok(())
}

/// Empirical law of the exit place `(tau, X_tau)` on `Gamma_eps`.
pub fn sample_parabolic_boundary(
    model: &SdeModel,
    x0: &[f64],
    start: StartTime,
    cells: &CylinderCells,
    n: usize,
    cfg: &IntegratorConfig,
) -> Result<BoundaryMeasure> {
    if model.dim() != cells.dim {
        return invalid("cell dimension does not match the model");
    }
    check_grid(std::slice::from_ref(&x0.to_vec()), cells.dim, 0.25, "start point")?;
    if n == 0 {
        return invalid("sample count must be at least 1");
    }
    let eps = cells.epsilon;
    let (lane, cap, offset) = match start {
        StartTime::Zero => (Lane::PRIMARY, 1.0, 0.0),
        StartTime::Epsilon => (Lane::DELAYED, 1.0 - eps, eps),
    };
    let records = exit_ensemble(model, x0, 1.0, Some(cap), n, cfg, lane)?;
    let mut counts = vec![0u64; cells.cell_count()];
    let mut uncaptured = 0;
    for r in &records {
        if r.exited {
            let t = offset + r.time;
            if t < eps {
                uncaptured += 1;
            } else {
                counts[cells.lateral_cell(t, &r.state)] += 1;
            }
        } else {
            counts[cells.top_cell(&r.state)] += 1;
        }
    }
    Ok(BoundaryMeasure { cells: BoundaryCells::Cylinder(cells.clone()), counts, n, uncaptured })
}

fn sphere_measure(cells: &SphereCells, records: &[ExitRecord], horizon: Option<f64>) -> BoundaryMeasure {
    let mut counts = vec![0u64; cells.cell_count()];
    let mut uncaptured = 0;
    for r in records {
        let inside_horizon = horizon.is_none_or(|t| r.time <= t * (1.0 + 1e-12));
        if r.exited && inside_horizon {
            counts[cells.cell_of(&r.state)] += 1;
        } else {
            uncaptured += 1;
        }
    }
    BoundaryMeasure { cells: BoundaryCells::Sphere(cells.clone()), counts, n: records.len(), uncaptured }
}

/// Empirical exit-place law on `|x| = R`, optionally capped at `time_cap`.
pub fn sample_exit_measure(
    model: &SdeModel,
    x0: &[f64],
    cells: &SphereCells,
    time_cap: Option<f64>,
    n: usize,
    cfg: &IntegratorConfig,
) -> Result<BoundaryMeasure> {
    if model.dim() != cells.dim {
        return invalid("cell dimension does not match the model");
    }
    let records = exit_ensemble(model, x0, cells.radius, time_cap, n, cfg, Lane::PRIMARY)?;
    Ok(sphere_measure(cells, &records, None))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub cell: usize,
    pub label: String,
    /// Largest adequate ratio over all pairs; `None` if the cell was
    /// excluded for every pair.
    pub ratio: Option<f64>,
    pub pair: Option<[usize; 2]>,
    pub numerator: f64,
    pub denominator: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    /// Index into the numerator grid.
    pub i: usize,
    /// Index into the denominator grid.
    pub j: usize,
    pub max_ratio: Option<f64>,
    /// `sum min(a, b)` over all cells.
    pub md_integral: f64,
    pub md_stderr: f64,
    /// `sum min(a, b)` over adequately sampled cells.
    pub md_adequate: f64,
    /// Numerator mass on adequately sampled cells.
    pub numerator_adequate: f64,
    pub excluded_cells: usize,
    pub excluded_numerator_mass: f64,
    pub excluded_denominator_mass: f64,
    /// `md_adequate >= numerator_adequate / N`.
    pub inequality_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackConstants {
    pub epsilon: Option<f64>,
    pub radius: f64,
    pub step: f64,
    pub numerator_grid: Vec<Vec<f64>>,
    pub denominator_grid: Vec<Vec<f64>>,
    pub cells: BoundaryCells,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub kind: String,
    pub n: usize,
    pub noise_floor: f64,
    /// `max(1, n_hat_raw)`.
    pub n_hat: f64,
    /// Largest adequate ratio (0 when no cell is adequate).
    pub n_hat_raw: f64,
    pub rows: Vec<RatioRow>,
    pub pairs: Vec<PairSummary>,
    /// Captured mass per numerator grid point.
    pub captured: Vec<f64>,
    pub captured_stderr: Vec<f64>,
    /// Smallest captured mass over the numerator grid.
    pub q_hat: f64,
    /// Smallest MD integral over pairs.
    pub md_integral: f64,
    pub md_integral_stderr: f64,
    pub md_argmin: [usize; 2],
    /// Smallest numerator mass on adequate cells over pairs.
    pub q_hat_adequate: f64,
    pub inequality_holds: bool,
    /// Proof-internal `kappa = inf P_z(tau < 1)` over the numerator grid.
    pub kappa_hat: Option<f64>,
    pub constants: HarnackConstants,
    pub diagnostics: Vec<String>,
}

impl HarnackReport {
    pub fn md_positive_at(&self, sigmas: f64) -> bool {
        self.md_integral - sigmas * self.md_integral_stderr > 0.0
    }

    /// `q_hat_adequate / n_hat`.
    pub fn bound(&self) -> f64 {
        self.q_hat_adequate / self.n_hat
    }
}

struct RatioAnalysis {
    rows: Vec<RatioRow>,
    pairs: Vec<PairSummary>,
    n_hat_raw: f64,
    n_hat: f64,
}

fn ratio_analysis(num: &[BoundaryMeasure], den: &[BoundaryMeasure], floor: f64) -> RatioAnalysis {
    let cells = &num[0].cells;
    let k = cells.cell_count();
    let mut rows: Vec<RatioRow> = (0..k)
        .map(|c| RatioRow { cell: c, label: cells.label(c), ratio: None, pair: None, numerator: 0.0, denominator: 0.0 })
        .collect();
    let mut pairs = Vec::new();
    for (i, a) in num.iter().enumerate() {
        for (j, b) in den.iter().enumerate() {
            let mut s = PairSummary {
                i,
                j,
                max_ratio: None,
                md_integral: 0.0,
                md_stderr: 0.0,
                md_adequate: 0.0,
                numerator_adequate: 0.0,
                excluded_cells: 0,
                excluded_numerator_mass: 0.0,
                excluded_denominator_mass: 0.0,
                inequality_holds: true,
            };
            for (c, row) in rows.iter_mut().enumerate() {
                let (ma, mb) = (a.mass(c), b.mass(c));
                let m = ma.min(mb);
                s.md_integral += m;
                s.md_stderr += a.cell_se(c).max(b.cell_se(c));
                if m < floor {
                    s.excluded_cells += 1;
                    s.excluded_numerator_mass += ma;
                    s.excluded_denominator_mass += mb;
                    continue;
                }
                s.md_adequate += m;
                s.numerator_adequate += ma;
                let r = ma / mb;
                if s.max_ratio.is_none_or(|v| r > v) {
                    s.max_ratio = Some(r);
                }
                if row.ratio.is_none_or(|v| r > v) {
                    row.ratio = Some(r);
                    row.pair = Some([i, j]);
                    row.numerator = ma;
                    row.denominator = mb;
                }
            }
            pairs.push(s);
        }
    }
    let n_hat_raw = pairs.iter().filter_map(|p| p.max_ratio).fold(0.0, f64::max);
    let n_hat = n_hat_raw.max(1.0);
    for p in &mut pairs {
        p.inequality_holds = p.md_adequate + 1e-12 >= p.numerator_adequate / n_hat;
    }
    RatioAnalysis { rows, pairs, n_hat_raw, n_hat }
}

fn assemble(
    kind: &str,
    num: &[BoundaryMeasure],
    den: &[BoundaryMeasure],
    n: usize,
    constants: HarnackConstants,
    kappa_hat: Option<f64>,
) -> HarnackReport {
    let floor = NOISE_FLOOR_COUNT / n as f64;
    let a = ratio_analysis(num, den, floor);
    let captured: Vec<f64> = num.iter().map(|m| m.captured()).collect();
    let captured_stderr: Vec<f64> = num.iter().map(|m| m.captured_se()).collect();
    let q_hat = captured.iter().copied().fold(f64::INFINITY, f64::min);
    let best = a
        .pairs
        .iter()
        .min_by(|x, y| x.md_integral.total_cmp(&y.md_integral))
        .expect("grids are nonempty");
    let q_hat_adequate = a.pairs.iter().map(|p| p.numerator_adequate).fold(f64::INFINITY, f64::min);
    let mut diagnostics = Vec::new();
    let excluded = a.rows.iter().filter(|r| r.ratio.is_none()).count();
    if excluded > 0 {
        diagnostics.push(format!("{excluded} cells below the noise floor {floor:.2e} for every pair"));
    }
    if a.n_hat_raw == 0.0 {
        diagnostics.push("no adequately sampled cell; N_hat defaults to 1".into());
    }
    for p in a.pairs.iter().filter(|p| !p.inequality_holds) {
        diagnostics.push(format!(
            "resolution: pair ({}, {}) has adequate MD {:.4} < q/N = {:.4}",
            p.i,
            p.j,
            p.md_adequate,
            p.numerator_adequate / a.n_hat
        ));
    }
    HarnackReport {
        kind: kind.into(),
        n,
        noise_floor: floor,
        n_hat: a.n_hat,
        n_hat_raw: a.n_hat_raw,
        inequality_holds: a.pairs.iter().all(|p| p.inequality_holds),
        md_integral: best.md_integral,
        md_integral_stderr: best.md_stderr,
        md_argmin: [best.i, best.j],
        rows: a.rows,
        pairs: a.pairs,
        captured,
        captured_stderr,
        q_hat,
        q_hat_adequate,
        kappa_hat,
        constants,
        diagnostics,
    }
}

/// Parabolic Harnack ratio `mu^{x1} / mu^{eps, x2}` on `Gamma_eps`, with the
/// MD integral `sum min(mu^{eps, x2}, mu^{x1})` and the data-level check
/// `MD >= q / N` on adequately sampled cells.
pub fn parabolic_harnack_check(
    model: &SdeModel,
    x1_grid: &[Vec<f64>],
    x2_grid: &[Vec<f64>],
    cells: &CylinderCells,
    n: usize,
    cfg: &IntegratorConfig,
) -> Result<HarnackReport> {
    model.require_nondegenerate()?;
    check_grid(x1_grid, model.dim(), 0.25, "x1 grid")?;
    check_grid(x2_grid, model.dim(), 0.25, "x2 grid")?;
    let num: Vec<BoundaryMeasure> = x1_grid
        .iter()
        .map(|x| sample_parabolic_boundary(model, x, StartTime::Zero, cells, n, cfg))
        .collect::<Result<_>>()?;
    let den: Vec<BoundaryMeasure> = x2_grid
        .iter()
        .map(|x| sample_parabolic_boundary(model, x, StartTime::Epsilon, cells, n, cfg))
        .collect::<Result<_>>()?;
    // P(tau < 1) from time 0: uncaptured plus lateral mass.
    let kappa_hat = num
        .iter()
        .map(|m| m.lateral_top_split().map(|(l, _)| l).unwrap_or(0.0) + m.uncaptured as f64 / n as f64)
        .fold(f64::INFINITY, f64::min);
    let constants = HarnackConstants {
        epsilon: Some(cells.epsilon),
        radius: 1.0,
        step: cfg.step,
        numerator_grid: x1_grid.to_vec(),
        denominator_grid: x2_grid.to_vec(),
        cells: BoundaryCells::Cylinder(cells.clone()),
    };
    Ok(assemble("parabolic", &num, &den, n, constants, Some(kappa_hat)))
}

/// Elliptic Harnack ratio `sup_x nu^x_R(A) / inf_x nu^x_R(A)` over the grid.
pub fn elliptic_harnack_check(
    model: &SdeModel,
    radius: f64,
    grid: &[Vec<f64>],
    angle_bins: usize,
    n: usize,
    cfg: &IntegratorConfig,
) -> Result<HarnackReport> {
    if !(radius > 0.0 && radius <= 1.0) {
        return invalid(format!("radius must lie in (0, 1], got {radius}"));
    }
    model.require_nondegenerate()?;
    check_grid(grid, model.dim(), radius / 8.0, "grid")?;
    let cells = SphereCells::new(model.dim(), radius, angle_bins)?;
    let measures: Vec<BoundaryMeasure> = grid
        .iter()
        .map(|x| sample_exit_measure(model, x, &cells, None, n, cfg))
        .collect::<Result<_>>()?;
    let constants = HarnackConstants {
        epsilon: None,
        radius,
        step: cfg.step,
        numerator_grid: grid.to_vec(),
        denominator_grid: grid.to_vec(),
        cells: BoundaryCells::Sphere(cells),
    };
    Ok(assemble("elliptic", &measures, &measures, n, constants, None))
}

/// Corollary-style MD for the time-1 kernel with the proof constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorollaryReport {
    /// Time-1 kernel overlaps over the covering box.
    pub overlap: MdReport,
    pub harnack: HarnackReport,
    pub q_hat: f64,
    pub q_hat_stderr: f64,
    /// `P_x(|X_eps| <= 1/4)` per grid point.
    pub p_small: Vec<f64>,
    pub p_small_min: f64,
    pub p_small_stderr: f64,
    /// `q_hat * p_small_min`.
    pub q_prime: f64,
    pub q_prime_stderr: f64,
    pub n_hat: f64,
    /// `overlap.kappa >= q_prime / n_hat`.
    pub inequality_holds: bool,
}

/// Time-1 MD over `R^d` (binned on `binning`) for a grid in `B_{1/8}`,
/// with `q' = q * min_x P_x(|X_eps| <= 1/4)` and `N` from the parabolic
/// check on the same grid.
pub fn md_via_parabolic_corollary(
    model: &SdeModel,
    grid: &[Vec<f64>],
    cells: &CylinderCells,
    n: usize,
    binning: &Binning,
    cfg: &IntegratorConfig,
) -> Result<CorollaryReport> {
    check_grid(grid, model.dim(), 0.125, "grid")?;
    let harnack = parabolic_harnack_check(model, grid, grid, cells, n, cfg)?;
    let query = MdQuery {
        start_region: Region::centered_ball(model.dim(), 0.125),
        start_points: grid.to_vec(),
        target: Region::Whole,
        binning: binning.clone(),
        horizon: 1.0,
    };
    let overlap = estimate_md(model, &query, n, cfg)?;
    let mut p_small = Vec::with_capacity(grid.len());
    for x in grid {
        let s = sample_transition_lane(model, x, cells.epsilon, n, cfg, Lane::AUXILIARY)?;
        p_small.push(s.points().filter(|p| norm(p) <= 0.25).count() as f64 / n as f64);
    }
    let p_small_min = p_small.iter().copied().fold(f64::INFINITY, f64::min);
    let p_small_stderr = binomial_se(p_small_min, n);
    let q_idx = harnack
        .captured
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let q_hat = harnack.q_hat;
    let q_hat_stderr = harnack.captured_stderr[q_idx];
    let q_prime = q_hat * p_small_min;
    let q_prime_stderr = ((p_small_min * q_hat_stderr).powi(2) + (q_hat * p_small_stderr).powi(2)).sqrt();
    let n_hat = harnack.n_hat;
    Ok(CorollaryReport {
        inequality_holds: overlap.kappa >= q_prime / n_hat,
        overlap,
        harnack,
        q_hat,
        q_hat_stderr,
        p_small,
        p_small_min,
        p_small_stderr,
        q_prime,
        q_prime_stderr,
        n_hat,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub horizon: f64,
    /// `min over pairs of sum min(nu^{x1}_{R,T}, nu^{x2}_{R,T})`.
    pub overlap: f64,
    pub overlap_stderr: f64,
    pub argmin: [usize; 2],
    /// `sup_x P(tau_R >= T)`.
    pub tail_sup: f64,
    pub tail_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticMdReport {
    pub radius: f64,
    pub grid: Vec<Vec<f64>>,
    pub cells: SphereCells,
    pub n: usize,
    pub ladder: Vec<LadderRung>,
    /// Pairwise overlap matrix at the largest horizon.
    pub matrix: Vec<Vec<f64>>,
    /// Reference law `nu^0_R` (uncapped exits from the center).
    pub reference: Vec<f64>,
    pub cells_without_reference: usize,
    pub monotone: bool,
    pub diagnostics: Vec<String>,
}

/// MD over exit places on `|x| = R` for a coupled ladder of horizons. All
/// rungs are read off one set of exit records capped at the largest
/// horizon, so overlaps are nondecreasing in `T` by construction.
pub fn md_via_elliptic(
    model: &SdeModel,
    radius: f64,
    ladder: &[f64],
    grid: &[Vec<f64>],
    angle_bins: usize,
    n: usize,
    cfg: &IntegratorConfig,
) -> Result<EllipticMdReport> {
    if !(radius > 0.0 && radius <= 1.0) {
        return invalid(format!("radius must lie in (0, 1], got {radius}"));
    }
    if ladder.is_empty() || ladder.iter().any(|t| !(t.is_finite() && *t > 0.0)) || ladder.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("horizon ladder must be positive and strictly increasing");
    }
    model.require_nondegenerate()?;
    check_grid(grid, model.dim(), radius, "grid")?;
    if let Some(p) = grid.iter().find(|p| norm(p) >= radius) {
        return invalid(format!("grid point {p:?} is not inside the open ball"));
    }
    let cells = SphereCells::new(model.dim(), radius, angle_bins)?;
    let t_max = *ladder.last().expect("nonempty");
    let records: Vec<Vec<ExitRecord>> = grid
        .iter()
        .map(|x| exit_ensemble(model, x, radius, Some(t_max), n, cfg, Lane::PRIMARY))
        .collect::<Result<_>>()?;
    let center = vec![0.0; model.dim()];
    let reference_records = exit_ensemble(model, &center, radius, None, n, cfg, Lane::AUXILIARY)?;
    let reference = sphere_measure(&cells, &reference_records, None);
    let mask: Vec<bool> = reference.counts.iter().map(|&c| c > 0).collect();
    let cells_without_reference = mask.iter().filter(|&&m| !m).count();
    let mut diagnostics = Vec::new();
    if cells_without_reference > 0 {
        diagnostics.push(format!("{cells_without_reference} cells carry no reference mass and are dropped"));
    }
    let mut rungs = Vec::with_capacity(ladder.len());
    let mut matrix = Vec::new();
    for &t in ladder {
        let measures: Vec<BoundaryMeasure> = records.iter().map(|r| sphere_measure(&cells, r, Some(t))).collect();
        let masses: Vec<Vec<f64>> = measures.iter().map(|m| m.masses()).collect();
        let ses: Vec<Vec<f64>> = measures.iter().map(|m| (0..cells.cell_count()).map(|c| m.cell_se(c)).collect()).collect();
        let table = overlap_table(&masses, Some(&ses), &mask);
        let tails: Vec<f64> = measures.iter().map(|m| 1.0 - m.captured()).collect();
        let tail_sup = tails.iter().copied().fold(0.0, f64::max);
        if tail_sup > 0.5 {
            diagnostics.push(format!("T = {t}: uncaptured mass {tail_sup:.3} dominates the overlap"));
        }
        let [a, b] = table.argmin;
        rungs.push(LadderRung {
            horizon: t,
            overlap: table.kappa,
            overlap_stderr: table.stderr[a][b],
            argmin: table.argmin,
            tail_sup,
            tail_stderr: binomial_se(tail_sup, n),
        });
        matrix = table.matrix;
    }
    let monotone = rungs.windows(2).all(|w| w[1].overlap >= w[0].overlap);
    Ok(EllipticMdReport {
        radius,
        grid: grid.to_vec(),
        cells,
        n,
        ladder: rungs,
        matrix,
        reference: reference.masses(),
        cells_without_reference,
        monotone,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::registry::{brownian, zero};

    #[test]
    fn cylinder_cell_indexing() {
        let c = CylinderCells::new(2, 0.1, 3, 4, 2).unwrap();
        assert_eq!(c.cell_count(), 3 * 4 + 2 * 4);
        assert_eq!(c.lateral_cell(0.1, &[1.0, 0.0]), 0);
        assert_eq!(c.lateral_cell(1.0, &[0.0, -1.0]), 2 * 4 + 3);
        assert_eq!(c.top_cell(&[0.0, 0.0]), 12);
        assert_eq!(c.top_cell(&[-0.9, 0.1]), 12 + 4 + 1);
        let d1 = CylinderCells::new(1, 0.2, 2, 17, 3).unwrap();
        assert_eq!(d1.angle_bins, 2);
        assert_eq!(d1.top_cell(&[-0.5]), 4 + 2 * 1);
        assert!(CylinderCells::new(3, 0.1, 1, 1, 1).is_err());
        assert!(CylinderCells::new(2, 1.0, 1, 1, 1).is_err());
    }

    #[test]
    fn zero_dynamics_lands_on_top_cell() {
        let m = zero(2).unwrap();
        let c = CylinderCells::new(2, 0.1, 2, 8, 2).unwrap();
        let cfg = IntegratorConfig::new(0.05, 1.0, 1).unwrap();
        let x0 = [0.2, 0.05];
        for start in [StartTime::Zero, StartTime::Epsilon] {
            let b = sample_parabolic_boundary(&m, &x0, start, &c, 50, &cfg).unwrap();
            assert_eq!(b.counts[c.top_cell(&x0)], 50);
            assert_eq!(b.captured(), 1.0);
        }
    }

    #[test]
    fn start_points_outside_quarter_ball_are_rejected() {
        let m = brownian(1, 1.0).unwrap();
        let c = CylinderCells::new(1, 0.1, 2, 2, 2).unwrap();
        let cfg = IntegratorConfig::new(0.01, 1.0, 1).unwrap();
        assert!(sample_parabolic_boundary(&m, &[0.3], StartTime::Zero, &c, 10, &cfg).is_err());
    }

    #[test]
    fn single_point_elliptic_grid_has_unit_ratio() {
        let m = brownian(2, 1.0).unwrap();
        let cfg = IntegratorConfig::new(0.01, 1.0, 2).unwrap();
        let r = elliptic_harnack_check(&m, 1.0, &[vec![0.0, 0.0]], 8, 2000, &cfg).unwrap();
        assert_eq!(r.n_hat, 1.0);
        assert!(r.inequality_holds);
    }

    #[test]
    fn elliptic_ratio_table_is_invariant_under_relabeling() {
        let m = brownian(2, 1.0).unwrap();
        let cfg = IntegratorConfig::new(0.01, 1.0, 3).unwrap();
        let g = vec![vec![0.0, 0.0], vec![0.1, 0.0]];
        let rev: Vec<Vec<f64>> = g.iter().rev().cloned().collect();
        let a = elliptic_harnack_check(&m, 1.0, &g, 8, 3000, &cfg).unwrap();
        let b = elliptic_harnack_check(&m, 1.0, &rev, 8, 3000, &cfg).unwrap();
        assert_eq!(a.n_hat, b.n_hat);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.ratio, rb.ratio);
        }
    }

    #[test]
    fn self_overlap_equals_captured_mass() {
        let m = brownian(2, 1.0).unwrap();
        let cfg = IntegratorConfig::new(0.01, 1.0, 5).unwrap();
        let r = md_via_elliptic(&m, 1.0, &[0.1, 0.3], &[vec![0.0, 0.0]], 12, 4000, &cfg).unwrap();
        for rung in &r.ladder {
            assert!((rung.overlap - (1.0 - rung.tail_sup)).abs() < 1e-12);
        }
        assert!(r.monotone);
    }

    #[test]
    fn ratio_analysis_bounds_md_on_adequate_cells() {
        let cells = BoundaryCells::Sphere(SphereCells::new(2, 1.0, 4).unwrap());
        let m = |counts: Vec<u64>| BoundaryMeasure { cells: cells.clone(), counts, n: 100, uncaptured: 0 };
        let a = m(vec![40, 30, 20, 10]);
        let b = m(vec![10, 20, 30, 40]);
        let r = ratio_analysis(&[a], &[b], 0.05);
        assert_eq!(r.n_hat, 4.0);
        let p = &r.pairs[0];
        assert!((p.md_integral - 0.6).abs() < 1e-12);
        assert!(p.inequality_holds);
        assert_eq!(p.excluded_cells, 0);
    }

    #[test]
    fn noise_floor_excludes_thin_cells() {
        let cells = BoundaryCells::Sphere(SphereCells::new(2, 1.0, 2).unwrap());
        let m = |counts: Vec<u64>| BoundaryMeasure { cells: cells.clone(), counts, n: 100, uncaptured: 0 };
        let r = ratio_analysis(&[m(vec![97, 3])], &[m(vec![50, 50])], 0.05);
        assert_eq!(r.pairs[0].excluded_cells, 1);
        assert!((r.n_hat - 1.94).abs() < 1e-12);
        assert_eq!(r.rows[1].ratio, None);
    }
}
