//! Markov-Dobrushin coefficients of simulated transition kernels.
//!
//! For start points `x0, x1` and a target region `D'`, the coefficient is the
//! overlap of the two time-`T` laws on `D'`. All start points share one
//! binning of `D'`, so the overlap is the finite sum
//! `sum_{cells in D'} min(mu^{x0}(cell), mu^{x1}(cell))`, which is the
//! dominated form with Lebesgue measure on the cells as dominating measure.
//! The infimum over the start region is taken over a finite start grid and
//! the minimizing pair is reported.
//!
//! Histogram overlaps are biased low: `E min(a, b) <= min(E a, E b)`.
//! Start points share random numbers to keep that bias small.

use serde::{Deserialize, Serialize};

use crate::binning::{Binning, KernelHistogram, Region};
use crate::coupling::TV_CONVENTION;
use crate::error::{invalid, Error, Result};
use crate::oracle::FiniteChain;
use crate::rng::Lane;
use crate::sde::{sample_transition_lane, IntegratorConfig, SdeModel};

/// Minimum samples per histogram cell before a run is flagged undersampled.
pub const SAMPLES_PER_BIN_FLOOR: usize = 20;

pub const MD_CONVENTION: &str = "kappa = min over start pairs of sum over target cells of min(mu^x0, mu^x1); dominated form with Lebesgue reference on the shared binning; TV in [0,1] equals 1 - overlap";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdQuery {
    /// Region `D` the start grid is drawn from.
    pub start_region: Region,
    pub start_points: Vec<Vec<f64>>,
    /// Target region `D'`.
    pub target: Region,
    /// Binning covering `D'`; cells whose centers lie in `D'` count.
    pub binning: Binning,
    pub horizon: f64,
}

impl MdQuery {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.start_points.is_empty() {
            return invalid("start grid is empty");
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return invalid("horizon must be positive");
        }
        if self.binning.dim() != dim {
            return invalid(format!("binning has dimension {}, model has {dim}", self.binning.dim()));
        }
        for p in &self.start_points {
            if p.len() != dim {
                return invalid(format!("start point {p:?} has the wrong dimension"));
            }
            if !self.start_region.contains(p) {
                return invalid(format!("start point {p:?} is outside the start region"));
            }
        }
        Ok(())
    }

    pub fn target_mask(&self) -> Vec<bool> {
        self.target.mask(&self.binning)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdPair {
    pub i: usize,
    pub j: usize,
    pub x_i: Vec<f64>,
    pub x_j: Vec<f64>,
    pub kappa: f64,
    /// Conservative proxy: sum over cells of the larger cell standard error.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdReport {
    pub kappa: f64,
    pub kappa_stderr: f64,
    pub pairs: Vec<MdPair>,
    pub matrix: Vec<Vec<f64>>,
    pub argmin: [usize; 2],
    pub n: usize,
    pub bins: usize,
    pub horizon: f64,
    pub convention: String,
    pub diagnostics: Vec<String>,
}

impl MdReport {
    /// `kappa - sigmas * stderr > 0`.
    pub fn positive_at(&self, sigmas: f64) -> bool {
        self.kappa - sigmas * self.kappa_stderr > 0.0
    }
}

/// Histogram of `X_T` from `x0` on `binning`.
pub fn estimate_kernel_histogram(
    model: &SdeModel,
    x0: &[f64],
    horizon: f64,
    n: usize,
    binning: &Binning,
    cfg: &IntegratorConfig,
) -> Result<KernelHistogram> {
    if binning.dim() != model.dim() {
        return invalid("binning dimension does not match model");
    }
    let sample = sample_transition_lane(model, x0, horizon, n, cfg, Lane::PRIMARY)?;
    KernelHistogram::from_points(binning, sample.points(), None)
}

pub fn undersampled(n: usize, cells: usize) -> bool {
    n < cells * SAMPLES_PER_BIN_FLOOR
}

/// Pairwise overlaps of cell-mass vectors restricted to `mask`.
pub struct OverlapTable {
    pub matrix: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub argmin: [usize; 2],
    pub kappa: f64,
}

pub fn overlap_table(masses: &[Vec<f64>], cell_se: Option<&[Vec<f64>]>, mask: &[bool]) -> OverlapTable {
    let k = masses.len();
    let mut matrix = vec![vec![0.0; k]; k];
    let mut stderr = vec![vec![0.0; k]; k];
    let mut argmin = [0, 0];
    let mut kappa = f64::INFINITY;
    for i in 0..k {
        for j in i..k {
            let mut v = 0.0;
            let mut se = 0.0;
            for c in 0..mask.len() {
                if !mask[c] {
                    continue;
                }
                v += masses[i][c].min(masses[j][c]);
                if let Some(s) = cell_se {
                    se += s[i][c].max(s[j][c]);
                }
            }
            matrix[i][j] = v;
            matrix[j][i] = v;
            stderr[i][j] = se;
            stderr[j][i] = se;
            if v < kappa {
                kappa = v;
                argmin = [i, j];
            }
        }
    }
    OverlapTable { matrix, stderr, argmin, kappa: if k == 0 { 0.0 } else { kappa } }
}

/// MD report from precomputed histograms of one kernel family.
pub fn md_from_histograms(
    histograms: &[KernelHistogram],
    start_points: &[Vec<f64>],
    mask: &[bool],
    horizon: f64,
) -> Result<MdReport> {
    if histograms.is_empty() || histograms.len() != start_points.len() {
        return invalid("need one histogram per start point");
    }
    let cells = histograms[0].binning().cell_count();
    if histograms.iter().any(|h| h.binning() != histograms[0].binning()) || mask.len() != cells {
        return Err(Error::IncompatibleSupport("histograms must share one binning".into()));
    }
    let masses: Vec<Vec<f64>> = histograms.iter().map(|h| h.masses().to_vec()).collect();
    let ses: Vec<Vec<f64>> = histograms.iter().map(|h| (0..cells).map(|c| h.cell_se(c)).collect()).collect();
    let table = overlap_table(&masses, Some(&ses), mask);
    let n = histograms[0].samples();
    let mut diagnostics = Vec::new();
    if !mask.iter().any(|&m| m) {
        diagnostics.push("target region contains no cell of the binning; kappa = 0".to_string());
    }
    if n > 0 && undersampled(n, cells) {
        diagnostics.push(format!(
            "undersampled: n = {n} < {SAMPLES_PER_BIN_FLOOR} x {cells} cells"
        ));
    }
    let mut pairs = Vec::new();
    for i in 0..histograms.len() {
        for j in i..histograms.len() {
            pairs.push(MdPair {
                i,
                j,
                x_i: start_points[i].clone(),
                x_j: start_points[j].clone(),
                kappa: table.matrix[i][j],
                stderr: table.stderr[i][j],
            });
        }
    }
    let [a, b] = table.argmin;
    Ok(MdReport {
        kappa: table.kappa,
        kappa_stderr: table.stderr[a][b],
        pairs,
        matrix: table.matrix,
        argmin: table.argmin,
        n,
        bins: cells,
        horizon,
        convention: format!("{MD_CONVENTION}; {TV_CONVENTION}"),
        diagnostics,
    })
}

/// One histogram per start point, all on common random numbers.
pub fn kernel_family(
    model: &SdeModel,
    query: &MdQuery,
    n: usize,
    cfg: &IntegratorConfig,
) -> Result<Vec<KernelHistogram>> {
    query.validate(model.dim())?;
    query
        .start_points
        .iter()
        .map(|x| estimate_kernel_histogram(model, x, query.horizon, n, &query.binning, cfg))
        .collect()
}

/// Estimated `kappa(D, D'; T)` for a simulated model.
pub fn estimate_md(model: &SdeModel, query: &MdQuery, n: usize, cfg: &IntegratorConfig) -> Result<MdReport> {
    model.require_nondegenerate()?;
    let hists = kernel_family(model, query, n, cfg)?;
    md_from_histograms(&hists, &query.start_points, &query.target_mask(), query.horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinorizationReport {
    /// Candidate measure: masses per cell of the binning (zero off `D'`).
    pub nu: Vec<f64>,
    /// Largest `c` with `mu^x(cell) >= c nu(cell)` for all start points and cells.
    pub c: f64,
    pub horizon: f64,
    pub argmin_start: usize,
    pub argmin_cell: usize,
    pub diagnostics: Vec<String>,
}

/// Normalized Lebesgue measure on the covered cells.
pub fn uniform_on_mask(mask: &[bool]) -> Result<Vec<f64>> {
    let k = mask.iter().filter(|&&m| m).count();
    if k == 0 {
        return invalid("target region covers no cell");
    }
    Ok(mask.iter().map(|&m| if m { 1.0 / k as f64 } else { 0.0 }).collect())
}

pub fn minorization_from_histograms(
    histograms: &[KernelHistogram],
    mask: &[bool],
    nu: Option<&[f64]>,
    horizon: f64,
) -> Result<MinorizationReport> {
    if histograms.is_empty() {
        return invalid("need at least one histogram");
    }
    let nu = match nu {
        Some(v) => {
            if v.len() != mask.len() {
                return Err(Error::IncompatibleSupport("nu must give one mass per cell".into()));
            }
            if v.iter().any(|m| !(m.is_finite() && *m >= 0.0)) || (v.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return invalid("nu must be a probability vector");
            }
            if v.iter().zip(mask).any(|(m, &c)| *m > 0.0 && !c) {
                return invalid("nu must live on the target region");
            }
            v.to_vec()
        }
        None => uniform_on_mask(mask)?,
    };
    let mut c = f64::INFINITY;
    let (mut argmin_start, mut argmin_cell) = (0, 0);
    for (s, h) in histograms.iter().enumerate() {
        for (cell, &w) in nu.iter().enumerate() {
            if w > 0.0 {
                let r = h.mass(cell) / w;
                if r < c {
                    c = r;
                    argmin_start = s;
                    argmin_cell = cell;
                }
            }
        }
    }
    let mut diagnostics = Vec::new();
    if c == 0.0 {
        diagnostics.push(format!(
            "start point {argmin_start} puts no mass on cell {argmin_cell} where nu > 0; c = 0"
        ));
    }
    Ok(MinorizationReport { nu, c, horizon, argmin_start, argmin_cell, diagnostics })
}

/// Empirical petite-set check: best minorization constant of the kernel
/// family against `nu` (default: uniform on `D'`).
pub fn check_minorization(
    model: &SdeModel,
    query: &MdQuery,
    n: usize,
    cfg: &IntegratorConfig,
    nu: Option<&[f64]>,
) -> Result<MinorizationReport> {
    model.require_nondegenerate()?;
    let hists = kernel_family(model, query, n, cfg)?;
    minorization_from_histograms(&hists, &query.target_mask(), nu, query.horizon)
}

impl MinorizationReport {
    /// Lower bound on the MD coefficient implied by the minorization:
    /// `c` times the mass of `nu` on the cells in `mask`.
    pub fn md_lower_bound(&self, mask: &[bool]) -> f64 {
        self.c * self.nu.iter().zip(mask).filter(|(_, &m)| m).map(|(w, _)| w).sum::<f64>()
    }
}

/// Exact MD coefficient of a finite chain:
/// `min_{i, k in D} sum_{j in D'} min(Q(i, j), Q(k, j))`.
pub fn exact_md_finite_chain(kernel: &[Vec<f64>], d: &[usize], d_prime: &[usize]) -> Result<f64> {
    let chain = FiniteChain::new(kernel.to_vec())?;
    if d.is_empty() {
        return invalid("start set is empty");
    }
    if d.iter().chain(d_prime).any(|&s| s >= chain.len()) {
        return invalid("state index out of range");
    }
    let mut kappa = f64::INFINITY;
    for &i in d {
        for &k in d {
            let v: f64 = d_prime.iter().map(|&j| chain.row(i)[j].min(chain.row(k)[j])).sum();
            kappa = kappa.min(v);
        }
    }
    Ok(kappa)
}
