//! Exact, sampling-free ground truths: finite Markov chains, Gaussian and
//! Ornstein-Uhlenbeck kernels, the Poisson kernel of the disk, and
//! Gaussian envelope checks. Every estimator test names its oracle here.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::stats::{gaussian_cdf, normal_cdf};

/// Row sums of a [`FiniteChain`] must be within this of one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    // Splitting first keeps the adaptive step from missing narrow features.
    const PIECES: usize = 64;
    let w = (b - a) / PIECES as f64;
    (0..PIECES)
        .map(|i| {
            let lo = a + i as f64 * w;
            let hi = if i + 1 == PIECES { b } else { lo + w };
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            simpson(f, lo, hi, fa, fm, fb, whole, tol / PIECES as f64, 48)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
}

/// A finite-state Markov chain with a row-stochastic transition matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteChain {
    matrix: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl FiniteChain {
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let n = matrix.len();
        if n == 0 {
            return Err(Error::InvalidKernel("empty matrix".into()));
        }
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidKernel(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidKernel(format!("row {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidKernel(format!("row {i} sums to {s}")));
            }
        }
        let labels = (0..n).map(|i| i.to_string()).collect();
        Ok(Self { matrix, labels })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return invalid("one label per state");
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn identity(n: usize) -> Self {
        let matrix = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self::new(matrix).expect("identity is stochastic")
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    /// One step `mu -> mu P`.
    pub fn step(&self, mu: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for (i, &m) in mu.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(&self.matrix[i]) {
                *o += m * p;
            }
        }
        out
    }

    fn multiply(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
            .collect()
    }

    /// `P^t` by binary exponentiation.
    pub fn power(&self, mut t: u64) -> Vec<Vec<f64>> {
        let mut result = Self::identity(self.len()).matrix;
        let mut base = self.matrix.clone();
        while t > 0 {
            if t & 1 == 1 {
                result = Self::multiply(&result, &base);
            }
            t >>= 1;
            if t > 0 {
                base = Self::multiply(&base, &base);
            }
        }
        result
    }

    /// An invariant law, solving `pi (P - I) = 0, sum pi = 1`.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let n = self.len();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                // Row j of (P^T - I); the last equation becomes normalization.
                a[(j, i)] = self.matrix[i][j] - if i == j { 1.0 } else { 0.0 };
            }
        }
        for i in 0..n {
            a[(n - 1, i)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(n);
        rhs[n - 1] = 1.0;
        let pi = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidKernel("chain has no unique invariant law".into()))?;
        Ok(pi.iter().map(|v| v.max(0.0)).collect())
    }
}

fn check_law(chain: &FiniteChain, mu: &[f64]) -> Result<()> {
    if mu.len() != chain.len() {
        return invalid("initial law has the wrong number of states");
    }
    if mu.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (mu.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return invalid("initial law must be a probability vector");
    }
    Ok(())
}

/// Exact marginal `mu_t = mu_0 P^t`.
pub fn chain_marginal(chain: &FiniteChain, initial: &[f64], t: u64) -> Result<Vec<f64>> {
    check_law(chain, initial)?;
    let p = chain.power(t);
    let n = chain.len();
    Ok((0..n).map(|j| (0..n).map(|i| initial[i] * p[i][j]).sum()).collect())
}

/// Transition kernels with Gaussian laws, isotropic across axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GaussianKernel {
    Brownian { dim: usize, sigma: f64 },
    OrnsteinUhlenbeck { dim: usize, theta: f64, sigma: f64 },
}

impl GaussianKernel {
    pub fn dim(&self) -> usize {
        match *self {
            GaussianKernel::Brownian { dim, .. } | GaussianKernel::OrnsteinUhlenbeck { dim, .. } => dim,
        }
    }

    pub fn mean(&self, x: &[f64], t: f64) -> Vec<f64> {
        match *self {
            GaussianKernel::Brownian { .. } => x.to_vec(),
            GaussianKernel::OrnsteinUhlenbeck { theta, .. } => x.iter().map(|v| v * (-theta * t).exp()).collect(),
        }
    }

    /// Per-axis variance at time `t`.
    pub fn variance(&self, t: f64) -> f64 {
        match *self {
            GaussianKernel::Brownian { sigma, .. } => sigma * sigma * t,
            GaussianKernel::OrnsteinUhlenbeck { theta, sigma, .. } => {
                sigma * sigma * (1.0 - (-2.0 * theta * t).exp()) / (2.0 * theta)
            }
        }
    }

    /// Per-axis stationary variance (OU only).
    pub fn stationary_variance(&self) -> Option<f64> {
        match *self {
            GaussianKernel::Brownian { .. } => None,
            GaussianKernel::OrnsteinUhlenbeck { theta, sigma, .. } => Some(sigma * sigma / (2.0 * theta)),
        }
    }

    /// Exact stationary masses on `binning` and the mass outside it (OU only).
    pub fn stationary_box_masses(&self, binning: &crate::Binning) -> Option<(Vec<f64>, f64)> {
        let s = self.stationary_variance()?.sqrt();
        let per_axis: Vec<Vec<f64>> = (0..binning.dim())
            .map(|a| binning.edges(a).windows(2).map(|w| gaussian_cdf(w[1], 0.0, s) - gaussian_cdf(w[0], 0.0, s)).collect())
            .collect();
        let masses = product_masses(&per_axis, binning);
        let inside: f64 = masses.iter().sum();
        Some((masses, (1.0 - inside).max(0.0)))
    }

    /// Transition density `f_t(x, y)`.
    pub fn density(&self, x: &[f64], y: &[f64], t: f64) -> f64 {
        let v = self.variance(t);
        let m = self.mean(x, t);
        let r2: f64 = y.iter().zip(&m).map(|(a, b)| (a - b).powi(2)).sum();
        (2.0 * PI * v).powf(-(self.dim() as f64) / 2.0) * (-r2 / (2.0 * v)).exp()
    }

    /// Exact masses of the 1D law on the cells between consecutive `edges`.
    pub fn bin_masses_1d(&self, x: f64, t: f64, edges: &[f64]) -> Vec<f64> {
        let m = self.mean(&[x], t)[0];
        let s = self.variance(t).sqrt();
        edges.windows(2).map(|w| gaussian_cdf(w[1], m, s) - gaussian_cdf(w[0], m, s)).collect()
    }

    /// Exact masses on a product binning of a box, in [`crate::Binning`] cell order.
    pub fn box_masses(&self, x: &[f64], t: f64, binning: &crate::Binning) -> Vec<f64> {
        let per_axis: Vec<Vec<f64>> =
            (0..binning.dim()).map(|a| self.bin_masses_1d(x[a], t, &binning.edges(a))).collect();
        product_masses(&per_axis, binning)
    }
}

fn product_masses(per_axis: &[Vec<f64>], binning: &crate::Binning) -> Vec<f64> {
    (0..binning.cell_count())
        .map(|c| {
            let mut rem = c;
            let mut p = 1.0;
            for a in (0..binning.dim()).rev() {
                let k = rem % binning.bins()[a];
                rem /= binning.bins()[a];
                p *= per_axis[a][k];
            }
            p
        })
        .collect()
}

/// Overlap `int min(f1, f2)` of `N(m1, s^2)` and `N(m2, s^2)`:
/// `2 Phi(-|m1 - m2| / (2 s))`.
pub fn gaussian_overlap(m1: f64, m2: f64, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return invalid("standard deviation must be positive");
    }
    Ok(2.0 * normal_cdf(-(m1 - m2).abs() / (2.0 * s)))
}

fn normal_pdf(y: f64, m: f64, s: f64) -> f64 {
    (-(y - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt())
}

/// Overlap restricted to `[a, b]`, by quadrature.
pub fn gaussian_overlap_truncated(m1: f64, m2: f64, s: f64, a: f64, b: f64) -> Result<f64> {
    if !(s > 0.0) || !(b >= a) {
        return invalid("need s > 0 and a <= b");
    }
    let f = |y: f64| normal_pdf(y, m1, s).min(normal_pdf(y, m2, s));
    let mid = (0.5 * (m1 + m2)).clamp(a, b);
    Ok(integrate(&f, a, mid, 1e-12) + integrate(&f, mid, b, 1e-12))
}

/// TV (in `[0, 1]`) between `N(m1, s1^2)` and `N(m2, s2^2)`, by quadrature.
pub fn gaussian_tv(m1: f64, s1: f64, m2: f64, s2: f64) -> Result<f64> {
    if !(s1 > 0.0 && s2 > 0.0) {
        return invalid("standard deviations must be positive");
    }
    let lo = (m1 - 12.0 * s1).min(m2 - 12.0 * s2);
    let hi = (m1 + 12.0 * s1).max(m2 + 12.0 * s2);
    let f = |y: f64| (normal_pdf(y, m1, s1) - normal_pdf(y, m2, s2)).abs();
    Ok(0.5 * integrate(&f, lo, hi, 1e-12))
}

/// Poisson kernel of the disk of radius `r`: density of the exit point of
/// planar Brownian motion from `x`, w.r.t. arc length, at angle `angle`.
pub fn poisson_kernel_disk(x: &[f64], angle: f64, r: f64) -> Result<f64> {
    if x.len() != 2 {
        return Err(Error::UnsupportedDimension { dim: x.len(), what: "Poisson kernel of the disk is planar" });
    }
    let x2 = x[0] * x[0] + x[1] * x[1];
    if !(r > 0.0) || x2 >= r * r {
        return invalid("need |x| < r");
    }
    let (yx, yy) = (r * angle.cos(), r * angle.sin());
    let d2 = (x[0] - yx).powi(2) + (x[1] - yy).powi(2);
    Ok((r * r - x2) / (2.0 * PI * r * d2))
}

/// Harmonic measure of the angular cells `[2 pi k / bins, 2 pi (k+1) / bins)`.
pub fn poisson_cell_masses(x: &[f64], r: f64, bins: usize) -> Result<Vec<f64>> {
    poisson_kernel_disk(x, 0.0, r)?;
    let w = 2.0 * PI / bins as f64;
    Ok((0..bins)
        .map(|k| {
            let f = |a: f64| poisson_kernel_disk(x, a, r).unwrap_or(0.0) * r;
            integrate(&f, k as f64 * w, (k + 1) as f64 * w, 1e-13)
        })
        .collect())
}

/// Constants of a Gaussian envelope
/// `C' exp(-c' |x-y|^2) <= f_t(x, y) <= C exp(-|x-y|^2 / c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeConstants {
    pub lower_amplitude: f64,
    pub lower_rate: f64,
    pub upper_amplitude: f64,
    pub upper_rate: f64,
}

impl EnvelopeConstants {
    /// Time-`t` constants under heat scaling: amplitudes times `t^(-d/2)`,
    /// lower rate divided by `t`, upper rate multiplied by `t`.
    pub fn at_time(&self, t: f64, dim: usize) -> Self {
        let scale = t.powf(-(dim as f64) / 2.0);
        Self {
            lower_amplitude: self.lower_amplitude * scale,
            lower_rate: self.lower_rate / t,
            upper_amplitude: self.upper_amplitude * scale,
            upper_rate: self.upper_rate * t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeViolation {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: f64,
    pub density: f64,
    pub bound: f64,
    pub upper: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeVerdict {
    pub holds: bool,
    pub checked: usize,
    pub violation: Option<EnvelopeViolation>,
}

/// Checks the envelope on all pairs of `points` (each a `dim`-vector).
pub fn gaussian_envelope_check(
    kernel: &GaussianKernel,
    t: f64,
    constants: &EnvelopeConstants,
    points: &[Vec<f64>],
) -> Result<EnvelopeVerdict> {
    let c = constants;
    if [c.lower_amplitude, c.lower_rate, c.upper_amplitude, c.upper_rate].iter().any(|v| !(*v > 0.0)) || !(t > 0.0) {
        return invalid("envelope constants and t must be positive");
    }
    let rel = 1e-12;
    let mut checked = 0;
    for x in points {
        for y in points {
            let f = kernel.density(x, y, t);
            let mean = kernel.mean(x, t);
            let r2: f64 = y.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum();
            let lower = c.lower_amplitude * (-c.lower_rate * r2).exp();
            let upper = c.upper_amplitude * (-r2 / c.upper_rate).exp();
            checked += 1;
            let violation = if f < lower * (1.0 - rel) {
                Some((lower, false))
            } else if f > upper * (1.0 + rel) {
                Some((upper, true))
            } else {
                None
            };
            if let Some((bound, upper)) = violation {
                return Ok(EnvelopeVerdict {
                    holds: false,
                    checked,
                    violation: Some(EnvelopeViolation { x: x.clone(), y: y.clone(), t, density: f, bound, upper }),
                });
            }
        }
    }
    Ok(EnvelopeVerdict { holds: true, checked, violation: None })
}

/// Envelope check across a ladder of times with heat-scaled constants.
pub fn gaussian_envelope_ladder(
    kernel: &GaussianKernel,
    times: &[f64],
    base: &EnvelopeConstants,
    points: &[Vec<f64>],
) -> Result<EnvelopeVerdict> {
    let mut checked = 0;
    for &t in times {
        let v = gaussian_envelope_check(kernel, t, &base.at_time(t, kernel.dim()), points)?;
        checked += v.checked;
        if !v.holds {
            return Ok(EnvelopeVerdict { checked, ..v });
        }
    }
    Ok(EnvelopeVerdict { holds: true, checked, violation: None })
}
