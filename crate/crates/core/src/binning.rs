//! Regular box partitions, target regions, and (weighted) histograms of
//! transition kernels.
//!
//! Histogram masses are taken w.r.t. Lebesgue measure restricted to the
//! bin cover. Mass falling outside the box is kept separately so the cell
//! masses plus `outside` always account for the whole sample.

use serde::{Deserialize, Serialize};

use crate::coupling::DiscreteDistribution;
use crate::error::{invalid, Result};

/// A regular grid of `bins[i]` cells on `[lo[i], hi[i]]` per axis.
/// Cells are indexed row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    lo: Vec<f64>,
    hi: Vec<f64>,
    bins: Vec<usize>,
}

impl Binning {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, bins: Vec<usize>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.len() != bins.len() {
            return invalid("binning needs matching, nonempty lo/hi/bins per axis");
        }
        for i in 0..lo.len() {
            if !(lo[i].is_finite() && hi[i].is_finite() && hi[i] > lo[i]) || bins[i] == 0 {
                return invalid(format!("bad axis {i}: [{}, {}] with {} bins", lo[i], hi[i], bins[i]));
            }
        }
        Ok(Self { lo, hi, bins })
    }

    pub fn interval(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        Self::new(vec![lo], vec![hi], vec![bins])
    }

    /// `[-half_width, half_width]^d` with `bins` cells per axis.
    pub fn cube(dim: usize, half_width: f64, bins: usize) -> Result<Self> {
        Self::new(vec![-half_width; dim], vec![half_width; dim], vec![bins; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn cell_count(&self) -> usize {
        self.bins.iter().product()
    }

    fn width(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.bins[axis] as f64
    }

    /// Lebesgue volume of every cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.width(a)).product()
    }

    pub fn edges(&self, axis: usize) -> Vec<f64> {
        let w = self.width(axis);
        (0..=self.bins[axis])
            .map(|k| if k == self.bins[axis] { self.hi[axis] } else { self.lo[axis] + k as f64 * w })
            .collect()
    }

    /// Cell containing `x`; the upper edge of the box belongs to the last cell.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0usize;
        for (a, &v) in x.iter().enumerate() {
            if !(v >= self.lo[a] && v <= self.hi[a]) {
                return None;
            }
            let k = (((v - self.lo[a]) / self.width(a)) as usize).min(self.bins[a] - 1);
            idx = idx * self.bins[a] + k;
        }
        Some(idx)
    }

    fn axis_indices(&self, mut cell: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            out[a] = cell % self.bins[a];
            cell /= self.bins[a];
        }
        out
    }

    pub fn cell_bounds(&self, cell: usize) -> (Vec<f64>, Vec<f64>) {
        let idx = self.axis_indices(cell);
        let lo = idx.iter().enumerate().map(|(a, &k)| self.lo[a] + k as f64 * self.width(a)).collect();
        let hi = idx
            .iter()
            .enumerate()
            .map(|(a, &k)| if k + 1 == self.bins[a] { self.hi[a] } else { self.lo[a] + (k + 1) as f64 * self.width(a) })
            .collect();
        (lo, hi)
    }

    pub fn cell_center(&self, cell: usize) -> Vec<f64> {
        let (lo, hi) = self.cell_bounds(cell);
        lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}

/// Start or target region of an MD query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Whole,
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Region {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Region::Box { lo: vec![lo], hi: vec![hi] }
    }

    pub fn centered_ball(dim: usize, radius: f64) -> Self {
        Region::Ball { center: vec![0.0; dim], radius }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        const SLACK: f64 = 1e-12;
        match self {
            Region::Whole => true,
            Region::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *v >= a - SLACK && *v <= b + SLACK),
            Region::Ball { center, radius } => {
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
                r2.sqrt() <= radius + SLACK
            }
        }
    }

    /// Cells of `binning` whose centers lie in the region.
    pub fn mask(&self, binning: &Binning) -> Vec<bool> {
        (0..binning.cell_count()).map(|c| self.contains(&binning.cell_center(c))).collect()
    }
}

/// Cell masses of a (possibly weighted) sample, plus per-cell second
/// moments for standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelHistogram {
    binning: Binning,
    mass: Vec<f64>,
    second_moment: Vec<f64>,
    outside: f64,
    samples: usize,
}

impl KernelHistogram {
    /// Histogram of `points` with optional weights; masses are
    /// `sum(w 1_cell) / n`, so unit weights give proportions.
    pub fn from_points<'a, I>(binning: &Binning, points: I, weights: Option<&[f64]>) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let k = binning.cell_count();
        let mut mass = vec![0.0; k];
        let mut second_moment = vec![0.0; k];
        let mut outside = 0.0;
        let mut n = 0usize;
        for (i, p) in points.into_iter().enumerate() {
            if p.len() != binning.dim() {
                return invalid("point dimension does not match binning");
            }
            let w = match weights {
                Some(ws) => *ws.get(i).ok_or_else(|| crate::Error::InvalidArgument("fewer weights than points".into()))?,
                None => 1.0,
            };
            match binning.cell_of(p) {
                Some(c) => {
                    mass[c] += w;
                    second_moment[c] += w * w;
                }
                None => outside += w,
            }
            n += 1;
        }
        if n == 0 {
            return invalid("histogram of an empty sample");
        }
        let nf = n as f64;
        mass.iter_mut().for_each(|m| *m /= nf);
        second_moment.iter_mut().for_each(|m| *m /= nf);
        Ok(Self { binning: binning.clone(), mass, second_moment, outside: outside / nf, samples: n })
    }

    /// Exact (sampling-free) histogram from known cell masses.
    pub fn from_masses(binning: &Binning, mass: Vec<f64>, outside: f64) -> Result<Self> {
        if mass.len() != binning.cell_count() {
            return invalid("one mass per cell is required");
        }
        if mass.iter().chain([&outside]).any(|m| !(m.is_finite() && *m >= 0.0)) {
            return invalid("masses must be finite and nonnegative");
        }
        let second_moment = mass.clone();
        Ok(Self { binning: binning.clone(), mass, second_moment, outside, samples: 0 })
    }

    pub fn binning(&self) -> &Binning {
        &self.binning
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn mass(&self, cell: usize) -> f64 {
        self.mass[cell]
    }

    pub fn outside(&self) -> f64 {
        self.outside
    }

    /// Number of samples; 0 for exact histograms.
    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn is_exact(&self) -> bool {
        self.samples == 0
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum::<f64>() + self.outside
    }

    pub fn density(&self, cell: usize) -> f64 {
        self.mass[cell] / self.binning.cell_volume()
    }

    /// Standard error of a cell mass (binomial for unit weights).
    pub fn cell_se(&self, cell: usize) -> f64 {
        if self.samples == 0 {
            return 0.0;
        }
        let m = self.mass[cell];
        ((self.second_moment[cell] - m * m).max(0.0) / self.samples as f64).sqrt()
    }

    pub fn masked_mass(&self, mask: &[bool]) -> f64 {
        self.mass.iter().zip(mask).filter(|(_, &c)| c).map(|(m, _)| m).sum()
    }

    /// Law on the cells plus one trailing "outside" cell of unit reference
    /// mass, normalized to total mass one.
    pub fn to_distribution(&self) -> Result<DiscreteDistribution> {
        let total = self.total();
        if !(total > 0.0) {
            return invalid("histogram has no mass");
        }
        let vol = self.binning.cell_volume();
        let mut lambda = vec![vol; self.mass.len()];
        lambda.push(1.0);
        let mut density: Vec<f64> = self.mass.iter().map(|m| m / total / vol).collect();
        density.push(self.outside / total);
        DiscreteDistribution::new(lambda, density)
    }
}
