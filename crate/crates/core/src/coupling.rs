//! Maximal couplings of discrete laws and the one-dimensional intersection
//! coupling of diffusion paths.
//!
//! For two laws with densities `p1`, `p2` w.r.t. a common reference measure
//! `L`, let `q = sum min(p1, p2) L`. The maximal coupling draws a Bernoulli
//! selector: with probability `q` both coordinates take one draw from the
//! overlap law `min(p1, p2) / q`; otherwise they take independent draws
//! from the residual laws `(p_j - min(p1, p2)) / (1 - q)`. The residuals
//! have disjoint supports, so the coordinates differ exactly when the
//! selector picks the residual branch, and `P(X1 != X2) = 1 - q = TV`.
//!
//! TV is reported in `[0, 1]`; the norm `||mu - nu||` used in some texts is
//! twice this value.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{stream_rng, Lane, StreamRng};
use crate::sde::{grid_time, steps_for, IntegratorConfig, Path, Provenance, SdeModel, Stepper};
use crate::stats::binomial_se;

/// Tolerance on total mass of a [`DiscreteDistribution`].
pub const MASS_TOLERANCE: f64 = 1e-9;
/// `|X - X'|` at or below this counts as a meeting.
pub const MEETING_TOLERANCE: f64 = 1e-12;

pub const TV_CONVENTION: &str = "TV in [0,1]: sup_A |P(A) - Q(A)| = (1/2) sum |p - q|; the norm ||P - Q||_TV is twice this";

/// A probability law on finitely many cells, given by densities w.r.t. the
/// reference masses `lambda` of the cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    lambda: Vec<f64>,
    density: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(lambda: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if lambda.is_empty() || lambda.len() != density.len() {
            return invalid("need one density value per reference cell");
        }
        if lambda.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return invalid("reference masses must be finite and positive");
        }
        if density.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return invalid("densities must be finite and nonnegative");
        }
        let total: f64 = lambda.iter().zip(&density).map(|(l, p)| l * p).sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return invalid(format!("total mass is {total}, expected 1"));
        }
        Ok(Self { lambda, density })
    }

    /// Law on cells of unit reference mass (counting measure).
    pub fn from_probabilities(probs: Vec<f64>) -> Result<Self> {
        Self::new(vec![1.0; probs.len()], probs)
    }

    pub fn from_masses(lambda: Vec<f64>, masses: &[f64]) -> Result<Self> {
        let density = masses.iter().zip(&lambda).map(|(m, l)| m / l).collect();
        Self::new(lambda, density)
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn mass(&self, cell: usize) -> f64 {
        self.density[cell] * self.lambda[cell]
    }

    pub fn masses(&self) -> Vec<f64> {
        (0..self.len()).map(|c| self.mass(c)).collect()
    }

    pub fn same_support(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .lambda
                .iter()
                .zip(&other.lambda)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()))
    }

    pub(crate) fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.same_support(other) {
            Ok(())
        } else {
            Err(Error::IncompatibleSupport(format!(
                "{} vs {} cells or differing reference masses",
                self.len(),
                other.len()
            )))
        }
    }

    /// Overlap `sum min(p1, p2) L`.
    pub fn overlap(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        Ok((0..self.len()).map(|c| self.mass(c).min(other.mass(c))).sum())
    }
}

#[derive(Debug, Clone)]
struct Component {
    law: DiscreteDistribution,
    index: WeightedIndex<f64>,
}

impl Component {
    fn new(masses: Vec<f64>, lambda: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        let normalized: Vec<f64> = masses.iter().map(|m| m / total).collect();
        let law = DiscreteDistribution::from_masses(lambda.to_vec(), &normalized)?;
        let index = WeightedIndex::new(&normalized)
            .map_err(|e| Error::InvalidArgument(format!("cannot sample component: {e}")))?;
        Ok(Self { law, index })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }
}

/// Sampler for the maximal coupling of two discrete laws. Immutable after
/// construction; share it freely across threads.
#[derive(Debug, Clone)]
pub struct MaximalCouplingSampler {
    q: f64,
    overlap: Option<Component>,
    residual_first: Option<Component>,
    residual_second: Option<Component>,
    lambda: Vec<f64>,
}

/// Total residual mass below which a law is treated as fully overlapping
/// (and symmetrically for the overlap).
const DEGENERATE_MASS: f64 = 1e-12;

pub fn build_maximal_coupling(
    p1: &DiscreteDistribution,
    p2: &DiscreteDistribution,
) -> Result<MaximalCouplingSampler> {
    p1.check_compatible(p2)?;
    let lambda = p1.lambda().to_vec();
    let common: Vec<f64> = (0..p1.len()).map(|c| p1.mass(c).min(p2.mass(c))).collect();
    let r1: Vec<f64> = (0..p1.len()).map(|c| p1.mass(c) - common[c]).collect();
    let r2: Vec<f64> = (0..p2.len()).map(|c| p2.mass(c) - common[c]).collect();
    let mut q: f64 = common.iter().sum();
    let residual_total = r1.iter().sum::<f64>().max(r2.iter().sum::<f64>());
    let overlap = if q > DEGENERATE_MASS { Some(Component::new(common, &lambda)?) } else { None };
    let (residual_first, residual_second) = if residual_total > DEGENERATE_MASS {
        (Some(Component::new(r1, &lambda)?), Some(Component::new(r2, &lambda)?))
    } else {
        (None, None)
    };
    if overlap.is_none() {
        q = 0.0;
    }
    if residual_first.is_none() {
        q = 1.0;
    }
    Ok(MaximalCouplingSampler { q, overlap, residual_first, residual_second, lambda })
}

/// A coupled pair. `meeting_time` is set for path couplings only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingResult<T> {
    pub first: T,
    pub second: T,
    pub coalesced: bool,
    pub meeting_time: Option<f64>,
}

impl MaximalCouplingSampler {
    /// Overlap mass `q`; `1 - q` is the mismatch probability.
    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn mismatch_probability(&self) -> f64 {
        1.0 - self.q
    }

    /// Law of the common draw, present when `q > 0`.
    pub fn overlap_law(&self) -> Option<&DiscreteDistribution> {
        self.overlap.as_ref().map(|c| &c.law)
    }

    /// Residual law of coordinate `j` (1 or 2), present when `q < 1`.
    pub fn residual_law(&self, j: usize) -> Option<&DiscreteDistribution> {
        match j {
            1 => self.residual_first.as_ref().map(|c| &c.law),
            2 => self.residual_second.as_ref().map(|c| &c.law),
            _ => None,
        }
    }

    /// `(1 - q) residual_j + q overlap`, cell masses; reconstructs law `j`.
    pub fn mixture_masses(&self, j: usize) -> Vec<f64> {
        (0..self.lambda.len())
            .map(|c| {
                let r = self.residual_law(j).map_or(0.0, |l| l.mass(c));
                let o = self.overlap_law().map_or(0.0, |l| l.mass(c));
                (1.0 - self.q) * r + self.q * o
            })
            .collect()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> CouplingResult<usize> {
        let u: f64 = rng.random();
        match (&self.overlap, &self.residual_first, &self.residual_second) {
            (Some(xi), _, _) if u < self.q || self.residual_first.is_none() => {
                let x = xi.sample(rng);
                CouplingResult { first: x, second: x, coalesced: true, meeting_time: None }
            }
            (_, Some(e1), Some(e2)) => {
                let a = e1.sample(rng);
                let b = e2.sample(rng);
                CouplingResult { first: a, second: b, coalesced: false, meeting_time: None }
            }
            _ => unreachable!("sampler always has an overlap or residual branch"),
        }
    }
}

pub fn draw_coupled_pair(sampler: &MaximalCouplingSampler, rng: &mut StreamRng) -> CouplingResult<usize> {
    sampler.draw(rng)
}

/// `n` draws, draw `i` on stream `(seed, substream, i)`.
pub fn draw_coupled_pairs(
    sampler: &MaximalCouplingSampler,
    n: usize,
    seed: u64,
    substream: u64,
) -> Vec<CouplingResult<usize>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| sampler.draw(&mut stream_rng(seed, substream, Lane::SELECTOR, i)))
        .collect()
}

fn require_meeting_model(model: &SdeModel) -> Result<()> {
    if model.dim() != 1 {
        return Err(Error::UnsupportedDimension { dim: model.dim(), what: "intersection coupling is one-dimensional" });
    }
    let b = model.bounds();
    if b.drift.is_none() || b.diffusion.is_none() {
        return invalid("intersection coupling needs declared sup|b| and sup|sigma|");
    }
    model.require_nondegenerate()?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Until {
    Meeting,
    Horizon,
}

/// Runs the pair on shared grid; returns terminal states and the meeting
/// step (node index), optionally recording both raw paths.
#[allow(clippy::too_many_arguments)]
fn run_pair(
    model: &SdeModel,
    x1: f64,
    x2: f64,
    horizon: f64,
    cfg: &IntegratorConfig,
    index: u64,
    until: Until,
    mut record: Option<(&mut Vec<f64>, &mut Vec<f64>, &mut Vec<f64>)>,
) -> Result<(f64, f64, Option<usize>)> {
    let n = steps_for(horizon, cfg.step);
    let mut rng_a = cfg.rng(Lane::PRIMARY, index);
    let mut rng_b = cfg.rng(Lane::PARTNER, index);
    let mut sa = Stepper::new(model);
    let mut sb = Stepper::new(model);
    let (mut a, mut b) = ([x1], [x2]);
    let mut met = if (x1 - x2).abs() <= MEETING_TOLERANCE { Some(0) } else { None };
    let sign0 = (x1 - x2).signum();
    if let Some((t, pa, pb)) = record.as_mut() {
        t.push(0.0);
        pa.push(x1);
        pb.push(x2);
    }
    for k in 0..n {
        if met.is_some() && until == Until::Meeting {
            break;
        }
        let t0 = grid_time(k, n, cfg.step, horizon);
        let t1 = grid_time(k + 1, n, cfg.step, horizon);
        sa.step(&mut a, t1 - t0, t0, &mut rng_a)?;
        if met.is_none() {
            sb.step(&mut b, t1 - t0, t0, &mut rng_b)?;
            let diff = a[0] - b[0];
            if diff.abs() <= MEETING_TOLERANCE || diff.signum() != sign0 {
                met = Some(k + 1);
            }
        }
        if met.is_some() {
            b = a;
        }
        if let Some((t, pa, pb)) = record.as_mut() {
            t.push(t1);
            pa.push(a[0]);
            pb.push(b[0]);
        }
    }
    Ok((a[0], b[0], met))
}

fn meeting_time(met: Option<usize>, horizon: f64, h: f64) -> Option<f64> {
    let n = steps_for(horizon, h);
    met.map(|k| grid_time(k, n, h, horizon))
}

/// Intersection coupling of two independent solutions started at `x1` and
/// `x2`: once the difference changes sign (or vanishes) at a grid node,
/// the second trajectory follows the first. Returns states at `horizon`.
pub fn intersection_couple_1d(
    model: &SdeModel,
    x1: f64,
    x2: f64,
    horizon: f64,
    cfg: &IntegratorConfig,
    index: u64,
) -> Result<CouplingResult<f64>> {
    require_meeting_model(model)?;
    cfg.with_horizon(horizon).validate()?;
    let (a, b, met) = run_pair(model, x1, x2, horizon, cfg, index, Until::Horizon, None)?;
    Ok(CouplingResult { first: a, second: b, coalesced: met.is_some(), meeting_time: meeting_time(met, horizon, cfg.step) })
}

/// As [`intersection_couple_1d`], also returning the glued trajectories.
pub fn intersection_couple_1d_paths(
    model: &SdeModel,
    x1: f64,
    x2: f64,
    horizon: f64,
    cfg: &IntegratorConfig,
    index: u64,
) -> Result<(CouplingResult<f64>, Path, Path)> {
    require_meeting_model(model)?;
    cfg.with_horizon(horizon).validate()?;
    let (mut t, mut pa, mut pb) = (Vec::new(), Vec::new(), Vec::new());
    let (a, b, met) = run_pair(model, x1, x2, horizon, cfg, index, Until::Horizon, Some((&mut t, &mut pa, &mut pb)))?;
    let prov = |lane: Lane| Provenance { seed: cfg.seed, substream: cfg.substream, lane: lane.0, index };
    let first = Path::from_parts(1, t.clone(), pa, None, prov(Lane::PRIMARY))?;
    let mut second = Path::from_parts(1, t, pb, None, prov(Lane::PARTNER))?;
    if let Some(k) = met {
        second.glue_from(&first, k);
    }
    let result = CouplingResult { first: a, second: b, coalesced: met.is_some(), meeting_time: meeting_time(met, horizon, cfg.step) };
    Ok((result, first, second))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetingRow {
    pub x1: f64,
    pub x2: f64,
    pub probability: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetingTable {
    pub rows: Vec<MeetingRow>,
    pub horizon: f64,
    pub n: usize,
    /// Index of the row with the smallest probability.
    pub argmin: usize,
    pub min_probability: f64,
}

/// Monte Carlo meeting probabilities `P(exists s <= horizon: X_s = X'_s)`
/// over a grid of start pairs. All pairs share random numbers.
pub fn estimate_meeting_probability(
    model: &SdeModel,
    pairs: &[(f64, f64)],
    horizon: f64,
    n: usize,
    cfg: &IntegratorConfig,
) -> Result<MeetingTable> {
    require_meeting_model(model)?;
    cfg.with_horizon(horizon).validate()?;
    if pairs.is_empty() || n == 0 {
        return invalid("need at least one start pair and one sample");
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for &(x1, x2) in pairs {
        let hits: Vec<bool> = (0..n as u64)
            .into_par_iter()
            .map(|i| run_pair(model, x1, x2, horizon, cfg, i, Until::Meeting, None).map(|r| r.2.is_some()))
            .collect::<Result<_>>()?;
        let p = hits.iter().filter(|&&m| m).count() as f64 / n as f64;
        rows.push(MeetingRow { x1, x2, probability: p, stderr: binomial_se(p, n) });
    }
    let argmin = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.probability.total_cmp(&b.1.probability))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let min_probability = rows[argmin].probability;
    Ok(MeetingTable { rows, horizon, n, argmin, min_probability })
}

/// Cartesian grid of start pairs.
pub fn pair_grid(points: &[f64]) -> Vec<(f64, f64)> {
    points.iter().flat_map(|&a| points.iter().map(move |&b| (a, b))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::registry::{bounded_drift_1d, brownian, ornstein_uhlenbeck};

    fn bern(p: f64) -> DiscreteDistribution {
        DiscreteDistribution::from_probabilities(vec![1.0 - p, p]).unwrap()
    }

    #[test]
    fn distribution_validation() {
        assert!(DiscreteDistribution::from_probabilities(vec![0.5, 0.4]).is_err());
        assert!(DiscreteDistribution::from_probabilities(vec![1.1, -0.1]).is_err());
        assert!(DiscreteDistribution::new(vec![0.0, 1.0], vec![0.0, 1.0]).is_err());
        let d = DiscreteDistribution::new(vec![0.5, 0.5], vec![1.0, 1.0]).unwrap();
        assert_eq!(d.masses(), vec![0.5, 0.5]);
    }

    #[test]
    fn bernoulli_overlap() {
        let s = build_maximal_coupling(&bern(0.3), &bern(0.5)).unwrap();
        assert!((s.q() - 0.8).abs() < 1e-15);
        assert_eq!(s.residual_law(1).unwrap().masses(), vec![1.0, 0.0]);
        assert_eq!(s.residual_law(2).unwrap().masses(), vec![0.0, 1.0]);
        let xi = s.overlap_law().unwrap().masses();
        assert!((xi[0] - 0.625).abs() < 1e-15 && (xi[1] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn identical_laws_always_coalesce() {
        let p = DiscreteDistribution::from_probabilities(vec![0.2, 0.3, 0.5]).unwrap();
        let s = build_maximal_coupling(&p, &p).unwrap();
        assert_eq!(s.q(), 1.0);
        assert!(s.residual_law(1).is_none());
        for r in draw_coupled_pairs(&s, 1000, 1, 0) {
            assert!(r.coalesced && r.first == r.second);
        }
    }

    #[test]
    fn disjoint_laws_never_coalesce() {
        let a = DiscreteDistribution::from_probabilities(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let b = DiscreteDistribution::from_probabilities(vec![0.0, 0.0, 0.3, 0.7]).unwrap();
        let s = build_maximal_coupling(&a, &b).unwrap();
        assert_eq!(s.q(), 0.0);
        assert!(s.overlap_law().is_none());
        for r in draw_coupled_pairs(&s, 1000, 1, 0) {
            assert!(!r.coalesced && r.first < 2 && r.second >= 2);
        }
    }

    #[test]
    fn mismatched_supports_are_rejected() {
        let a = DiscreteDistribution::from_probabilities(vec![0.5, 0.5]).unwrap();
        let b = DiscreteDistribution::from_probabilities(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(matches!(build_maximal_coupling(&a, &b), Err(Error::IncompatibleSupport(_))));
        let c = DiscreteDistribution::new(vec![2.0, 2.0], vec![0.25, 0.25]).unwrap();
        assert!(matches!(build_maximal_coupling(&a, &c), Err(Error::IncompatibleSupport(_))));
    }

    #[test]
    fn equal_starts_meet_at_time_zero() {
        let m = brownian(1, 1.0).unwrap();
        let cfg = IntegratorConfig::new(0.01, 1.0, 5).unwrap();
        let r = intersection_couple_1d(&m, 0.3, 0.3, 1.0, &cfg, 0).unwrap();
        assert!(r.coalesced);
        assert_eq!(r.meeting_time, Some(0.0));
        assert_eq!(r.first, r.second);
    }

    #[test]
    fn glued_paths_agree_after_meeting() {
        let m = bounded_drift_1d(1.0, 1.0, 0.5).unwrap();
        let cfg = IntegratorConfig::new(0.001, 1.0, 9).unwrap();
        let mut seen = 0;
        for i in 0..50 {
            let (r, a, b) = intersection_couple_1d_paths(&m, -0.2, 0.2, 1.0, &cfg, i).unwrap();
            if let Some(tau) = r.meeting_time {
                seen += 1;
                for k in 0..a.len() {
                    if a.times()[k] >= tau {
                        assert_eq!(a.state(k), b.state(k));
                    }
                }
                assert_eq!(r.first, r.second);
            }
            // Before meeting the ordering is preserved.
            for k in 0..a.len() {
                if r.meeting_time.map_or(true, |tau| a.times()[k] < tau) {
                    assert!(a.state(k)[0] < b.state(k)[0]);
                }
            }
        }
        assert!(seen > 10);
    }

    #[test]
    fn intersection_coupling_requires_bounded_coefficients() {
        let cfg = IntegratorConfig::new(0.01, 1.0, 5).unwrap();
        let ou = ornstein_uhlenbeck(1, 1.0, 1.0).unwrap();
        assert!(intersection_couple_1d(&ou, 0.0, 1.0, 1.0, &cfg, 0).is_err());
        let bm2 = brownian(2, 1.0).unwrap();
        assert!(matches!(
            intersection_couple_1d(&bm2, 0.0, 1.0, 1.0, &cfg, 0),
            Err(Error::UnsupportedDimension { .. })
        ));
    }

    #[test]
    fn degenerate_pair_grid_meets_surely() {
        let m = brownian(1, 1.0).unwrap();
        let cfg = IntegratorConfig::new(0.01, 1.0, 5).unwrap();
        let t = estimate_meeting_probability(&m, &[(0.0, 0.0)], 1.0, 100, &cfg).unwrap();
        assert_eq!(t.rows[0].probability, 1.0);
        assert_eq!(t.rows[0].stderr, 0.0);
    }
}
