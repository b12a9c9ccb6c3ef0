//! One runner per subcommand. Each parses its typed `[params]`, runs the
//! library, and returns metrics, checks and data files.

use std::fmt::Write as _;

use anyhow::{anyhow, bail, ensure, Context, Result};
use couplex::coupling::{estimate_meeting_probability, intersection_couple_1d, pair_grid};
use couplex::export;
use couplex::girsanov::{weighted_ensemble, WeightMoments};
use couplex::harnack::{sample_exit_measure, SphereCells};
use couplex::md::{kernel_family, md_from_histograms, minorization_from_histograms};
use couplex::oracle::{
    chain_marginal, gaussian_envelope_ladder, gaussian_overlap, gaussian_overlap_truncated, gaussian_tv,
    poisson_cell_masses, EnvelopeConstants,
};
use couplex::sde::simulate_path_indexed;
use couplex::stats::{chi_square_passes, chi_square_statistic, normal_cdf};
use couplex::tv::{mismatch_count, stationary_histogram_long_run, tv_curve_chain, tv_curve_model, tv_masses, CouplingKind};
use couplex::{
    build_maximal_coupling, check_tv_monotonicity, coupling_bound_check, draw_coupled_pairs, elliptic_harnack_check,
    estimate_kernel_histogram, estimate_md_girsanov, exact_md_finite_chain, md_via_elliptic, md_via_parabolic_corollary,
    parabolic_harnack_check, reweighted_kernel, tv_exact, Binning, CylinderCells, DiscreteDistribution, DriftSplitModel,
    FiniteChain, GaussianKernel, HarnackReport, IntegratorConfig, KernelHistogram, Lane, MdQuery, ModelRegistry,
    ModelSpec, Region, SdeModel, TvCurve,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::report::OpOutput;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operation {
    Simulate,
    EstimateMd,
    Couple,
    Meet1d,
    GirsanovCheck,
    HarnackParabolic,
    HarnackElliptic,
    MdElliptic,
    TvCurve,
    Oracle,
}

impl Operation {
    pub const ALL: [Operation; 10] = [
        Operation::Simulate,
        Operation::EstimateMd,
        Operation::Couple,
        Operation::Meet1d,
        Operation::GirsanovCheck,
        Operation::HarnackParabolic,
        Operation::HarnackElliptic,
        Operation::MdElliptic,
        Operation::TvCurve,
        Operation::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operation::Simulate => "simulate",
            Operation::EstimateMd => "estimate-md",
            Operation::Couple => "couple",
            Operation::Meet1d => "meet-1d",
            Operation::GirsanovCheck => "girsanov-check",
            Operation::HarnackParabolic => "harnack-parabolic",
            Operation::HarnackElliptic => "harnack-elliptic",
            Operation::MdElliptic => "md-elliptic",
            Operation::TvCurve => "tv-curve",
            Operation::Oracle => "oracle",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|op| op.name() == name)
            .ok_or_else(|| anyhow!("unknown operation '{name}'"))
    }
}

/// Shared inputs of an operation run.
pub struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    /// Multiplier for fixed statistical tolerances (1 at full sample size).
    pub tol_scale: f64,
}

impl Ctx<'_> {
    fn params<T: DeserializeOwned>(&self) -> Result<T> {
        self.cfg.params()
    }

    fn model_spec(&self, default: Option<&str>) -> Result<String> {
        self.cfg
            .model
            .clone()
            .or_else(|| default.map(str::to_string))
            .ok_or_else(|| anyhow!("this operation needs a `model`"))
    }

    fn model(&self, default: Option<&str>) -> Result<SdeModel> {
        let spec = self.model_spec(default)?;
        ModelRegistry::builtin().build(&spec).with_context(|| format!("cannot build model '{spec}'"))
    }

    fn integrator(&self, horizon: f64) -> Result<IntegratorConfig> {
        Ok(IntegratorConfig::new(self.cfg.step, horizon, self.cfg.seed)?)
    }
}

pub fn run(op: Operation, ctx: &Ctx) -> Result<OpOutput> {
    match op {
        Operation::Simulate => simulate(ctx),
        Operation::EstimateMd => estimate_md(ctx),
        Operation::Couple => couple(ctx),
        Operation::Meet1d => meet_1d(ctx),
        Operation::GirsanovCheck => girsanov_check(ctx),
        Operation::HarnackParabolic => harnack_parabolic(ctx),
        Operation::HarnackElliptic => harnack_elliptic(ctx),
        Operation::MdElliptic => md_elliptic(ctx),
        Operation::TvCurve => tv_curve(ctx),
        Operation::Oracle => oracle(ctx),
    }
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn rows_csv(header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        let line: Vec<String> = r.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "{}", line.join(","));
    }
    s
}

/// Per-axis binning as written in configs; validated on use.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub bins: Vec<usize>,
}

impl BinningSpec {
    fn build(&self) -> Result<Binning> {
        Ok(Binning::new(self.lo.clone(), self.hi.clone(), self.bins.clone())?)
    }
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateParams {
    x0: Vec<f64>,
    #[serde(default = "one")]
    horizon: f64,
    #[serde(default = "SimulateParams::default_paths")]
    paths: usize,
}

impl SimulateParams {
    fn default_paths() -> usize {
        10
    }
}

fn simulate(ctx: &Ctx) -> Result<OpOutput> {
    let p: SimulateParams = ctx.params()?;
    ensure!(p.paths > 0, "paths must be at least 1");
    let model = ctx.model(None)?;
    let cfg = ctx.integrator(p.horizon)?;
    let paths = (0..p.paths as u64)
        .map(|i| simulate_path_indexed(&model, &p.x0, &cfg, Lane::PRIMARY, i, false))
        .collect::<couplex::Result<Vec<_>>>()?;
    let mut out = OpOutput { params: to_value(&p)?, ..Default::default() };
    let terminal: Vec<Vec<f64>> = paths.iter().map(|q| q.terminal().to_vec()).collect();
    for axis in 0..model.dim() {
        let mean = terminal.iter().map(|x| x[axis]).sum::<f64>() / terminal.len() as f64;
        out.metric(format!("terminal_mean_{axis}"), mean);
    }
    let finite = terminal.iter().flatten().all(|v| v.is_finite());
    out.check("paths_finite", finite, format!("{} paths of {} steps", paths.len(), cfg.steps()));
    out.result = json!({ "model": model.name(), "dim": model.dim(), "steps": cfg.steps(), "terminal": terminal });
    out.file("paths.csv", export::paths_csv(&paths));
    Ok(out)
}

// ------------------------------------------------------------- estimate-md

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateMdParams {
    start_points: Vec<Vec<f64>>,
    start_region: Region,
    target: Region,
    binning: BinningSpec,
    #[serde(default = "one")]
    horizon: f64,
    n: usize,
    #[serde(default)]
    minorization: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu: Option<Vec<f64>>,
}

fn estimate_md(ctx: &Ctx) -> Result<OpOutput> {
    let p: EstimateMdParams = ctx.params()?;
    let model = ctx.model(None)?;
    model.require_nondegenerate()?;
    let query = MdQuery {
        start_region: p.start_region.clone(),
        start_points: p.start_points.clone(),
        target: p.target.clone(),
        binning: p.binning.build()?,
        horizon: p.horizon,
    };
    let cfg = ctx.integrator(p.horizon)?;
    let hists = kernel_family(&model, &query, p.n, &cfg)?;
    let mask = query.target_mask();
    let md = md_from_histograms(&hists, &query.start_points, &mask, p.horizon)?;
    let mut out = OpOutput { params: to_value(&p)?, ..Default::default() };
    out.metric("kappa", md.kappa);
    out.metric("kappa_stderr", md.kappa_stderr);
    out.check("kappa_in_unit_interval", (0.0..=1.0).contains(&md.kappa), format!("kappa = {}", md.kappa));
    let mut minor = None;
    if p.minorization {
        let m = minorization_from_histograms(&hists, &mask, p.nu.as_deref(), p.horizon)?;
        let lower = m.md_lower_bound(&mask);
        out.metric("minorization_c", m.c);
        out.metric("md_lower_bound", lower);
        out.check(
            "minorization_bounds_md",
            lower <= md.kappa + 1e-12,
            format!("c * nu(D') = {lower} <= kappa = {}", md.kappa),
        );
        minor = Some(m);
    }
    out.file("md_matrix.csv", export::md_matrix_csv(&md));
    out.result = json!({ "md": md, "minorization": minor });
    Ok(out)
}

// ------------------------------------------------------------------ couple

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoupleParams {
    p1: Vec<f64>,
    p2: Vec<f64>,
    /// Reference cell masses; `p1`, `p2` are then cell masses on them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<Vec<f64>>,
    #[serde(default = "CoupleParams::default_draws")]
    draws: usize,
    #[serde(default = "CoupleParams::default_csv_rows")]
    csv_rows: usize,
}

impl CoupleParams {
    fn default_draws() -> usize {
        100_000
    }

    fn default_csv_rows() -> usize {
        1000
    }
}

/// Outcome of the maximal-coupling checks, shared with the acceptance suite.
#[derive(Debug, Clone, Serialize)]
pub struct CouplingCheck {
    pub q: f64,
    pub tv: f64,
    pub mismatch_rate: f64,
    pub mismatch_stderr: f64,
    pub mismatch_within_3se: bool,
    pub first_marginal_chi_square: f64,
    pub second_marginal_chi_square: f64,
    pub first_marginal_passes: bool,
    pub second_marginal_passes: bool,
    pub mixture_max_error: f64,
}

pub fn check_maximal_coupling(
    p1: &DiscreteDistribution,
    p2: &DiscreteDistribution,
    draws: usize,
    seed: u64,
) -> Result<(CouplingCheck, Vec<couplex::CouplingResult<usize>>)> {
    ensure!(draws > 0, "draws must be at least 1");
    let s = build_maximal_coupling(p1, p2)?;
    let tv = tv_exact(p1, p2)?;
    let pairs = draw_coupled_pairs(&s, draws, seed, 0);
    let verdict = coupling_bound_check(CouplingKind::Maximal, mismatch_count(&pairs), draws, tv)?;
    let k = p1.len();
    let mut first = vec![0u64; k];
    let mut second = vec![0u64; k];
    for d in &pairs {
        first[d.first] += 1;
        second[d.second] += 1;
    }
    let (m1, m2) = (p1.masses(), p2.masses());
    let mixture_max_error = [(1, &m1), (2, &m2)]
        .iter()
        .flat_map(|(j, m)| s.mixture_masses(*j).into_iter().zip(m.iter()).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    let check = CouplingCheck {
        q: s.q(),
        tv,
        mismatch_rate: verdict.mismatch_rate,
        mismatch_stderr: verdict.stderr,
        mismatch_within_3se: verdict.holds,
        first_marginal_chi_square: chi_square_statistic(&first, &m1),
        second_marginal_chi_square: chi_square_statistic(&second, &m2),
        first_marginal_passes: chi_square_passes(&first, &m1, 0.01),
        second_marginal_passes: chi_square_passes(&second, &m2, 0.01),
        mixture_max_error,
    };
    Ok((check, pairs))
}

fn couple(ctx: &Ctx) -> Result<OpOutput> {
    let p: CoupleParams = ctx.params()?;
    let (d1, d2) = match &p.lambda {
        Some(l) => (DiscreteDistribution::from_masses(l.clone(), &p.p1)?, DiscreteDistribution::from_masses(l.clone(), &p.p2)?),
        None => (DiscreteDistribution::from_probabilities(p.p1.clone())?, DiscreteDistribution::from_probabilities(p.p2.clone())?),
    };
    let (c, pairs) = check_maximal_coupling(&d1, &d2, p.draws, ctx.cfg.seed)?;
    let mut out = OpOutput { params: to_value(&p)?, ..Default::default() };
    out.metric("q", c.q);
    out.metric("tv", c.tv);
    out.metric("mismatch_rate", c.mismatch_rate);
    out.metric("mismatch_stderr", c.mismatch_stderr);
    out.metric("mixture_max_error", c.mixture_max_error);
    out.check("q_equals_overlap", (c.q - (1.0 - c.tv)).abs() <= 1e-12, format!("q = {}, 1 - tv = {}", c.q, 1.0 - c.tv));
    out.check(
        "mismatch_matches_tv",
        c.mismatch_within_3se,
        format!("rate {} vs tv {} (3 se = {})", c.mismatch_rate, c.tv, 3.0 * c.mismatch_stderr),
    );
    out.check("first_marginal_chi_square", c.first_marginal_passes, format!("statistic {}", c.first_marginal_chi_square));
    out.check("second_marginal_chi_square", c.second_marginal_passes, format!("statistic {}", c.second_marginal_chi_square));
    out.check("mixture_identity", c.mixture_max_error <= 1e-9, format!("max error {}", c.mixture_max_error));
    out.file("couplings.csv", export::couplings_csv(&pairs[..p.csv_rows.min(pairs.len())]));
    out.result = to_value(&c)?;
    Ok(out)
}

// ----------------------------------------------------------------- meet-1d

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeetParams {
    /// Explicit start pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pairs: Option<Vec<[f64; 2]>>,
    /// Points whose Cartesian square gives the start pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<Vec<f64>>,
    #[serde(default = "one")]
    horizon: f64,
    n: usize,
    #[serde(default = "MeetParams::default_csv_pairs")]
    csv_pairs: usize,
}

impl MeetParams {
    fn default_csv_pairs() -> usize {
        200
    }
}

fn meet_1d(ctx: &Ctx) -> Result<OpOutput> {
    let p: MeetParams = ctx.params()?;
    let pairs: Vec<(f64, f64)> = match (&p.pairs, &p.grid) {
        (Some(list), None) => list.iter().map(|a| (a[0], a[1])).collect(),
        (None, Some(g)) => pair_grid(g),
        _ => bail!("give exactly one of `pairs` and `grid`"),
    };
    let model = ctx.model(None)?;
    let cfg = ctx.integrator(p.horizon)?;
    let table = estimate_meeting_probability(&model, &pairs, p.horizon, p.n, &cfg)?;
    let mut out = OpOutput { params: to_value(&p)?, ..Default::default() };
    for (i, r) in table.rows.iter().enumerate() {
        out.metric(format!("probability_{i}"), r.probability);
    }
    let worst = &table.rows[table.argmin];
    out.metric("min_probability", worst.probability);
    out.metric("min_stderr", worst.stderr);
    out.check(
        "min_meeting_positive_3sigma",
        worst.probability - 3.0 * worst.stderr > 0.0,
        format!("min {} at ({}, {}), se {}", worst.probability, worst.x1, worst.x2, worst.stderr),
    );
    let draws = (0..p.csv_pairs.min(p.n) as u64)
        .map(|i| intersection_couple_1d(&model, worst.x1, worst.x2, p.horizon, &cfg, i))
        .collect::<couplex::Result<Vec<_>>>()?;
    out.file("couplings.csv", export::couplings_csv(&draws));
    out.result = to_value(&table)?;
    Ok(out)
}

// ---------------------------------------------------------- girsanov-check

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GirsanovParams {
    /// Extra drift: `none`, `const{c=..}`, `sign{c=..}` or `tanh{c=..}`.
    extra: String,
    x0: Vec<f64>,
    #[serde(default = "one")]
    horizon: f64,
    n: usize,
    #[serde(default = "GirsanovParams::default_bins")]
    bins: usize,
    #[serde(default = "GirsanovParams::default_half_width")]
    half_width: f64,
    #[serde(default = "GirsanovParams::default_tv_max")]
    tv_max: f64,
    #[serde(default = "one")]
    radius: f64,
    md_n: usize,
    #[serde(default = "GirsanovParams::default_md_bins")]
    md_bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    md_grid: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    normalize: bool,
    #[serde(default = "GirsanovParams::default_exact_paths")]
    exact_paths: usize,
}

impl GirsanovParams {
    fn default_bins() -> usize {
        50
    }

    fn default_half_width() -> f64 {
        4.0
    }

    fn default_tv_max() -> f64 {
        0.05
    }

    fn default_md_bins() -> usize {
        10
    }

    fn default_exact_paths() -> usize {
        2000
    }
}

/// TV in [0,1] between histograms on one binning, with the outside mass
/// as one more cell.
pub fn histogram_tv(a: &KernelHistogram, b: &KernelHistogram) -> Result<f64> {
    let with_outside = |h: &KernelHistogram| {
        let mut m = h.masses().to_vec();
        m.push(h.outside());
        m
    };
    Ok(tv_masses(&with_outside(a), &with_outside(b))?)
}

/// Largest gap between the computed log-weight and its closed form
/// `+-(a . W_T) - |a|^2 T / 2`, `a = sigma^{-1} c`, over `paths` base paths.
/// Only meaningful for a constant extra drift on a constant diagonal
/// diffusion.
pub fn constant_drift_log_weight_error(split: &DriftSplitModel, x0: &[f64], cfg: &IntegratorConfig, paths: usize) -> Result<f64> {
    let d = split.dim();
    let mut c = vec![0.0; d];
    split.extra_drift(x0, &mut c);
    let sigma = split.base().eval_diffusion(x0);
    let a: Vec<f64> = (0..d).map(|i| c[i] / sigma[i * d + i]).collect();
    let a2: f64 = a.iter().map(|v| v * v).sum();
    let mut worst: f64 = 0.0;
    for i in 0..paths as u64 {
        let path = simulate_path_indexed(split.base(), x0, cfg, Lane::PRIMARY, i, true)?;
        let mut w = vec![0.0; d];
        for k in 0..path.len() - 1 {
            for (acc, v) in w.iter_mut().zip(path.increment(k).expect("increments recorded")) {
                *acc += v;
            }
        }
        let aw: f64 = a.iter().zip(&w).map(|(x, y)| x * y).sum();
        let t = cfg.horizon;
        for (dir, sign) in [(couplex::Direction::AddDrift, 1.0), (couplex::Direction::RemoveDrift, -1.0)] {
            let got = couplex::stochastic_exponential(split, &path, dir)?.log_weight;
            worst = worst.max((got - (sign * aw - 0.5 * a2 * t)).abs());
        }
    }
    Ok(worst)
}

fn girsanov_check(ctx: &Ctx) -> Result<OpOutput> {
    let p: GirsanovParams = ctx.params()?;
    let base = ctx.model(Some("bm"))?;
    let split = DriftSplitModel::from_spec(base, &p.extra)?;
    let d = split.dim();
    let cfg = ctx.integrator(p.horizon)?;
    let binning = Binning::cube(d, p.half_width, p.bins)?;
    let weighted = reweighted_kernel(&split, &p.x0, p.horizon, p.n, &binning, &cfg, p.normalize)?;
    let direct = estimate_kernel_histogram(&split.full_model(), &p.x0, p.horizon, p.n, &binning, &cfg.with_substream(1))?;
    let tv = histogram_tv(&weighted.histogram, &direct)?;
    let md = estimate_md_girsanov(&split, p.radius, p.horizon, p.md_n, p.md_bins, &cfg.with_substream(2), p.md_grid.as_deref(), p.normalize)?;
    let m = &weighted.moments;
    let mut out = OpOutput { params: to_value(&p)?, ..Default::default() };
    out.metric("mean_rho", m.mean);
    out.metric("rho_stderr", m.stderr);
    out.metric("n_eff", m.n_eff);
    out.metric("kernel_tv_vs_direct", tv);
    out.metric("kappa", md.kappa);
    out.metric("kappa_stderr", md.kappa_stderr);
    out.check("mean_weight_unbiased_3sigma", m.unbiased_at(3.0), format!("mean {} se {}", m.mean, m.stderr));
    let tv_max = p.tv_max * ctx.tol_scale;
    out.check("reweighted_vs_direct_tv", tv <= tv_max, format!("TV {tv} <= {tv_max}"));
    out.check("md_positive_3sigma", md.positive_at(3.0), format!("kappa {} se {}", md.kappa, md.kappa_stderr));
    let constant = p.extra.trim_start().starts_with("const") && ctx.model_spec(Some("bm"))?.starts_with("bm");
    if constant && p.exact_paths > 0 {
        let err = constant_drift_log_weight_error(&split, &p.x0, &cfg, p.exact_paths)?;
        out.metric("constant_drift_max_error", err);
        out.check("constant_drift_closed_form", err <= 1e-12, format!("max |log rho - closed form| = {err} over {} paths", p.exact_paths));
    }
    out.result = json!({
        "moments": m,
        "warnings": weighted.warnings,
        "kernel_tv_vs_direct": tv,
        "md": md,
    });
    out.file("md_matrix.csv", export::md_matrix_csv(&md));
    Ok(out)
}

/// Moments of `rho_T` from `x0`, used by the acceptance suite.
pub fn weight_moments(split: &DriftSplitModel, x0: &[f64], horizon: f64, n: usize, cfg: &IntegratorConfig) -> Result<WeightMoments> {
    let samples = weighted_ensemble(split, x0, horizon, n, couplex::Direction::AddDrift, cfg)?;
    Ok(WeightMoments::from_samples(&samples))
}

// ------------------------------------------------------- harnack-parabolic

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParabolicParams {
    grid: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x2_grid: Option<Vec<Vec<f64>>>,
    #[serde(default = "ParabolicParams::default_epsilon")]
    epsilon: f64,
    #[serde(default = "ParabolicParams::default_time_bins")]
    time_bins: usize,
    #[serde(default = "ParabolicParams::default_angle_bins")]
    angle_bins: usize,
    #[serde(default = "ParabolicParams::default_radial_bins")]
    radial_bins: usize,
    n: usize,
    /// Also estimate the time-1 MD with the `q'` diagnostic.
    #[serde(default)]
    corollary: bool,
    #[serde(default = "ParabolicParams::default_half_width")]
    corollary_half_width: f64,
    #[serde(default = "ParabolicParams::default_corollary_bins")]
    corollary_bins: usize,
    /// Repeat the corollary run on an independent stream and compare `q'`.
    #[serde(default)]
    independent_check: bool,
}

impl ParabolicParams {
    fn default_epsilon() -> f64 {
        0.1
    }

    fn default_time_bins() -> usize {
        3
    }

    fn default_angle_bins() -> usize {
        8
    }

    fn default_radial_bins() -> usize {
        2
    }

    fn default_half_width() -> f64 {
        4.0
    }

    fn default_corollary_bins() -> usize {
        20
    }
}

fn harnack_metrics(out: &mut OpOutput, r: &HarnackReport) {
    out.metric("n_hat", r.n_hat);
    out.metric("n_hat_raw", r.n_hat_raw);
    out.metric("md_integral", r.md_integral);
    out.metric("md_integral_stderr", r.md_integral_stderr);
    out.metric("q_hat", r.q_hat);
    out.metric("q_hat_adequate", r.q_hat_adequate);
    out.metric("bound", r.bound());
    if let Some(k) = r.kappa_hat {
        out.metric("kappa_hat", k);
    }
}

fn harnack_parabolic(ctx: &Ctx) -> Result<OpOutput> {
    let p: ParabolicParams = ctx.params()?;
    let model = ctx.model(None)?;
    let cells = CylinderCells::new(model.dim(), p.epsilon, p.time_bins, p.angle_bins, p.radial_bins)?;
    let cfg = ctx.integrator(1.0)?;
    let mut out = OpOutput { params: to_value(&p)?, ..Default::default() };
    let (harnack, corollary) = if p.corollary {
        ensure!(p.x2_grid.is_none(), "the corollary uses one grid; drop `x2_grid`");
        let binning = Binning::cube(model.dim(), p.corollary_half_width, p.corollary_bins)?;
        let c = md_via_parabolic_corollary(&model, &p.grid, &cells, p.n, &binning, &cfg)?;
        out.metric("q_prime", c.q_prime);
        out.metric("q_prime_stderr", c.q_prime_stderr);
        out.metric("p_small_min", c.p_small_min);
        out.metric("overlap_kappa", c.overlap.kappa);
        out.metric("overlap_kappa_stderr", c.overlap.kappa_stderr);
        out.check(
            "q_prime_is_product",
            (c.q_prime - c.q_hat * c.p_small_min).abs() <= 1e-15,
            format!("q' = {} = {} * {}", c.q_prime, c.q_hat, c.p_small_min),
        );
        out.check(
            "corollary_overlap_positive_3sigma",
            c.overlap.positive_at(3.0),
            format!("overlap {} se {}", c.overlap.kappa, c.overlap.kappa_stderr),
        );
        out.check(
            "corollary_inequality",
            c.inequality_holds,
            format!("overlap {} >= q'/N = {}", c.overlap.kappa, c.q_prime / c.n_hat),
        );
        if p.independent_check {
            let other = md_via_parabolic_corollary(&model, &p.grid, &cells, p.n, &binning, &cfg.with_substream(1))?;
            let product = other.q_hat * other.p_small_min;
            let tol = 3.0 * (c.q_prime_stderr.powi(2) + other.q_prime_stderr.powi(2)).sqrt();
            out.metric("independent_product", product);
            out.check(
                "q_prime_matches_independent_product",
                (c.q_prime - product).abs() <= tol,
                format!("q' {} vs independent {product} (3 se = {tol})", c.q_prime),
            );
        }
        (c.harnack.clone(), Some(c))
    } else {
        let x2 = p.x2_grid.as_ref().unwrap_or(&p.grid);
        (parabolic_harnack_check(&model, &p.grid, x2, &cells, p.n, &cfg)?, None)
    };
    harnack_metrics(&mut out, &harnack);
    out.check(
        "md_positive_3sigma",
        harnack.md_positive_at(3.0),
        format!("MD {} se {}", harnack.md_integral, harnack.md_integral_stderr),
    );
    out.check(
        "md_at_least_q_over_n",
        harnack.inequality_holds,
        format!("MD {} vs q/N = {}", harnack.md_integral, harnack.bound()),
    );
    out.file("ratio_table.csv", export::ratio_table_csv(&harnack));
    out.result = match corollary {
        Some(c) => to_value(&c)?,
        None => to_value(&harnack)?,
    };
    Ok(out)
}

// -------------------------------------------------------- harnack-elliptic

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EllipticParams {
    #[serde(default = "one")]
    radius: f64,
    grid: Vec<Vec<f64>>,
    #[serde(default = "EllipticParams::default_angle_bins")]
    angle_bins: usize,
    n: usize,
    /// Compare `N` with the Poisson-kernel value (planar Brownian motion).
    #[serde(default = "yes")]
    oracle: bool,
    #[serde(default = "EllipticParams::default_n_tolerance")]
    n_tolerance: f64,
    /// Chi-square test of exit cells from the center against uniform.
    #[serde(default = "yes")]
    uniformity: bool,
}

impl EllipticParams {
    fn default_angle_bins() -> usize {
        36
    }

    fn default_n_tolerance() -> f64 {
        0.10
    }
}

/// Largest ratio and smallest overlap of Poisson cell masses over a grid.
pub fn poisson_grid_oracle(grid: &[Vec<f64>], radius: f64, bins: usize) -> Result<(f64, f64)> {
    let masses = grid.iter().map(|x| poisson_cell_masses(x, radius, bins)).collect::<couplex::Result<Vec<_>>>()?;
    let mut ratio: f64 = 0.0;
    let mut overlap = f64::INFINITY;
    for a in &masses {
        for b in &masses {
            ratio = ratio.max(a.iter().zip(b).map(|(x, y)| x / y).fold(0.0, f64::max));
            overlap = overlap.min(a.iter().zip(b).map(|(x, y)| x.min(*y)).sum());
        }
    }
    Ok((ratio, overlap))
}

fn harnack_elliptic(ctx: &Ctx) -> Result<OpOutput> {
    let p: EllipticParams = ctx.params()?;
    let model = ctx.model(None)?;
    let cfg = ctx.integrator(1.0)?;
    let r = elliptic_harnack_check(&model, p.radius, &p.grid, p.angle_bins, p.n, &cfg)?;
    let mut out = OpOutput { params: to_value(&p)?, ..Default::default() };
    harnack_metrics(&mut out, &r);
    out.check("md_at_least_q_over_n", r.inequality_holds, format!("MD {} vs q/N = {}", r.md_integral, r.bound()));
    if p.oracle {
        ensure!(model.dim() == 2, "the Poisson-kernel oracle is planar; set oracle = false");
        let (ratio, _) = poisson_grid_oracle(&p.grid, p.radius, p.angle_bins)?;
        let rel = r.n_hat / ratio - 1.0;
        let tol = p.n_tolerance * ctx.tol_scale;
        out.metric("n_hat_oracle", ratio);
        out.metric("n_hat_relative_error", rel);
        out.check("n_hat_matches_poisson", rel.abs() <= tol, format!("N {} vs {ratio} (relative {rel}, tolerance {tol})", r.n_hat));
    }
    if p.uniformity {
        let cells = SphereCells::new(model.dim(), p.radius, p.angle_bins)?;
        let b = sample_exit_measure(&model, &vec![0.0; model.dim()], &cells, None, p.n, &cfg.with_substream(1))?;
        let probs = vec![1.0 / cells.cell_count() as f64; cells.cell_count()];
        let stat = chi_square_statistic(&b.counts, &probs);
        out.metric("uniformity_chi_square", stat);
        out.check(
            "exit_angle_uniform",
            b.uncaptured == 0 && chi_square_passes(&b.counts, &probs, 0.01),
            format!("chi-square {stat} over {} cells, {} uncaptured", cells.cell_count(), b.uncaptured),
        );
    }
    out.file("ratio_table.csv", export::ratio_table_csv(&r));
    out.result = to_value(&r)?;
    Ok(out)
}

// ------------------------------------------------------------- md-elliptic

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdEllipticParams {
    #[serde(default = "one")]
    radius: f64,
    #[serde(default = "MdEllipticParams::default_ladder")]
    ladder: Vec<f64>,
    grid: Vec<Vec<f64>>,
    #[serde(default = "EllipticParams::default_angle_bins")]
    angle_bins: usize,
    n: usize,
    #[serde(default = "MdEllipticParams::default_tail_max")]
    tail_max: f64,
    #[serde(default = "yes")]
    oracle: bool,
    #[serde(default = "MdEllipticParams::default_overlap_tolerance")]
    overlap_tolerance: f64,
}

impl MdEllipticParams {
    fn default_ladder() -> Vec<f64> {
        vec![1.0, 2.0, 4.0]
    }

    fn default_tail_max() -> f64 {
        0.02
    }

    fn default_overlap_tolerance() -> f64 {
        0.05
    }
}

fn md_elliptic(ctx: &Ctx) -> Result<OpOutput> {
    let p: MdEllipticParams = ctx.params()?;
    let model = ctx.model(None)?;
    let cfg = ctx.integrator(1.0)?;
    let r = md_via_elliptic(&model, p.radius, &p.ladder, &p.grid, p.angle_bins, p.n, &cfg)?;
    let mut out = OpOutput { params: to_value(&p)?, ..Default::default() };
    for (i, rung) in r.ladder.iter().enumerate() {
        out.metric(format!("overlap_{i}"), rung.overlap);
        out.metric(format!("tail_sup_{i}"), rung.tail_sup);
    }
    let last = r.ladder.last().expect("ladder is nonempty");
    let steps_monotone = r.ladder.windows(2).all(|w| w[1].overlap >= w[0].overlap);
    out.check(
        "overlap_nondecreasing_in_horizon",
        r.monotone && steps_monotone,
        format!("overlaps {:?}", r.ladder.iter().map(|x| x.overlap).collect::<Vec<_>>()),
    );
    let tail_max = p.tail_max * ctx.tol_scale;
    out.check("tail_below_threshold", last.tail_sup < tail_max, format!("sup P(tau >= {}) = {} < {tail_max}", last.horizon, last.tail_sup));
    if p.oracle {
        ensure!(model.dim() == 2, "the Poisson-kernel oracle is planar; set oracle = false");
        let (_, overlap) = poisson_grid_oracle(&p.grid, p.radius, p.angle_bins)?;
        let tol = p.overlap_tolerance * ctx.tol_scale;
        out.metric("overlap_oracle", overlap);
        out.check(
            "overlap_matches_poisson",
            (last.overlap - overlap).abs() <= tol,
            format!("overlap {} vs {overlap} (tolerance {tol})", last.overlap),
        );
    }
    out.file(
        "ladder.csv",
        rows_csv(
            "horizon,overlap,overlap_stderr,tail_sup,tail_stderr",
            r.ladder.iter().map(|x| vec![x.horizon, x.overlap, x.overlap_stderr, x.tail_sup, x.tail_stderr]),
        ),
    );
    out.result = to_value(&r)?;
    Ok(out)
}

// ---------------------------------------------------------------- tv-curve

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum StationaryMode {
    Exact,
    LongRun,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TvCurveParams {
    /// Finite chain (exact mode). Without it the configured model is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    chain: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial: Option<Vec<f64>>,
    #[serde(default = "TvCurveParams::default_t_max")]
    t_max: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    times: Option<Vec<f64>>,
    #[serde(default = "TvCurveParams::default_n")]
    n: usize,
    #[serde(default = "GirsanovParams::default_bins")]
    bins: usize,
    #[serde(default = "GirsanovParams::default_half_width")]
    half_width: f64,
    #[serde(default = "TvCurveParams::default_stationary")]
    stationary: StationaryMode,
    #[serde(default = "TvCurveParams::default_long_run_horizon")]
    long_run_horizon: f64,
    #[serde(default = "TvCurveParams::default_n")]
    long_run_n: usize,
    /// Compare with the Gaussian TV (one-dimensional OU only).
    #[serde(default)]
    oracle: bool,
    #[serde(default = "GirsanovParams::default_tv_max")]
    oracle_tolerance: f64,
}

impl TvCurveParams {
    fn default_t_max() -> u64 {
        50
    }

    fn default_n() -> usize {
        100_000
    }

    fn default_stationary() -> StationaryMode {
        StationaryMode::Exact
    }

    fn default_long_run_horizon() -> f64 {
        10.0
    }
}

/// Exact Gaussian kernel of a registry OU or BM spec.
pub fn gaussian_kernel_of(spec: &str) -> Result<Option<GaussianKernel>> {
    let s: ModelSpec = spec.parse()?;
    let d = s.count("d", 1)?;
    let sigma = s.real("sigma", 1.0)?;
    Ok(match s.name.as_str() {
        "ou" => Some(GaussianKernel::OrnsteinUhlenbeck { dim: d, theta: s.real("theta", 1.0)?, sigma }),
        "bm" => Some(GaussianKernel::Brownian { dim: d, sigma }),
        _ => None,
    })
}

fn curve_outputs(out: &mut OpOutput, curve: &TvCurve) {
    for (i, v) in curve.values.iter().enumerate() {
        out.metric(format!("tv_{i}"), *v);
    }
    if let Some(rate) = curve.fit_exponential_rate() {
        out.metric("fitted_rate", rate);
    }
    let verdict = check_tv_monotonicity(curve);
    out.metric("max_violation", verdict.max_violation);
    out.metric("raw_increases", verdict.raw_increases as f64);
    out.check(
        "tv_nonincreasing",
        verdict.holds,
        format!("{} violations ({}), {} raw increases", verdict.violations.len(), verdict.tolerance, verdict.raw_increases),
    );
    out.file("tv_curve.csv", export::tv_curve_csv(curve));
    out.file("tv_curve.dat", export::tv_curve_columns(curve));
}

fn tv_curve(ctx: &Ctx) -> Result<OpOutput> {
    let p: TvCurveParams = ctx.params()?;
    let mut out = OpOutput { params: to_value(&p)?, ..Default::default() };
    if let Some(rows) = &p.chain {
        let chain = FiniteChain::new(rows.clone())?;
        let initial = p.initial.clone().ok_or_else(|| anyhow!("chain mode needs `initial`"))?;
        let times: Vec<u64> = (0..=p.t_max).collect();
        let curve = tv_curve_chain(&chain, &initial, None, &times)?;
        curve_outputs(&mut out, &curve);
        out.result = json!({ "curve": curve });
        return Ok(out);
    }
    let model = ctx.model(None)?;
    let x0 = p.x0.clone().ok_or_else(|| anyhow!("model mode needs `x0`"))?;
    let times = p.times.clone().ok_or_else(|| anyhow!("model mode needs `times`"))?;
    let t_last = *times.last().ok_or_else(|| anyhow!("`times` is empty"))?;
    let binning = Binning::cube(model.dim(), p.half_width, p.bins)?;
    let kernel = gaussian_kernel_of(&ctx.model_spec(None)?)?;
    let stationary = match p.stationary {
        StationaryMode::Exact => {
            let (masses, outside) = kernel
                .and_then(|k| k.stationary_box_masses(&binning))
                .ok_or_else(|| anyhow!("exact stationary law is known for `ou` only; use stationary = \"long_run\""))?;
            KernelHistogram::from_masses(&binning, masses, outside)?
        }
        StationaryMode::LongRun => {
            let cfg = ctx.integrator(p.long_run_horizon)?;
            stationary_histogram_long_run(&model, &x0, p.long_run_horizon, p.long_run_n, &binning, &cfg)?
        }
    };
    let cfg = ctx.integrator(t_last.max(ctx.cfg.step))?;
    let curve = tv_curve_model(&model, &x0, &stationary, &times, p.n, &cfg)?;
    curve_outputs(&mut out, &curve);
    let mut oracle_values = None;
    if p.oracle {
        let Some(k @ GaussianKernel::OrnsteinUhlenbeck { dim: 1, .. }) = kernel else {
            bail!("the TV oracle covers one-dimensional `ou` only");
        };
        let s_inf = k.stationary_variance().expect("OU is stationary").sqrt();
        let exact = times
            .iter()
            .map(|&t| gaussian_tv(k.mean(&x0, t)[0], k.variance(t).sqrt(), 0.0, s_inf))
            .collect::<couplex::Result<Vec<_>>>()?;
        let err = curve.values.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let tol = p.oracle_tolerance * ctx.tol_scale;
        out.metric("max_oracle_error", err);
        out.check("tv_matches_gaussian_oracle", err <= tol, format!("max |tv - oracle| = {err} <= {tol}"));
        oracle_values = Some(exact);
    }
    out.result = json!({ "curve": curve, "oracle": oracle_values });
    Ok(out)
}

// ------------------------------------------------------------------ oracle

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum OracleParams {
    /// Overlap of N(m1, s^2) and N(m2, s^2), optionally restricted to [a, b].
    GaussianOverlap {
        m1: f64,
        m2: f64,
        s: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<f64>,
    },
    GaussianTv { m1: f64, s1: f64, m2: f64, s2: f64 },
    /// Harmonic-measure cell masses of the disk over a grid.
    PoissonCells { grid: Vec<Vec<f64>>, radius: f64, bins: usize },
    ChainMd { chain: Vec<Vec<f64>>, d: Vec<usize>, d_prime: Vec<usize> },
    ChainMarginal { chain: Vec<Vec<f64>>, initial: Vec<f64>, t: u64 },
    /// Meeting probability of two Brownian motions `distance` apart.
    Meeting { distance: f64, horizon: f64, sigma: f64 },
    Envelope { kernel: GaussianKernel, times: Vec<f64>, constants: EnvelopeConstants, points: Vec<Vec<f64>> },
}

fn oracle(ctx: &Ctx) -> Result<OpOutput> {
    let p: OracleParams = ctx.params()?;
    let mut out = OpOutput { params: to_value(&p)?, ..Default::default() };
    out.result = match &p {
        OracleParams::GaussianOverlap { m1, m2, s, a, b } => {
            let v = match (a, b) {
                (Some(a), Some(b)) => gaussian_overlap_truncated(*m1, *m2, *s, *a, *b)?,
                (None, None) => gaussian_overlap(*m1, *m2, *s)?,
                _ => bail!("give both `a` and `b` or neither"),
            };
            out.metric("value", v);
            json!({ "value": v })
        }
        OracleParams::GaussianTv { m1, s1, m2, s2 } => {
            let v = gaussian_tv(*m1, *s1, *m2, *s2)?;
            out.metric("value", v);
            json!({ "value": v })
        }
        OracleParams::PoissonCells { grid, radius, bins } => {
            let masses = grid.iter().map(|x| poisson_cell_masses(x, *radius, *bins)).collect::<couplex::Result<Vec<_>>>()?;
            let (ratio, overlap) = poisson_grid_oracle(grid, *radius, *bins)?;
            out.metric("max_ratio", ratio);
            out.metric("min_overlap", overlap);
            json!({ "masses": masses, "max_ratio": ratio, "min_overlap": overlap })
        }
        OracleParams::ChainMd { chain, d, d_prime } => {
            let v = exact_md_finite_chain(chain, d, d_prime)?;
            out.metric("value", v);
            json!({ "value": v })
        }
        OracleParams::ChainMarginal { chain, initial, t } => {
            let mu = chain_marginal(&FiniteChain::new(chain.clone())?, initial, *t)?;
            json!({ "marginal": mu })
        }
        OracleParams::Meeting { distance, horizon, sigma } => {
            ensure!(*horizon > 0.0 && *sigma > 0.0, "horizon and sigma must be positive");
            let v = 2.0 * normal_cdf(-distance.abs() / (sigma * (2.0 * horizon).sqrt()));
            out.metric("value", v);
            json!({ "value": v })
        }
        OracleParams::Envelope { kernel, times, constants, points } => {
            let v = gaussian_envelope_ladder(kernel, times, constants, points)?;
            out.check("envelope_holds", v.holds, format!("{} points checked", v.checked));
            to_value(&v)?
        }
    };
    Ok(out)
}
