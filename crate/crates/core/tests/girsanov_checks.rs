use couplex::girsanov::{log_weight_bound, weighted_ensemble, WeightMoments};
use couplex::md::{kernel_family, md_from_histograms};
use couplex::sde::registry::{brownian, sign_drift};
use couplex::sde::simulate_path_indexed;
use couplex::{
    estimate_kernel_histogram, estimate_md_girsanov, reweighted_kernel, stochastic_exponential, Binning, Direction,
    DriftSplitModel, GaussianKernel, IntegratorConfig, KernelHistogram, Lane, MdQuery, Region,
};

fn split(d: usize, extra: &str) -> DriftSplitModel {
    DriftSplitModel::from_spec(brownian(d, 1.0).unwrap(), extra).unwrap()
}

/// TV in [0,1] between two histograms on one binning, counting the outside
/// mass as one more cell.
fn histogram_tv(a: &KernelHistogram, b: &KernelHistogram) -> f64 {
    let cells: f64 = a.masses().iter().zip(b.masses()).map(|(x, y)| (x - y).abs()).sum();
    0.5 * (cells + (a.outside() - b.outside()).abs())
}

#[test]
fn mean_weight_is_one_for_bounded_extra_drifts() {
    let cfg = IntegratorConfig::new(0.01, 1.0, 51).unwrap();
    for extra in ["sign{c=1}", "tanh{c=1}"] {
        let s = split(1, extra);
        let samples = weighted_ensemble(&s, &[0.2], 1.0, 100_000, Direction::AddDrift, &cfg).unwrap();
        let m = WeightMoments::from_samples(&samples);
        assert!(m.unbiased_at(3.0), "{extra}: mean {} se {}", m.mean, m.stderr);
        assert!(samples.iter().all(|w| w.weight > 0.0 && !w.overflow));
    }
}

#[test]
fn constant_drift_log_weight_is_exact_on_every_path() {
    let c = 0.5;
    let s = split(1, "const{c=0.5}");
    let cfg = IntegratorConfig::new(0.01, 1.0, 52).unwrap();
    for i in 0..2000 {
        let p = simulate_path_indexed(s.base(), &[0.0], &cfg, Lane::PRIMARY, i, true).unwrap();
        let w_t = p.terminal()[0];
        let w = stochastic_exponential(&s, &p, Direction::RemoveDrift).unwrap();
        assert!((w.log_weight - (-c * w_t - c * c / 2.0)).abs() < 1e-12);
        assert!(w.log_weight.abs() <= log_weight_bound(&s, &p).unwrap());
    }
}

#[test]
fn constant_drift_reweighting_matches_the_shifted_gaussian() {
    let c = 0.5;
    let s = split(1, "const{c=0.5}");
    let cfg = IntegratorConfig::new(0.01, 1.0, 53).unwrap();
    let n = 100_000;
    let binning = Binning::interval(-2.5, 3.5, 30).unwrap();
    let k = reweighted_kernel(&s, &[0.0], 1.0, n, &binning, &cfg, false).unwrap();
    assert!(k.warnings.is_empty());
    let exact = GaussianKernel::Brownian { dim: 1, sigma: 1.0 }.box_masses(&[c], 1.0, &binning);
    for (cell, p) in exact.iter().enumerate() {
        let dev = (k.histogram.mass(cell) - p).abs();
        assert!(dev <= 3.0 * k.histogram.cell_se(cell), "cell {cell}: {} vs {p}", k.histogram.mass(cell));
    }
}

#[test]
fn reweighted_kernel_agrees_with_direct_simulation() {
    let s = split(1, "sign{c=1}");
    let cfg = IntegratorConfig::new(0.01, 1.0, 54).unwrap();
    let n = 100_000;
    let binning = Binning::interval(-4.0, 4.0, 50).unwrap();
    let weighted = reweighted_kernel(&s, &[0.5], 1.0, n, &binning, &cfg, false).unwrap();
    let direct = estimate_kernel_histogram(&s.full_model(), &[0.5], 1.0, n, &binning, &cfg.with_substream(1)).unwrap();
    let tv = histogram_tv(&weighted.histogram, &direct);
    assert!(tv <= 0.05, "TV {tv}");
}

#[test]
fn measurable_drift_coefficient_is_positive() {
    let s = split(2, "sign{c=1}");
    let cfg = IntegratorConfig::new(0.01, 1.0, 55).unwrap();
    let r = estimate_md_girsanov(&s, 1.0, 1.0, 20_000, 10, &cfg, None, false).unwrap();
    assert!(r.positive_at(3.0), "kappa {} se {}", r.kappa, r.kappa_stderr);
}

#[test]
fn reweighted_and_direct_coefficients_agree() {
    let s = split(1, "sign{c=1}");
    let cfg = IntegratorConfig::new(0.01, 1.0, 56).unwrap();
    let n = 50_000;
    let r = estimate_md_girsanov(&s, 1.0, 1.0, n, 20, &cfg, None, false).unwrap();
    let query = MdQuery {
        start_region: Region::centered_ball(1, 1.0),
        start_points: vec![vec![0.0], vec![-1.0], vec![1.0]],
        target: Region::centered_ball(1, 1.0),
        binning: Binning::cube(1, 1.0, 20).unwrap(),
        horizon: 1.0,
    };
    let hists = kernel_family(&s.full_model(), &query, n, &cfg.with_substream(1)).unwrap();
    let direct = md_from_histograms(&hists, &query.start_points, &query.target_mask(), 1.0).unwrap();
    let tol = 3.0 * (r.kappa_stderr.powi(2) + direct.kappa_stderr.powi(2)).sqrt();
    assert!((r.kappa - direct.kappa).abs() <= tol, "{} vs {} (tol {tol})", r.kappa, direct.kappa);
}

#[test]
fn zero_extra_drift_reduces_to_plain_estimation() {
    let s = split(1, "none");
    let cfg = IntegratorConfig::new(0.02, 1.0, 57).unwrap();
    let r = estimate_md_girsanov(&s, 1.0, 1.0, 5000, 20, &cfg, None, false).unwrap();
    let query = MdQuery {
        start_region: Region::centered_ball(1, 1.0),
        start_points: vec![vec![0.0], vec![-1.0], vec![1.0]],
        target: Region::centered_ball(1, 1.0),
        binning: Binning::cube(1, 1.0, 20).unwrap(),
        horizon: 1.0,
    };
    let plain = couplex::estimate_md(s.base(), &query, 5000, &cfg).unwrap();
    assert_eq!(r.kappa, plain.kappa);
    assert_eq!(r.matrix, plain.matrix);
}

#[test]
fn sign_drift_model_matches_its_split_form() {
    let full = sign_drift(2, 1.0, 1.0).unwrap();
    let via_split = split(2, "sign{c=1}").full_model();
    for x in [[0.3, -0.2], [-1.0, 0.0], [0.0, 2.0]] {
        assert_eq!(full.eval_drift(&x), via_split.eval_drift(&x));
    }
}
