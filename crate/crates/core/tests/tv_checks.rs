use couplex::oracle::gaussian_tv;
use couplex::sde::registry::ornstein_uhlenbeck;
use couplex::tv::{check_chain_monotonicity, tv_curve_chain, tv_curve_model};
use couplex::{check_tv_monotonicity, Binning, FiniteChain, GaussianKernel, IntegratorConfig, KernelHistogram};

/// TV in [0,1] between N(e^{-t}, (1 - e^{-2t})/2) and N(0, 1/2).
const OU_TV_FROM_ONE: [(f64, f64); 5] = [
    (0.25, 0.5244612356191045),
    (0.5, 0.37655842671457807),
    (1.0, 0.2143776405633943),
    (2.0, 0.07667767959595734),
    (3.0, 0.028105317706312773),
];

fn ou_kernel() -> GaussianKernel {
    GaussianKernel::OrnsteinUhlenbeck { dim: 1, theta: 1.0, sigma: 1.0 }
}

#[test]
fn frozen_ou_tv_agrees_with_quadrature() {
    let k = ou_kernel();
    for (t, v) in OU_TV_FROM_ONE {
        let tv = gaussian_tv(k.mean(&[1.0], t)[0], k.variance(t).sqrt(), 0.0, 0.5f64.sqrt()).unwrap();
        assert!((tv - v).abs() < 1e-9, "t = {t}: {tv} vs {v}");
    }
}

#[test]
fn ou_curve_tracks_the_gaussian_oracle_and_decreases() {
    let m = ornstein_uhlenbeck(1, 1.0, 1.0).unwrap();
    let binning = Binning::interval(-4.0, 4.0, 50).unwrap();
    let (masses, outside) = ou_kernel().stationary_box_masses(&binning).unwrap();
    let stationary = KernelHistogram::from_masses(&binning, masses, outside).unwrap();
    let times: Vec<f64> = OU_TV_FROM_ONE.iter().map(|p| p.0).collect();
    let cfg = IntegratorConfig::new(1e-3, 3.0, 81).unwrap();
    let curve = tv_curve_model(&m, &[1.0], &stationary, &times, 100_000, &cfg).unwrap();
    for ((t, oracle), v) in OU_TV_FROM_ONE.iter().zip(&curve.values) {
        assert!((v - oracle).abs() < 0.05, "t = {t}: {v} vs {oracle}");
    }
    let verdict = check_tv_monotonicity(&curve);
    assert!(verdict.holds, "{verdict:?}");
    assert!(curve.resolution.as_deref().unwrap().contains("underestimates"));
}

#[test]
fn stationary_start_stays_at_zero() {
    let c = FiniteChain::new(vec![vec![0.5, 0.3, 0.2], vec![0.2, 0.5, 0.3], vec![0.1, 0.1, 0.8]]).unwrap();
    let pi = c.stationary().unwrap();
    let curve = tv_curve_chain(&c, &pi, None, &(0..30).collect::<Vec<_>>()).unwrap();
    assert!(curve.values.iter().all(|v| v.abs() < 1e-12));
    assert!(check_chain_monotonicity(&c, &[1.0, 0.0, 0.0], None, 50).unwrap().holds);
}

#[test]
fn two_state_flip_chain_decays_geometrically() {
    let c = FiniteChain::new(vec![vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap();
    let times: Vec<u64> = (0..=40).collect();
    let curve = tv_curve_chain(&c, &[0.9, 0.1], None, &times).unwrap();
    let tv0 = 0.4;
    for (t, v) in curve.times.iter().zip(&curve.values) {
        assert!((v - 0.4f64.powf(*t) * tv0).abs() < 1e-14);
    }
}
