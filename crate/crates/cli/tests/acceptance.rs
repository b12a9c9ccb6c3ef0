//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criteria 4 to 9 run the shipped configs through the same path
//! as the CLI.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{ensure, Result};
use couplex::oracle::{chain_marginal, FiniteChain};
use couplex::sde::registry::ornstein_uhlenbeck;
use couplex::tv::{check_chain_monotonicity, tv_curve_model};
use couplex::{build_maximal_coupling, check_tv_monotonicity, Binning, DiscreteDistribution, GaussianKernel, IntegratorConfig, KernelHistogram};
use couplex_cli::ops::check_maximal_coupling;
use couplex_cli::suite::run_suite;
use couplex_cli::{execute, ExperimentConfig, Operation, Report};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run_config(name: &str) -> Result<Report> {
    let cfg = ExperimentConfig::load(&configs().join(name))?;
    let op = Operation::parse(cfg.operation.as_deref().unwrap_or_default())?;
    Ok(execute(op, &cfg, 1.0)?.0)
}

/// Requires every check of `report` to pass and returns the named metrics.
fn all_checks(report: &Report, metrics: &[&str]) -> Result<String> {
    let failed: Vec<String> = report.failed_checks().map(|c| format!("{} ({})", c.name, c.detail)).collect();
    ensure!(failed.is_empty(), "{}: failed {}", report.command, failed.join("; "));
    let shown: Vec<String> = metrics.iter().map(|m| format!("{m}={:.5}", report.metrics[*m])).collect();
    Ok(shown.join(" "))
}

fn random_law(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() }).collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            return v.into_iter().map(|x| x / s).collect();
        }
    }
}

fn criterion_1() -> Result<String> {
    let p1 = DiscreteDistribution::from_probabilities(vec![0.7, 0.3])?;
    let p2 = DiscreteDistribution::from_probabilities(vec![0.5, 0.5])?;
    let (c, _) = check_maximal_coupling(&p1, &p2, 100_000, 1001)?;
    ensure!((c.q - 0.8).abs() <= 1e-15, "q = {}", c.q);
    ensure!(c.mismatch_within_3se, "mismatch {} vs 0.2 (se {})", c.mismatch_rate, c.mismatch_stderr);
    ensure!(c.first_marginal_passes && c.second_marginal_passes, "chi-square {} / {}", c.first_marginal_chi_square, c.second_marginal_chi_square);
    Ok(format!("q={} mismatch={} se={:.5}", c.q, c.mismatch_rate, c.mismatch_stderr))
}

fn criterion_2() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..=20);
        let (a, b) = (random_law(&mut rng, k), random_law(&mut rng, k));
        let s = build_maximal_coupling(&DiscreteDistribution::from_probabilities(a.clone())?, &DiscreteDistribution::from_probabilities(b.clone())?)?;
        for (j, p) in [(1, &a), (2, &b)] {
            for (x, y) in s.mixture_masses(j).iter().zip(p) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    ensure!(worst <= 1e-9, "max error {worst}");
    Ok(format!("100 pairs, max error {worst:.2e}"))
}

fn criterion_3() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    for i in 0..50 {
        let k = rng.random_range(2..=10);
        let chain = FiniteChain::new((0..k).map(|_| random_law(&mut rng, k)).collect())?;
        let init = random_law(&mut rng, k);
        let v = check_chain_monotonicity(&chain, &init, None, 50)?;
        ensure!(v.holds && v.max_violation <= 0.0, "chain {i}: {:?}", v.violations.first());
        ensure!(chain_marginal(&chain, &init, 50)?.len() == k, "chain {i}: marginal has the wrong size");
    }
    let m = ornstein_uhlenbeck(1, 1.0, 1.0)?;
    let binning = Binning::interval(-4.0, 4.0, 50)?;
    let kernel = GaussianKernel::OrnsteinUhlenbeck { dim: 1, theta: 1.0, sigma: 1.0 };
    let (masses, outside) = kernel.stationary_box_masses(&binning).expect("OU is stationary");
    let stationary = KernelHistogram::from_masses(&binning, masses, outside)?;
    let times = [0.25, 0.5, 1.0, 2.0, 3.0];
    let cfg = IntegratorConfig::new(1e-3, 3.0, 3004)?;
    let curve = tv_curve_model(&m, &[1.0], &stationary, &times, 100_000, &cfg)?;
    let v = check_tv_monotonicity(&curve);
    ensure!(v.holds, "OU curve: {:?}", v.violations);
    Ok(format!("50 chains exact; OU curve {} raw increases, none beyond 3 sigma", v.raw_increases))
}

fn criterion_4() -> Result<String> {
    all_checks(&run_config("md_ou.toml")?, &["kappa", "kappa_stderr"])
}

fn criterion_5() -> Result<String> {
    let bm = all_checks(&run_config("meet_bm.toml")?, &["probability_0"])?;
    let bounded = all_checks(&run_config("meet_bounded.toml")?, &["min_probability", "min_stderr"])?;
    Ok(format!("{bm} {bounded}"))
}

fn criterion_6() -> Result<String> {
    let sign = all_checks(&run_config("girsanov_sign.toml")?, &["mean_rho", "rho_stderr", "kernel_tv_vs_direct", "kappa", "kappa_stderr"])?;
    let constant = all_checks(&run_config("girsanov_const.toml")?, &["constant_drift_max_error"])?;
    Ok(format!("{sign} {constant}"))
}

fn criterion_7() -> Result<String> {
    all_checks(&run_config("harnack_elliptic.toml")?, &["n_hat", "n_hat_oracle", "uniformity_chi_square"])
}

fn criterion_8() -> Result<String> {
    all_checks(&run_config("harnack_parabolic.toml")?, &["md_integral", "md_integral_stderr", "bound", "q_prime", "independent_product"])
}

fn criterion_9() -> Result<String> {
    all_checks(&run_config("md_elliptic.toml")?, &["overlap_0", "overlap_1", "overlap_2", "tail_sup_2"])
}

/// Every file under `dir` except timing sidecars, keyed by relative path.
fn report_bytes(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else if !p.to_string_lossy().ends_with(".meta.json") {
                out.insert(p.strip_prefix(dir)?.to_path_buf(), std::fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

fn criterion_10() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let shipped = std::fs::read_to_string(configs().join("suite.toml"))?;
    let scaled = shipped
        .replace("scale_n = 1.0", "scale_n = 0.02")
        .replace("config = \"", &format!("config = \"{}/", configs().display()));
    ensure!(scaled.contains("scale_n = 0.02"), "shipped suite has no scale_n line to reduce");
    let suite = tmp.path().join("suite.toml");
    std::fs::write(&suite, scaled)?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = run_suite(&suite, None, &a);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build()?;
    let second = pool.install(|| run_suite(&suite, None, &b));
    let (first, _) = (first?, second?);
    ensure!(first.rows.iter().all(|r| r.error.is_none()), "suite errors: {:?}", first.rows);
    let (ba, bb) = (report_bytes(&a)?, report_bytes(&b)?);
    ensure!(ba.keys().eq(bb.keys()), "different file sets");
    let differing: Vec<_> = ba.iter().filter(|(k, v)| bb[*k] != **v).map(|(k, _)| k.display().to_string()).collect();
    ensure!(differing.is_empty(), "differing files: {differing:?}");
    Ok(format!("{} runs, {} files identical across two executions (default pool vs 3 threads)", first.rows.len(), ba.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<String>, u64); 10] = [
        ("maximal coupling exactness", criterion_1, 30),
        ("mixture identity", criterion_2, 5),
        ("TV monotonicity", criterion_3, 120),
        ("MD estimator vs Gaussian oracle", criterion_4, 120),
        ("intersection coupling", criterion_5, 300),
        ("Girsanov reweighting", criterion_6, 300),
        ("elliptic Harnack", criterion_7, 300),
        ("parabolic Harnack and time-1 MD", criterion_8, 600),
        ("exhaustion ladder", criterion_9, 300),
        ("determinism", criterion_10, 600),
    ];
    let mut failures = 0;
    for (i, (name, run, budget)) in criteria.into_iter().enumerate() {
        let clock = Instant::now();
        let outcome = run();
        let elapsed = clock.elapsed();
        let outcome = outcome.and_then(|detail| {
            ensure!(elapsed <= Duration::from_secs(budget), "took {:.1}s, budget {budget}s", elapsed.as_secs_f64());
            Ok(detail)
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}) [{:.1}s]: {detail}", i + 1, elapsed.as_secs_f64()),
            Err(e) => {
                failures += 1;
                println!("FAIL criterion {} ({name}) [{:.1}s]: {e:#}", i + 1, elapsed.as_secs_f64());
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
