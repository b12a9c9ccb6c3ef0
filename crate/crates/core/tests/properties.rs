use couplex::girsanov::{log_weight_between, log_weight_bound};
use couplex::md::{md_from_histograms, minorization_from_histograms, overlap_table};
use couplex::oracle::chain_marginal;
use couplex::sde::registry::brownian;
use couplex::sde::simulate_path_indexed;
use couplex::tv::{check_chain_monotonicity, tv_masses};
use couplex::{
    build_maximal_coupling, exact_md_finite_chain, tv_exact, Binning, Direction, DiscreteDistribution, DriftSplitModel,
    FiniteChain, IntegratorConfig, KernelHistogram, Lane,
};
use proptest::prelude::*;

fn normalize(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Probability vector of length `k`; about a quarter of the entries are zero.
fn law(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 3 => 0.01f64..1.0], k)
        .prop_filter("needs mass", |v| v.iter().sum::<f64>() > 0.0)
        .prop_map(normalize)
}

fn law_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|k| (law(k), law(k)))
}

fn law_triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|k| (law(k), law(k), law(k)))
}

/// Row-stochastic matrix with strictly positive entries.
fn chain() -> impl Strategy<Value = FiniteChain> {
    (2usize..=10).prop_flat_map(|k| {
        prop::collection::vec(prop::collection::vec(0.01f64..1.0, k).prop_map(normalize), k)
            .prop_map(|rows| FiniteChain::new(rows).unwrap())
    })
}

fn chain_with_law() -> impl Strategy<Value = (FiniteChain, Vec<f64>)> {
    chain().prop_flat_map(|c| {
        let k = c.len();
        (Just(c), law(k))
    })
}

fn dist(p: &[f64]) -> DiscreteDistribution {
    DiscreteDistribution::from_probabilities(p.to_vec()).unwrap()
}

/// Family of mass vectors on `k` cells, with cell masses summing to at most one.
fn family() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..8, 1usize..5).prop_flat_map(|(k, m)| {
        prop::collection::vec(law(k + 1).prop_map(|v| v[..v.len() - 1].to_vec()), m)
    })
}

proptest! {
    #[test]
    fn mixture_identity_reconstructs_both_laws((p1, p2) in law_pair()) {
        let s = build_maximal_coupling(&dist(&p1), &dist(&p2)).unwrap();
        for (j, p) in [(1, &p1), (2, &p2)] {
            for (a, b) in s.mixture_masses(j).iter().zip(p.iter()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn mismatch_probability_equals_tv((p1, p2) in law_pair()) {
        let s = build_maximal_coupling(&dist(&p1), &dist(&p2)).unwrap();
        let tv = tv_exact(&dist(&p1), &dist(&p2)).unwrap();
        prop_assert!((s.mismatch_probability() - tv).abs() <= 1e-12);
        prop_assert!((tv - tv_masses(&p1, &p2).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn swapping_laws_mirrors_the_coupling((p1, p2) in law_pair()) {
        let a = build_maximal_coupling(&dist(&p1), &dist(&p2)).unwrap();
        let b = build_maximal_coupling(&dist(&p2), &dist(&p1)).unwrap();
        prop_assert_eq!(a.q(), b.q());
        prop_assert_eq!(a.residual_law(1), b.residual_law(2));
        prop_assert_eq!(a.overlap_law(), b.overlap_law());
    }

    #[test]
    fn tv_is_a_metric((p, q, r) in law_triple()) {
        let (dp, dq, dr) = (dist(&p), dist(&q), dist(&r));
        let pq = tv_exact(&dp, &dq).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&pq));
        prop_assert!((pq - tv_exact(&dq, &dp).unwrap()).abs() <= 1e-15);
        prop_assert!(tv_exact(&dp, &dp).unwrap().abs() <= 1e-9);
        prop_assert!(pq <= tv_exact(&dp, &dr).unwrap() + tv_exact(&dr, &dq).unwrap() + 1e-12);
        if pq <= 1e-9 {
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 2e-9);
            }
        }
    }

    #[test]
    fn tv_to_stationarity_never_increases((c, init) in chain_with_law()) {
        let v = check_chain_monotonicity(&c, &init, None, 50).unwrap();
        prop_assert!(v.holds, "{:?}", v.violations.first());
    }

    #[test]
    fn marginals_compose((c, init) in chain_with_law(), s in 0u64..20, t in 0u64..20) {
        let direct = chain_marginal(&c, &init, s + t).unwrap();
        let mid = chain_marginal(&c, &init, s).unwrap();
        let composed = chain_marginal(&c, &mid, t).unwrap();
        for (a, b) in direct.iter().zip(&composed) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn overlap_matrix_is_symmetric_and_bounded(f in family()) {
        let k = f[0].len();
        let t = overlap_table(&f, None, &vec![true; k]);
        for i in 0..f.len() {
            let own: f64 = f[i].iter().sum();
            prop_assert!((t.matrix[i][i] - own).abs() <= 1e-12);
            for j in 0..f.len() {
                prop_assert_eq!(t.matrix[i][j], t.matrix[j][i]);
                prop_assert!(t.matrix[i][j] >= 0.0 && t.matrix[i][j] <= 1.0 + 1e-12);
            }
        }
        prop_assert!(t.kappa <= t.matrix.iter().flatten().cloned().fold(f64::INFINITY, f64::min) + 1e-15);
    }

    #[test]
    fn enlarging_the_target_never_decreases_kappa(f in family(), bits in prop::collection::vec(any::<bool>(), 8), extra in prop::collection::vec(any::<bool>(), 8)) {
        let k = f[0].len();
        let small: Vec<bool> = bits[..k].to_vec();
        let large: Vec<bool> = small.iter().zip(&extra[..k]).map(|(a, b)| *a || *b).collect();
        let a = overlap_table(&f, None, &small).kappa;
        let b = overlap_table(&f, None, &large).kappa;
        prop_assert!(a <= b + 1e-15);
    }

    #[test]
    fn minorization_bounds_kappa_from_below(f in family()) {
        let k = f[0].len();
        let binning = Binning::interval(0.0, k as f64, k).unwrap();
        let hists: Vec<KernelHistogram> = f
            .iter()
            .map(|m| KernelHistogram::from_masses(&binning, m.clone(), (1.0 - m.iter().sum::<f64>()).max(0.0)).unwrap())
            .collect();
        let starts: Vec<Vec<f64>> = (0..f.len()).map(|i| vec![i as f64]).collect();
        let mask = vec![true; k];
        let md = md_from_histograms(&hists, &starts, &mask, 1.0).unwrap();
        let nu = normalize(f[0].iter().map(|v| v + 0.01).collect());
        for nu in [None, Some(nu.as_slice())] {
            let minor = minorization_from_histograms(&hists, &mask, nu, 1.0).unwrap();
            prop_assert!(minor.md_lower_bound(&mask) <= md.kappa + 1e-12);
        }
    }

    #[test]
    fn exact_chain_coefficient_matches_histogram_route(c in chain(), d_bits in prop::collection::vec(any::<bool>(), 10), t_bits in prop::collection::vec(any::<bool>(), 10)) {
        let k = c.len();
        let d: Vec<usize> = (0..k).filter(|&i| d_bits[i]).collect();
        prop_assume!(!d.is_empty());
        let d_prime: Vec<usize> = (0..k).filter(|&i| t_bits[i]).collect();
        let exact = exact_md_finite_chain(c.rows(), &d, &d_prime).unwrap();
        let binning = Binning::interval(0.0, k as f64, k).unwrap();
        let hists: Vec<KernelHistogram> = d.iter().map(|&i| KernelHistogram::from_masses(&binning, c.row(i).to_vec(), 0.0).unwrap()).collect();
        let starts: Vec<Vec<f64>> = d.iter().map(|&i| vec![i as f64]).collect();
        let mask: Vec<bool> = (0..k).map(|i| t_bits[i]).collect();
        let md = md_from_histograms(&hists, &starts, &mask, 1.0).unwrap();
        prop_assert!((md.kappa - exact).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn girsanov_weights_split_and_obey_the_pathwise_bound(seed in any::<u64>(), cut in 0usize..=50, c in 0.1f64..2.0) {
        let split = DriftSplitModel::from_spec(brownian(1, 1.0).unwrap(), &format!("sign{{c={c}}}")).unwrap();
        let cfg = IntegratorConfig::new(0.02, 1.0, seed).unwrap();
        let path = simulate_path_indexed(split.base(), &[0.1], &cfg, Lane::PRIMARY, 0, true).unwrap();
        for dir in [Direction::AddDrift, Direction::RemoveDrift] {
            let whole = log_weight_between(&split, &path, dir, 0, 50).unwrap();
            let parts = log_weight_between(&split, &path, dir, 0, cut).unwrap() + log_weight_between(&split, &path, dir, cut, 50).unwrap();
            prop_assert!((whole - parts).abs() <= 1e-12);
            prop_assert!(whole.abs() <= log_weight_bound(&split, &path).unwrap() + 1e-12);
        }
    }
}
