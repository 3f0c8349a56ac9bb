use nalgebra::DMatrix;
use proptest::prelude::*;

use ogp_bounds::bound::{alpha_bar, combinatorial_h, ogp_indicator};
use ogp_bounds::combfactor::{closed_form_h, overlap_params, ConstraintSystem, EntropyProgram, OverlapMode};
use ogp_bounds::core::{build_overlap_matrix, covariance_coefficients, level_of_pair, ClusterSequence};
use ogp_bounds::probfactor::{nested_prob, QuadratureConfig};
use ogp_bounds::rdtlink::suggest_k_from_c;
use ogp_bounds::special::central_mass;
use ogp_bounds::Spec;

fn cluster_seq(max_levels: usize, max_ratio: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(2usize..=max_ratio, 1..=max_levels).prop_map(|r| {
        let mut k = vec![1];
        for x in r {
            k.push(k.last().unwrap() * x);
        }
        k
    })
}

/// Decreasing overlaps; `1 - q_1`, each gap and `q_s` are the shares of `w`.
fn overlaps(levels: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, levels + 1).prop_map(|w| {
        let total: f64 = w.iter().sum();
        let mut q = Vec::with_capacity(w.len() - 1);
        let mut cur = 1.0;
        for x in &w[..w.len() - 1] {
            cur -= x / total;
            q.push(cur);
        }
        q
    })
}

fn spec(max_levels: usize, max_ratio: usize) -> impl Strategy<Value = Spec> {
    cluster_seq(max_levels, max_ratio).prop_flat_map(|k| {
        let s = k.len() - 1;
        (Just(k), overlaps(s), prop::sample::select(vec![0.5, 1.0, 2.0]))
            .prop_map(|(k, q, kappa)| Spec::from_parts(&k, &q, kappa).unwrap())
    })
}

fn fast_quad() -> QuadratureConfig {
    QuadratureConfig {
        nodes_per_level: 32,
        ..QuadratureConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn inverse_reconstructs_identity(spec in spec(3, 4)) {
        let q = build_overlap_matrix(&spec);
        let inv = covariance_coefficients(&spec).unwrap().inverse_matrix(spec.k());
        let err = (&q * &inv - DMatrix::identity(q.nrows(), q.ncols())).abs().max();
        prop_assert!(err <= 1e-10, "{err:e}");
    }

    #[test]
    fn overlap_matrix_is_positive_definite(spec in spec(3, 4)) {
        let c = covariance_coefficients(&spec).unwrap();
        let eig = build_overlap_matrix(&spec).symmetric_eigenvalues();
        prop_assert!(eig.min() > 0.0);
        let log_det: f64 = eig.iter().map(|v| v.ln()).sum();
        prop_assert!((c.log_det_q - log_det).abs() <= 1e-9 * (1.0 + log_det.abs()));
    }

    #[test]
    fn level_rule_is_symmetric_and_ultrametric(k in cluster_seq(3, 3), picks in prop::collection::vec(any::<prop::sample::Index>(), 3)) {
        let k = ClusterSequence::new(k).unwrap();
        let n = k.total();
        let [i, j, l] = [0, 1, 2].map(|t| picks[t].index(n) + 1);
        let lv = |a, b| level_of_pair(a, b, &k).unwrap();
        prop_assert_eq!(lv(i, j), lv(j, i));
        prop_assert_eq!(lv(i, i), 0);
        prop_assert!(lv(i, j) <= lv(i, l).max(lv(l, j)));
    }

    #[test]
    fn coefficient_signs(spec in spec(3, 4)) {
        let c = covariance_coefficients(&spec).unwrap().c_w;
        prop_assert!(c[0] > 0.0);
        prop_assert!(c[1..].iter().all(|&v| v < 0.0));
    }

    #[test]
    fn multiplicative_mass_is_between_independence_and_one_vector(spec in spec(2, 3)) {
        let p = nested_prob(&spec, &fast_quad()).unwrap().p;
        let one = central_mass(spec.kappa());
        let tol = 1e-9 * one;
        prop_assert!(p <= one + tol, "{p} > {one}");
        prop_assert!(p >= one.powi(spec.k().total() as i32) - tol);
    }

    #[test]
    fn mass_grows_with_kappa(spec in spec(2, 3), factor in 1.05f64..2.0) {
        let wider = Spec::from_parts(spec.k().as_slice(), spec.q().interior(), spec.kappa() * factor).unwrap();
        let quad = fast_quad();
        prop_assert!(nested_prob(&wider, &quad).unwrap().log_p > nested_prob(&spec, &quad).unwrap().log_p);
    }

    #[test]
    fn threshold_separates_the_indicator(spec in spec(2, 3)) {
        let lc = OverlapMode::LevelConsistent;
        let quad = fast_quad();
        let r = alpha_bar(&spec, lc, &quad).unwrap();
        let d = 1e-6 * r.alpha_bar;
        prop_assert!(ogp_indicator(&spec, r.alpha_bar + d, lc, &quad).unwrap());
        prop_assert!(!ogp_indicator(&spec, r.alpha_bar - d, lc, &quad).unwrap());
    }

    #[test]
    fn readings_agree_when_first_clusters_are_pairs(tail in cluster_seq(2, 3), q in overlaps(3)) {
        let k: Vec<usize> = std::iter::once(1).chain(tail.iter().map(|t| 2 * t)).collect();
        let spec = Spec::from_parts(&k, &q[..k.len() - 1], 1.0).unwrap();
        let lit = combinatorial_h(&spec, OverlapMode::PaperLiteral);
        let lc = combinatorial_h(&spec, OverlapMode::LevelConsistent);
        match (lit, lc) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}"),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
        prop_assert_eq!(
            overlap_params(&spec, OverlapMode::PaperLiteral).ok(),
            overlap_params(&spec, OverlapMode::LevelConsistent).ok()
        );
    }

    #[test]
    fn suggested_sequences_are_valid(ratios in prop::collection::vec(0.6f64..6.0, 1..5)) {
        let mut c = vec![1.0];
        for r in &ratios {
            c.push(c.last().unwrap() * r);
        }
        let rounded: Vec<f64> = c.windows(2).map(|w| (w[1] / w[0]).round()).collect();
        let got = suggest_k_from_c(&c);
        // a ratio rounding to one would repeat a cluster size
        if rounded.iter().any(|&r| r < 2.0) {
            prop_assert!(got.is_err());
            return Ok(());
        }
        let k = got.unwrap();
        let ks = k.as_slice();
        prop_assert_eq!(ks.len(), c.len());
        for i in 1..ks.len() {
            prop_assert_eq!(ks[i] % ks[i - 1], 0);
            prop_assert_eq!((ks[i] / ks[i - 1]) as f64, (c[i] / c[i - 1]).round());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn entropy_solutions_are_feasible(spec in spec(2, 3)) {
        prop_assume!((4..=9).contains(&spec.k().total()));
        let sys = ConstraintSystem::build(&spec, OverlapMode::LevelConsistent).unwrap();
        let sol = match EntropyProgram::for_k(spec.k().total()).unwrap().solve(&spec, OverlapMode::LevelConsistent) {
            Ok(sol) => sol,
            // overlaps this spread can leave no nonnegative assignment
            Err(ogp_bounds::Error::Infeasible(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        prop_assert!(sol.full.iter().all(|&v| v >= -1e-12));
        let ax = sys.a.mul_vec(&sol.full);
        let resid = ax.iter().zip(&sys.b).map(|(x, b)| (x - b).abs()).fold(0.0, f64::max);
        prop_assert!(resid <= 1e-8, "{resid:e}");
        prop_assert!((sol.a.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn first_level_entropy_falls_with_overlap(k in 2usize..=6, a in 0.02f64..0.97, b in 0.02f64..0.97) {
        prop_assume!((a - b).abs() > 1e-3);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let h = |q: f64| {
            if k <= 3 {
                closed_form_h(q, k).unwrap()
            } else {
                let spec = Spec::from_parts(&[1, k], &[q], 1.0).unwrap();
                combinatorial_h(&spec, OverlapMode::LevelConsistent).unwrap()
            }
        };
        prop_assert!(h(hi) < h(lo));
    }
}
