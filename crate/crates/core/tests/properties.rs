use proptest::prelude::*;
use subsetgrad::datagen::{gen_independent, SyntheticSpec};
use subsetgrad::estimators::{exact_gradient_univariate, u2g_variance_closed_form, EstimatorKind, SelectionState};
use subsetgrad::model::{Objective, ObjectiveConfig, SubsetIndicator};
use subsetgrad::oracles::{exhaustive_best_subset, expected_objective_enum, stratum_expectation};

fn kind() -> impl Strategy<Value = EstimatorKind> {
    prop::sample::select(EstimatorKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_estimator_is_unbiased(k in kind(), pi in 0.001f64..0.999, f0 in -20.0f64..20.0, f1 in -20.0f64..20.0) {
        let (mean, second) = stratum_expectation(k, pi, f0, f1);
        let exact = exact_gradient_univariate(f0, f1, pi);
        prop_assert!((mean - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
        prop_assert!(second + 1e-12 >= mean * mean);
    }

    #[test]
    fn u2g_variance_matches_closed_form(pi in 0.001f64..0.999, f0 in -10.0f64..10.0, f1 in -10.0f64..10.0) {
        let (mean, second) = stratum_expectation(EstimatorKind::U2g, pi, f0, f1);
        let cf = u2g_variance_closed_form(pi, f1 - f0);
        prop_assert!((second - mean * mean - cf).abs() <= 1e-10 * (1.0 + cf));
    }

    #[test]
    fn u2g_has_the_smallest_variance(pi in 0.01f64..0.99, f0 in 0.5f64..10.0, r in -0.5f64..1.0) {
        let f1 = f0 + r * f0;
        let var = |k| { let (m, s) = stratum_expectation(k, pi, f0, f1); s - m * m };
        prop_assert!(var(EstimatorKind::U2g) <= var(EstimatorKind::Arm) + 1e-10);
        prop_assert!(var(EstimatorKind::Arm) <= var(EstimatorKind::Reinforce) + 1e-10);
    }

    #[test]
    fn probabilities_and_logits_round_trip(probs in prop::collection::vec(0.001f64..0.999, 1..20)) {
        let st = SelectionState::from_probs(&probs);
        for (a, b) in st.pi().iter().zip(&probs) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn indicators_round_trip_through_active_sets(mask in any::<u16>()) {
        let z = SubsetIndicator::from_mask(16, u64::from(mask));
        prop_assert_eq!(z.k(), mask.count_ones() as usize);
        prop_assert_eq!(SubsetIndicator::from_active(16, &z.active()), z);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn exhaustive_search_is_a_global_minimum(seed in 0u64..1000, lam in 0.01f64..0.5) {
        let d = gen_independent(&SyntheticSpec::exp2(30, 6, 2, 5.0, seed)).unwrap();
        let (z, v) = exhaustive_best_subset(&d, lam, 10).unwrap();
        let obj = Objective::new(&d, ObjectiveConfig::frequentist(lam)).unwrap();
        prop_assert!((obj.value(&z, &[]).unwrap() - v).abs() < 1e-10);
        for mask in 0..64u64 {
            prop_assert!(obj.value(&SubsetIndicator::from_mask(6, mask), &[]).unwrap() >= v - 1e-10);
        }
    }

    #[test]
    fn expected_objective_at_the_extremes_is_the_objective(seed in 0u64..1000, mask in 0u64..32) {
        let d = gen_independent(&SyntheticSpec::exp2(25, 5, 2, 5.0, seed)).unwrap();
        let obj = Objective::new(&d, ObjectiveConfig::frequentist(0.1)).unwrap();
        let z = SubsetIndicator::from_mask(5, mask);
        let pi: Vec<f64> = (0..5).map(|j| if z.get(j) { 1.0 } else { 0.0 }).collect();
        let e = expected_objective_enum(&pi, |s| obj.value(s, &[])).unwrap();
        prop_assert!((e - obj.value(&z, &[]).unwrap()).abs() < 1e-12);
    }
}
