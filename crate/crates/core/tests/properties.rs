//! Randomised invariants of the geometry, the covariance functional and the
//! schedule builders.

mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tdvr_core::algorithms::{budget_schedule, BudgetShape, Problem, Setting, StepRule};
use tdvr_core::bounds::iid_covariance;
use tdvr_core::mrp::{stationary_distribution, MrpInstance};
use tdvr_core::projection::{build_feature_basis, FeatureBasis};

fn setup(seed: u64, n: usize, d: usize, gamma: f64) -> (MrpInstance, DMatrix<f64>, FeatureBasis) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = common::random_instance(&mut rng, n, gamma);
    let psi = common::random_features(&mut rng, d, n);
    let pi = stationary_distribution(inst.transition()).unwrap();
    let basis = build_feature_basis(&psi, &pi, inst.transition(), gamma).unwrap();
    (inst, psi, basis)
}

fn shape() -> impl Strategy<Value = (u64, usize, usize, f64)> {
    (any::<u64>(), 2usize..=9, 1usize..=4, 0.05f64..0.98)
        .prop_map(|(seed, n, d, g)| (seed, n, d.min(n), g))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stationary_law_is_invariant((seed, n, _, g) in shape()) {
        let (inst, _, _) = setup(seed, n, 1, g);
        let pi = stationary_distribution(inst.transition()).unwrap();
        let moved = inst.transition().transpose() * pi.pi();
        prop_assert!((moved - pi.pi()).amax() < 1e-12);
        prop_assert!((pi.pi().sum() - 1.0).abs() < 1e-12);
        prop_assert!((pi.pi() - common::power_stationary(inst.transition())).amax() < 1e-10);
    }

    #[test]
    fn value_norm_is_gram_quadratic_form((seed, n, d, g) in shape(), t in prop::collection::vec(-3.0f64..3.0, 4)) {
        let (inst, psi, basis) = setup(seed, n, d, g);
        let theta = DVector::from_column_slice(&t[..d]);
        let pi = stationary_distribution(inst.transition()).unwrap();
        let direct = pi.norm_sq(&(psi.transpose() * &theta));
        let gram = (theta.transpose() * basis.gram() * &theta)[(0, 0)];
        prop_assert!((basis.value_norm_sq(&theta) - direct).abs() <= 1e-10 * direct.max(1.0));
        prop_assert!((gram - direct).abs() <= 1e-10 * direct.max(1.0));
    }

    #[test]
    fn trace_is_invariant_under_reparametrisation((seed, n, d, g) in shape(), mix in prop::collection::vec(-1.0f64..1.0, 16)) {
        // Features G psi with invertible G span the same subspace, so the
        // statistical floor cannot change.
        let (inst, psi, basis) = setup(seed, n, d, g);
        let mut gmat = DMatrix::from_fn(d, d, |i, j| mix[i * 4 + j]);
        gmat += DMatrix::identity(d, d) * 3.0;
        let pi = stationary_distribution(inst.transition()).unwrap();
        let other = build_feature_basis(&(&gmat * &psi), &pi, inst.transition(), g).unwrap();
        let a = iid_covariance(&inst, &basis, pi.pi().as_slice()).unwrap().trace_functional;
        let b = iid_covariance(&inst, &other, pi.pi().as_slice()).unwrap().trace_functional;
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-7 * a.max(1e-12), "{} vs {}", a, b);
    }

    #[test]
    fn trace_scales_quadratically_with_rewards((seed, n, d, g) in shape(), c in 0.1f64..10.0) {
        let (inst, _, basis) = setup(seed, n, d, g);
        let pi = stationary_distribution(inst.transition()).unwrap();
        let w = pi.pi().as_slice().to_vec();
        let a = iid_covariance(&inst, &basis, &w).unwrap().trace_functional;
        let b = iid_covariance(&inst.scale_rewards(c).unwrap(), &basis, &w).unwrap().trace_functional;
        prop_assert!((b - c * c * a).abs() <= 1e-8 * b.max(1e-12));
    }

    #[test]
    fn budget_schedules_spend_the_budget_exactly(
        (seed, n, d, g) in shape(),
        budget in 200usize..200_000,
        eta_scale in 0.25f64..2.0,
        inner_constant in 0.05f64..2.0,
        epochs in 1usize..6,
        growth in 1.0f64..2.5,
    ) {
        let (inst, psi, _) = setup(seed, n, d, g);
        let problem = Problem::new(inst, &psi).unwrap();
        let stats = problem.stats().unwrap();
        let shape = BudgetShape { eta_scale, inner_constant, epochs, growth };
        for setting in [Setting::Vrtd, Setting::VrftdIid] {
            if let Ok(s) = budget_schedule(&stats, budget, &shape, setting) {
                prop_assert_eq!(s.total_samples(), budget as u64);
                prop_assert_eq!(s.epochs(), epochs);
                prop_assert!(s.recenter_sizes.iter().all(|&m| m >= 1));
            }
        }
    }

    #[test]
    fn diminishing_steps_decrease(eta0 in 0.001f64..10.0, power in 0.1f64..2.0, offset in 1.0f64..100.0, t in 0u64..100_000) {
        let rule = StepRule::Diminishing { eta0, power, offset };
        prop_assert!(rule.at(t + 1) < rule.at(t));
        prop_assert!(rule.at(t) <= eta0);
        prop_assert_eq!(rule.at(0), eta0);
    }
}
