//! Library outputs checked against closed forms and independent brute-force
//! computations.

mod common;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tdvr_core::algorithms::Problem;
use tdvr_core::bounds::{iid_covariance, markov_covariance, worstcase_instance, CovarianceKind};
use tdvr_core::instances::{two_state_features, two_state_instance};
use tdvr_core::mrp::{stationary_distribution, true_value_function};
use tdvr_core::projection::{build_feature_basis, deterministic_operator, projected_fixed_point};
use tdvr_core::sampling::{
    markov_stream, sample_iid, stochastic_operator, trial_rng, InitialState,
};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn two_state_value_function_closed_form() {
    for gamma in [0.6, 0.75, 0.9, 0.99] {
        let inst = two_state_instance(gamma).unwrap();
        let v = true_value_function(&inst).unwrap();
        let want = 1.0 / (3.0 * (1.0 - gamma));
        assert!(
            rel(v[0], want) < 1e-12 && rel(-v[1], want) < 1e-12,
            "gamma {gamma}: {v}"
        );
        let pi = stationary_distribution(inst.transition()).unwrap();
        assert!(rel(pi.norm_sq(&v), 1.0 / (9.0 * (1.0 - gamma).powi(2))) < 1e-12);
    }
}

#[test]
fn two_state_trace_closed_form() {
    for gamma in [0.7, 0.8, 0.9, 0.95] {
        let inst = two_state_instance(gamma).unwrap();
        let basis = build_feature_basis(
            &two_state_features(),
            &stationary_distribution(inst.transition()).unwrap(),
            inst.transition(),
            gamma,
        )
        .unwrap();
        let bundle = iid_covariance(&inst, &basis, &[0.5, 0.5]).unwrap();
        let want = 40.0 / 81.0 * (2.0 * gamma - 1.0) / (1.0 - gamma).powi(3);
        assert!(rel(bundle.trace_functional, want) <= 1e-10, "gamma {gamma}");
    }
}

#[test]
fn iid_trace_matches_raw_coordinate_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (n, d, gamma) in [
        (3, 1, 0.5),
        (5, 2, 0.9),
        (8, 3, 0.95),
        (10, 6, 0.7),
        (6, 6, 0.8),
    ] {
        let inst = common::random_instance(&mut rng, n, gamma);
        let psi = common::random_features(&mut rng, d, n);
        let pi = stationary_distribution(inst.transition()).unwrap();
        let basis = build_feature_basis(&psi, &pi, inst.transition(), gamma).unwrap();
        // Stationary and non-stationary sampling laws.
        for omega in [
            pi.pi().clone(),
            DVector::from_fn(n, |i, _| (i + 1) as f64 / (n * (n + 1) / 2) as f64),
        ] {
            let got = iid_covariance(&inst, &basis, omega.as_slice())
                .unwrap()
                .trace_functional;
            let want = common::raw_trace(&inst, &psi, &omega, 0);
            assert!(rel(got, want) < 1e-8, "n={n} d={d}: {got} vs {want}");
        }
    }
}

#[test]
fn markov_trace_matches_lag_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (n, d, gamma) in [(3, 1, 0.8), (4, 2, 0.9), (5, 3, 0.6)] {
        let inst = common::random_instance(&mut rng, n, gamma);
        let psi = common::random_features(&mut rng, d, n);
        let bundle = markov_covariance(&inst, &build_basis(&inst, &psi), None).unwrap();
        let pi = common::power_stationary(inst.transition());
        // Positive chains mix within a few dozen steps to double precision.
        let want = common::raw_trace(&inst, &psi, &pi, 60);
        assert!(
            rel(bundle.trace_functional, want) < 1e-8,
            "n={n}: {} vs {want}",
            bundle.trace_functional
        );
    }
}

fn build_basis(
    inst: &tdvr_core::mrp::MrpInstance,
    psi: &DMatrix<f64>,
) -> tdvr_core::projection::FeatureBasis {
    let pi = stationary_distribution(inst.transition()).unwrap();
    build_feature_basis(psi, &pi, inst.transition(), inst.gamma()).unwrap()
}

#[test]
fn markov_equals_iid_with_full_rank_features() {
    // With tabular features the projected fixed point is v*, so the
    // conditional mean noise vanishes and all cross-lag terms are zero.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let inst = common::random_instance(&mut rng, 5, 0.9);
    let psi = common::random_features(&mut rng, 5, 5);
    let basis = build_basis(&inst, &psi);
    let pi = stationary_distribution(inst.transition()).unwrap();
    let iid = iid_covariance(&inst, &basis, pi.pi().as_slice()).unwrap();
    let mkv = markov_covariance(&inst, &basis, None).unwrap();
    assert!(rel(mkv.trace_functional, iid.trace_functional) < 1e-9);

    let inst = two_state_instance(0.7).unwrap();
    let basis = build_basis(&inst, &two_state_features());
    let mkv = markov_covariance(&inst, &basis, None).unwrap();
    assert!(matches!(mkv.kind, CovarianceKind::MarkovStationary { .. }));
    let want = 40.0 / 81.0 * 0.4 / 0.3f64.powi(3);
    assert!(rel(mkv.trace_functional, want) < 1e-10);
}

#[test]
fn fixed_point_solves_raw_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let inst = common::random_instance(&mut rng, 7, 0.85);
    let psi = common::random_features(&mut rng, 3, 7);
    let basis = build_basis(&inst, &psi);
    let sol = projected_fixed_point(&inst, &basis).unwrap();
    let (a, b) = common::td_system(&inst, &psi, &common::power_stationary(inst.transition()));
    let residual = &a * &sol.theta_bar - &b;
    assert!(residual.amax() < 1e-10 * b.amax().max(1.0));
    // And the deterministic operator is exactly `A theta - b`.
    let theta = DVector::from_vec(vec![0.3, -1.2, 2.0]);
    let g = deterministic_operator(&theta, &inst, &basis).unwrap();
    assert!((g - (&a * &theta - &b)).amax() < 1e-10);
}

#[test]
fn stochastic_operator_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let inst = common::random_instance(&mut rng, 4, 0.9);
    let psi = common::random_features(&mut rng, 2, 4);
    let pi = common::power_stationary(inst.transition());
    let (a, b) = common::td_system(&inst, &psi, &pi);
    let theta = DVector::from_vec(vec![1.0, -0.5]);
    let want = &a * &theta - &b;
    let n = 400_000;
    let mut sum = DVector::zeros(2);
    let mut sq = 0.0;
    for _ in 0..n {
        let xi = sample_iid(&inst, pi.as_slice(), &mut rng).unwrap();
        let g = stochastic_operator(&theta, &xi, &psi, inst.gamma()).unwrap();
        sq += g.norm_squared();
        sum += g;
    }
    let mean = sum / n as f64;
    let sd = (sq / n as f64 / n as f64).sqrt();
    assert!(
        (mean - want).amax() < 5.0 * sd,
        "mean off by more than 5 standard errors"
    );
}

#[test]
fn iid_pair_frequencies_match_law() {
    let mut rng = trial_rng(16, 0);
    let inst = common::random_instance(&mut ChaCha8Rng::seed_from_u64(16), 3, 0.5);
    let omega = [0.2, 0.5, 0.3];
    let n = 300_000;
    let mut counts = [[0usize; 3]; 3];
    for _ in 0..n {
        let xi = sample_iid(&inst, &omega, &mut rng).unwrap();
        counts[xi.s][xi.s_next] += 1;
    }
    for (s, row) in counts.iter().enumerate() {
        for (t, &count) in row.iter().enumerate() {
            let p = omega[s] * inst.transition()[(s, t)];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let freq = count as f64 / n as f64;
            assert!((freq - p).abs() < 5.0 * se, "pair ({s},{t}): {freq} vs {p}");
        }
    }
}

#[test]
fn two_state_lag_correlation() {
    // At gamma = 0.9 the chain stays with probability 8/9, so the state
    // sign has lag-t autocorrelation (7/9)^t.
    let inst = two_state_instance(0.9).unwrap();
    let n = 400_000;
    let stream = markov_stream(&inst, &InitialState::Stationary, n, &mut trial_rng(17, 0)).unwrap();
    let sign: Vec<f64> = stream
        .iter()
        .map(|x| if x.s == 0 { 1.0 } else { -1.0 })
        .collect();
    for t in 1..=4 {
        let corr = sign.iter().zip(&sign[t..]).map(|(a, b)| a * b).sum::<f64>() / (n - t) as f64;
        let want = (7.0f64 / 9.0).powi(t as i32);
        // Effective sample size shrinks by (1 + rho) / (1 - rho) = 8.
        let se = (8.0 / n as f64).sqrt();
        assert!((corr - want).abs() < 5.0 * se, "lag {t}: {corr} vs {want}");
    }
    for w in stream.windows(2) {
        assert_eq!(w[0].s_next, w[1].s);
    }
}

#[test]
fn worst_case_value_and_band_structure() {
    let wc = worstcase_instance(0.75, 40).unwrap();
    let v = true_value_function(wc.instance()).unwrap();
    for i in 0..40 {
        assert!(
            rel(v[i], 0.5f64.powi(i as i32 + 1)) < 1e-10,
            "coordinate {i}"
        );
        assert_eq!(wc.v_star_closed_form()[i], 0.5f64.powi(i as i32 + 1));
    }
    // Exact TD from zero: after k evaluations only the first k coordinates
    // can be non-zero.
    let d = wc.num_states();
    let problem = Problem::new(wc.instance().clone(), &DMatrix::identity(d, d)).unwrap();
    let mut theta = DVector::zeros(d);
    for k in 1..=10 {
        theta -= problem.operator().apply(&theta) * 0.1;
        assert!(
            tdvr_core::bounds::in_band(&theta, k, 0),
            "iterate {k} escaped the band"
        );
        assert!(theta[k - 1] != 0.0);
    }
}
