//! Independent reference computations for the integration tests. Nothing
//! here calls into the library's geometry or covariance code: everything is
//! rebuilt from the transition matrix, rewards and features with plain
//! dense algebra.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use tdvr_core::mrp::MrpInstance;

/// Random chain with strictly positive transitions and Gaussian-ish rewards.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize, gamma: f64) -> MrpInstance {
    let mut p = DMatrix::from_fn(n, n, |_, _| rng.gen_range(0.05..1.0));
    for mut row in p.row_iter_mut() {
        let s: f64 = row.iter().sum();
        row /= s;
    }
    let r = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    MrpInstance::new(p, r, gamma).unwrap()
}

pub fn random_features<R: Rng>(rng: &mut R, d: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, n, |_, _| rng.gen_range(-1.0..1.0))
}

/// Stationary law by a thousand-fold power of `P` (positive chains mix fast).
pub fn power_stationary(p: &DMatrix<f64>) -> DVector<f64> {
    let n = p.nrows();
    let mut row = DMatrix::from_element(1, n, 1.0 / n as f64);
    for _ in 0..5000 {
        row = &row * p;
    }
    row.transpose().column(0).into_owned()
}

/// Raw-coordinate TD system under sampling law `omega`:
/// `A = sum omega_s P(s,s') psi(s) (psi(s) - gamma psi(s'))^T`,
/// `b = sum omega_s P(s,s') R(s,s') psi(s)`.
pub fn td_system(
    inst: &MrpInstance,
    psi: &DMatrix<f64>,
    omega: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let (n, d) = (inst.num_states(), psi.nrows());
    let (p, r, g) = (inst.transition(), inst.reward(), inst.gamma());
    let mut a = DMatrix::zeros(d, d);
    let mut b = DVector::zeros(d);
    for s in 0..n {
        for t in 0..n {
            let w = omega[s] * p[(s, t)];
            let phi = psi.column(s);
            let diff = psi.column(s) - psi.column(t) * g;
            a += w * phi * diff.transpose();
            b += w * r[(s, t)] * phi;
        }
    }
    (a, b)
}

/// Noise of one transition at `theta`, in raw coordinates.
pub fn raw_noise(
    inst: &MrpInstance,
    psi: &DMatrix<f64>,
    theta: &DVector<f64>,
    s: usize,
    t: usize,
) -> DVector<f64> {
    let delta =
        psi.column(s).dot(theta) - inst.reward()[(s, t)] - inst.gamma() * psi.column(t).dot(theta);
    psi.column(s) * delta
}

/// `E ||v_hat - v_bar||_Pi^2 * N` for the asymptotically efficient estimator:
/// `trace(B A^{-1} S A^{-T})` with `B` the Gram matrix under `omega` and `S`
/// the long-run noise covariance (independent samples when `lags == 0`).
pub fn raw_trace(inst: &MrpInstance, psi: &DMatrix<f64>, omega: &DVector<f64>, lags: usize) -> f64 {
    let (n, d) = (inst.num_states(), psi.nrows());
    let p = inst.transition();
    let (a, b) = td_system(inst, psi, omega);
    let theta = a.clone().lu().solve(&b).unwrap();
    let a_inv = a.try_inverse().unwrap();
    let gram = psi * DMatrix::from_diagonal(omega) * psi.transpose();
    let z = |s: usize, t: usize| raw_noise(inst, psi, &theta, s, t);
    let mut cov = DMatrix::zeros(d, d);
    for s in 0..n {
        for t in 0..n {
            let zz = z(s, t);
            cov += omega[s] * p[(s, t)] * &zz * zz.transpose();
        }
    }
    // Lag-k cross terms: first pair (s0, s1), later pair (u, u') with
    // u ~ P^{k-1}(s1, .).
    let mut pk = DMatrix::identity(n, n);
    for _ in 1..=lags {
        let mut gk = DMatrix::zeros(d, d);
        for s0 in 0..n {
            for s1 in 0..n {
                let w0 = omega[s0] * p[(s0, s1)];
                let z0 = z(s0, s1);
                for u in 0..n {
                    for v in 0..n {
                        let w = w0 * pk[(s1, u)] * p[(u, v)];
                        if w != 0.0 {
                            gk += w * z(u, v) * z0.transpose();
                        }
                    }
                }
            }
        }
        cov += &gk + gk.transpose();
        pk = &pk * p;
    }
    (gram * &a_inv * cov * a_inv.transpose()).trace()
}
