//! Lower bounds: the hard cyclic instance for span-restricted iterative
//! methods, and the covariance functionals that set the statistical floor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mrp::{self, MrpInstance};
use crate::projection::{self, FeatureBasis};

/// Hard instance for methods whose iterates stay in the span of the start
/// point and past temporal differences.
///
/// The kernel keeps each state with probability `1/(2 gamma)` and otherwise
/// moves it one step "down" the cycle (`i -> i - 1`, `0 -> D - 1`); only the
/// first state carries reward. Information then travels one coordinate per
/// operator evaluation.
#[derive(Clone, Debug)]
pub struct WorstCaseInstance {
    instance: MrpInstance,
    v_star_closed_form: DVector<f64>,
}

impl WorstCaseInstance {
    pub fn instance(&self) -> &MrpInstance {
        &self.instance
    }

    /// `(v*)_i = (2 gamma - 1)^{i+1}` for 0-based `i`.
    pub fn v_star_closed_form(&self) -> &DVector<f64> {
        &self.v_star_closed_form
    }

    pub fn gamma(&self) -> f64 {
        self.instance.gamma()
    }

    pub fn num_states(&self) -> usize {
        self.instance.num_states()
    }

    /// Whether the bound for `k` evaluations is in its valid range:
    /// `(1 - q^{2D-2k}) / (1 - q^{2D}) >= 1/2` with `q = 2 gamma - 1`.
    pub fn validity(&self, k: usize) -> bool {
        self.validity_ratio(k) >= 0.5
    }

    pub fn validity_ratio(&self, k: usize) -> f64 {
        let q = 2.0 * self.gamma() - 1.0;
        let d = self.num_states() as i32;
        let k = k as i32;
        if k > d {
            return f64::NEG_INFINITY;
        }
        (1.0 - q.powi(2 * d - 2 * k)) / (1.0 - q.powi(2 * d))
    }

    /// `||v*||_Pi^2` in closed form (distance from the zero start).
    pub fn initial_distance_sq(&self) -> f64 {
        let q = 2.0 * self.gamma() - 1.0;
        let d = self.num_states() as f64;
        q * q * (1.0 - q.powf(2.0 * d)) / (d * (1.0 - q * q))
    }
}

/// Builds the hard instance for `gamma` in `(1/2, 1)` and `D >= 2` states.
pub fn worstcase_instance(gamma: f64, num_states: usize) -> Result<WorstCaseInstance> {
    if !(gamma > 0.5 && gamma < 1.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    if num_states < 2 {
        return Err(Error::InvalidInstance(format!(
            "the cyclic construction needs at least two states, got {num_states}"
        )));
    }
    let d = num_states;
    let stay = 1.0 / (2.0 * gamma);
    let mut p = DMatrix::zeros(d, d);
    for i in 0..d {
        p[(i, i)] = stay;
        p[(i, (i + d - 1) % d)] = 1.0 - stay;
    }
    let q = 2.0 * gamma - 1.0;
    let mut r = DVector::zeros(d);
    r[0] = gamma - 0.5 + (0.5 - gamma) * q.powi(d as i32);
    let instance = MrpInstance::from_state_rewards(p, &r, gamma)?;
    let v_star_closed_form = DVector::from_iterator(d, (0..d).map(|i| q.powi(i as i32 + 1)));
    Ok(WorstCaseInstance {
        instance,
        v_star_closed_form,
    })
}

/// Oracle lower bound after `k` evaluations from the start `v0`:
/// `1/2 (2 gamma - 1)^{2k} ||v0 - v*||_Pi^2`, with the validity flag.
pub fn oracle_lower_bound(
    wc: &WorstCaseInstance,
    k: usize,
    v0: &DVector<f64>,
) -> Result<(f64, bool)> {
    let d = wc.num_states();
    if v0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: v0.len(),
        });
    }
    let pi = mrp::StationaryDistribution::uniform(d);
    let dist = pi.norm_sq(&(v0 - wc.v_star_closed_form()));
    let q = 2.0 * wc.gamma() - 1.0;
    Ok((0.5 * q.powi(2 * k as i32) * dist, wc.validity(k)))
}

/// How a covariance matrix was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CovarianceKind {
    /// Independent tuples with `s ~ omega`.
    Iid { omega: Vec<f64> },
    /// Stationary trajectory; the lag series was cut after
    /// `truncation_lag` terms with the stated bound on the remainder.
    MarkovStationary {
        truncation_lag: usize,
        truncation_error_bound: f64,
    },
}

/// Noise covariance in orthonormal coordinates and its trace functional
/// `trace((I - M)^{-1} Sigma (I - M)^{-T})`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceBundle {
    pub sigma: DMatrix<f64>,
    pub m_tilde: DMatrix<f64>,
    pub kind: CovarianceKind,
    pub trace_functional: f64,
}

/// Serialisable form of a [`CovarianceBundle`] (matrices row-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceFile {
    pub kind: CovarianceKind,
    pub d: usize,
    pub sigma: Vec<f64>,
    pub m_tilde: Vec<f64>,
    pub trace: f64,
}

impl CovarianceBundle {
    pub fn to_file(&self) -> CovarianceFile {
        CovarianceFile {
            kind: self.kind.clone(),
            d: self.sigma.nrows(),
            sigma: self.sigma.transpose().as_slice().to_vec(),
            m_tilde: self.m_tilde.transpose().as_slice().to_vec(),
            trace: self.trace_functional,
        }
    }

    pub fn from_file(file: &CovarianceFile) -> Result<Self> {
        let d = file.d;
        for len in [file.sigma.len(), file.m_tilde.len()] {
            if len != d * d {
                return Err(Error::DimensionMismatch {
                    expected: d * d,
                    got: len,
                });
            }
        }
        Ok(Self {
            sigma: DMatrix::from_row_slice(d, d, &file.sigma),
            m_tilde: DMatrix::from_row_slice(d, d, &file.m_tilde),
            kind: file.kind.clone(),
            trace_functional: file.trace,
        })
    }
}

/// `trace((I - M)^{-1} Sigma (I - M)^{-T})`.
pub fn trace_functional(sigma: &DMatrix<f64>, m_tilde: &DMatrix<f64>) -> Result<f64> {
    let d = sigma.nrows();
    if sigma.ncols() != d || m_tilde.nrows() != d || m_tilde.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: m_tilde.nrows(),
        });
    }
    let inv = linalg::inverse(&(DMatrix::<f64>::identity(d, d) - m_tilde))?;
    Ok((&inv * sigma * inv.transpose()).trace())
}

/// Recomputes the trace functional of a bundle from its matrices.
pub fn stochastic_lower_bound(bundle: &CovarianceBundle) -> Result<f64> {
    trace_functional(&bundle.sigma, &bundle.m_tilde)
}

/// Noise vectors indexed `[s][s']`.
type NoiseTable = Vec<Vec<DVector<f64>>>;

/// Per-transition noise `z(s, s') = g~(theta_bar, (s, s')) - g(theta_bar)`
/// at the projected fixed point of `basis`, together with that fixed point.
fn noise_table(instance: &MrpInstance, basis: &FeatureBasis) -> Result<(NoiseTable, DVector<f64>)> {
    let sol = projection::projected_fixed_point(instance, basis)?;
    let g_bar = projection::deterministic_operator(&sol.theta_bar, instance, basis)?;
    let psi = basis.psi();
    let gamma = instance.gamma();
    let n = instance.num_states();
    let v = psi.tr_mul(&sol.theta_bar);
    let table = (0..n)
        .map(|s| {
            (0..n)
                .map(|t| {
                    let delta = v[s] - instance.reward()[(s, t)] - gamma * v[t];
                    psi.column(s) * delta - &g_bar
                })
                .collect()
        })
        .collect();
    Ok((table, sol.theta_bar))
}

/// Covariance of one independent observation at the projected fixed point
/// in the `omega`-weighted geometry.
///
/// All `(s, s')` pairs are enumerated with weight `omega_s P(s, s')`;
/// `y = B~^{-1/2} (<psi(s) - gamma psi(s'), theta_bar> - R(s, s')) psi(s)`.
pub fn iid_covariance(
    instance: &MrpInstance,
    basis: &FeatureBasis,
    omega: &[f64],
) -> Result<CovarianceBundle> {
    let omega_vec = DVector::from_column_slice(omega);
    mrp::validate_distribution(omega)?;
    let weighted = projection::build_weighted_basis(
        basis.psi(),
        &omega_vec,
        instance.transition(),
        instance.gamma(),
    )?;
    let (table, _) = noise_table(instance, &weighted)?;
    let n = instance.num_states();
    let d = weighted.dim();
    let p = instance.transition();
    let mut second = DMatrix::<f64>::zeros(d, d);
    let mut mean = DVector::<f64>::zeros(d);
    for s in 0..n {
        for t in 0..n {
            let w = omega[s] * p[(s, t)];
            if w == 0.0 {
                continue;
            }
            let z = &table[s][t];
            second += (z * z.transpose()) * w;
            mean += z * w;
        }
    }
    let cov = projection::symmetrize(&(second - &mean * mean.transpose()));
    let root = weighted.gram_inv_sqrt();
    let sigma = projection::symmetrize(&(root * cov * root));
    let m_tilde = weighted.m().clone();
    let trace = trace_functional(&sigma, &m_tilde)?;
    Ok(CovarianceBundle {
        sigma,
        m_tilde,
        kind: CovarianceKind::Iid {
            omega: omega.to_vec(),
        },
        trace_functional: trace,
    })
}

/// Upper limit on the number of lags summed by [`markov_covariance`].
pub const MAX_LAGS: usize = 1_000_000;

/// Long-run covariance of the noise along a stationary trajectory,
/// `Gamma_0 + sum_{t>=1} (Gamma_t + Gamma_t^T)` in orthonormal coordinates.
///
/// With `h(u) = E[z(u, s')]` and `Z~(s') = sum_s pi(s) P(s, s') z(s, s')`, the
/// lag-`t` cross-covariance is `Gamma_t = (P^{t-1} H)^T Z~`. The series is
/// cut at the first lag `L` where the geometric tail bound
/// `2 c_p a b rho^L / ((1 - rho) mu)` falls below `tol` (default:
/// `1e-12 trace(Gamma_0)`), with `a`, `b` the column-l1 sizes of `H`, `Z~`.
pub fn markov_covariance(
    instance: &MrpInstance,
    basis: &FeatureBasis,
    tol: Option<f64>,
) -> Result<CovarianceBundle> {
    let p = instance.transition();
    let pi = mrp::stationary_distribution(p)?;
    let stationary_basis = projection::build_feature_basis(basis.psi(), &pi, p, instance.gamma())?;
    let (table, _) = noise_table(instance, &stationary_basis)?;
    let n = instance.num_states();
    let d = stationary_basis.dim();

    let mut gamma0 = DMatrix::<f64>::zeros(d, d);
    let mut h = DMatrix::<f64>::zeros(n, d);
    let mut z_tilde = DMatrix::<f64>::zeros(n, d);
    for s in 0..n {
        for t in 0..n {
            let pst = p[(s, t)];
            if pst == 0.0 {
                continue;
            }
            let z = &table[s][t];
            let w = pi.pi()[s] * pst;
            gamma0 += (z * z.transpose()) * w;
            for j in 0..d {
                h[(s, j)] += pst * z[j];
                z_tilde[(t, j)] += w * z[j];
            }
        }
    }
    let root = stationary_basis.gram_inv_sqrt();
    let tol = tol.unwrap_or(1e-12 * (root * &gamma0 * root).trace().abs());
    let col_l1 = |m: &DMatrix<f64>| {
        m.column_iter()
            .map(|c| c.iter().map(|x| x.abs()).sum::<f64>().powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let a = col_l1(&h);
    let b = col_l1(&z_tilde);
    let rho = linalg::second_eigen_modulus(p).clamp(mrp::RHO_FLOOR, 1.0 - 1e-15);
    let mixing = mrp::mixing_constants(p, mrp::default_horizon(rho))?;
    let tail = |lag: usize| {
        2.0 * mixing.c_p * a * b * mixing.rho.powf(lag as f64)
            / ((1.0 - mixing.rho) * stationary_basis.mu())
    };

    let mut total = gamma0;
    let mut q = h;
    let mut lag = 0usize;
    while tail(lag) > tol {
        if lag >= MAX_LAGS {
            return Err(Error::InfeasibleInputs(format!(
                "lag series not within {tol:e} after {MAX_LAGS} terms"
            )));
        }
        lag += 1;
        if lag > 1 {
            q = p * q;
        }
        let g_t = q.tr_mul(&z_tilde);
        total += &g_t + g_t.transpose();
    }
    let sigma = projection::symmetrize(&(root * total * root));
    let m_tilde = stationary_basis.m().clone();
    let trace = trace_functional(&sigma, &m_tilde)?;
    Ok(CovarianceBundle {
        sigma,
        m_tilde,
        kind: CovarianceKind::MarkovStationary {
            truncation_lag: lag,
            truncation_error_bound: tail(lag),
        },
        trace_functional: trace,
    })
}

/// Largest distance of an iterate `v_k` from
/// `v_0 + span{G(v_0), ..., G(v_{k-1})}`, where `G(v) = (I - gamma P) v - r`.
pub fn span_residual(iterates: &[DVector<f64>], instance: &MrpInstance) -> f64 {
    let Some(v0) = iterates.first() else {
        return 0.0;
    };
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut worst: f64 = 0.0;
    for k in 1..iterates.len() {
        let g = instance.td_residual(&iterates[k - 1]);
        let scale = g.norm();
        let mut u = g;
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&u);
                u.axpy(-c, q, 1.0);
            }
        }
        let norm = u.norm();
        if norm > 1e-12 * scale.max(1e-300) && norm > 0.0 {
            basis.push(u / norm);
        }
        let mut x = &iterates[k] - v0;
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&x);
                x.axpy(-c, q, 1.0);
            }
        }
        worst = worst.max(x.norm());
    }
    worst
}

/// Smallest `(k, j)` such that `v` is zero outside its first `k` and last
/// `j` coordinates.
pub fn support_pattern(v: &DVector<f64>) -> (usize, usize) {
    let n = v.len();
    let nz: Vec<usize> = (0..n).filter(|&i| v[i] != 0.0).collect();
    if nz.is_empty() {
        return (0, 0);
    }
    // Best split: the widest zero gap separates the head from the tail.
    let mut best = (nz[nz.len() - 1] + 1, 0);
    let mut best_size = best.0;
    for w in 0..nz.len() {
        let head = nz[w] + 1;
        let tail = if w + 1 < nz.len() { n - nz[w + 1] } else { 0 };
        if head + tail < best_size {
            best = (head, tail);
            best_size = head + tail;
        }
    }
    let all_tail = n - nz[0];
    if all_tail < best_size {
        best = (0, all_tail);
    }
    best
}

/// Whether `v` lies in the set of vectors supported on the first `k` and
/// last `j` coordinates.
pub fn in_band(v: &DVector<f64>, k: usize, j: usize) -> bool {
    let n = v.len();
    (0..n).all(|i| i < k || i + j >= n || v[i] == 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worst_case_values() {
        let wc = worstcase_instance(0.75, 4).unwrap();
        let expected = [0.5, 0.25, 0.125, 0.0625];
        for (a, b) in wc.v_star_closed_form().iter().zip(expected) {
            assert_eq!(*a, b);
        }
        assert!((wc.initial_distance_sq() - 0.0830078125).abs() < 1e-15);
        let (rhs, _) = oracle_lower_bound(&wc, 0, &DVector::zeros(4)).unwrap();
        assert!((rhs - 0.5 * 0.0830078125).abs() < 1e-15);
    }

    #[test]
    fn worst_case_rejects_small_gamma() {
        assert!(matches!(
            worstcase_instance(0.5, 4),
            Err(Error::InvalidGamma(_))
        ));
        assert!(worstcase_instance(0.75, 1).is_err());
    }

    #[test]
    fn validity_for_long_cycle() {
        let wc = worstcase_instance(0.75, 100).unwrap();
        assert!(wc.validity(20));
        assert!(wc.validity_ratio(20) > 0.999);
    }

    #[test]
    fn trace_of_identity() {
        let sigma = DMatrix::<f64>::identity(3, 3);
        assert!((trace_functional(&sigma, &DMatrix::zeros(3, 3)).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(
            trace_functional(&DMatrix::zeros(3, 3), &DMatrix::zeros(3, 3)).unwrap(),
            0.0
        );
    }

    #[test]
    fn support_patterns() {
        let v = DVector::from_vec(vec![1.0, 2.0, 0.0, 0.0, 0.0, 3.0]);
        assert_eq!(support_pattern(&v), (2, 1));
        assert!(in_band(&v, 2, 1));
        assert!(!in_band(&v, 1, 1));
        assert_eq!(support_pattern(&DVector::zeros(4)), (0, 0));
    }

    #[test]
    fn orthogonal_perturbation_is_measured() {
        let wc = worstcase_instance(0.75, 6).unwrap();
        let inst = wc.instance();
        let v0 = DVector::zeros(6);
        let v1 = &v0 - inst.td_residual(&v0) * 0.5;
        let mut v2 = &v1 - inst.td_residual(&v1) * 0.5;
        assert!(span_residual(&[v0.clone(), v1.clone(), v2.clone()], inst) < 1e-12);
        // Coordinate 5 lies outside the span of the first two differences.
        v2[5] += 0.3;
        let r = span_residual(&[v0, v1, v2], inst);
        assert!((r - 0.3).abs() < 1e-12);
    }
}
