//! Finite Markov reward processes and the stationary-distribution geometry.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const ROW_SUM_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;
/// Floor applied to the spectral decay rate of chains that mix in one step.
pub const RHO_FLOOR: f64 = 1e-12;
/// Row deviations below this are treated as exact zeros when fitting `c_p`.
const DEVIATION_FLOOR: f64 = 1e-14;

/// A discounted Markov reward process over `D` states.
///
/// `r(s) = sum_{s'} P(s'|s) R(s, s')` is cached at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct MrpInstance {
    transition: DMatrix<f64>,
    reward: DMatrix<f64>,
    gamma: f64,
    expected_reward: DVector<f64>,
}

impl MrpInstance {
    pub fn new(transition: DMatrix<f64>, reward: DMatrix<f64>, gamma: f64) -> Result<Self> {
        let d = transition.nrows();
        if d == 0 || transition.ncols() != d {
            return Err(Error::InvalidInstance(format!(
                "transition matrix must be square and non-empty, got {}x{}",
                transition.nrows(),
                transition.ncols()
            )));
        }
        if reward.nrows() != d || reward.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: reward.nrows(),
            });
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidGamma(gamma));
        }
        for (i, row) in transition.row_iter().enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::InvalidInstance(format!(
                    "row {i} has a negative entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInstance(format!("row {i} sums to {sum}")));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidInstance(
                "reward table has non-finite entries".into(),
            ));
        }
        let expected_reward = DVector::from_iterator(
            d,
            (0..d).map(|s| (0..d).map(|t| transition[(s, t)] * reward[(s, t)]).sum()),
        );
        Ok(Self {
            transition,
            reward,
            gamma,
            expected_reward,
        })
    }

    /// Builds an instance whose reward depends only on the departing state,
    /// `R(s, s') = r(s)`.
    pub fn from_state_rewards(
        transition: DMatrix<f64>,
        rewards: &DVector<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let d = transition.nrows();
        if rewards.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: rewards.len(),
            });
        }
        let reward = DMatrix::from_fn(d, d, |s, _| rewards[s]);
        Self::new(transition, reward, gamma)
    }

    pub fn num_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn expected_reward(&self) -> &DVector<f64> {
        &self.expected_reward
    }

    /// Same kernel and rewards with every reward multiplied by `factor`.
    pub fn scale_rewards(&self, factor: f64) -> Result<Self> {
        Self::new(self.transition.clone(), &self.reward * factor, self.gamma)
    }

    /// Temporal-difference operator `G(v) = (I - gamma P) v - r` in value space.
    pub fn td_residual(&self, v: &DVector<f64>) -> DVector<f64> {
        v - (&self.transition * v) * self.gamma - &self.expected_reward
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            num_states: self.num_states(),
            gamma: self.gamma,
            transition: self.transition.transpose().as_slice().to_vec(),
            reward: self.reward.transpose().as_slice().to_vec(),
            feature_dim: None,
            features: None,
        }
    }
}

/// On-disk form of an instance (and optionally its feature matrix).
///
/// Matrices are stored row-major. Floats are written in shortest round-trip
/// decimal form, so a save/load cycle reproduces every bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(rename = "D")]
    pub num_states: usize,
    pub gamma: f64,
    #[serde(rename = "P")]
    pub transition: Vec<f64>,
    #[serde(rename = "R")]
    pub reward: Vec<f64>,
    #[serde(rename = "d", default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(rename = "Psi", default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

impl InstanceFile {
    pub fn with_features(mut self, psi: &DMatrix<f64>) -> Self {
        self.feature_dim = Some(psi.nrows());
        self.features = Some(psi.transpose().as_slice().to_vec());
        self
    }

    pub fn instance(&self) -> Result<MrpInstance> {
        let n = self.num_states;
        if self.transition.len() != n * n || self.reward.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: self.transition.len().min(self.reward.len()),
            });
        }
        MrpInstance::new(
            DMatrix::from_row_slice(n, n, &self.transition),
            DMatrix::from_row_slice(n, n, &self.reward),
            self.gamma,
        )
    }

    /// Feature matrix `Psi` (d x D), if present.
    pub fn psi(&self) -> Result<Option<DMatrix<f64>>> {
        match (&self.features, self.feature_dim) {
            (Some(values), Some(d)) => {
                if values.len() != d * self.num_states {
                    return Err(Error::DimensionMismatch {
                        expected: d * self.num_states,
                        got: values.len(),
                    });
                }
                Ok(Some(DMatrix::from_row_slice(d, self.num_states, values)))
            }
            (None, None) => Ok(None),
            _ => Err(Error::InvalidInstance(
                "Psi and d must be given together".into(),
            )),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Stationary distribution `pi` with `pi P = pi`.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryDistribution {
    pi: DVector<f64>,
}

impl StationaryDistribution {
    /// Wraps a probability vector without checking stationarity; the entries
    /// must be strictly positive and sum to one.
    pub fn from_weights(pi: DVector<f64>) -> Result<Self> {
        validate_distribution(pi.as_slice())?;
        Ok(Self { pi })
    }

    pub fn uniform(d: usize) -> Self {
        Self {
            pi: DVector::from_element(d, 1.0 / d as f64),
        }
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.pi.min()
    }

    /// Diagonal matrix view `Pi`.
    pub fn diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.pi)
    }

    pub fn inner(&self, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        weighted_inner(u, v, self)
    }

    pub fn norm(&self, v: &DVector<f64>) -> Result<f64> {
        weighted_norm(v, self)
    }

    pub fn norm_sq(&self, v: &DVector<f64>) -> f64 {
        self.pi.iter().zip(v.iter()).map(|(p, x)| p * x * x).sum()
    }
}

pub(crate) fn validate_distribution(w: &[f64]) -> Result<()> {
    if w.is_empty() {
        return Err(Error::InvalidDistribution("empty distribution".into()));
    }
    if let Some(x) = w.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidDistribution(format!(
            "entries must be strictly positive, found {x}"
        )));
    }
    let sum: f64 = w.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// `<u, v>_Pi = sum_i pi_i u_i v_i`.
pub fn weighted_inner(
    u: &DVector<f64>,
    v: &DVector<f64>,
    pi: &StationaryDistribution,
) -> Result<f64> {
    let d = pi.len();
    for len in [u.len(), v.len()] {
        if len != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: len,
            });
        }
    }
    Ok(pi
        .pi
        .iter()
        .zip(u.iter().zip(v.iter()))
        .map(|(p, (a, b))| p * a * b)
        .sum())
}

/// `||v||_Pi = sqrt(sum_i pi_i v_i^2)`.
pub fn weighted_norm(v: &DVector<f64>, pi: &StationaryDistribution) -> Result<f64> {
    Ok(weighted_inner(v, v, pi)?.sqrt())
}

/// Outcome of [`ergodicity_check`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErgodicityReport {
    pub irreducible: bool,
    /// Period of the chain (gcd of cycle lengths); 0 when reducible.
    pub period: usize,
    pub detail: String,
}

impl ErgodicityReport {
    pub fn is_ergodic(&self) -> bool {
        self.irreducible && self.period == 1
    }
}

/// Checks strong connectivity and aperiodicity of the positive-entry graph.
pub fn ergodicity_check(p: &DMatrix<f64>) -> ErgodicityReport {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return ErgodicityReport {
            irreducible: false,
            period: 0,
            detail: "transition matrix is empty or not square".into(),
        };
    }
    let edges = |u: usize| (0..n).filter(move |&v| p[(u, v)] > 0.0);

    // Forward BFS levels from state 0.
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for v in edges(u) {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    if let Some(s) = level.iter().position(|&l| l == usize::MAX) {
        return ErgodicityReport {
            irreducible: false,
            period: 0,
            detail: format!("state {s} is unreachable from state 0"),
        };
    }
    // Backward reachability.
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        for u in 0..n {
            if p[(u, v)] > 0.0 && !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    if let Some(s) = seen.iter().position(|&b| !b) {
        return ErgodicityReport {
            irreducible: false,
            period: 0,
            detail: format!("state 0 is unreachable from state {s}"),
        };
    }
    let mut period = 0usize;
    for u in 0..n {
        for v in edges(u) {
            let diff = (level[u] + 1).abs_diff(level[v]);
            period = gcd(period, diff);
        }
    }
    let detail = if period == 1 {
        "irreducible and aperiodic".to_string()
    } else {
        format!("irreducible with period {period}")
    };
    ErgodicityReport {
        irreducible: true,
        period,
        detail,
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn require_ergodic(p: &DMatrix<f64>) -> Result<()> {
    let report = ergodicity_check(p);
    if report.is_ergodic() {
        Ok(())
    } else {
        Err(Error::NonErgodicChain(report.detail))
    }
}

/// Stationary distribution of an ergodic kernel.
///
/// The left Perron eigenvector is extracted directly by solving
/// `pi (P - I) = 0, sum(pi) = 1`; power iteration takes over if the direct
/// solve misses the tolerance.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<StationaryDistribution> {
    require_ergodic(p)?;
    let n = p.nrows();
    let mut pi = direct_stationary(p).unwrap_or_else(|| DVector::from_element(n, 1.0 / n as f64));
    if stationarity_error(p, &pi) > STATIONARY_TOL || pi.iter().any(|&x| x <= 0.0) {
        pi = power_stationary(p, pi);
    }
    // A few polishing sweeps keep the residual at rounding level.
    for _ in 0..4 {
        let next = (pi.transpose() * p).transpose();
        let total = next.sum();
        let next = next / total;
        if stationarity_error(p, &next) <= stationarity_error(p, &pi) {
            pi = next;
        } else {
            break;
        }
    }
    let err = stationarity_error(p, &pi);
    if err > STATIONARY_TOL || pi.iter().any(|&x| x <= 0.0) {
        return Err(Error::NonErgodicChain(format!(
            "stationary distribution did not converge (residual {err:e})"
        )));
    }
    Ok(StationaryDistribution { pi })
}

fn stationarity_error(p: &DMatrix<f64>, pi: &DVector<f64>) -> f64 {
    ((pi.transpose() * p).transpose() - pi).amax()
}

fn direct_stationary(p: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a.lu().solve(&b)?;
    let total = pi.sum();
    Some(pi / total)
}

fn power_stationary(p: &DMatrix<f64>, start: DVector<f64>) -> DVector<f64> {
    // Lazy chain (I + P)/2 has the same stationary law and no periodic modes.
    let n = p.nrows();
    let lazy = (p + DMatrix::<f64>::identity(n, n)) * 0.5;
    let mut pi = start.map(|x| x.abs().max(1e-300));
    pi /= pi.sum();
    for _ in 0..1_000_000 {
        let next = (pi.transpose() * &lazy).transpose();
        let delta = (&next - &pi).amax();
        pi = next;
        if delta < 1e-12 * 1e-3 {
            break;
        }
    }
    pi
}

/// Exact value function `v* = (I - gamma P)^{-1} r`.
pub fn true_value_function(instance: &MrpInstance) -> Result<DVector<f64>> {
    let n = instance.num_states();
    let a = DMatrix::<f64>::identity(n, n) - instance.transition() * instance.gamma();
    linalg::solve(&a, instance.expected_reward())
}

/// Geometric mixing constants `(rho, c_p, t_mix)` fitted over a finite horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingProfile {
    pub rho: f64,
    pub c_p: f64,
    pub t_mix: usize,
    pub horizon: usize,
}

impl MixingProfile {
    /// `log(4 c_p) / log(1/rho)`.
    pub fn t_mix_bound(&self) -> f64 {
        (4.0 * self.c_p).ln() / (1.0 / self.rho).ln()
    }
}

/// Horizon used when no explicit one is given: ten times a crude mixing-time
/// guess from the spectral gap.
pub fn default_horizon(rho: f64) -> usize {
    let rho = rho.clamp(RHO_FLOOR, 1.0 - 1e-9);
    let guess = (4f64.ln() / (1.0 / rho).ln()).ceil().max(1.0);
    ((10.0 * guess) as usize).clamp(10, 100_000)
}

/// Maximum over states of `||P^t(s, .) - pi||_inf` for `t = 1..=horizon`.
///
/// Deviations at rounding level (below `1e-14`) are reported as exact zeros.
pub fn row_deviations(p: &DMatrix<f64>, pi: &StationaryDistribution, horizon: usize) -> Vec<f64> {
    // P^t - 1 pi = (P - 1 pi)^t for t >= 1; powering the deviation matrix
    // directly keeps relative accuracy as the entries decay.
    let n = p.nrows();
    let limit = DMatrix::from_fn(n, n, |_, u| pi.pi[u]);
    let centered = p - &limit;
    let mut power = centered.clone();
    let mut out = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let dev = power.amax();
        out.push(if dev <= DEVIATION_FLOOR { 0.0 } else { dev });
        if t < horizon {
            power = &power * &centered;
        }
    }
    out
}

/// Fits `(rho, c_p)` so that `max_s ||P^t(s,.) - pi||_inf <= c_p rho^t` for
/// every `t <= horizon`.
///
/// `rho` is the second-largest eigenvalue modulus (floored at
/// [`RHO_FLOOR`]); `c_p` is the smallest constant that makes the inequality
/// hold on the horizon.
pub fn mixing_constants(p: &DMatrix<f64>, horizon: usize) -> Result<MixingProfile> {
    let pi = stationary_distribution(p)?;
    let horizon = horizon.max(1);
    let rho = linalg::second_eigen_modulus(p).clamp(RHO_FLOOR, 1.0 - 1e-15);
    let devs = row_deviations(p, &pi, horizon);
    let mut c_p: f64 = 0.0;
    for (i, &dev) in devs.iter().enumerate() {
        let t = (i + 1) as i32;
        c_p = c_p.max(dev / rho.powi(t));
    }
    if c_p <= 0.0 {
        c_p = DEVIATION_FLOOR / rho;
    }
    let t_mix = devs
        .iter()
        .position(|&dev| dev <= 0.25)
        .map(|i| i + 1)
        .unwrap_or_else(|| {
            let bound = (4.0 * c_p).ln() / (1.0 / rho).ln();
            bound.ceil().max(1.0) as usize
        });
    Ok(MixingProfile {
        rho,
        c_p,
        t_mix,
        horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(gamma: f64) -> DMatrix<f64> {
        let a = (2.0 * gamma - 1.0) / gamma;
        let b = (1.0 - gamma) / gamma;
        DMatrix::from_row_slice(2, 2, &[a, b, b, a])
    }

    #[test]
    fn identical_rows_are_stationary() {
        let q = [0.2, 0.3, 0.5];
        let p = DMatrix::from_fn(3, 3, |_, j| q[j]);
        let pi = stationary_distribution(&p).unwrap();
        for (got, want) in pi.pi().iter().zip(q) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_two_state_is_uniform() {
        let pi = stationary_distribution(&two_state(0.9)).unwrap();
        assert!((pi.pi()[0] - 0.5).abs() < 1e-12);
        assert!((pi.pi()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_is_reducible() {
        let report = ergodicity_check(&DMatrix::identity(3, 3));
        assert!(!report.is_ergodic());
        assert!(!report.irreducible);
        assert!(matches!(
            stationary_distribution(&DMatrix::identity(3, 3)),
            Err(Error::NonErgodicChain(_))
        ));
    }

    #[test]
    fn periodic_cycle_is_detected() {
        let p = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., 1., 0., 0.]);
        let report = ergodicity_check(&p);
        assert!(report.irreducible);
        assert_eq!(report.period, 3);
        assert!(!report.is_ergodic());
    }

    #[test]
    fn two_state_is_ergodic() {
        for gamma in [0.55, 0.7, 0.9, 0.99] {
            assert!(ergodicity_check(&two_state(gamma)).is_ergodic());
        }
    }

    #[test]
    fn zero_reward_gives_zero_value() {
        let inst =
            MrpInstance::from_state_rewards(two_state(0.8), &DVector::zeros(2), 0.8).unwrap();
        let v = true_value_function(&inst).unwrap();
        assert_eq!(v.amax(), 0.0);
    }

    #[test]
    fn two_state_value_by_hand() {
        // (I - gamma P) v = r solved by hand for gamma = 0.9: v = [10/3, -10/3].
        let inst = MrpInstance::from_state_rewards(
            two_state(0.9),
            &DVector::from_vec(vec![1.0, -1.0]),
            0.9,
        )
        .unwrap();
        let v = true_value_function(&inst).unwrap();
        assert!((v[0] - 10.0 / 3.0).abs() < 1e-12);
        assert!((v[1] + 10.0 / 3.0).abs() < 1e-12);
        assert!(inst.td_residual(&v).amax() <= 1e-10);
    }

    #[test]
    fn weighted_norm_basics() {
        let pi = StationaryDistribution::uniform(4);
        assert_eq!(weighted_norm(&DVector::zeros(4), &pi).unwrap(), 0.0);
        assert!((weighted_norm(&DVector::from_element(4, 1.0), &pi).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            weighted_norm(&DVector::zeros(3), &pi),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn two_state_mixing_rate() {
        // Eigenvalues of the symmetric kernel are 1 and (3 gamma - 2) / gamma.
        let profile = mixing_constants(&two_state(0.9), 60).unwrap();
        assert!((profile.rho - 7.0 / 9.0).abs() < 1e-12);
        // Deviations are exactly rho^t / 2.
        assert!((profile.c_p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_step_mixing_uses_floor() {
        let q = [0.25, 0.75];
        let p = DMatrix::from_fn(2, 2, |_, j| q[j]);
        let profile = mixing_constants(&p, 20).unwrap();
        assert_eq!(profile.rho, RHO_FLOOR);
        assert!(profile.c_p > 0.0);
        assert_eq!(profile.t_mix, 1);
        let devs = row_deviations(&p, &stationary_distribution(&p).unwrap(), 20);
        for (i, dev) in devs.iter().enumerate() {
            assert!(*dev <= profile.c_p * profile.rho.powi(i as i32 + 1));
        }
    }

    #[test]
    fn rejects_bad_rows_and_gamma() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.5, 0.5]);
        assert!(MrpInstance::new(p, DMatrix::zeros(2, 2), 0.5).is_err());
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert!(matches!(
            MrpInstance::new(p, DMatrix::zeros(2, 2), 1.0),
            Err(Error::InvalidGamma(_))
        ));
    }
}
