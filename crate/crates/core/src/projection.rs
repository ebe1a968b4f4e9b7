//! Linear function approximation: feature geometry, the projected fixed
//! point and the deterministic temporal-difference operator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mrp::{self, MrpInstance, StationaryDistribution};

/// Smallest admissible eigenvalue of the feature Gram matrix.
pub const RANK_TOL: f64 = 1e-10;
/// Eigenvalue floor used when forming `B^{-1/2}`.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Feature matrix `Psi` (d x D) with its derived geometry under a weighting
/// distribution (normally the stationary distribution).
#[derive(Clone, Debug)]
pub struct FeatureBasis {
    psi: DMatrix<f64>,
    weights: DVector<f64>,
    gram: DMatrix<f64>,
    gram_inv_sqrt: DMatrix<f64>,
    phi: DMatrix<f64>,
    beta: f64,
    mu: f64,
    m: DMatrix<f64>,
    gamma: f64,
}

impl FeatureBasis {
    /// Feature matrix `Psi`; column `s` is the feature vector `psi(s)`.
    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    /// Weighting distribution the geometry was built under.
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Gram matrix `B = Psi Pi Psi^T`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.gram_inv_sqrt
    }

    /// Orthonormalised features `Phi = B^{-1/2} Psi`.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Projected transition `M = gamma Phi Pi P Phi^T`.
    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.psi.nrows()
    }

    pub fn num_states(&self) -> usize {
        self.psi.ncols()
    }

    /// Value-space image `v = Psi^T theta`.
    pub fn value(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.psi.tr_mul(theta)
    }

    /// `||Psi^T theta||_Pi^2` computed in parameter space as `theta^T B theta`.
    pub fn value_norm_sq(&self, theta: &DVector<f64>) -> f64 {
        theta.dot(&(&self.gram * theta)).max(0.0)
    }

    /// Orthogonal projector onto the feature span in the weighted geometry,
    /// materialised as the D x D matrix `Phi^T Phi Pi`.
    pub fn subspace_projector(&self) -> DMatrix<f64> {
        self.phi.tr_mul(&self.phi) * DMatrix::from_diagonal(&self.weights)
    }
}

/// Builds the feature geometry under the stationary distribution `pi`.
pub fn build_feature_basis(
    psi: &DMatrix<f64>,
    pi: &StationaryDistribution,
    p: &DMatrix<f64>,
    gamma: f64,
) -> Result<FeatureBasis> {
    build_weighted_basis(psi, pi.pi(), p, gamma)
}

/// Same as [`build_feature_basis`] but under an arbitrary strictly positive
/// weighting `omega`.
pub fn build_weighted_basis(
    psi: &DMatrix<f64>,
    omega: &DVector<f64>,
    p: &DMatrix<f64>,
    gamma: f64,
) -> Result<FeatureBasis> {
    let n = psi.ncols();
    if omega.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: omega.len(),
        });
    }
    if p.nrows() != n || p.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: p.nrows(),
        });
    }
    if psi.nrows() == 0 {
        return Err(Error::RankDeficientFeatures {
            min_eigenvalue: 0.0,
        });
    }
    mrp::validate_distribution(omega.as_slice())?;
    let weighted = weight_columns(psi, omega);
    let gram = symmetrize(&(&weighted * psi.transpose()));
    let (values, _) = linalg::symmetric_eigen(&gram);
    let mu = values[0];
    let beta = values[values.len() - 1];
    if !(mu > RANK_TOL) {
        return Err(Error::RankDeficientFeatures { min_eigenvalue: mu });
    }
    let gram_inv_sqrt = linalg::symmetric_power(&gram, -0.5, EIGEN_FLOOR);
    let phi = &gram_inv_sqrt * psi;
    let m = weight_columns(&phi, omega) * p * phi.transpose() * gamma;
    Ok(FeatureBasis {
        psi: psi.clone(),
        weights: omega.clone(),
        gram,
        gram_inv_sqrt,
        phi,
        beta,
        mu,
        m,
        gamma,
    })
}

/// `X diag(w)`.
pub(crate) fn weight_columns(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= w[j];
    }
    out
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Affine form `g(theta) = A theta - b` of the deterministic operator, with
/// `A = Psi Pi (I - gamma P) Psi^T` and `b = Psi Pi r`.
#[derive(Clone, Debug)]
pub struct LinearOperator {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearOperator {
    pub fn new(instance: &MrpInstance, basis: &FeatureBasis) -> Result<Self> {
        check_basis(instance, basis)?;
        let psi = basis.psi();
        let weighted = weight_columns(psi, basis.weights());
        let n = instance.num_states();
        let resolvent = DMatrix::<f64>::identity(n, n) - instance.transition() * instance.gamma();
        let a = &weighted * resolvent * psi.transpose();
        let b = &weighted * instance.expected_reward();
        Ok(Self { a, b })
    }

    pub fn apply(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.a * theta - &self.b
    }
}

fn check_basis(instance: &MrpInstance, basis: &FeatureBasis) -> Result<()> {
    if basis.num_states() != instance.num_states() {
        return Err(Error::DimensionMismatch {
            expected: instance.num_states(),
            got: basis.num_states(),
        });
    }
    Ok(())
}

/// `g(theta) = Psi Pi (Psi^T theta - r - gamma P Psi^T theta)`.
pub fn deterministic_operator(
    theta: &DVector<f64>,
    instance: &MrpInstance,
    basis: &FeatureBasis,
) -> Result<DVector<f64>> {
    check_basis(instance, basis)?;
    if theta.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            got: theta.len(),
        });
    }
    let v = basis.value(theta);
    let residual = instance.td_residual(&v);
    Ok(weight_columns(basis.psi(), basis.weights()) * residual)
}

/// Root of the deterministic operator and its value-space image.
#[derive(Clone, Debug)]
pub struct ProjectedSolution {
    pub theta_bar: DVector<f64>,
    pub v_bar: DVector<f64>,
    /// `||v_bar - v*||_Pi^2` in the basis weighting.
    pub approx_error_sq: f64,
}

/// Solves `Psi Pi (I - gamma P) Psi^T theta = Psi Pi r`.
pub fn projected_fixed_point(
    instance: &MrpInstance,
    basis: &FeatureBasis,
) -> Result<ProjectedSolution> {
    let op = LinearOperator::new(instance, basis)?;
    let theta_bar = linalg::solve(&op.a, &op.b)?;
    let residual = op.apply(&theta_bar).amax();
    let scale = 1.0 + op.a.amax() * theta_bar.amax() + op.b.amax();
    if residual > 1e-10 * scale {
        return Err(Error::SingularSystem(format!(
            "projected fixed point residual {residual:e}"
        )));
    }
    let v_bar = basis.value(&theta_bar);
    let v_star = mrp::true_value_function(instance)?;
    let diff = &v_bar - &v_star;
    let approx_error_sq = basis
        .weights()
        .iter()
        .zip(diff.iter())
        .map(|(w, x)| w * x * x)
        .sum();
    Ok(ProjectedSolution {
        theta_bar,
        v_bar,
        approx_error_sq,
    })
}

/// `1 + lambda_max((I - M)^{-1} (gamma^2 I - M M^T) (I - M)^{-T})`.
pub fn approximation_factor(m: &DMatrix<f64>, gamma: f64) -> Result<f64> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: m.ncols(),
        });
    }
    let eye = DMatrix::<f64>::identity(d, d);
    let inv = linalg::inverse(&(&eye - m))?;
    let middle = &eye * (gamma * gamma) - m * m.transpose();
    let core = symmetrize(&(&inv * middle * inv.transpose()));
    Ok(1.0 + linalg::lambda_max_symmetric(&core))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrp::stationary_distribution;

    fn two_state(gamma: f64) -> MrpInstance {
        let a = (2.0 * gamma - 1.0) / gamma;
        let b = (1.0 - gamma) / gamma;
        MrpInstance::from_state_rewards(
            DMatrix::from_row_slice(2, 2, &[a, b, b, a]),
            &DVector::from_vec(vec![1.0, -1.0]),
            gamma,
        )
        .unwrap()
    }

    fn two_state_basis(inst: &MrpInstance) -> FeatureBasis {
        let pi = stationary_distribution(inst.transition()).unwrap();
        let psi = DMatrix::from_diagonal_element(2, 2, 2f64.sqrt());
        build_feature_basis(&psi, &pi, inst.transition(), inst.gamma()).unwrap()
    }

    #[test]
    fn two_state_geometry_is_orthonormal() {
        let inst = two_state(0.9);
        let basis = two_state_basis(&inst);
        assert!((basis.gram() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
        assert!((basis.beta() - 1.0).abs() < 1e-12);
        assert!((basis.mu() - 1.0).abs() < 1e-12);
        assert!((basis.m() - inst.transition() * 0.9).amax() < 1e-12);
    }

    #[test]
    fn duplicated_row_is_rank_deficient() {
        let inst = two_state(0.9);
        let pi = stationary_distribution(inst.transition()).unwrap();
        let psi = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(
            build_feature_basis(&psi, &pi, inst.transition(), 0.9),
            Err(Error::RankDeficientFeatures { .. })
        ));
    }

    #[test]
    fn scaled_standard_basis_is_orthonormal() {
        let p = DMatrix::from_row_slice(3, 3, &[0.1, 0.6, 0.3, 0.5, 0.2, 0.3, 0.3, 0.3, 0.4]);
        let pi = stationary_distribution(&p).unwrap();
        let psi = DMatrix::from_diagonal(&pi.pi().map(|x| 1.0 / x.sqrt()));
        let basis = build_feature_basis(&psi, &pi, &p, 0.8).unwrap();
        assert!((basis.gram() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
        // M is similar to gamma P via Pi^{1/2}.
        let sqrt_pi = DMatrix::from_diagonal(&pi.pi().map(f64::sqrt));
        let inv_sqrt_pi = DMatrix::from_diagonal(&pi.pi().map(|x| 1.0 / x.sqrt()));
        let expected = &sqrt_pi * &p * &inv_sqrt_pi * 0.8;
        assert!((basis.m() - expected).amax() < 1e-12);
    }

    #[test]
    fn full_rank_fixed_point_is_value_function() {
        let inst = two_state(0.9);
        let sol = projected_fixed_point(&inst, &two_state_basis(&inst)).unwrap();
        assert!((sol.v_bar[0] - 10.0 / 3.0).abs() < 1e-10);
        assert!((sol.v_bar[1] + 10.0 / 3.0).abs() < 1e-10);
        assert!(sol.approx_error_sq < 1e-20);
    }

    #[test]
    fn zero_reward_fixed_point_is_zero() {
        let inst = two_state(0.8).scale_rewards(0.0).unwrap();
        let sol = projected_fixed_point(&inst, &two_state_basis(&inst)).unwrap();
        assert_eq!(sol.theta_bar.amax(), 0.0);
    }

    #[test]
    fn operator_at_zero_for_two_state() {
        // g(0) = -Psi Pi r = -(sqrt 2 / 2) [1, -1].
        let inst = two_state(0.9);
        let g = deterministic_operator(&DVector::zeros(2), &inst, &two_state_basis(&inst)).unwrap();
        let h = 2f64.sqrt() / 2.0;
        assert!((g[0] + h).abs() < 1e-15);
        assert!((g[1] - h).abs() < 1e-15);
    }

    #[test]
    fn approximation_factor_corner_cases() {
        let zero = DMatrix::zeros(3, 3);
        assert!((approximation_factor(&zero, 0.7).unwrap() - 1.49).abs() < 1e-12);
        let scaled = DMatrix::<f64>::identity(3, 3) * 0.7;
        assert!((approximation_factor(&scaled, 0.7).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn operator_dimension_checked() {
        let inst = two_state(0.9);
        assert!(matches!(
            deterministic_operator(&DVector::zeros(3), &inst, &two_state_basis(&inst)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
