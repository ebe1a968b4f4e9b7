//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues of a symmetric matrix in ascending order, with matching
/// eigenvector columns.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn lambda_max_symmetric(m: &DMatrix<f64>) -> f64 {
    let (values, _) = symmetric_eigen(m);
    values[values.len() - 1]
}

/// `m^power` for symmetric positive semi-definite `m`; eigenvalues below
/// `floor` are clamped to it first.
pub fn symmetric_power(m: &DMatrix<f64>, power: f64, floor: f64) -> DMatrix<f64> {
    let (values, vectors) = symmetric_eigen(m);
    let scaled = DVector::from_iterator(
        values.len(),
        values.iter().map(|&v| v.max(floor).powf(power)),
    );
    &vectors * DMatrix::from_diagonal(&scaled) * vectors.transpose()
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |acc: f64, &s| acc.max(s))
}

/// LU solve with partial pivoting; the residual is checked relative to the
/// scale of the system.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::SingularSystem("LU factorisation has a zero pivot".into()))?;
    let residual = (a * &x - b).amax();
    let scale = 1.0 + a.amax() * x.amax() + b.amax();
    if !residual.is_finite() || residual > 1e-9 * scale {
        return Err(Error::SingularSystem(format!(
            "residual {residual:e} too large for system of scale {scale:e}"
        )));
    }
    Ok(x)
}

pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularSystem("matrix is not invertible".into()))?;
    let n = a.nrows();
    let err = (a * &inv - DMatrix::<f64>::identity(n, n)).amax();
    if !err.is_finite() || err > 1e-8 {
        return Err(Error::SingularSystem(format!("inverse residual {err:e}")));
    }
    Ok(inv)
}

/// Largest eigenvalue modulus after removing the eigenvalue closest to 1.
pub fn second_eigen_modulus(p: &DMatrix<f64>) -> f64 {
    if p.nrows() < 2 {
        return 0.0;
    }
    let eigs = p.complex_eigenvalues();
    let perron = eigs
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    eigs.iter()
        .enumerate()
        .filter(|&(i, _)| i != perron)
        .map(|(_, z)| z.norm())
        .fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_square_root_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = symmetric_power(&m, -0.5, 1e-12);
        assert!((r[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((r[(1, 1)] - 1.0 / 3.0).abs() < 1e-14);
        assert!(r[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn second_modulus_of_symmetric_two_state() {
        let p = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]);
        assert!((second_eigen_modulus(&p) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singular_system_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(solve(&a, &b), Err(Error::SingularSystem(_))));
    }
}
