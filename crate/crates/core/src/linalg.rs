//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, SwgeeError};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric positive definite matrix, `None` if the Cholesky
/// factorization fails.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse())
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.clone().cholesky().is_some()
}

pub fn inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().try_inverse()
}

/// Inverts an information matrix, treating near-singularity as an
/// identification failure.
pub fn information_inverse(info: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(info));
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if !(max > 0.0) || !(min > max * 1e-12) {
        return Err(SwgeeError::Unidentified(format!(
            "{what} information matrix is singular (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    spd_inverse(info)
        .map(|m| symmetrize(&m))
        .ok_or_else(|| SwgeeError::Unidentified(format!("{what} information matrix is singular")))
}

/// `A^{-1/2}` of the symmetric part of `a`, eigenvalues floored at `floor`.
pub fn inv_sqrt_symmetric(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let d = eig.eigenvalues.map(|v| 1.0 / v.max(floor).sqrt());
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&d) * q.transpose()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, &b| a.max(b.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_square_root_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = inv_sqrt_symmetric(&a, 1e-10);
        let back = (&r * &r).try_inverse().unwrap();
        assert!((back - a).abs().max() < 1e-12);
    }

    #[test]
    fn singular_information_is_unidentified() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(information_inverse(&a, "mean"), Err(SwgeeError::Unidentified(_))));
    }
}
