//! Small dense linear-algebra helpers shared by the estimators and allocators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest condition number accepted before a covariance is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut values: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| a.total_cmp(b));
    values
}

/// Ratio of the largest to smallest eigenvalue; infinite when the smallest is not positive.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let values = symmetric_eigenvalues(m);
    match (values.first(), values.last()) {
        (Some(&lo), Some(&hi)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Positive semidefinite up to `-tol * max(1, |largest eigenvalue|)`.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    let values = symmetric_eigenvalues(m);
    match (values.first(), values.last()) {
        (Some(&lo), Some(&hi)) => lo >= -tol * hi.abs().max(1.0),
        _ => true,
    }
}

/// Solves `sigma * x = rhs` for a symmetric positive definite `sigma`.
///
/// Rejects matrices whose condition number exceeds [`MAX_CONDITION`].
pub fn spd_solve(sigma: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let condition = condition_number(sigma);
    if !(condition < MAX_CONDITION) {
        return Err(Error::SingularCovariance { condition });
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or(Error::SingularCovariance { condition })?;
    Ok(chol.solve(rhs))
}

pub fn spd_solve_vec(sigma: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let condition = condition_number(sigma);
    if !(condition < MAX_CONDITION) {
        return Err(Error::SingularCovariance { condition });
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or(Error::SingularCovariance { condition })?;
    Ok(chol.solve(rhs))
}

/// Symmetric inverse through Cholesky, symmetrized to remove round-off skew.
pub fn spd_inverse(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    let inv = spd_solve(sigma, &DMatrix::identity(n, n))?;
    Ok((&inv + inv.transpose()) * 0.5)
}

pub fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_of_identity_is_one() {
        assert_eq!(condition_number(&DMatrix::identity(3, 3)), 1.0);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            spd_solve_vec(&m, &ones(2)),
            Err(Error::SingularCovariance { .. })
        ));
    }

    #[test]
    fn psd_check_flags_negative_eigenvalue() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(!is_psd(&m, 1e-10));
        assert!(is_psd(&DMatrix::identity(2, 2), 1e-10));
    }
}
