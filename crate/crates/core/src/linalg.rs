use nalgebra::{DMatrix, DVector, SymmetricEigen};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

use crate::{Error, Result};

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Frobenius-norm-relative threshold below which a negative eigenvalue is
/// treated as round-off.
pub(crate) const PSD_TOLERANCE: f64 = 1e-8;

/// Clamps negative eigenvalues of a symmetric matrix to zero. The matrix is
/// returned untouched when it has none, so exact inputs stay exact.
pub(crate) fn floor_eigenvalues(m: DMatrix<f64>) -> (DMatrix<f64>, f64) {
    if m.nrows() == 0 {
        return (m, 0.0);
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return (m, min);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (symmetrize(&rebuilt), min)
}

/// Returns `R` with `R Rᵀ = m` for a symmetric positive semidefinite `m`.
/// Cholesky first; falls back to an eigen-decomposition with negative
/// round-off eigenvalues clamped.
pub(crate) fn psd_root(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    let scale = m.norm().max(f64::MIN_POSITIVE);
    if min < -PSD_TOLERANCE * scale {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Solves `a x = b` for symmetric positive definite `a` using a Jacobi-scaled
/// Cholesky factorization. `None` when `a` is not numerically positive definite.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    let mut scale = DVector::zeros(n);
    for i in 0..n {
        let d = a[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        scale[i] = 1.0 / d.sqrt();
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * scale[i] * scale[j]);
    let chol = scaled.cholesky()?;
    let rhs = b.component_mul(&scale);
    let y = chol.solve(&rhs);
    let x = y.component_mul(&scale);
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub(crate) fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

/// Minimum-norm least-squares solution of a symmetric system via its
/// eigen-decomposition, discarding eigenvalues below `rel_cut * max`.
pub(crate) fn solve_symmetric_pinv(a: &DMatrix<f64>, b: &DVector<f64>, rel_cut: f64) -> DVector<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let cut = rel_cut * max;
    let proj = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_fn(proj.len(), |i, _| {
        let l = eig.eigenvalues[i];
        if l.abs() > cut && l.abs() > 0.0 {
            proj[i] / l
        } else {
            0.0
        }
    });
    &eig.eigenvectors * scaled
}
