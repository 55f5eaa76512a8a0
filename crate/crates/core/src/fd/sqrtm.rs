use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest tolerated asymmetry, relative to the largest entry (floored at 1).
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Eigenvalues down to `-EIGEN_FLOOR * max(1, lambda_max)` are round-off and
/// get clamped to zero; anything lower is a genuinely indefinite input.
pub const EIGEN_FLOOR: f64 = 1e-8;

/// Principal square root of a symmetric positive semidefinite matrix via
/// symmetric eigendecomposition.
pub fn sqrtm_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("matrix square root input".into()));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);

    let lmax = eig.eigenvalues.max().max(1.0);
    let lmin = eig.eigenvalues.min();
    if lmin < -EIGEN_FLOOR * lmax {
        return Err(Error::IndefiniteMatrix(lmin));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let mut scaled = eig.eigenvectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= roots[j];
    }
    let s = scaled * eig.eigenvectors.transpose();
    Ok((&s + s.transpose()) * 0.5)
}
