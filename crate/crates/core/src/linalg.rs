//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::{Error, Result};

/// Induced infinity norm: maximum absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `‖M·1‖_∞`, the largest absolute row sum (signed sums, not absolute values).
pub fn row_sum_residual(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|row| row.sum().abs()).fold(0.0, f64::max)
}

pub fn ones(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}

pub fn ensure_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub fn ensure_finite(m: &DMatrix<f64>) -> Result<()> {
    for (idx, v) in m.iter().enumerate() {
        if !v.is_finite() {
            // column-major storage
            return Err(Error::NonFinite {
                row: idx % m.nrows(),
                col: idx / m.nrows(),
            });
        }
    }
    Ok(())
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = inf_norm(m).max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() <= rel_tol * scale
}

/// Eigenvalues of a real square matrix via the real Schur form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let dim = ensure_square(m)?;
    if dim == 0 {
        return Ok(Vec::new());
    }
    ensure_finite(m)?;
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 1000 * dim.max(10))
        .ok_or(Error::EigenNonConvergence { dim })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest singular value of a real matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn max_singular_value(m: &DMatrix<Complex64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Copies `src` into `dst` with its top-left corner at `(row, col)`.
pub fn set_block(dst: &mut DMatrix<f64>, row: usize, col: usize, src: &DMatrix<f64>) {
    dst.view_mut((row, col), (src.nrows(), src.ncols()))
        .copy_from(src);
}

/// Row-major nested representation used by the JSON formats.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    for r in rows {
        if r.len() != ncols {
            return Err(Error::DimensionMismatch {
                expected: ncols,
                found: r.len(),
                context: "row length",
            });
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Orthonormal basis whose leading columns span `basis`, completed to the
/// whole space. `basis` must have full column rank.
pub fn complete_orthonormal_basis(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    let k = basis.ncols();
    let mut stacked = DMatrix::zeros(n, k + n);
    set_block(&mut stacked, 0, 0, basis);
    set_block(&mut stacked, 0, k, &DMatrix::identity(n, n));
    let q = stacked.qr().q();
    q.columns(0, n).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inf_norm_is_max_abs_row_sum() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -3.0, 2.0, 0.5]);
        assert_eq!(inf_norm(&m), 4.0);
        assert_eq!(row_sum_residual(&m), 2.5);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(3, 2), 3.0);
        assert_eq!(binomial(4, 2), 6.0);
        assert_eq!(binomial(8, 4), 70.0);
        assert_eq!(binomial(2, 3), 0.0);
    }

    #[test]
    fn completed_basis_is_orthonormal_and_leads_with_span() {
        let b = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 0.0, 0.0]);
        let q = complete_orthonormal_basis(&b);
        let qtq = q.transpose() * &q;
        assert!((qtq - DMatrix::<f64>::identity(4, 4)).amax() < 1e-14);
        // first column parallel to b
        let c0 = q.column(0);
        assert!((c0.dot(&b.column(0)).abs() - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn eigenvalues_of_rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let mut ev = eigenvalues(&m).unwrap();
        ev.sort_by(|a, b| a.im.total_cmp(&b.im));
        assert!((ev[0] - Complex64::new(0.0, -1.0)).norm() < 1e-14);
        assert!((ev[1] - Complex64::new(0.0, 1.0)).norm() < 1e-14);
    }
}
