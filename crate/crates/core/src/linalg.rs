//! Thin wrappers around the LAPACK-backed routines used by the estimators:
//! symmetric eigendecomposition, positive-definite inversion, and small LU
//! solves with a condition estimate.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use ndarray_linalg::{Eigh, Factorize, FactorizeC, Inverse, InverseC, ReciprocalConditionNum, Solve, UPLO};

use crate::error::{Error, Result};

/// Eigendecomposition of a real symmetric matrix.
///
/// Returns eigenvalues in ascending order and the matrix whose columns are
/// the corresponding eigenvectors.
pub fn sym_eigh(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let (vals, vecs) = a.eigh(UPLO::Lower)?;
    Ok((vals, vecs))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    let f = a.factorizec(UPLO::Lower)?;
    let inv = f.invc()?;
    Ok(inv)
}

/// Solves `a * x = b` by LU with partial pivoting and returns the solution
/// together with a 1-norm condition-number estimate of `a`.
///
/// A failed factorization (exactly singular matrix) is reported as an
/// infinite condition number with `x = None` rather than an error, so the
/// caller can degrade gracefully.
pub fn solve_with_condition(
    a: ArrayView2<'_, f64>,
    b: ArrayView1<'_, f64>,
) -> (Option<Array1<f64>>, f64) {
    let f = match a.factorize() {
        Ok(f) => f,
        Err(_) => return (None, f64::INFINITY),
    };
    let rcond = f.rcond().unwrap_or(0.0);
    let cond = if rcond > 0.0 { 1.0 / rcond } else { f64::INFINITY };
    match f.solve(&b.to_owned()) {
        Ok(x) => (Some(x), cond),
        Err(_) => (None, f64::INFINITY),
    }
}

/// Plain LU inverse of a general square matrix.
pub fn lu_inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(a.inv()?)
}

/// Forces exact symmetry by averaging with the transpose, in place.
///
/// The accumulation patterns in the estimators are symmetric in exact
/// arithmetic; this removes the rounding skew before factorizations that
/// assume symmetry.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = m;
            a[[j, i]] = m;
        }
    }
}

/// Frobenius norm of the difference of two matrices.
pub fn frobenius_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Validation helper: smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Array2<f64>) -> Result<f64> {
    if a.nrows() == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    let (vals, _) = sym_eigh(a)?;
    Ok(vals[0])
}
