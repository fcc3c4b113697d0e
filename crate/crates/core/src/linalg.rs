//! Small dense linear-algebra helpers shared by the LQ and learning modules.
//!
//! Symmetric matrices are parametrised by `svec` coordinates: the upper
//! triangle in row-major order, `(0,0), (0,1), .., (0,n-1), (1,1), ..`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Number of free entries of an `n x n` symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry `(i, j)` (either order) in the svec layout.
pub fn svec_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // rows before i contribute n + (n-1) + ... + (n-i+1) entries
    i * n - i * i.saturating_sub(1) / 2 + (j - i)
}

/// Upper-triangular entries of a symmetric matrix.
pub fn svec(p: &DMatrix<f64>) -> DVector<f64> {
    let n = p.nrows();
    let mut out = DVector::zeros(svec_len(n));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            out[k] = p[(i, j)];
            k += 1;
        }
    }
    out
}

/// Inverse of [`svec`]; the result is exactly symmetric.
pub fn unsvec(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            p[(i, j)] = v[k];
            p[(j, i)] = v[k];
            k += 1;
        }
    }
    p
}

/// Regressor row such that `quad_regressor(x) . svec(P) == x^T P x`.
///
/// Off-diagonal products `x_i x_j` appear twice in the quadratic form and are
/// merged with a factor two.
pub fn quad_regressor(x: &[f64], out: &mut [f64]) {
    let n = x.len();
    let mut k = 0;
    for i in 0..n {
        out[k] = x[i] * x[i];
        k += 1;
        for j in (i + 1)..n {
            out[k] = 2.0 * x[i] * x[j];
            k += 1;
        }
    }
}

/// Column-major vectorisation, matching the `vec` operator.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Largest real part over the eigenvalues of a square matrix.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    spectral_abscissa(a) < 0.0
}

/// Symmetric eigenvalues in ascending order.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

/// Numerical rank: count of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// [`numerical_rank`] after scaling every nonzero column to unit norm, so
/// regressors of very different magnitudes are weighed equally.
pub fn equilibrated_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let mut scaled = m.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    numerical_rank(&scaled, rel_tol)
}

/// Relative asymmetry `||M - M^T||_F / ||M||_F` (zero for the zero matrix).
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        0.0
    } else {
        (m - m.transpose()).norm() / norm
    }
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::NotPositiveDefinite(what))
}

/// log-determinant of a symmetric positive definite matrix.
pub fn spd_log_det(m: &DMatrix<f64>, what: &'static str) -> Result<f64> {
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite(what))?;
    let l = chol.l();
    Ok(2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Least-squares solve through the SVD (minimum-norm for rank-deficient input).
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    svd.solve(b, smax * 1e-14)
        .map_err(|_| Error::SingularSystem("least squares"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_roundtrip_and_index() {
        let p = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let v = svec(&p);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unsvec(v.as_slice(), 3), p);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(v[svec_index(3, i, j)], p[(i, j)]);
            }
        }
    }

    #[test]
    fn quad_regressor_matches_quadratic_form() {
        let p = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.5, -1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        let x = [0.3, -1.2, 2.0];
        let mut row = [0.0; 6];
        quad_regressor(&x, &mut row);
        let lhs: f64 = row.iter().zip(svec(&p).iter()).map(|(a, b)| a * b).sum();
        let xv = DVector::from_column_slice(&x);
        let rhs = (xv.transpose() * &p * &xv)[0];
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn rank_of_duplicate_rows() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(numerical_rank(&m, 1e-8), 1);
    }
}
