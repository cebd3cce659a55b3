//! Dense SVD services: pseudoinverse solves, rank, null spaces and
//! column-space inclusion.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// `max(rows, cols) * eps`, relative to the largest singular value.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols).max(1) as f64 * f64::EPSILON
}

fn check_finite(a: &DenseMatrix) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric("non-finite matrix entry".into()))
    }
}

struct Factor {
    u: DenseMatrix,
    s: DVector<f64>,
    v_t: DenseMatrix,
}

fn svd(a: &DenseMatrix) -> Result<Factor> {
    check_finite(a)?;
    let m = faer::Mat::<f64>::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)]);
    let f = m.thin_svd().map_err(|e| Error::Numeric(format!("SVD did not converge: {e:?}")))?;
    let (u, s, v) = (f.U(), f.S().column_vector(), f.V());
    Ok(Factor {
        u: DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        s: DVector::from_fn(s.nrows(), |i, _| s[i]),
        v_t: DMatrix::from_fn(v.ncols(), v.nrows(), |i, j| v[(j, i)]),
    })
}

fn cutoff(s: &DVector<f64>, rows: usize, cols: usize, rank_tol: Option<f64>) -> f64 {
    let smax = s.iter().cloned().fold(0.0, f64::max);
    rank_tol.unwrap_or_else(|| default_rank_tol(rows, cols)) * smax
}

/// Minimum-norm least-squares solution `A⁺ b`.
pub fn pinv_solve(a: &DenseMatrix, b: &DVector<f64>, rank_tol: Option<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::Argument(format!("pinv_solve: {} rows vs rhs {}", a.nrows(), b.len())));
    }
    if !b.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("non-finite right-hand side".into()));
    }
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(DVector::zeros(a.ncols()));
    }
    let f = svd(a)?;
    let cut = cutoff(&f.s, a.nrows(), a.ncols(), rank_tol);
    let mut utb = f.u.transpose() * b;
    for (j, x) in utb.iter_mut().enumerate() {
        let sj = f.s[j];
        *x = if sj > cut && sj > 0.0 { *x / sj } else { 0.0 };
    }
    Ok(f.v_t.transpose() * utb)
}

/// Dense pseudoinverse.
pub fn pinv(a: &DenseMatrix, rank_tol: Option<f64>) -> Result<DenseMatrix> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(DenseMatrix::zeros(a.ncols(), a.nrows()));
    }
    let f = svd(a)?;
    let cut = cutoff(&f.s, a.nrows(), a.ncols(), rank_tol);
    let mut ut = f.u.transpose();
    for j in 0..f.s.len() {
        let sj = f.s[j];
        let inv = if sj > cut && sj > 0.0 { 1.0 / sj } else { 0.0 };
        ut.row_mut(j).scale_mut(inv);
    }
    Ok(f.v_t.transpose() * ut)
}

pub fn singular_values(a: &DenseMatrix) -> Result<DVector<f64>> {
    check_finite(a)?;
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    Ok(svd(a)?.s)
}

pub fn numerical_rank(a: &DenseMatrix, rank_tol: Option<f64>) -> Result<usize> {
    let s = singular_values(a)?;
    let cut = cutoff(&s, a.nrows(), a.ncols(), rank_tol);
    Ok(s.iter().filter(|&&x| x > cut && x > 0.0).count())
}

/// Orthonormal basis (as columns) of the null space of `a`.
pub fn null_space_basis(a: &DenseMatrix, rank_tol: Option<f64>) -> Result<DenseMatrix> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return Ok(DenseMatrix::identity(n, n));
    }
    if n == 0 {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    // pad with zero rows so the thin SVD returns a full V
    let padded = if a.nrows() < n {
        let mut p = DenseMatrix::zeros(n, n);
        p.rows_mut(0, a.nrows()).copy_from(a);
        p
    } else {
        a.clone()
    };
    let f = svd(&padded)?;
    let cut = cutoff(&f.s, a.nrows(), n, rank_tol);
    let keep: Vec<usize> = (0..f.s.len()).filter(|&j| !(f.s[j] > cut && f.s[j] > 0.0)).collect();
    let mut basis = DenseMatrix::zeros(n, keep.len());
    for (c, &j) in keep.iter().enumerate() {
        basis.set_column(c, &f.v_t.row(j).transpose());
    }
    Ok(basis)
}

/// Orthonormal basis of Col(b).
pub fn range_basis(b: &DenseMatrix, rank_tol: Option<f64>) -> Result<DenseMatrix> {
    if b.nrows() == 0 || b.ncols() == 0 {
        return Ok(DenseMatrix::zeros(b.nrows(), 0));
    }
    let f = svd(b)?;
    let cut = cutoff(&f.s, b.nrows(), b.ncols(), rank_tol);
    let keep: Vec<usize> = (0..f.s.len()).filter(|&j| f.s[j] > cut && f.s[j] > 0.0).collect();
    let mut basis = DenseMatrix::zeros(b.nrows(), keep.len());
    for (c, &j) in keep.iter().enumerate() {
        basis.set_column(c, &f.u.column(j));
    }
    Ok(basis)
}

/// Largest relative projection residual `‖(I − B B⁺) a‖ / (1 + ‖a‖)` over the columns of `a`.
pub fn col_space_residual(b: &DenseMatrix, a: &DenseMatrix) -> Result<f64> {
    if b.nrows() != a.nrows() {
        return Err(Error::Argument("col_space_contains: row counts differ".into()));
    }
    check_finite(a)?;
    let u = range_basis(b, None)?;
    let mut worst: f64 = 0.0;
    for col in a.column_iter() {
        let proj = &u * (u.transpose() * col);
        let r = (col - proj).norm() / (1.0 + col.norm());
        worst = worst.max(r);
    }
    Ok(worst)
}

pub fn col_space_contains(b: &DenseMatrix, a: &DenseMatrix, tol: f64) -> Result<bool> {
    Ok(col_space_residual(b, a)? <= tol)
}

/// Spectral norm of the pseudoinverse, `1 / σ_min` over the retained singular values.
pub fn pinv_norm(a: &DenseMatrix, rank_tol: Option<f64>) -> Result<f64> {
    let s = singular_values(a)?;
    let cut = cutoff(&s, a.nrows(), a.ncols(), rank_tol);
    Ok(s.iter().filter(|&&x| x > cut && x > 0.0).fold(0.0, |m: f64, &x| m.max(1.0 / x)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve() {
        let a = DenseMatrix::identity(3, 3);
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert!((pinv_solve(&a, &b, None).unwrap() - &b).norm() < 1e-15);
    }

    #[test]
    fn diagonal_rank_deficient() {
        let a = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![3.0, 0.0]);
        let x = pinv_solve(&a, &b, None).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-15 && x[1].abs() < 1e-15);
    }

    #[test]
    fn rank_and_null() {
        assert_eq!(numerical_rank(&DenseMatrix::identity(3, 3), None).unwrap(), 3);
        assert_eq!(null_space_basis(&DenseMatrix::identity(3, 3), None).unwrap().ncols(), 0);
        let a = DenseMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let z = null_space_basis(&a, None).unwrap();
        assert_eq!(z.ncols(), 1);
        assert!((z[(0, 0)] + z[(1, 0)]).abs() < 1e-12);
        assert!((z.column(0).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inclusion_basic() {
        let e1 = DenseMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DenseMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(col_space_contains(&e1, &e1, 1e-10).unwrap());
        assert!(!col_space_contains(&e1, &e2, 1e-10).unwrap());
    }

    #[test]
    fn non_finite_rejected() {
        let a = DenseMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(pinv_solve(&a, &DVector::zeros(1), None), Err(Error::Numeric(_))));
    }
}
