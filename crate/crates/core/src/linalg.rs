//! Small dense linear-algebra helpers shared by the estimation, precoding
//! and deterministic-equivalent code.
//!
//! Storage is `ndarray` throughout; factorizations go through `nalgebra`.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result, C64};

/// One draw from CN(0, `var`): real and imaginary parts each N(0, var/2).
#[inline]
pub fn sample_cn<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Fills `out` with i.i.d. CN(0, `var`) entries.
pub fn fill_cn<R: Rng + ?Sized>(rng: &mut R, out: &mut [C64], var: f64) {
    let s = (0.5 * var).sqrt();
    for z in out.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *z = C64::new(s * re, s * im);
    }
}

/// Gram matrix of the rows of `rows`: `G[a, b] = rows[a]^H rows[b]`.
pub fn row_gram(rows: ArrayView2<C64>) -> Array2<C64> {
    rows.mapv(|z| z.conj()).dot(&rows.t())
}

pub fn to_nalgebra(a: ArrayView2<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_nalgebra(a: &DMatrix<C64>) -> Array2<C64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

const PIVOT_TOL: f64 = 1e-13;

/// Solves `A X = B` for Hermitian positive-definite `A`.
pub fn hpd_solve(a: ArrayView2<C64>, b: ArrayView2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension(format!(
            "hpd_solve: A is {}x{}, B has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let chol = to_nalgebra(a)
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{n}x{n} Hermitian system")))?;
    // Cholesky succeeds on numerically rank-deficient input; reject pivots
    // that are rounding noise relative to the largest diagonal entry.
    let l = chol.l_dirty();
    let scale = (0..n).map(|i| a[[i, i]].re).fold(0.0, f64::max);
    if (0..n).any(|i| l[(i, i)].norm_sqr() <= PIVOT_TOL * scale) {
        return Err(Error::Singular(format!(
            "{n}x{n} Hermitian system is rank deficient"
        )));
    }
    Ok(from_nalgebra(&chol.solve(&to_nalgebra(b))))
}

/// Solves `A x = b` for a single right-hand side, Hermitian positive-definite `A`.
pub fn hpd_solve_vec(a: ArrayView2<C64>, b: &Array1<C64>) -> Result<Array1<C64>> {
    let rhs = b
        .view()
        .into_shape_with_order((b.len(), 1))
        .expect("contiguous vector");
    let x = hpd_solve(a, rhs)?;
    Ok(x.column(0).to_owned())
}

/// Inverse of a Hermitian positive-definite matrix.
pub fn hpd_inverse(a: ArrayView2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    let chol = to_nalgebra(a)
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{n}x{n} Hermitian inverse")))?;
    Ok(from_nalgebra(&chol.inverse()))
}

/// Inverse of a general square complex matrix (LU with partial pivoting).
pub fn general_inverse(a: ArrayView2<C64>) -> Result<Array2<C64>> {
    let n = a.nrows();
    to_nalgebra(a)
        .try_inverse()
        .map(|inv| from_nalgebra(&inv))
        .ok_or_else(|| Error::Singular(format!("{n}x{n} general inverse")))
}

/// Solves the real system `A x = b` by LU.
pub fn real_solve(a: &Array2<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    let rhs = nalgebra::DVector::from_column_slice(b);
    m.lu()
        .solve(&rhs)
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| Error::Singular(format!("{n}x{n} real system")))
}

/// `(1/M) tr(A)` as a real number (imaginary part is discarded).
pub fn normalized_trace(a: ArrayView2<C64>) -> f64 {
    let m = a.nrows() as f64;
    a.diag().iter().map(|z| z.re).sum::<f64>() / m
}

/// `(1/M) tr(A B)` without forming the product.
pub fn normalized_trace_product(a: ArrayView2<C64>, b: ArrayView2<C64>) -> f64 {
    let m = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..m {
        for k in 0..m {
            acc += a[[i, k]] * b[[k, i]];
        }
    }
    acc.re / m as f64
}

pub fn norm_sq(v: impl IntoIterator<Item = C64>) -> f64 {
    v.into_iter().map(|z| z.norm_sqr()).sum()
}
