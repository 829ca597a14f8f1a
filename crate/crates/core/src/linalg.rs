//! Small dense linear-algebra helpers shared by the selectors and the
//! cross-validation code. Everything here operates on `nalgebra` dynamic
//! matrices; problem sizes are modest (hundreds of rows, tens to a few
//! hundred columns) so dense factorizations are fine.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Column means of `x`.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Population (1/n) standard deviations of the columns of `x`.
pub fn column_stds(x: &DMatrix<f64>, means: &DVector<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(
        x.ncols(),
        x.column_iter().enumerate().map(|(j, c)| {
            let m = means[j];
            (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
        }),
    )
}

/// A design standardized in place: columns centered and scaled to unit
/// (1/n) variance. Constant columns are left centered with `std` recorded
/// as 0 so callers can pin their coefficients at zero.
pub struct Standardized {
    pub x: DMatrix<f64>,
    pub means: DVector<f64>,
    pub stds: DVector<f64>,
}

pub fn standardize_columns(x: &DMatrix<f64>) -> Standardized {
    let means = column_means(x);
    let stds = column_stds(x, &means);
    let mut xs = x.clone();
    for j in 0..xs.ncols() {
        let m = means[j];
        let s = stds[j];
        for v in xs.column_mut(j).iter_mut() {
            *v -= m;
            if s > 0.0 {
                *v /= s;
            }
        }
    }
    Standardized { x: xs, means, stds }
}

/// Ordinary least squares with intercept, fitted through the centered
/// normal equations. Returns `(coefficients, intercept)`.
///
/// Errors with [`Error::Numerical`] when the centered Gram matrix is not
/// positive definite (collinear columns, too few rows).
pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::validation(format!(
            "ols: x has {} rows but y has {}",
            n,
            y.len()
        )));
    }
    if n < x.ncols() + 1 {
        return Err(Error::numerical(format!(
            "ols: {} rows cannot identify {} coefficients plus intercept",
            n,
            x.ncols()
        )));
    }
    let means = column_means(x);
    let y_mean = y.mean();
    if x.ncols() == 0 {
        return Ok((DVector::zeros(0), y_mean));
    }
    let mut xc = x.clone();
    for j in 0..xc.ncols() {
        let m = means[j];
        for v in xc.column_mut(j).iter_mut() {
            *v -= m;
        }
    }
    let yc = y.map(|v| v - y_mean);
    let gram = xc.transpose() * &xc;
    let rhs = xc.transpose() * yc;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::numerical("ols: singular Gram matrix"))?;
    let beta = chol.solve(&rhs);
    let intercept = y_mean - means.dot(&beta);
    Ok((beta, intercept))
}

/// Residual sum of squares of an OLS fit on the columns `cols` of a design
/// whose centered Gram matrix and centered cross products are precomputed.
/// Returns `None` when the sub-Gram is singular.
pub fn rss_from_gram(
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    yty: f64,
    cols: &[usize],
) -> Option<f64> {
    if cols.is_empty() {
        return Some(yty);
    }
    let q = cols.len();
    let mut g = DMatrix::zeros(q, q);
    let mut b = DVector::zeros(q);
    for (a, &ca) in cols.iter().enumerate() {
        b[a] = xty[ca];
        for (c, &cc) in cols.iter().enumerate() {
            g[(a, c)] = gram[(ca, cc)];
        }
    }
    let chol = g.cholesky()?;
    let beta = chol.solve(&b);
    let rss = yty - b.dot(&beta);
    Some(rss.max(0.0))
}

/// Symmetric positive-semidefinite square root via eigendecomposition,
/// with negative eigenvalues clamped to zero.
pub fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let mut scaled = eig.eigenvectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= sqrt_vals[j];
    }
    &scaled * eig.eigenvectors.transpose()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
}

/// Assigns each of `n` rows to one of `k` folds after a seeded shuffle.
/// Fold sizes differ by at most one. Panics if `k == 0` or `k > n`.
pub fn seeded_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    assert!(k >= 1 && k <= n, "fold count must be in 1..=n");
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::seed::seeded_rng(seed, &[crate::seed::TAG_FOLDS]);
    order.shuffle(&mut rng);
    let mut fold = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    fold
}
