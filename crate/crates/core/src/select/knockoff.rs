//! Fixed-X knockoff filter with the equicorrelated construction.
//!
//! Given a design X (centered, columns scaled to unit Euclidean norm) with
//! Gram matrix `S = X'X`, the knockoff copy satisfies
//!
//! ```text
//!   Xk'Xk = S          X'Xk = S - diag(s)        s_j = min(2 lambda_min(S), 1)
//! ```
//!
//! built as `Xk = X (I - S^{-1} diag(s)) + U C` with U an orthonormal basis
//! of a subspace orthogonal to the columns of X and `C'C = 2 diag(s)
//! - diag(s) S^{-1} diag(s)`. Requires n >= 2m. Both Gram identities are
//! verified to 1e-8 before the design is returned.
//!
//! Variable importance uses the signed-max lasso entry statistic: with
//! `Z_j`, `Zk_j` the largest penalty at which the variable (knockoff)
//! enters the lasso path on the augmented design,
//! `W_j = max(Z_j, Zk_j) * sign(Z_j - Zk_j)`. The selection threshold is the
//! knockoff(+) rule at the configured FDR level.

use nalgebra::{DMatrix, DVector};

use crate::data::SelectionMask;
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, psd_sqrt};

use super::{InstanceDesign, SelectorConfig};

const GRAM_CHECK_TOL: f64 = 1e-8;
const ENTRY_GRID_LEN: usize = 500;
const ENTRY_GRID_RATIO: f64 = 1e-4;

/// An augmented knockoff design `[X | Xk]` with the normalization used to
/// build it.
#[derive(Debug, Clone)]
pub struct KnockoffDesign {
    /// n x 2m matrix, original normalized columns first.
    pub augmented: DMatrix<f64>,
    /// Number of original variables m.
    pub m: usize,
    /// Equicorrelation constant s_j (identical across variables).
    pub s: f64,
}

/// Centers the columns of `x` and scales each to unit Euclidean norm.
fn center_normalize(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = x.clone();
    for j in 0..out.ncols() {
        let mean = out.column(j).mean();
        for v in out.column_mut(j).iter_mut() {
            *v -= mean;
        }
        let norm = out.column(j).norm();
        if norm < 1e-10 {
            return Err(Error::degenerate(format!(
                "column {} is constant; knockoffs undefined",
                j + 1
            )));
        }
        out.column_mut(j).scale_mut(1.0 / norm);
    }
    Ok(out)
}

/// Orthonormal basis of an m-dimensional subspace orthogonal to the columns
/// of `xn`, built by Gram-Schmidt over the standard basis vectors.
fn orthogonal_complement(xn: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>> {
    let n = xn.nrows();
    let q = xn.clone().qr().q();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m);
    for cand in 0..n {
        if basis.len() == m {
            break;
        }
        let mut v = DVector::zeros(n);
        v[cand] = 1.0;
        // Two orthogonalization passes for numerical stability.
        for _ in 0..2 {
            let proj = q.transpose() * &v;
            v -= &q * proj;
            for b in &basis {
                let c = b.dot(&v);
                v -= b * c;
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    if basis.len() < m {
        return Err(Error::numerical(
            "could not build an orthogonal complement for the knockoff copy",
        ));
    }
    let mut u = DMatrix::zeros(n, m);
    for (j, b) in basis.iter().enumerate() {
        u.set_column(j, b);
    }
    Ok(u)
}

/// Builds the equicorrelated fixed-X knockoff augmentation of an instance.
pub fn knockoff_construct(design: &InstanceDesign) -> Result<KnockoffDesign> {
    let n = design.nrows();
    let m = design.ncols();
    if n < 2 * m {
        return Err(Error::validation(format!(
            "fixed-X knockoffs need n >= 2m (n = {n}, m = {m})"
        )));
    }
    let xn = center_normalize(design.x())?;
    let sigma = xn.transpose() * &xn;
    let lambda_min = min_eigenvalue(&sigma);
    if lambda_min <= 1e-10 {
        return Err(Error::degenerate(format!(
            "design Gram matrix nearly singular (lambda_min = {lambda_min:.3e})"
        )));
    }
    let s = (2.0 * lambda_min).min(1.0);

    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("Gram matrix not positive definite"))?;
    // Z = Sigma^{-1} diag(s); with equal s this is s * Sigma^{-1}.
    let z = chol.solve(&(DMatrix::identity(m, m) * s));
    let mut a = DMatrix::identity(m, m) * (2.0 * s) - &z * s;
    a = (&a + a.transpose()) * 0.5;
    let c = psd_sqrt(&a);

    let u = orthogonal_complement(&xn, m)?;
    let xk = &xn * (DMatrix::identity(m, m) - &z) + &u * &c;

    let mut augmented = DMatrix::zeros(n, 2 * m);
    augmented.view_mut((0, 0), (n, m)).copy_from(&xn);
    augmented.view_mut((0, m), (n, m)).copy_from(&xk);

    // Verify the Gram identities before handing the design out.
    let g_kk = xk.transpose() * &xk;
    let g_xk = xn.transpose() * &xk;
    let mut worst = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            worst = worst.max((g_kk[(i, j)] - sigma[(i, j)]).abs());
            let want = sigma[(i, j)] - if i == j { s } else { 0.0 };
            worst = worst.max((g_xk[(i, j)] - want).abs());
        }
    }
    if worst > GRAM_CHECK_TOL {
        return Err(Error::numerical(format!(
            "knockoff Gram identities violated by {worst:.3e}"
        )));
    }

    Ok(KnockoffDesign { augmented, m, s })
}

/// Signed-max lasso entry statistics W for an augmented design: the entry
/// penalty of each variable and its knockoff are read off a dense descending
/// penalty grid.
pub fn knockoff_statistics(kd: &KnockoffDesign, y: &DVector<f64>) -> Result<Vec<f64>> {
    let n = kd.augmented.nrows();
    if y.len() != n {
        return Err(Error::validation("response length mismatch"));
    }
    let y_mean = y.mean();
    let yc = y.map(|v| v - y_mean);

    // No re-standardization here: the augmented columns must keep the exact
    // second-moment structure of the construction.
    let gram = kd.augmented.transpose() * &kd.augmented / n as f64;
    let xty = kd.augmented.transpose() * &yc / n as f64;

    let lmax = xty.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
    let lambdas: Vec<f64> = (0..ENTRY_GRID_LEN)
        .map(|i| lmax * ENTRY_GRID_RATIO.powf(i as f64 / (ENTRY_GRID_LEN - 1) as f64))
        .collect();
    let path = super::lasso::cd_path(&gram, &xty, &lambdas)?;

    let mut entry = vec![0.0f64; 2 * kd.m];
    for (li, beta) in path.iter().enumerate() {
        for j in 0..2 * kd.m {
            if entry[j] == 0.0 && beta[j] != 0.0 {
                entry[j] = lambdas[li];
            }
        }
    }

    let w = (0..kd.m)
        .map(|j| {
            let zj = entry[j];
            let zk = entry[kd.m + j];
            if zj == zk {
                0.0
            } else {
                zj.max(zk) * (zj - zk).signum()
            }
        })
        .collect();
    Ok(w)
}

/// Knockoff selection threshold at level `q`; `plus` adds the +1 offset of
/// the knockoff+ rule. Returns `f64::INFINITY` when no threshold achieves
/// the bound (select nothing).
pub fn knockoff_threshold(w: &[f64], q: f64, plus: bool) -> f64 {
    let offset = if plus { 1.0 } else { 0.0 };
    let mut candidates: Vec<f64> = w.iter().map(|v| v.abs()).filter(|&v| v > 0.0).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    for t in candidates {
        let neg = w.iter().filter(|&&v| v <= -t).count() as f64;
        let pos = w.iter().filter(|&&v| v >= t).count() as f64;
        if (offset + neg) / pos.max(1.0) <= q {
            return t;
        }
    }
    f64::INFINITY
}

/// Runs the fixed-X knockoff filter on an instance. The construction is
/// deterministic, so the seed is unused; it is kept in the signature for
/// uniformity with the other selectors.
pub fn select_knockoff(
    design: &InstanceDesign,
    cfg: &SelectorConfig,
    _seed: u64,
) -> Result<SelectionMask> {
    let kd = knockoff_construct(design)?;
    let w = knockoff_statistics(&kd, design.y())?;
    let t = knockoff_threshold(&w, cfg.knockoff_fdr_q, cfg.knockoff_plus);
    Ok(SelectionMask {
        selected: w.iter().map(|&v| v >= t).collect(),
    })
}
