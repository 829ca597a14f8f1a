//! Lasso regularization path by cyclic coordinate descent on the Gram
//! ("covariance") form of the problem, plus K-fold cross-validated variable
//! selection.
//!
//! The solver minimizes `(1/2n)||y - X b||^2 + lambda * ||b||_1` along a
//! descending penalty sequence with warm starts, and certifies every path
//! point against the KKT conditions to 1e-6.

use nalgebra::{DMatrix, DVector};

use crate::data::SelectionMask;
use crate::error::{Error, Result};
use crate::linalg::{seeded_folds, standardize_columns};

use super::{InstanceDesign, LassoRule, SelectorConfig};

/// KKT certification tolerance promised on returned paths.
pub const KKT_TOL: f64 = 1e-6;
/// Internal convergence target, tighter than the certified tolerance.
const CD_TOL: f64 = 2e-7;
const MAX_SWEEPS: usize = 1_000_000;
/// Incrementally maintained gradients are recomputed at this cadence to
/// stop rounding drift on badly conditioned designs.
const GRAD_REFRESH_SWEEPS: usize = 4096;

/// Solutions along a penalty path, on the original column scale.
#[derive(Debug, Clone)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    /// One coefficient vector per lambda.
    pub coefs: Vec<DVector<f64>>,
    pub intercepts: Vec<f64>,
}

impl LassoPath {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Coordinate-descent path in Gram form. `gram = X'X/n`, `xty = X'y/n` for
/// whatever column scaling the caller prepared. Coordinates with a zero
/// diagonal (constant columns) stay pinned at zero. Returns one coefficient
/// vector per lambda, each satisfying the KKT conditions to [`KKT_TOL`].
pub(crate) fn cd_path(
    gram: &DMatrix<f64>,
    xty: &DVector<f64>,
    lambdas: &[f64],
) -> Result<Vec<DVector<f64>>> {
    let m = gram.nrows();
    if lambdas.is_empty() {
        return Err(Error::validation("empty lambda sequence"));
    }
    for w in lambdas.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::validation("lambdas must be strictly descending"));
        }
    }
    if lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::validation("lambdas must be positive"));
    }

    let mut beta = DVector::<f64>::zeros(m);
    let mut grad = DVector::<f64>::zeros(m); // (gram * beta)_j, kept incrementally
    let mut out = Vec::with_capacity(lambdas.len());
    let mut sweeps = 0usize;

    for &lambda in lambdas {
        loop {
            // One sweep over the coordinates.
            let mut max_delta = 0.0f64;
            for j in 0..m {
                let gjj = gram[(j, j)];
                if gjj <= 0.0 {
                    continue;
                }
                let old = beta[j];
                let partial = xty[j] - grad[j] + gjj * old;
                let new = soft_threshold(partial, lambda) / gjj;
                if new != old {
                    let delta = new - old;
                    for (g, c) in grad.iter_mut().zip(gram.column(j).iter()) {
                        *g += delta * c;
                    }
                    beta[j] = new;
                    max_delta = max_delta.max(delta.abs() * gjj.sqrt());
                }
            }
            sweeps += 1;
            if sweeps % GRAD_REFRESH_SWEEPS == 0 {
                grad = gram * &beta;
            }
            if sweeps > MAX_SWEEPS {
                // Effectively collinear coordinates can cycle below any
                // useful tolerance; the design is degenerate for lasso
                // purposes.
                return Err(Error::degenerate(
                    "coordinate descent stalled on a nearly singular design",
                ));
            }
            if max_delta < CD_TOL {
                // Certify the KKT conditions before accepting.
                let mut violation = 0.0f64;
                for j in 0..m {
                    if gram[(j, j)] <= 0.0 {
                        continue;
                    }
                    let g = xty[j] - grad[j];
                    let v = if beta[j] == 0.0 {
                        (g.abs() - lambda).max(0.0)
                    } else {
                        (g - lambda * beta[j].signum()).abs()
                    };
                    violation = violation.max(v);
                }
                if violation <= KKT_TOL * 0.5 {
                    break;
                }
            }
        }
        out.push(beta.clone());
    }
    Ok(out)
}

/// Largest penalty with an all-zero solution on standardized data:
/// `max_j |x_j'y| / n`.
fn lambda_max_standardized(xs: &DMatrix<f64>, yc: &DVector<f64>) -> f64 {
    let n = xs.nrows() as f64;
    xs.column_iter()
        .map(|c| (c.dot(yc) / n).abs())
        .fold(0.0, f64::max)
}

/// The usual log-spaced descending penalty sequence.
pub fn default_lambda_path(lambda_max: f64, n: usize, m: usize, len: usize) -> Vec<f64> {
    let ratio: f64 = if n < m { 1e-2 } else { 1e-4 };
    let lmax = lambda_max.max(1e-12);
    (0..len)
        .map(|i| lmax * ratio.powf(i as f64 / (len - 1) as f64))
        .collect()
}

/// Fits the lasso path on an instance. Columns are standardized to zero
/// mean and unit variance internally; returned coefficients are on the
/// original scale with matching intercepts. Constant columns keep a zero
/// coefficient throughout.
pub fn lasso_path(design: &InstanceDesign, lambdas: &[f64]) -> Result<LassoPath> {
    let n = design.nrows();
    let std = standardize_columns(design.x());
    let y_mean = design.y().mean();
    let yc = design.y().map(|v| v - y_mean);

    let gram = (std.x.transpose() * &std.x) / n as f64;
    // Per-column dots, bit-identical with lambda_max_standardized: at the
    // path head soft thresholding must see |xty_j| <= lambda exactly.
    let xty = DVector::from_iterator(
        design.ncols(),
        std.x.column_iter().map(|c| c.dot(&yc) / n as f64),
    );
    let path = cd_path(&gram, &xty, lambdas)?;

    let mut coefs = Vec::with_capacity(path.len());
    let mut intercepts = Vec::with_capacity(path.len());
    for beta_std in path {
        let mut beta = DVector::zeros(design.ncols());
        for j in 0..design.ncols() {
            if std.stds[j] > 0.0 {
                beta[j] = beta_std[j] / std.stds[j];
            }
        }
        intercepts.push(y_mean - std.means.dot(&beta));
        coefs.push(beta);
    }
    Ok(LassoPath {
        lambdas: lambdas.to_vec(),
        coefs,
        intercepts,
    })
}

/// Largest violation of the lasso KKT conditions at `(coef, intercept)` for
/// the given penalty, measured on the standardized design. Exposed for
/// verification.
pub fn kkt_max_violation(
    design: &InstanceDesign,
    lambda: f64,
    coef: &DVector<f64>,
    intercept: f64,
) -> f64 {
    let n = design.nrows() as f64;
    let std = standardize_columns(design.x());
    let fitted = design.x() * coef + DVector::from_element(design.nrows(), intercept);
    let resid = design.y() - fitted;
    let mut worst = 0.0f64;
    for j in 0..design.ncols() {
        if std.stds[j] <= 0.0 {
            continue;
        }
        let g = std.x.column(j).dot(&resid) / n;
        let beta_std = coef[j] * std.stds[j];
        let v = if beta_std == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g - lambda * beta_std.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Cross-validated lasso selection: K-fold CV of prediction error over the
/// full-data penalty sequence, penalty picked by the configured rule, mask
/// taken from the full-data refit at that penalty. Fold assignment is the
/// only randomness.
pub fn select_lasso(
    design: &InstanceDesign,
    cfg: &SelectorConfig,
    seed: u64,
) -> Result<SelectionMask> {
    let n = design.nrows();
    let m = design.ncols();
    let k = cfg.lasso_cv_folds;
    if n < k {
        return Err(Error::validation(format!(
            "{n} rows cannot be split into {k} CV folds"
        )));
    }

    let std_full = standardize_columns(design.x());
    let y_mean = design.y().mean();
    let yc_full = design.y().map(|v| v - y_mean);
    let lmax = lambda_max_standardized(&std_full.x, &yc_full);
    let lambdas = default_lambda_path(lmax, n, m, 100);

    let fold_of = seeded_folds(n, k, seed);
    let n_lambda = lambdas.len();
    let mut fold_mse = vec![vec![0.0f64; n_lambda]; k];

    for fold in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        let xtr = design.x().select_rows(train.iter());
        let ytr = DVector::from_iterator(train.len(), train.iter().map(|&i| design.y()[i]));
        let sub = InstanceDesign::new(xtr, ytr, design.column_map().to_vec())?;
        let path = lasso_path(&sub, &lambdas)?;
        for (li, (coef, intercept)) in path.coefs.iter().zip(&path.intercepts).enumerate() {
            let mut sse = 0.0;
            for &i in &test {
                let pred = intercept + design.x().row(i).transpose().dot(coef);
                let e = design.y()[i] - pred;
                sse += e * e;
            }
            fold_mse[fold][li] = sse / test.len() as f64;
        }
    }

    let mut mean_mse = vec![0.0f64; n_lambda];
    let mut se_mse = vec![0.0f64; n_lambda];
    for li in 0..n_lambda {
        let vals: Vec<f64> = (0..k).map(|f| fold_mse[f][li]).collect();
        let mean = vals.iter().sum::<f64>() / k as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
        mean_mse[li] = mean;
        se_mse[li] = (var / k as f64).sqrt();
    }

    let best = (0..n_lambda)
        .min_by(|&a, &b| mean_mse[a].total_cmp(&mean_mse[b]))
        .expect("non-empty path");
    let chosen = match cfg.lasso_rule {
        LassoRule::Min => best,
        LassoRule::OneSe => {
            let cutoff = mean_mse[best] + se_mse[best];
            // lambdas descend, so the first index within the cutoff is the
            // largest (sparsest) penalty.
            (0..n_lambda)
                .find(|&li| mean_mse[li] <= cutoff)
                .unwrap_or(best)
        }
    };

    let full_path = lasso_path(design, &lambdas)?;
    let coef = &full_path.coefs[chosen];
    Ok(SelectionMask {
        selected: (0..m).map(|j| coef[j] != 0.0).collect(),
    })
}
