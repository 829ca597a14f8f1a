//! Multivariate Gaussian modelling of incomplete columns: EM estimation of
//! the mean and covariance from data with missing cells, and single
//! stochastic imputation by conditional draws.
//!
//! The EM iteration groups rows by missingness pattern and sweeps the
//! conditional expectations pattern by pattern; the dimensions in play are
//! small (a sampled subset of variables plus the response), so every
//! conditioning step is a dense Cholesky solve. The estimated covariance is
//! kept away from singularity by a relative ridge floor.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::MissingMask;
use crate::error::{Error, Result};
use crate::linalg::psd_sqrt;

/// Relative ridge floor: after each M-step the covariance is nudged by
/// `RIDGE_REL * trace / m` if its smallest eigenvalue falls below that.
const RIDGE_REL: f64 = 1e-8;

/// Default EM convergence settings.
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-6;

/// A fitted multivariate Gaussian with its EM trace.
#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Observed-data log-likelihood at the start of each iteration plus the
    /// final value; non-decreasing up to a 1e-8 tolerance.
    pub loglik_trace: Vec<f64>,
    /// Number of M-steps performed.
    pub iterations: usize,
}

impl GaussianFit {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Largest decrease between consecutive log-likelihood values
    /// (0 when the trace is monotone).
    pub fn max_loglik_decrease(&self) -> f64 {
        self.loglik_trace
            .windows(2)
            .map(|w| (w[0] - w[1]).max(0.0))
            .fold(0.0, f64::max)
    }
}

fn ridge_floor(cov: &mut DMatrix<f64>) {
    let m = cov.nrows();
    let delta = RIDGE_REL * cov.trace() / m as f64;
    if delta <= 0.0 {
        return;
    }
    // lambda_min >= delta iff cov - delta*I is PSD; Cholesky is the cheap test.
    let shifted = cov.clone() - DMatrix::identity(m, m) * delta;
    if shifted.cholesky().is_none() {
        for i in 0..m {
            cov[(i, i)] += delta;
        }
    }
}

struct PatternGroup {
    observed: Vec<usize>,
    missing: Vec<usize>,
    rows: Vec<usize>,
}

fn group_patterns(mask: &MissingMask) -> Vec<PatternGroup> {
    let m = mask.ncols();
    let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for i in 0..mask.nrows() {
        let key: Vec<bool> = (0..m).map(|j| mask.is_missing(i, j)).collect();
        groups.entry(key).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(key, rows)| {
            let observed = (0..m).filter(|&j| !key[j]).collect();
            let missing = (0..m).filter(|&j| key[j]).collect();
            PatternGroup {
                observed,
                missing,
                rows,
            }
        })
        .collect()
}

fn gather_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

fn gather_mat(a: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Conditional mean and covariance of the complementary coordinates given
/// observed values at `observed_idx`. An empty `observed_idx` returns the
/// marginal moments.
pub fn conditional_moments(
    fit: &GaussianFit,
    observed_idx: &[usize],
    observed_vals: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = fit.dim();
    if observed_idx.len() != observed_vals.len() {
        return Err(Error::validation(
            "observed index set and value vector differ in length",
        ));
    }
    if observed_idx.iter().any(|&j| j >= m) {
        return Err(Error::validation("observed index out of range"));
    }
    if observed_idx.is_empty() {
        return Ok((fit.mean.clone(), fit.covariance.clone()));
    }
    let missing: Vec<usize> = (0..m).filter(|j| !observed_idx.contains(j)).collect();
    let sig_oo = gather_mat(&fit.covariance, observed_idx, observed_idx);
    let sig_om = gather_mat(&fit.covariance, observed_idx, &missing);
    let sig_mm = gather_mat(&fit.covariance, &missing, &missing);
    let chol = sig_oo.cholesky().ok_or_else(|| {
        Error::numerical("conditional moments: observed-block covariance is singular")
    })?;
    let k = chol.solve(&sig_om); // Sigma_OO^{-1} Sigma_OM
    let d = observed_vals - gather_vec(&fit.mean, observed_idx);
    let cond_mean = gather_vec(&fit.mean, &missing) + k.transpose() * &d;
    let cond_cov = &sig_mm - sig_om.transpose() * &k;
    let cond_cov = (&cond_cov + cond_cov.transpose()) * 0.5;
    Ok((cond_mean, cond_cov))
}

/// Fits a multivariate Gaussian to `values` (with `mask` marking missing
/// cells) by EM. Convergence is declared when the relative change of the
/// observed-data log-likelihood drops below `tol`; `max_iter` bounds the
/// number of M-steps.
pub fn fit_em(
    values: &DMatrix<f64>,
    mask: &MissingMask,
    max_iter: usize,
    tol: f64,
) -> Result<GaussianFit> {
    let (n, m) = (values.nrows(), values.ncols());
    if m < 1 || n < 1 {
        return Err(Error::validation("empty matrix"));
    }
    if mask.nrows() != n || mask.ncols() != m {
        return Err(Error::validation("mask dimensions do not match values"));
    }
    if max_iter < 1 {
        return Err(Error::validation("max_iter must be at least 1"));
    }
    if !(tol > 0.0) {
        return Err(Error::validation("tol must be positive"));
    }
    for j in 0..m {
        let mut observed = 0usize;
        for i in 0..n {
            if !mask.is_missing(i, j) {
                if !values[(i, j)].is_finite() {
                    return Err(Error::validation(format!(
                        "non-finite value at row {}, column {}",
                        i + 1,
                        j + 1
                    )));
                }
                observed += 1;
            }
        }
        if observed < 2 {
            return Err(Error::degenerate(format!(
                "column {} has fewer than two observed values",
                j + 1
            )));
        }
    }

    // Init: observed column means; covariance of the mean-imputed data
    // (PSD by construction).
    let mut mean = DVector::zeros(m);
    for j in 0..m {
        let mut sum = 0.0;
        let mut cnt = 0usize;
        for i in 0..n {
            if !mask.is_missing(i, j) {
                sum += values[(i, j)];
                cnt += 1;
            }
        }
        mean[j] = sum / cnt as f64;
    }
    let mut filled = values.clone();
    for i in 0..n {
        for j in 0..m {
            if mask.is_missing(i, j) {
                filled[(i, j)] = mean[j];
            }
        }
    }
    let mut cov = DMatrix::zeros(m, m);
    for i in 0..n {
        let d = filled.row(i).transpose() - &mean;
        cov += &d * d.transpose();
    }
    cov /= n as f64;
    ridge_floor(&mut cov);

    let groups = group_patterns(mask);
    let mut trace = Vec::new();
    let mut iterations = 0usize;
    let mut prev_ll = f64::NEG_INFINITY;

    loop {
        // E-step (and log-likelihood at the current parameters).
        let mut s1 = DVector::zeros(m);
        let mut s2 = DMatrix::zeros(m, m);
        let mut ll = 0.0;
        for g in &groups {
            let no = g.observed.len();
            if no == 0 {
                // Fully missing rows carry no likelihood information.
                for _ in &g.rows {
                    s1 += &mean;
                    s2 += &cov + &mean * mean.transpose();
                }
                continue;
            }
            let sig_oo = gather_mat(&cov, &g.observed, &g.observed);
            let chol = sig_oo
                .cholesky()
                .ok_or_else(|| Error::numerical("EM: observed-block covariance is singular"))?;
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let mu_o = gather_vec(&mean, &g.observed);

            let (k, cond_cov) = if g.missing.is_empty() {
                (DMatrix::zeros(no, 0), DMatrix::zeros(0, 0))
            } else {
                let sig_om = gather_mat(&cov, &g.observed, &g.missing);
                let sig_mm = gather_mat(&cov, &g.missing, &g.missing);
                let k = chol.solve(&sig_om);
                let cc = &sig_mm - sig_om.transpose() * &k;
                (k, (&cc + cc.transpose()) * 0.5)
            };

            for &row in &g.rows {
                let xo = DVector::from_iterator(
                    no,
                    g.observed.iter().map(|&j| values[(row, j)]),
                );
                let d = &xo - &mu_o;
                let solved = chol.solve(&d);
                ll += -0.5
                    * (no as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + d.dot(&solved));

                // Completed row moments.
                let xm = if g.missing.is_empty() {
                    DVector::zeros(0)
                } else {
                    gather_vec(&mean, &g.missing) + k.transpose() * &d
                };
                let mut full = DVector::zeros(m);
                for (a, &j) in g.observed.iter().enumerate() {
                    full[j] = xo[a];
                }
                for (a, &j) in g.missing.iter().enumerate() {
                    full[j] = xm[a];
                }
                s1 += &full;
                s2 += &full * full.transpose();
                for (a, &ja) in g.missing.iter().enumerate() {
                    for (b, &jb) in g.missing.iter().enumerate() {
                        s2[(ja, jb)] += cond_cov[(a, b)];
                    }
                }
            }
        }
        trace.push(ll);

        let converged = {
            let denom = prev_ll.abs().max(1e-8);
            prev_ll.is_finite() && ((ll - prev_ll).abs() / denom) < tol
        };
        if converged || iterations >= max_iter {
            break;
        }
        prev_ll = ll;

        // M-step.
        mean = &s1 / n as f64;
        cov = &s2 / n as f64 - &mean * mean.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
        ridge_floor(&mut cov);
        iterations += 1;
    }

    Ok(GaussianFit {
        mean,
        covariance: cov,
        loglik_trace: trace,
        iterations,
    })
}

/// Replaces every masked cell by one draw from the conditional Gaussian of
/// its row's missing coordinates given the observed ones. Observed cells are
/// returned untouched; the output is a complete matrix, deterministic in
/// `seed`.
pub fn stochastic_impute(
    values: &DMatrix<f64>,
    mask: &MissingMask,
    fit: &GaussianFit,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let (n, m) = (values.nrows(), values.ncols());
    if fit.dim() != m {
        return Err(Error::validation(format!(
            "fit dimension {} does not match {} columns",
            fit.dim(),
            m
        )));
    }
    if mask.nrows() != n || mask.ncols() != m {
        return Err(Error::validation("mask dimensions do not match values"));
    }
    let mut out = values.clone();
    if !mask.any_missing() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let observed: Vec<usize> = (0..m).filter(|&j| !mask.is_missing(i, j)).collect();
        if observed.len() == m {
            continue;
        }
        let missing: Vec<usize> = (0..m).filter(|&j| mask.is_missing(i, j)).collect();
        let obs_vals = DVector::from_iterator(
            observed.len(),
            observed.iter().map(|&j| values[(i, j)]),
        );
        let (cond_mean, cond_cov) = conditional_moments(fit, &observed, &obs_vals)?;
        let root = match cond_cov.clone().cholesky() {
            Some(c) => c.l(),
            // Semidefinite conditional covariance: fall back to the
            // eigenvalue square root.
            None => psd_sqrt(&cond_cov),
        };
        let z = DVector::from_fn(missing.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let draw = &cond_mean + &root * z;
        for (a, &j) in missing.iter().enumerate() {
            out[(i, j)] = draw[a];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn standard_normal_matrix(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn mcar_mask(n: usize, m: usize, rate: f64, seed: u64) -> MissingMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask = MissingMask::none(n, m);
        for i in 0..n {
            for j in 0..m {
                if rng.random::<f64>() < rate {
                    mask.set(i, j, true);
                }
            }
        }
        mask
    }

    #[test]
    fn complete_data_reduces_to_closed_form_mle() {
        let n = 60;
        let m = 3;
        let x = standard_normal_matrix(n, m, 5);
        let mask = MissingMask::none(n, m);
        let fit = fit_em(&x, &mask, 200, 1e-6).unwrap();

        let mut mean = DVector::zeros(m);
        for j in 0..m {
            mean[j] = x.column(j).sum() / n as f64;
        }
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..n {
            let d = x.row(i).transpose() - &mean;
            cov += &d * d.transpose();
        }
        cov /= n as f64;

        for j in 0..m {
            assert_relative_eq!(fit.mean[j], mean[j], epsilon = 1e-10);
            for l in 0..m {
                assert_relative_eq!(fit.covariance[(j, l)], cov[(j, l)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn complete_sample_matches_truth_at_mc_accuracy() {
        let n = 500;
        let m = 3;
        let x = standard_normal_matrix(n, m, 17);
        let fit = fit_em(&x, &MissingMask::none(n, m), 200, 1e-6).unwrap();
        for j in 0..m {
            assert!(fit.mean[j].abs() < 0.15, "mean[{j}] = {}", fit.mean[j]);
            for l in 0..m {
                let target = if j == l { 1.0 } else { 0.0 };
                assert!(
                    (fit.covariance[(j, l)] - target).abs() < 0.15,
                    "cov[{j},{l}] = {}",
                    fit.covariance[(j, l)]
                );
            }
        }
    }

    #[test]
    fn em_recovers_compound_symmetry_under_mcar() {
        // 1000x4 Gaussian with equicorrelation 0.4, 20% MCAR.
        let n = 1000;
        let m = 4;
        let rho: f64 = 0.4;
        let z = standard_normal_matrix(n, m, 23);
        let a = (1.0 - rho).sqrt();
        let b = ((1.0 + (m as f64 - 1.0) * rho).sqrt() - a) / m as f64;
        let mut x = DMatrix::zeros(n, m);
        for i in 0..n {
            let s: f64 = z.row(i).sum();
            for j in 0..m {
                x[(i, j)] = a * z[(i, j)] + b * s;
            }
        }
        let mask = mcar_mask(n, m, 0.2, 29);
        let fit = fit_em(&x, &mask, 200, 1e-6).unwrap();

        let mut rho_sum = 0.0;
        let mut cnt = 0;
        for j in 0..m {
            for l in 0..m {
                if j != l {
                    let r = fit.covariance[(j, l)]
                        / (fit.covariance[(j, j)] * fit.covariance[(l, l)]).sqrt();
                    rho_sum += r;
                    cnt += 1;
                }
            }
        }
        let rho_hat = rho_sum / cnt as f64;
        assert!((rho_hat - rho).abs() < 0.08, "rho_hat = {rho_hat}");
        assert!(fit.max_loglik_decrease() <= 1e-8);
    }

    #[test]
    fn loglik_trace_is_monotone_on_missing_data() {
        let x = standard_normal_matrix(200, 5, 31);
        let mask = mcar_mask(200, 5, 0.3, 37);
        let fit = fit_em(&x, &mask, 200, 1e-10).unwrap();
        assert!(fit.iterations >= 1);
        assert!(
            fit.max_loglik_decrease() <= 1e-8,
            "max decrease {}",
            fit.max_loglik_decrease()
        );
    }

    #[test]
    fn column_with_one_observation_is_degenerate() {
        let x = standard_normal_matrix(5, 2, 41);
        let mut mask = MissingMask::none(5, 2);
        for i in 1..5 {
            mask.set(i, 1, true);
        }
        let err = fit_em(&x, &mask, 200, 1e-6).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn conditional_moments_empty_set_is_marginal() {
        let fit = GaussianFit {
            mean: DVector::from_column_slice(&[1.0, -2.0]),
            covariance: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            loglik_trace: vec![],
            iterations: 0,
        };
        let (mean, cov) = conditional_moments(&fit, &[], &DVector::zeros(0)).unwrap();
        assert_eq!(mean, fit.mean);
        assert_eq!(cov, fit.covariance);
    }

    #[test]
    fn conditional_moments_bivariate_textbook_identity() {
        let rho = 0.5;
        let fit = GaussianFit {
            mean: DVector::zeros(2),
            covariance: DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
            loglik_trace: vec![],
            iterations: 0,
        };
        let v = 2.0;
        let (mean, cov) =
            conditional_moments(&fit, &[1], &DVector::from_column_slice(&[v])).unwrap();
        assert_relative_eq!(mean[0], rho * v, epsilon = 1e-12);
        assert_relative_eq!(cov[(0, 0)], 1.0 - rho * rho, epsilon = 1e-12);
    }

    #[test]
    fn conditional_moments_match_dense_inverse_oracle() {
        // 4-dim fit, observe two coordinates; oracle inverts the partitioned
        // covariance explicitly.
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let g = DMatrix::from_fn(4, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cov = &g * g.transpose() + DMatrix::identity(4, 4);
        let mean = DVector::from_fn(4, |i, _| i as f64 * 0.5 - 1.0);
        let fit = GaussianFit {
            mean: mean.clone(),
            covariance: cov.clone(),
            loglik_trace: vec![],
            iterations: 0,
        };
        let observed = vec![1, 3];
        let missing = vec![0, 2];
        let vals = DVector::from_column_slice(&[0.7, -0.4]);
        let (got_mean, got_cov) = conditional_moments(&fit, &observed, &vals).unwrap();

        let s_oo = gather_mat(&cov, &observed, &observed);
        let s_mo = gather_mat(&cov, &missing, &observed);
        let s_mm = gather_mat(&cov, &missing, &missing);
        let inv = s_oo.try_inverse().unwrap();
        let d = &vals - gather_vec(&mean, &observed);
        let want_mean = gather_vec(&mean, &missing) + &s_mo * &inv * d;
        let want_cov = &s_mm - &s_mo * &inv * s_mo.transpose();
        for a in 0..2 {
            assert_relative_eq!(got_mean[a], want_mean[a], epsilon = 1e-10);
            for b in 0..2 {
                assert_relative_eq!(got_cov[(a, b)], want_cov[(a, b)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn impute_returns_complete_data_unchanged() {
        let x = standard_normal_matrix(20, 3, 47);
        let mask = MissingMask::none(20, 3);
        let fit = fit_em(&x, &mask, 50, 1e-6).unwrap();
        let out = stochastic_impute(&x, &mask, &fit, 9).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn impute_is_deterministic_and_preserves_observed() {
        let x = standard_normal_matrix(50, 4, 53);
        let mask = mcar_mask(50, 4, 0.25, 59);
        let fit = fit_em(&x, &mask, 200, 1e-6).unwrap();
        let a = stochastic_impute(&x, &mask, &fit, 1234).unwrap();
        let b = stochastic_impute(&x, &mask, &fit, 1234).unwrap();
        assert_eq!(a, b);
        let c = stochastic_impute(&x, &mask, &fit, 1235).unwrap();
        assert_ne!(a, c);
        for i in 0..50 {
            for j in 0..4 {
                if !mask.is_missing(i, j) {
                    assert_eq!(a[(i, j)], x[(i, j)]);
                } else {
                    assert!(a[(i, j)].is_finite());
                }
            }
        }
    }

    #[test]
    fn imputed_draws_follow_the_conditional_normal() {
        // One row: x1 missing, x2 = 2.0 observed; bivariate standard normal
        // with correlation 0.5. Conditional law is N(1.0, 0.75).
        let fit = GaussianFit {
            mean: DVector::zeros(2),
            covariance: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            loglik_trace: vec![],
            iterations: 0,
        };
        let values = DMatrix::from_row_slice(1, 2, &[f64::NAN, 2.0]);
        let mut mask = MissingMask::none(1, 2);
        mask.set(0, 0, true);

        let reps = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for seed in 0..reps {
            let out = stochastic_impute(&values, &mask, &fit, seed as u64).unwrap();
            let v = out[(0, 0)];
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / reps as f64;
        let var = sumsq / reps as f64 - mean * mean;
        assert!((mean - 1.0).abs() < 0.04, "mean = {mean}");
        assert!((var - 0.75).abs() < 0.05, "var = {var}");
    }
}
