//! Data-driven choice of the selection threshold by cross-validated
//! prediction error over the nested models induced by the importance
//! ratios.
//!
//! For every candidate threshold `t` the working model is
//! `{j : ratio_j >= t}`; enlarging `t` can only shrink the model, so the
//! candidates form a nested sequence. Each model is scored by K-fold OLS
//! prediction error. High dimension is handled by pre-screening the
//! candidate set to the top variables by ratio; missing data by imputing
//! train and test folds jointly with the held-out outcomes excluded from
//! the imputation model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MissingMask};
use crate::error::{Error, Result};
use crate::impute::{fit_em, stochastic_impute, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::linalg::{ols_fit, seeded_folds};
use crate::seed::{derive_seed, TAG_IMPUTE, TAG_THRESHOLD_CV};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCvConfig {
    pub folds: usize,
    /// Candidate thresholds in (0, 1]. `None` uses the observed ratio
    /// values plus the coarse grid 0.5, 0.6, ..., 1.0.
    pub grid: Option<Vec<f64>>,
    /// Cap on the candidate set in high dimension. `None` means
    /// `min(n/2, p)`.
    pub screen_size: Option<usize>,
    pub seed: Option<u64>,
    /// Prefer the sparsest model within one standard deviation of the
    /// minimum mean error; `false` takes the plain minimum.
    pub one_sd_rule: bool,
}

impl Default for ThresholdCvConfig {
    fn default() -> Self {
        ThresholdCvConfig {
            folds: 5,
            grid: None,
            screen_size: None,
            seed: None,
            one_sd_rule: true,
        }
    }
}

/// One evaluated grid point of the CV curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvPoint {
    pub threshold: f64,
    pub mean_mse: f64,
    pub sd_mse: f64,
    pub model_size: usize,
    pub feasible: bool,
}

fn default_grid(ratios: &[f64]) -> Vec<f64> {
    let mut grid: Vec<f64> = ratios.iter().copied().filter(|r| *r > 0.0).collect();
    grid.extend([0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Chooses the threshold by cross-validation. Returns the chosen value and
/// the full CV curve (infeasible points carry NaN errors and are flagged).
pub fn tune_threshold(
    data: &Dataset,
    ratios: &[f64],
    cfg: &ThresholdCvConfig,
) -> Result<(f64, Vec<CvPoint>)> {
    let n = data.nrows();
    let p = data.ncols();
    if ratios.len() != p {
        return Err(Error::validation(format!(
            "{} ratios for {p} covariates",
            ratios.len()
        )));
    }
    if cfg.folds < 2 {
        return Err(Error::validation("threshold CV needs at least 2 folds"));
    }
    if cfg.folds > n {
        return Err(Error::validation(format!(
            "{} folds cannot be formed from {n} rows",
            cfg.folds
        )));
    }
    let grid = match &cfg.grid {
        Some(g) => {
            if g.is_empty() {
                return Err(Error::validation("threshold grid is empty"));
            }
            if g.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
                return Err(Error::validation("grid thresholds must lie in (0, 1]"));
            }
            let mut g = g.clone();
            g.sort_by(f64::total_cmp);
            g.dedup();
            g
        }
        None => default_grid(ratios),
    };

    let seed = cfg.seed.unwrap_or(0);
    let fold_of = seeded_folds(n, cfg.folds, derive_seed(seed, &[TAG_THRESHOLD_CV]));
    let min_train = (0..cfg.folds)
        .map(|f| fold_of.iter().filter(|&&x| x != f).count())
        .min()
        .unwrap();
    // An OLS model with intercept needs at least one residual degree of
    // freedom: q <= train_rows - 2.
    let capacity = min_train.saturating_sub(2);

    // Rank variables by ratio (descending, ties by index) and screen if the
    // largest grid model would overflow the fold-train capacity.
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| ratios[b].total_cmp(&ratios[a]).then(a.cmp(&b)));
    let smallest_t = grid[0];
    let largest_model = ratios.iter().filter(|r| **r >= smallest_t).count();
    let screen_size = cfg.screen_size.unwrap_or_else(|| (n / 2).min(p));
    let candidates: Vec<usize> = if largest_model > capacity {
        order.iter().copied().take(screen_size).collect()
    } else {
        order.clone()
    };

    // Map candidate columns to local indices and the per-threshold models.
    let models: Vec<Vec<usize>> = grid
        .iter()
        .map(|&t| {
            (0..candidates.len())
                .filter(|&local| ratios[candidates[local]] >= t)
                .collect()
        })
        .collect();

    let (block, block_mask) = data.column_block(&candidates);
    let incomplete = block_mask.any_missing();
    let y = data.response();

    let mut mse = vec![vec![f64::NAN; cfg.folds]; grid.len()];
    for fold in 0..cfg.folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();

        // Covariates for this fold: either the observed block or a joint
        // imputation of train and test with the test outcomes masked out of
        // the imputation model.
        let x_hat: DMatrix<f64> = if incomplete {
            let m = candidates.len();
            let mut joint = DMatrix::zeros(n, m + 1);
            joint.view_mut((0, 0), (n, m)).copy_from(&block);
            let mut joint_mask = MissingMask::none(n, m + 1);
            for i in 0..n {
                for j in 0..m {
                    if block_mask.is_missing(i, j) {
                        joint_mask.set(i, j, true);
                    }
                }
                joint[(i, m)] = y[i];
            }
            for &i in &test {
                joint_mask.set(i, m, true);
                joint[(i, m)] = f64::NAN;
            }
            let fit = fit_em(&joint, &joint_mask, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
            let imputed = stochastic_impute(
                &joint,
                &joint_mask,
                &fit,
                derive_seed(seed, &[TAG_IMPUTE, fold as u64]),
            )?;
            imputed.view((0, 0), (n, m)).into_owned()
        } else {
            block.clone()
        };

        for (gi, model) in models.iter().enumerate() {
            if model.len() + 2 > train.len() {
                continue; // infeasible at this fold size
            }
            let xtr = DMatrix::from_fn(train.len(), model.len(), |i, j| {
                x_hat[(train[i], model[j])]
            });
            let ytr = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
            let (beta, intercept) = match ols_fit(&xtr, &ytr) {
                Ok(fit) => fit,
                Err(_) => continue, // singular model at this fold
            };
            let mut sse = 0.0;
            for &i in &test {
                let mut pred = intercept;
                for (jj, &col) in model.iter().enumerate() {
                    pred += beta[jj] * x_hat[(i, col)];
                }
                let e = y[i] - pred;
                sse += e * e;
            }
            mse[gi][fold] = sse / test.len() as f64;
        }
    }

    let mut curve = Vec::with_capacity(grid.len());
    for (gi, &t) in grid.iter().enumerate() {
        let vals: Vec<f64> = mse[gi].iter().copied().filter(|v| v.is_finite()).collect();
        let feasible = vals.len() == cfg.folds;
        let (mean, sd) = if feasible {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (vals.len() - 1) as f64;
            (mean, var.sqrt())
        } else {
            (f64::NAN, f64::NAN)
        };
        curve.push(CvPoint {
            threshold: t,
            mean_mse: mean,
            sd_mse: sd,
            model_size: models[gi].len(),
            feasible,
        });
    }

    let feasible: Vec<&CvPoint> = curve.iter().filter(|pt| pt.feasible).collect();
    if feasible.is_empty() {
        return Err(Error::validation(
            "no feasible threshold: every grid model exceeds the fold-train capacity",
        ));
    }
    let min_mean = feasible
        .iter()
        .map(|pt| pt.mean_mse)
        .fold(f64::INFINITY, f64::min);
    // Ties toward larger thresholds: take the last feasible point achieving
    // the minimum, then (under the one-SD rule) the largest threshold within
    // one SD of it.
    let best = feasible
        .iter()
        .rev()
        .find(|pt| pt.mean_mse <= min_mean)
        .unwrap();
    let chosen = if cfg.one_sd_rule {
        let cutoff = best.mean_mse + best.sd_mse;
        feasible
            .iter()
            .rev()
            .find(|pt| pt.mean_mse <= cutoff)
            .unwrap()
            .threshold
    } else {
        best.threshold
    };

    Ok((chosen, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn complete_dataset(n: usize, p: usize, seed: u64, beta: &[f64], noise: f64) -> Dataset {
        let mut rng = crate::seed::seeded_rng(seed, &[0xcafe]);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| {
            let mut v: f64 = noise * rng.sample::<f64, _>(StandardNormal);
            for (j, b) in beta.iter().enumerate() {
                v += b * x[(i, j)];
            }
            v
        });
        let names = (0..p).map(|j| format!("x{}", j + 1)).collect();
        Dataset::complete(x, y, names).unwrap()
    }

    #[test]
    fn equal_ratios_pick_the_largest_grid_value() {
        let data = complete_dataset(50, 4, 1, &[1.0, 0.0, 0.0, 0.0], 0.5);
        let ratios = vec![1.0; 4];
        let cfg = ThresholdCvConfig {
            seed: Some(3),
            ..Default::default()
        };
        let (t, curve) = tune_threshold(&data, &ratios, &cfg).unwrap();
        assert_eq!(t, 1.0);
        // Every grid point indexes the same (full) model.
        assert!(curve.iter().all(|pt| pt.model_size == 4));
    }

    #[test]
    fn chosen_threshold_is_a_grid_member_and_models_are_nested() {
        let data = complete_dataset(80, 6, 5, &[2.0, 1.0, 0.0, 0.0, 0.0, 0.0], 1.0);
        let ratios = vec![0.99, 0.97, 0.4, 0.3, 0.2, 0.1];
        let cfg = ThresholdCvConfig {
            seed: Some(11),
            ..Default::default()
        };
        let (t, curve) = tune_threshold(&data, &ratios, &cfg).unwrap();
        assert!(curve.iter().any(|pt| pt.threshold == t && pt.feasible));
        for w in curve.windows(2) {
            assert!(w[1].model_size <= w[0].model_size, "models not nested");
        }
    }

    #[test]
    fn noise_variables_are_dropped_in_most_replicates() {
        // ratios put x1 at 0.99 and three noise variables at 0.6: the 0.95
        // threshold excludes them and should win the CV in a clear majority
        // of replicates.
        let mut wins = 0usize;
        let reps = 60usize;
        for r in 0..reps as u64 {
            let data = complete_dataset(100, 6, 100 + r, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1.0);
            let ratios = vec![0.99, 0.6, 0.6, 0.6, 0.2, 0.2];
            let cfg = ThresholdCvConfig {
                grid: Some(vec![0.5, 0.95]),
                seed: Some(200 + r),
                ..Default::default()
            };
            let (t, _) = tune_threshold(&data, &ratios, &cfg).unwrap();
            if t == 0.95 {
                wins += 1;
            }
        }
        assert!(wins * 2 > reps, "0.95 chosen only {wins}/{reps} times");
    }

    #[test]
    fn same_seed_agrees_exactly() {
        let data = complete_dataset(60, 5, 9, &[1.5, 0.0, 0.0, 0.0, 0.0], 1.0);
        let ratios = vec![0.98, 0.5, 0.4, 0.3, 0.2];
        let cfg = ThresholdCvConfig {
            seed: Some(77),
            ..Default::default()
        };
        let (t1, c1) = tune_threshold(&data, &ratios, &cfg).unwrap();
        let (t2, c2) = tune_threshold(&data, &ratios, &cfg).unwrap();
        assert_eq!(t1, t2);
        for (a, b) in c1.iter().zip(&c2) {
            assert_eq!(a.mean_mse.to_bits(), b.mean_mse.to_bits());
        }
    }

    #[test]
    fn oversized_models_are_screened_then_scored() {
        // p = 40 with n = 30: the full model cannot be fit, so the candidate
        // set is screened to the top ratios.
        let data = complete_dataset(30, 40, 13, &[3.0], 0.5);
        let mut ratios = vec![0.3; 40];
        ratios[0] = 1.0;
        let cfg = ThresholdCvConfig {
            grid: Some(vec![0.25, 1.0]),
            seed: Some(5),
            ..Default::default()
        };
        let (_, curve) = tune_threshold(&data, &ratios, &cfg).unwrap();
        // Largest model was screened down to min(n/2, p) = 15 candidates.
        assert!(curve[0].model_size <= 15);
    }

    #[test]
    fn incomplete_data_is_imputed_jointly() {
        let mut rng = crate::seed::seeded_rng(21, &[]);
        let n = 60;
        let p = 4;
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] + 0.3 * rng.sample::<f64, _>(StandardNormal));
        let mut mask = MissingMask::none(n, p);
        for i in 0..n {
            for j in 0..p {
                if rng.random::<f64>() < 0.15 {
                    mask.set(i, j, true);
                }
            }
        }
        for j in 0..p {
            mask.set(0, j, false);
            mask.set(1, j, false);
        }
        let names = (0..p).map(|j| format!("x{}", j + 1)).collect();
        let data = Dataset::new(x, y, mask, names, "y").unwrap();
        let ratios = vec![0.99, 0.4, 0.3, 0.2];
        let cfg = ThresholdCvConfig {
            seed: Some(31),
            ..Default::default()
        };
        let (t, curve) = tune_threshold(&data, &ratios, &cfg).unwrap();
        assert!(t > 0.0 && t <= 1.0);
        assert!(curve.iter().any(|pt| pt.feasible));
        // Deterministic under the same seed even with imputation inside.
        let (t2, _) = tune_threshold(&data, &ratios, &cfg).unwrap();
        assert_eq!(t, t2);
    }

    #[test]
    fn all_infeasible_grid_errors() {
        let data = complete_dataset(8, 20, 17, &[1.0], 0.5);
        let ratios = vec![1.0; 20];
        // 4 folds of 2: train size 6, capacity 4; every model has 20 (or
        // screened-to-4... screen_size = min(8/2, 20) = 4 -> feasible).
        // Force infeasibility with screen_size above capacity.
        let cfg = ThresholdCvConfig {
            folds: 4,
            screen_size: Some(10),
            seed: Some(1),
            ..Default::default()
        };
        let err = tune_threshold(&data, &ratios, &cfg).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }
}
