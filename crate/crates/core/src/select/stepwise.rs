//! Bidirectional stepwise regression scored by AIC.
//!
//! At every step the single add-or-drop move that lowers
//! `AIC = n ln(RSS/n) + 2 (q + 1)` the most is taken (q = number of
//! variables in the model, the +1 counts the intercept); the search stops
//! when no move improves. Moves whose OLS system is singular are skipped.

use nalgebra::{DMatrix, DVector};

use crate::data::SelectionMask;
use crate::error::{Error, Result};
use crate::linalg::{column_means, rss_from_gram};

use super::{InstanceDesign, StepwiseStart};

fn aic(n: usize, rss: f64, q: usize) -> f64 {
    let n_f = n as f64;
    n_f * (rss.max(1e-300) / n_f).ln() + 2.0 * (q as f64 + 1.0)
}

pub fn select_stepwise_aic(design: &InstanceDesign, start: StepwiseStart) -> Result<SelectionMask> {
    let n = design.nrows();
    let m = design.ncols();
    if n <= m + 2 {
        return Err(Error::validation(format!(
            "stepwise needs more than m + 2 = {} rows, got {n}",
            m + 2
        )));
    }

    // Center once; every candidate model reuses the same Gram pieces.
    let means = column_means(design.x());
    let mut xc = design.x().clone();
    for j in 0..m {
        let mu = means[j];
        for v in xc.column_mut(j).iter_mut() {
            *v -= mu;
        }
    }
    let y_mean = design.y().mean();
    let yc: DVector<f64> = design.y().map(|v| v - y_mean);
    let gram: DMatrix<f64> = xc.transpose() * &xc;
    let xty: DVector<f64> = xc.transpose() * &yc;
    let yty = yc.dot(&yc);

    let mut in_model = match start {
        StepwiseStart::InterceptOnly => vec![false; m],
        StepwiseStart::FullModel => vec![true; m],
    };
    let model_cols = |flags: &[bool]| -> Vec<usize> {
        flags
            .iter()
            .enumerate()
            .filter_map(|(j, &s)| s.then_some(j))
            .collect()
    };

    let start_cols = model_cols(&in_model);
    let mut current_aic = match rss_from_gram(&gram, &xty, yty, &start_cols) {
        Some(rss) => aic(n, rss, start_cols.len()),
        None => {
            // Collinear starting model: fall back to the intercept.
            in_model = vec![false; m];
            aic(n, yty, 0)
        }
    };

    for _step in 0..(4 * m + 16) {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..m {
            let mut trial = in_model.clone();
            trial[j] = !trial[j];
            let cols = model_cols(&trial);
            let Some(rss) = rss_from_gram(&gram, &xty, yty, &cols) else {
                continue; // singular move is treated as non-improving
            };
            let a = aic(n, rss, cols.len());
            if a < current_aic - 1e-10 && best.map_or(true, |(_, b)| a < b) {
                best = Some((j, a));
            }
        }
        match best {
            Some((j, a)) => {
                in_model[j] = !in_model[j];
                current_aic = a;
            }
            None => break,
        }
    }

    Ok(SelectionMask { selected: in_model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn design_from(x: DMatrix<f64>, y: DVector<f64>) -> InstanceDesign {
        let m = x.ncols();
        InstanceDesign::new(x, y, (0..m).collect()).unwrap()
    }

    #[test]
    fn exact_relation_is_found() {
        // y = x1 exactly, zero noise: AIC strongly favors the exact fit.
        let mut rng = crate::seed::seeded_rng(1, &[]);
        let n = 40;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| x[(i, 0)]);
        let mask = select_stepwise_aic(&design_from(x, y), StepwiseStart::InterceptOnly).unwrap();
        assert_eq!(mask.selected, vec![true, false, false]);
    }

    #[test]
    fn all_noise_selects_rarely() {
        let mut total = 0usize;
        let reps = 200;
        for seed in 0..reps {
            let mut rng = crate::seed::seeded_rng(300 + seed, &[]);
            let n = 200;
            let x = DMatrix::from_fn(n, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mask =
                select_stepwise_aic(&design_from(x, y), StepwiseStart::InterceptOnly).unwrap();
            total += mask.count();
        }
        let mean = total as f64 / reps as f64;
        assert!(mean <= 1.5, "mean selected under null = {mean}");
    }

    /// With m = 2 all four models can be enumerated: the greedy path always
    /// ends at a model whose AIC is no better than the best subset, with
    /// equality when the greedy path reaches the optimum.
    #[test]
    fn exhaustive_enumeration_bounds_the_greedy_result() {
        let mut hits = 0usize;
        for seed in 0..50u64 {
            let mut rng = crate::seed::seeded_rng(900 + seed, &[]);
            let n = 30;
            let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = DVector::from_fn(n, |i, _| {
                0.7 * x[(i, 0)] - 0.4 * x[(i, 1)] + rng.sample::<f64, _>(StandardNormal)
            });
            let design = design_from(x.clone(), y.clone());
            let mask =
                select_stepwise_aic(&design, StepwiseStart::InterceptOnly).unwrap();

            let means = column_means(&x);
            let mut xc = x.clone();
            for j in 0..2 {
                for v in xc.column_mut(j).iter_mut() {
                    *v -= means[j];
                }
            }
            let yc: DVector<f64> = y.map(|v| v - y.mean());
            let gram = xc.transpose() * &xc;
            let xty = xc.transpose() * &yc;
            let yty = yc.dot(&yc);

            let all_models: Vec<Vec<usize>> = vec![vec![], vec![0], vec![1], vec![0, 1]];
            let best_aic = all_models
                .iter()
                .filter_map(|cols| rss_from_gram(&gram, &xty, yty, cols).map(|r| aic(n, r, cols.len())))
                .fold(f64::INFINITY, f64::min);
            let got_aic = {
                let cols = mask.indices();
                aic(n, rss_from_gram(&gram, &xty, yty, &cols).unwrap(), cols.len())
            };
            assert!(
                got_aic >= best_aic - 1e-9,
                "greedy AIC {got_aic} beats exhaustive best {best_aic} at seed {seed}"
            );
            if got_aic <= best_aic + 1e-9 {
                hits += 1;
            }
        }
        // Independent columns with clear signal: the greedy path should
        // reach the best subset essentially always.
        assert!(hits >= 45, "greedy matched the best subset only {hits}/50 times");
    }

    #[test]
    fn collinear_moves_are_skipped() {
        let mut rng = crate::seed::seeded_rng(17, &[]);
        let n = 30;
        let base = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        // Third column duplicates the first: adding both is singular.
        let mut x = DMatrix::zeros(n, 3);
        x.set_column(0, &base.column(0));
        x.set_column(1, &base.column(1));
        x.set_column(2, &base.column(0));
        let y = DVector::from_fn(n, |i, _| {
            2.0 * x[(i, 0)] + 0.5 * rng.sample::<f64, _>(StandardNormal)
        });
        let mask = select_stepwise_aic(&design_from(x, y), StepwiseStart::InterceptOnly).unwrap();
        // One of the twin columns is selected, never both.
        assert!(mask.selected[0] ^ mask.selected[2]);
    }

    #[test]
    fn too_few_rows_is_rejected() {
        let x = DMatrix::from_element(5, 3, 1.0);
        let y = DVector::from_element(5, 0.0);
        let design = InstanceDesign::new(x, y, vec![0, 1, 2]).unwrap();
        assert!(matches!(
            select_stepwise_aic(&design, StepwiseStart::InterceptOnly),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn full_model_start_drops_noise() {
        let mut rng = crate::seed::seeded_rng(23, &[]);
        let n = 120;
        let x = DMatrix::from_fn(n, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| {
            3.0 * x[(i, 1)] + 0.5 * rng.sample::<f64, _>(StandardNormal)
        });
        let mask = select_stepwise_aic(&design_from(x, y), StepwiseStart::FullModel).unwrap();
        assert!(mask.selected[1]);
        assert!(mask.count() <= 2);
    }
}
