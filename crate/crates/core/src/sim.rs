//! Synthetic benchmark harness: Gaussian designs with compound-symmetry
//! correlation, calibrated signal-to-noise, MCAR/MAR missingness at a target
//! rate, and a replicated experiment runner scoring true/false positives.
//!
//! Designs are drawn as `X ~ N(0, S)` with unit diagonal and constant
//! off-diagonal correlation; the nonzero coefficients share one value chosen
//! so that `Var(Y) = 1` exactly: `beta = sqrt(snr / ((snr+1) (s + s(s-1)
//! rho)))` with noise variance `1/(snr+1)`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{complete_rows, Dataset, MissingMask, SelectionMask};
use crate::ensemble::{run_ensemble, EnsembleConfig, MissingPolicy, ThresholdRule};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, TAG_DATA, TAG_MASK, TAG_METHOD, TAG_SELECTOR};
use crate::select::{run_selector, InstanceDesign, SelectorConfig, SelectorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    None,
    Mcar,
    Mar,
}

impl Mechanism {
    pub fn label(&self) -> &'static str {
        match self {
            Mechanism::None => "none",
            Mechanism::Mcar => "mcar",
            Mechanism::Mar => "mar",
        }
    }
}

impl std::str::FromStr for Mechanism {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Mechanism::None),
            "mcar" => Ok(Mechanism::Mcar),
            "mar" => Ok(Mechanism::Mar),
            other => Err(Error::validation(format!("unknown mechanism '{other}'"))),
        }
    }
}

/// One simulation cell: design dimensions, correlation, signal strength,
/// sparsity and the missing-data mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_rows: usize,
    pub n_vars: usize,
    pub correlation: f64,
    pub snr: f64,
    pub sparsity: usize,
    pub mechanism: Mechanism,
    pub missing_rate: f64,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rows < 1 || self.n_vars < 1 {
            return Err(Error::validation("empty design"));
        }
        if self.sparsity > self.n_vars {
            return Err(Error::validation(format!(
                "sparsity {} exceeds {} variables",
                self.sparsity, self.n_vars
            )));
        }
        let p = self.n_vars as f64;
        if !(self.correlation > -1.0 / (p - 1.0).max(1.0) && self.correlation < 1.0) {
            return Err(Error::validation(format!(
                "correlation {} breaks compound-symmetry positive definiteness",
                self.correlation
            )));
        }
        if !(self.snr > 0.0) {
            return Err(Error::validation("snr must be positive"));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::validation("missing rate must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Stable fingerprint so that every method sees the same datasets for a
    /// given cell and master seed.
    pub(crate) fn fingerprint(&self) -> u64 {
        derive_seed(
            0x5149_4d43,
            &[
                self.n_rows as u64,
                self.n_vars as u64,
                self.correlation.to_bits(),
                self.snr.to_bits(),
                self.sparsity as u64,
                match self.mechanism {
                    Mechanism::None => 0,
                    Mechanism::Mcar => 1,
                    Mechanism::Mar => 2,
                },
                self.missing_rate.to_bits(),
            ],
        )
    }
}

/// The shared value of the nonzero coefficients making `Var(Y) = 1`.
pub fn signal_coefficient(cfg: &SimulationConfig) -> f64 {
    let s = cfg.sparsity as f64;
    if cfg.sparsity == 0 {
        return 0.0;
    }
    (cfg.snr / ((cfg.snr + 1.0) * (s + s * (s - 1.0) * cfg.correlation))).sqrt()
}

/// Draws a complete dataset from the configured model; the true support is
/// the first `sparsity` columns. Missingness is injected separately.
pub fn generate_dataset(cfg: &SimulationConfig, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    cfg.validate()?;
    let n = cfg.n_rows;
    let p = cfg.n_vars;
    let rho = cfg.correlation;
    let mut rng = crate::seed::seeded_rng(seed, &[]);

    // Compound-symmetry square root in closed form: a*I + b*J.
    let a = (1.0 - rho).sqrt();
    let b = ((1.0 + (p as f64 - 1.0) * rho).sqrt() - a) / p as f64;
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            x[(i, j)] = z;
            row_sum += z;
        }
        for j in 0..p {
            x[(i, j)] = a * x[(i, j)] + b * row_sum;
        }
    }

    let beta = signal_coefficient(cfg);
    let noise_sd = if cfg.sparsity == 0 {
        1.0
    } else {
        (1.0 / (cfg.snr + 1.0)).sqrt()
    };
    let y = DVector::from_fn(n, |i, _| {
        let mut v: f64 = noise_sd * rng.sample::<f64, _>(StandardNormal);
        for j in 0..cfg.sparsity {
            v += beta * x[(i, j)];
        }
        v
    });

    let names = (0..p).map(|j| format!("x{}", j + 1)).collect();
    let dataset = Dataset::complete(x, y, names)?;
    Ok((dataset, (0..cfg.sparsity).collect()))
}

/// Masks each covariate cell independently with probability `rate`.
pub fn apply_mcar(dataset: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::validation("MCAR rate must lie in [0, 1)"));
    }
    let n = dataset.nrows();
    let p = dataset.ncols();
    let mut rng = crate::seed::seeded_rng(seed, &[TAG_MASK]);
    let mut mask = MissingMask::none(n, p);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            let missing = dataset.value(i, j).is_none() || rng.random::<f64>() < rate;
            mask.set(i, j, missing);
            x[(i, j)] = dataset.value(i, j).unwrap_or(f64::NAN);
        }
    }
    Dataset::new(
        x,
        dataset.response().clone(),
        mask,
        dataset.column_names().to_vec(),
        dataset.response_name(),
    )
}

/// Intercept of the probit missingness model for a standard normal
/// response: `E[Phi(a + Y)] = rate` solves to `a = sqrt(2) * Phi^{-1}(rate)`.
pub fn gaussian_mar_intercept(rate: f64) -> f64 {
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    std::f64::consts::SQRT_2 * std_normal.inverse_cdf(rate)
}

/// Intercept calibrated on the realized responses: solves
/// `mean_i Phi(a + y_i) = rate` by bisection, so the expected in-sample
/// missing rate hits the target exactly whatever the distribution of `y`.
pub fn empirical_mar_intercept(y: &DVector<f64>, rate: f64) -> f64 {
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mean_prob = |a: f64| y.iter().map(|&v| std_normal.cdf(a + v)).sum::<f64>() / y.len() as f64;
    let mut lo = -12.0f64;
    let mut hi = 12.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Masks cells row-wise with probability `Phi(a + y_i)`, `a` calibrated on
/// the realized responses so the expected missing rate equals
/// `target_rate`. Rows with larger responses lose more cells.
pub fn apply_mar(dataset: &Dataset, target_rate: f64, seed: u64) -> Result<Dataset> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::validation("MAR target rate must lie in (0, 1)"));
    }
    let n = dataset.nrows();
    let p = dataset.ncols();
    let a = empirical_mar_intercept(dataset.response(), target_rate);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = crate::seed::seeded_rng(seed, &[TAG_MASK]);
    let mut mask = MissingMask::none(n, p);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let prob = std_normal.cdf(a + dataset.response()[i]);
        for j in 0..p {
            let missing = dataset.value(i, j).is_none() || rng.random::<f64>() < prob;
            mask.set(i, j, missing);
            x[(i, j)] = dataset.value(i, j).unwrap_or(f64::NAN);
        }
    }
    Dataset::new(
        x,
        dataset.response().clone(),
        mask,
        dataset.column_names().to_vec(),
        dataset.response_name(),
    )
}

pub fn apply_mechanism(dataset: Dataset, cfg: &SimulationConfig, seed: u64) -> Result<Dataset> {
    match cfg.mechanism {
        Mechanism::None => Ok(dataset),
        Mechanism::Mcar => apply_mcar(&dataset, cfg.missing_rate, seed),
        Mechanism::Mar => apply_mar(&dataset, cfg.missing_rate, seed),
    }
}

/// Selection quality of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMetrics {
    pub true_positives: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
    pub selected: Vec<usize>,
    pub runtime_s: f64,
}

pub fn score(selected: &SelectionMask, true_support: &[usize]) -> ReplicateMetrics {
    let picked = selected.indices();
    let tp = picked.iter().filter(|j| true_support.contains(j)).count();
    ReplicateMetrics {
        true_positives: tp,
        false_negatives: true_support.len() - tp,
        false_positives: picked.len() - tp,
        selected: picked,
        runtime_s: 0.0,
    }
}

/// How a method is applied to a replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodMode {
    /// The ensemble algorithm over random subsets.
    Ensemble {
        subset_size: usize,
        num_instances: usize,
        threshold: ThresholdRule,
        missing: MissingPolicy,
    },
    /// The base selector applied once to the full (complete) dataset.
    Direct,
    /// The base selector applied to the fully observed rows only.
    CompleteCase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub selector: SelectorConfig,
    pub mode: MethodMode,
}

impl MethodSpec {
    pub fn variant_label(&self) -> &'static str {
        match self.mode {
            MethodMode::Ensemble { .. } => "algorithm",
            MethodMode::Direct => "standard",
            MethodMode::CompleteCase => "complete_case",
        }
    }

    pub fn threshold_label(&self) -> Option<String> {
        match &self.mode {
            MethodMode::Ensemble { threshold, .. } => Some(match threshold {
                ThresholdRule::Fixed(t) => format!("{t}"),
                ThresholdRule::CrossValidated(_) => "cv".to_string(),
            }),
            _ => None,
        }
    }
}

/// One cell of the experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub sim: SimulationConfig,
    pub method: MethodSpec,
}

/// One replicate result row (failure cells carry empty counts).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub rho: f64,
    pub snr: f64,
    pub mechanism: String,
    pub method: String,
    pub variant: String,
    pub replicate: usize,
    pub tp: Option<usize>,
    #[serde(rename = "fn")]
    pub false_negatives: Option<usize>,
    pub fp: Option<usize>,
    pub runtime_s: f64,
    pub n: usize,
    pub p: usize,
    pub k: Option<usize>,
    #[serde(rename = "B")]
    pub num_instances: Option<usize>,
    pub r: Option<String>,
    pub observed_missing_rate: f64,
    pub chosen_threshold: Option<f64>,
    /// Why the cell failed, when it did.
    pub failure: Option<String>,
}

/// Runs the standard (non-ensemble) baseline on complete rows of a dataset.
/// Stepwise in high dimension is screened to the top `min(n/2, p)` variables
/// by absolute correlation with the response; the fixed-X knockoff requires
/// `n >= 2p`.
fn run_standard(
    data: &Dataset,
    rows: &[usize],
    cfg: &SelectorConfig,
    seed: u64,
) -> Result<SelectionMask> {
    let p = data.ncols();
    let n = rows.len();
    let all_cols: Vec<usize> = (0..p).collect();
    let x = data.complete_block(rows, &all_cols)?;
    let y = DVector::from_iterator(n, rows.iter().map(|&i| data.response()[i]));

    let needs_screening = matches!(cfg.kind, SelectorKind::StepwiseAic) && n <= p + 2;
    if !needs_screening {
        let design = InstanceDesign::new(x, y, all_cols)?;
        return run_selector(&design, cfg, seed);
    }

    // Correlation screening for stepwise when p is too large for OLS.
    let keep = (n / 2).min(p);
    if keep + 3 > n {
        return Err(Error::degenerate(format!(
            "{n} complete rows cannot support a screened stepwise fit"
        )));
    }
    let y_mean = y.mean();
    let yc = y.map(|v| v - y_mean);
    let mut cors: Vec<(usize, f64)> = (0..p)
        .map(|j| {
            let col = x.column(j);
            let m = col.mean();
            let xc = col.map(|v| v - m);
            let denom = xc.norm() * yc.norm();
            let c = if denom > 0.0 { (xc.dot(&yc) / denom).abs() } else { 0.0 };
            (j, c)
        })
        .collect();
    cors.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut screened: Vec<usize> = cors.into_iter().take(keep).map(|(j, _)| j).collect();
    screened.sort_unstable();
    let xs = x.select_columns(screened.iter());
    let design = InstanceDesign::new(xs, y, screened.clone())?;
    let local = run_selector(&design, cfg, seed)?;
    let mut selected = vec![false; p];
    for l in local.indices() {
        selected[screened[l]] = true;
    }
    Ok(SelectionMask { selected })
}

fn run_method(
    data: &Dataset,
    method: &MethodSpec,
    seed: u64,
) -> Result<(SelectionMask, Option<f64>)> {
    match &method.mode {
        MethodMode::Ensemble {
            subset_size,
            num_instances,
            threshold,
            missing,
        } => {
            let cfg = EnsembleConfig {
                subset_size: *subset_size,
                num_instances: *num_instances,
                threshold: threshold.clone(),
                missing: *missing,
                auto_complete_min_fraction: 0.8,
                sampling: crate::ensemble::SamplingScheme::Partition,
                master_seed: seed,
                selector: method.selector,
                impute_with_response: false,
                log_instances: false,
            };
            let result = run_ensemble(data, &cfg)?;
            Ok((result.selected, Some(result.threshold_used)))
        }
        MethodMode::Direct => {
            if data.mask().any_missing() {
                return Err(Error::validation(
                    "direct standard selection requires complete data",
                ));
            }
            let rows: Vec<usize> = (0..data.nrows()).collect();
            let mask = run_standard(data, &rows, &method.selector, seed)?;
            Ok((mask, None))
        }
        MethodMode::CompleteCase => {
            let all_cols: Vec<usize> = (0..data.ncols()).collect();
            let rows = complete_rows(data, &all_cols);
            let min_rows = method.selector.min_rows(data.ncols());
            // Screened stepwise relaxes the row requirement.
            let effective_min = match method.selector.kind {
                SelectorKind::StepwiseAic => 8,
                _ => min_rows,
            };
            if rows.len() < effective_min {
                return Err(Error::degenerate(format!(
                    "only {} complete rows; selector needs {effective_min}",
                    rows.len()
                )));
            }
            let mask = run_standard(data, &rows, &method.selector, seed)?;
            Ok((mask, None))
        }
    }
}

/// Runs every grid cell for `replicates` datasets each. Cells sharing a
/// `SimulationConfig` see identical datasets (the data stream is keyed by
/// the cell's simulation fingerprint, not its position). Rows come back in
/// deterministic (cell, replicate) order.
pub fn run_experiment(
    cells: &[ExperimentCell],
    replicates: usize,
    master_seed: u64,
) -> Result<Vec<ReplicateRow>> {
    use rayon::prelude::*;

    if replicates == 0 {
        return Err(Error::validation("at least one replicate required"));
    }
    for cell in cells {
        cell.sim.validate()?;
        cell.method.selector.validate()?;
    }

    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..replicates).map(move |r| (c, r)))
        .collect();

    let rows: Vec<ReplicateRow> = tasks
        .par_iter()
        .map(|&(cell_idx, rep)| -> Result<ReplicateRow> {
            let cell = &cells[cell_idx];
            let data_seed = derive_seed(
                master_seed,
                &[TAG_DATA, cell.sim.fingerprint(), rep as u64],
            );
            let (complete, support) = generate_dataset(&cell.sim, data_seed)?;
            let data = apply_mechanism(complete, &cell.sim, derive_seed(data_seed, &[TAG_MASK]))?;
            let method_seed = derive_seed(data_seed, &[TAG_METHOD, cell_idx as u64, TAG_SELECTOR]);

            let start = Instant::now();
            let outcome = run_method(&data, &cell.method, method_seed);
            let runtime_s = start.elapsed().as_secs_f64();

            let (k, num_instances) = match &cell.method.mode {
                MethodMode::Ensemble {
                    subset_size,
                    num_instances,
                    ..
                } => (Some(*subset_size), Some(*num_instances)),
                _ => (None, None),
            };
            let mut row = ReplicateRow {
                rho: cell.sim.correlation,
                snr: cell.sim.snr,
                mechanism: cell.sim.mechanism.label().to_string(),
                method: cell.method.selector.kind.label().to_string(),
                variant: cell.method.variant_label().to_string(),
                replicate: rep,
                tp: None,
                false_negatives: None,
                fp: None,
                runtime_s,
                n: cell.sim.n_rows,
                p: cell.sim.n_vars,
                k,
                num_instances,
                r: cell.method.threshold_label(),
                observed_missing_rate: data.missing_fraction(),
                chosen_threshold: None,
                failure: None,
            };
            match outcome {
                Ok((mask, chosen_threshold)) => {
                    let metrics = score(&mask, &support);
                    row.tp = Some(metrics.true_positives);
                    row.false_negatives = Some(metrics.false_negatives);
                    row.fp = Some(metrics.false_positives);
                    row.chosen_threshold = chosen_threshold;
                }
                Err(Error::Degenerate(msg)) | Err(Error::Validation(msg)) => {
                    row.failure = Some(msg);
                }
                Err(e) => return Err(e),
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base_cfg() -> SimulationConfig {
        SimulationConfig {
            n_rows: 200,
            n_vars: 20,
            correlation: 0.0,
            snr: 2.0,
            sparsity: 8,
            mechanism: Mechanism::None,
            missing_rate: 0.0,
        }
    }

    #[test]
    fn signal_coefficient_matches_closed_forms() {
        let mut cfg = base_cfg();
        cfg.snr = 2.0;
        cfg.correlation = 0.0;
        assert_relative_eq!(signal_coefficient(&cfg), (1.0f64 / 12.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(signal_coefficient(&cfg), 0.28868, epsilon = 1e-5);

        cfg.snr = 4.0;
        cfg.correlation = 0.4;
        assert_relative_eq!(signal_coefficient(&cfg), (4.0f64 / 152.0).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(signal_coefficient(&cfg), 0.16222, epsilon = 1e-5);
    }

    #[test]
    fn noise_variance_vanishes_as_snr_grows() {
        let mut cfg = base_cfg();
        cfg.snr = 1e9;
        let beta = signal_coefficient(&cfg);
        let s = cfg.sparsity as f64;
        let var_signal = beta * beta * (s + s * (s - 1.0) * cfg.correlation);
        assert_relative_eq!(var_signal, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn generated_response_has_unit_variance() {
        // Large-sample check of the Var(Y)=1 calibration for both
        // correlation settings.
        for (rho, snr) in [(0.0, 2.0), (0.4, 4.0)] {
            let mut cfg = base_cfg();
            cfg.n_rows = 100_000;
            cfg.correlation = rho;
            cfg.snr = snr;
            let (data, support) = generate_dataset(&cfg, 99).unwrap();
            assert_eq!(support, (0..8).collect::<Vec<_>>());
            let y = data.response();
            let mean = y.mean();
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
            assert!((var - 1.0).abs() < 0.02, "Var(Y) = {var} at rho={rho}, snr={snr}");
        }
    }

    #[test]
    fn generated_covariates_match_compound_symmetry() {
        let mut cfg = base_cfg();
        cfg.n_rows = 100_000;
        cfg.n_vars = 4;
        cfg.sparsity = 2;
        cfg.correlation = 0.4;
        let (data, _) = generate_dataset(&cfg, 7).unwrap();
        let cols: Vec<usize> = (0..4).collect();
        let rows: Vec<usize> = (0..cfg.n_rows).collect();
        let x = data.complete_block(&rows, &cols).unwrap();
        for j in 0..4 {
            for l in 0..4 {
                let cj = x.column(j);
                let cl = x.column(l);
                let mj = cj.mean();
                let ml = cl.mean();
                let cov = cj
                    .iter()
                    .zip(cl.iter())
                    .map(|(a, b)| (a - mj) * (b - ml))
                    .sum::<f64>()
                    / cfg.n_rows as f64;
                let want = if j == l { 1.0 } else { 0.4 };
                assert!((cov - want).abs() < 0.02, "cov[{j},{l}] = {cov}");
            }
        }
    }

    #[test]
    fn invalid_correlation_is_rejected() {
        let mut cfg = base_cfg();
        cfg.n_vars = 5;
        cfg.correlation = -0.3; // below -1/(p-1) = -0.25
        assert!(matches!(
            generate_dataset(&cfg, 1),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn mcar_hits_target_rate_and_zero_is_identity() {
        let mut cfg = base_cfg();
        cfg.n_rows = 200;
        cfg.n_vars = 100;
        let (data, _) = generate_dataset(&cfg, 3).unwrap();

        let same = apply_mcar(&data, 0.0, 9).unwrap();
        assert_eq!(same.mask().count_missing(), 0);

        let masked = apply_mcar(&data, 0.2, 9).unwrap();
        let frac = masked.missing_fraction();
        assert!((frac - 0.2).abs() < 0.01, "MCAR fraction {frac}");
        // response untouched
        assert_eq!(masked.response(), data.response());
    }

    #[test]
    fn mar_intercept_closed_form_and_empirical_agree() {
        assert_relative_eq!(gaussian_mar_intercept(0.2), -1.19024, epsilon = 1e-5);
        assert_relative_eq!(gaussian_mar_intercept(0.5), 0.0, epsilon = 1e-12);

        // On a large standard normal sample the empirical calibration lands
        // on the closed form.
        let mut rng = crate::seed::seeded_rng(5, &[]);
        let y = DVector::from_fn(100_000, |_, _| rng.sample::<f64, _>(StandardNormal));
        let a = empirical_mar_intercept(&y, 0.2);
        assert!((a - gaussian_mar_intercept(0.2)).abs() < 0.02, "a = {a}");
    }

    #[test]
    fn mar_hits_target_rate_and_depends_on_y() {
        let mut cfg = base_cfg();
        cfg.n_rows = 200;
        cfg.n_vars = 100;
        let (data, _) = generate_dataset(&cfg, 11).unwrap();
        let masked = apply_mar(&data, 0.2, 13).unwrap();
        let frac = masked.missing_fraction();
        assert!((frac - 0.2).abs() < 0.015, "MAR fraction {frac}");

        // Rank correlation between y and per-row missing count is positive.
        let n = masked.nrows();
        let counts: Vec<f64> = (0..n)
            .map(|i| {
                (0..masked.ncols())
                    .filter(|&j| masked.mask().is_missing(i, j))
                    .count() as f64
            })
            .collect();
        let y: Vec<f64> = masked.response().iter().copied().collect();
        let rho = spearman(&y, &counts);
        assert!(rho > 0.2, "rank correlation {rho}");
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &ii in &idx[i..=j] {
                r[ii] = avg;
            }
            i = j + 1;
        }
        r
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let ra = ranks(a);
        let rb = ranks(b);
        let ma = ra.iter().sum::<f64>() / ra.len() as f64;
        let mb = rb.iter().sum::<f64>() / rb.len() as f64;
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for i in 0..ra.len() {
            num += (ra[i] - ma) * (rb[i] - mb);
            da += (ra[i] - ma) * (ra[i] - ma);
            db += (rb[i] - mb) * (rb[i] - mb);
        }
        num / (da * db).sqrt()
    }

    #[test]
    fn score_counts_are_exact() {
        let support = vec![0, 1, 2];
        let all = SelectionMask::from_indices(10, &[0, 1, 2]);
        let m = score(&all, &support);
        assert_eq!(
            (m.true_positives, m.false_negatives, m.false_positives),
            (3, 0, 0)
        );

        let none = SelectionMask::none(10);
        let m = score(&none, &support);
        assert_eq!(
            (m.true_positives, m.false_negatives, m.false_positives),
            (0, 3, 0)
        );

        let everything = SelectionMask::from_indices(10, &(0..10).collect::<Vec<_>>());
        let m = score(&everything, &support);
        assert_eq!(
            (m.true_positives, m.false_negatives, m.false_positives),
            (3, 0, 7)
        );
    }

    #[test]
    fn experiment_rows_are_reproducible_and_share_datasets() {
        let sim = SimulationConfig {
            n_rows: 80,
            n_vars: 10,
            correlation: 0.0,
            snr: 4.0,
            sparsity: 2,
            mechanism: Mechanism::None,
            missing_rate: 0.0,
        };
        let cells = vec![
            ExperimentCell {
                sim,
                method: MethodSpec {
                    selector: SelectorConfig::lasso(),
                    mode: MethodMode::Ensemble {
                        subset_size: 2,
                        num_instances: 20,
                        threshold: ThresholdRule::Fixed(0.9),
                        missing: MissingPolicy::Auto,
                    },
                },
            },
            ExperimentCell {
                sim,
                method: MethodSpec {
                    selector: SelectorConfig::lasso(),
                    mode: MethodMode::Direct,
                },
            },
        ];
        let rows1 = run_experiment(&cells, 3, 42).unwrap();
        let rows2 = run_experiment(&cells, 3, 42).unwrap();
        assert_eq!(rows1.len(), 6);
        for (a, b) in rows1.iter().zip(&rows2) {
            assert_eq!(a.tp, b.tp);
            assert_eq!(a.fp, b.fp);
            assert_eq!(a.observed_missing_rate, b.observed_missing_rate);
        }
        // Same sim config means both methods saw the same replicate count.
        assert!(rows1.iter().all(|r| r.failure.is_none()));
    }

    #[test]
    fn direct_on_missing_data_is_a_failure_row() {
        let sim = SimulationConfig {
            n_rows: 60,
            n_vars: 8,
            correlation: 0.0,
            snr: 2.0,
            sparsity: 2,
            mechanism: Mechanism::Mcar,
            missing_rate: 0.2,
        };
        let cells = vec![ExperimentCell {
            sim,
            method: MethodSpec {
                selector: SelectorConfig::lasso(),
                mode: MethodMode::Direct,
            },
        }];
        let rows = run_experiment(&cells, 2, 7).unwrap();
        assert!(rows.iter().all(|r| r.tp.is_none() && r.failure.is_some()));
    }

    #[test]
    fn complete_case_collapses_under_heavy_mcar() {
        // 20% MCAR over 40 columns leaves essentially no complete rows.
        let sim = SimulationConfig {
            n_rows: 100,
            n_vars: 40,
            correlation: 0.0,
            snr: 4.0,
            sparsity: 4,
            mechanism: Mechanism::Mcar,
            missing_rate: 0.2,
        };
        let cells = vec![ExperimentCell {
            sim,
            method: MethodSpec {
                selector: SelectorConfig::lasso(),
                mode: MethodMode::CompleteCase,
            },
        }];
        let rows = run_experiment(&cells, 2, 11).unwrap();
        assert!(rows.iter().all(|r| r.failure.is_some()));
    }

    #[test]
    fn knockoff_direct_needs_twice_the_columns() {
        let sim = SimulationConfig {
            n_rows: 50,
            n_vars: 40,
            correlation: 0.0,
            snr: 4.0,
            sparsity: 2,
            mechanism: Mechanism::None,
            missing_rate: 0.0,
        };
        let cells = vec![ExperimentCell {
            sim,
            method: MethodSpec {
                selector: SelectorConfig::knockoff(),
                mode: MethodMode::Direct,
            },
        }];
        let rows = run_experiment(&cells, 1, 3).unwrap();
        assert!(rows[0].failure.is_some());
    }

    #[test]
    fn screened_stepwise_handles_high_dimension() {
        let sim = SimulationConfig {
            n_rows: 60,
            n_vars: 100,
            correlation: 0.0,
            snr: 8.0,
            sparsity: 2,
            mechanism: Mechanism::None,
            missing_rate: 0.0,
        };
        let cells = vec![ExperimentCell {
            sim,
            method: MethodSpec {
                selector: SelectorConfig::stepwise(),
                mode: MethodMode::Direct,
            },
        }];
        let rows = run_experiment(&cells, 2, 5).unwrap();
        for row in &rows {
            assert!(row.failure.is_none(), "{:?}", row.failure);
            assert!(row.tp.is_some());
        }
    }
}
