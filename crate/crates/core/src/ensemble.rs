//! The ensemble selection engine: partition the variables into random
//! subsets, run the base selector on every subset (resolving missing data
//! per instance), tally how often each variable is selected when present,
//! and threshold the resulting importance ratios.
//!
//! Instances are independent work units over the immutable dataset and are
//! executed in parallel; tallies are merged in plan order afterwards, so the
//! result is bit-identical for a fixed master seed regardless of the worker
//! count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{complete_rows, Dataset, SelectionMask};
use crate::error::{Error, Result};
use crate::impute::{fit_em, stochastic_impute, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::seed::{
    derive_seed, TAG_IID_DRAW, TAG_IMPUTE, TAG_INSTANCE, TAG_PARTITION_SHUFFLE, TAG_SELECTOR,
    TAG_THRESHOLD_CV,
};
use crate::select::{run_selector, InstanceDesign, SelectorConfig};
use crate::threshold::{tune_threshold, CvPoint, ThresholdCvConfig};

/// How an instance turns incomplete data into a complete design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Keep only rows fully observed on the subset.
    CompleteCase,
    /// Fit a Gaussian to the subset plus response and draw the missing cells.
    Impute,
    /// Complete-case when enough rows are complete, imputation otherwise.
    Auto,
}

impl std::str::FromStr for MissingPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete-case" | "complete_case" => Ok(MissingPolicy::CompleteCase),
            "impute" => Ok(MissingPolicy::Impute),
            "auto" => Ok(MissingPolicy::Auto),
            other => Err(Error::validation(format!(
                "unknown missing-data policy '{other}'"
            ))),
        }
    }
}

/// How subsets are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    /// Random partitions of the variables; every variable appears exactly
    /// once per partition pass, keeping appearance counts near-deterministic.
    Partition,
    /// Independent draws of k distinct variables per instance.
    Iid,
}

/// Threshold applied to the importance ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    Fixed(f64),
    CrossValidated(ThresholdCvConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Variables per subset (k).
    pub subset_size: usize,
    /// Number of regression instances (B).
    pub num_instances: usize,
    pub threshold: ThresholdRule,
    pub missing: MissingPolicy,
    /// Complete-row fraction above which `Auto` chooses complete-case.
    pub auto_complete_min_fraction: f64,
    pub sampling: SamplingScheme,
    pub master_seed: u64,
    pub selector: SelectorConfig,
    /// Condition the per-instance imputation model on the response (the
    /// response itself is never imputed). Keeps the covariate-response
    /// dependence intact in the draws, which a response-dependent missing
    /// mechanism requires; the cost is that the sample's spurious
    /// covariate-response correlations are frozen into every instance.
    pub impute_with_response: bool,
    /// Record one entry per instance in the result.
    pub log_instances: bool,
}

impl EnsembleConfig {
    pub fn new(subset_size: usize, num_instances: usize, threshold: f64, selector: SelectorConfig) -> Self {
        EnsembleConfig {
            subset_size,
            num_instances,
            threshold: ThresholdRule::Fixed(threshold),
            missing: MissingPolicy::Auto,
            auto_complete_min_fraction: 0.8,
            sampling: SamplingScheme::Partition,
            master_seed: 0,
            selector,
            impute_with_response: false,
            log_instances: false,
        }
    }
}

/// Per-variable appearance and selection counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportanceTally {
    pub appeared: Vec<u64>,
    pub selected: Vec<u64>,
}

impl ImportanceTally {
    pub fn new(p: usize) -> Self {
        ImportanceTally {
            appeared: vec![0; p],
            selected: vec![0; p],
        }
    }

    /// Selection ratios with the 0/0 = 0 convention.
    pub fn ratios(&self) -> Vec<f64> {
        self.appeared
            .iter()
            .zip(&self.selected)
            .map(|(&a, &s)| if a == 0 { 0.0 } else { s as f64 / a as f64 })
            .collect()
    }
}

/// What the missing-data policy actually did for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppliedPolicy {
    /// Subset block had no missing cells.
    AllObserved,
    CompleteCase,
    Imputed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub partition: usize,
    pub block: usize,
    /// Subset as parent-dataset column indices.
    pub subset: Vec<usize>,
    /// Selected variables as parent-dataset column indices; `None` when the
    /// instance was skipped as degenerate.
    pub selected: Option<Vec<usize>>,
    pub policy: Option<AppliedPolicy>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub tally: ImportanceTally,
    pub ratios: Vec<f64>,
    pub selected: SelectionMask,
    pub threshold_used: f64,
    /// Instances attempted (B), including degenerate ones.
    pub instances_run: usize,
    pub degenerate_instances: usize,
    pub cv_curve: Option<Vec<CvPoint>>,
    pub warnings: Vec<String>,
    pub instance_log: Option<Vec<InstanceRecord>>,
}

/// A uniformly shuffled permutation of `0..p` cut into consecutive blocks:
/// `floor(p/k)` blocks of size k and, when k does not divide p, one final
/// block with the remainder. Blocks are returned sorted ascending.
pub fn random_partition(p: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(k >= 1 && k <= p, "subset size must be in 1..=p");
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..p).collect();
    let mut rng = crate::seed::seeded_rng(seed, &[]);
    perm.shuffle(&mut rng);
    perm.chunks(k)
        .map(|chunk| {
            let mut block = chunk.to_vec();
            block.sort_unstable();
            block
        })
        .collect()
}

/// Plan entry: where an instance's subset came from.
#[derive(Debug, Clone)]
pub(crate) struct InstancePlan {
    pub partition: usize,
    pub block: usize,
    pub subset: Vec<usize>,
}

pub(crate) fn build_plan(p: usize, cfg: &EnsembleConfig) -> Vec<InstancePlan> {
    let mut plan = Vec::with_capacity(cfg.num_instances);
    match cfg.sampling {
        SamplingScheme::Partition => {
            let mut partition_idx = 0usize;
            'outer: loop {
                let blocks = random_partition(
                    p,
                    cfg.subset_size,
                    derive_seed(cfg.master_seed, &[TAG_PARTITION_SHUFFLE, partition_idx as u64]),
                );
                for (block_idx, subset) in blocks.into_iter().enumerate() {
                    if plan.len() == cfg.num_instances {
                        break 'outer;
                    }
                    plan.push(InstancePlan {
                        partition: partition_idx,
                        block: block_idx,
                        subset,
                    });
                }
                partition_idx += 1;
            }
        }
        SamplingScheme::Iid => {
            for i in 0..cfg.num_instances {
                let mut rng = crate::seed::seeded_rng(cfg.master_seed, &[TAG_IID_DRAW, i as u64]);
                let mut subset =
                    rand::seq::index::sample(&mut rng, p, cfg.subset_size).into_vec();
                subset.sort_unstable();
                plan.push(InstancePlan {
                    partition: i,
                    block: 0,
                    subset,
                });
            }
        }
    }
    plan
}

/// Builds the complete design for one instance by applying the missing-data
/// policy. The response is appended to the imputation model as an extra
/// fully observed column (the MAR mechanism may depend on it) but is never
/// imputed itself.
pub(crate) fn build_instance_design(
    data: &Dataset,
    subset: &[usize],
    cfg: &EnsembleConfig,
    instance_seed: u64,
) -> Result<(InstanceDesign, AppliedPolicy)> {
    let n = data.nrows();
    let m = subset.len();
    let min_rows = cfg.selector.min_rows(m);
    let complete = complete_rows(data, subset);

    let use_complete_case = match cfg.missing {
        MissingPolicy::CompleteCase => true,
        MissingPolicy::Impute => false,
        MissingPolicy::Auto => {
            complete.len() as f64 / n as f64 >= cfg.auto_complete_min_fraction
        }
    };

    if use_complete_case {
        if complete.len() < min_rows {
            return Err(Error::degenerate(format!(
                "complete-case leaves {} rows; selector needs {min_rows}",
                complete.len()
            )));
        }
        let xs = data.complete_block(&complete, subset)?;
        let ys = DVector::from_iterator(complete.len(), complete.iter().map(|&i| data.response()[i]));
        return Ok((
            InstanceDesign::new(xs, ys, subset.to_vec())?,
            if complete.len() == n {
                AppliedPolicy::AllObserved
            } else {
                AppliedPolicy::CompleteCase
            },
        ));
    }

    if n < min_rows {
        return Err(Error::validation(format!(
            "{n} rows cannot support the selector's minimum of {min_rows} for {m} variables"
        )));
    }

    let (block, block_mask) = data.column_block(subset);
    if !block_mask.any_missing() {
        let ys = data.response().clone();
        return Ok((
            InstanceDesign::new(block, ys, subset.to_vec())?,
            AppliedPolicy::AllObserved,
        ));
    }

    // Gaussian imputation model over the subset columns, optionally joined
    // by the (fully observed, never imputed) response.
    let cols = if cfg.impute_with_response { m + 1 } else { m };
    let mut joint = DMatrix::zeros(n, cols);
    joint.view_mut((0, 0), (n, m)).copy_from(&block);
    let mut joint_mask = crate::data::MissingMask::none(n, cols);
    for i in 0..n {
        for j in 0..m {
            if block_mask.is_missing(i, j) {
                joint_mask.set(i, j, true);
            }
        }
        if cfg.impute_with_response {
            joint[(i, m)] = data.response()[i];
        }
    }
    let fit = fit_em(&joint, &joint_mask, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
    let imputed = stochastic_impute(
        &joint,
        &joint_mask,
        &fit,
        derive_seed(instance_seed, &[TAG_IMPUTE]),
    )?;
    let xs = imputed.view((0, 0), (n, m)).into_owned();
    let ys = data.response().clone();
    Ok((InstanceDesign::new(xs, ys, subset.to_vec())?, AppliedPolicy::Imputed))
}

/// Runs a single regression instance: resolve the missing-data policy, then
/// the configured selector. Returns subset-relative indices of the selected
/// variables.
pub fn run_instance(
    data: &Dataset,
    subset: &[usize],
    cfg: &EnsembleConfig,
    instance_seed: u64,
) -> Result<(Vec<usize>, AppliedPolicy)> {
    if subset.is_empty() {
        return Err(Error::validation("empty subset"));
    }
    if subset.iter().any(|&j| j >= data.ncols()) {
        return Err(Error::validation("subset index out of range"));
    }
    let (design, policy) = build_instance_design(data, subset, cfg, instance_seed)?;
    let mask = run_selector(
        &design,
        &cfg.selector,
        derive_seed(instance_seed, &[TAG_SELECTOR]),
    )?;
    Ok((mask.indices(), policy))
}

fn validate_config(data: &Dataset, cfg: &EnsembleConfig) -> Result<Vec<String>> {
    let p = data.ncols();
    if cfg.subset_size < 1 || cfg.subset_size > p {
        return Err(Error::validation(format!(
            "subset size {} outside 1..={p}",
            cfg.subset_size
        )));
    }
    if cfg.num_instances < 1 {
        return Err(Error::validation("at least one instance required"));
    }
    cfg.selector.validate()?;
    if let ThresholdRule::Fixed(t) = cfg.threshold {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::validation(format!(
                "threshold {t} outside (0, 1]"
            )));
        }
    }
    if !(cfg.auto_complete_min_fraction >= 0.0 && cfg.auto_complete_min_fraction <= 1.0) {
        return Err(Error::validation(
            "auto_complete_min_fraction must lie in [0, 1]",
        ));
    }
    let mut warnings = Vec::new();
    let expected_appearances =
        cfg.num_instances as f64 * cfg.subset_size as f64 / p as f64;
    if expected_appearances < 100.0 {
        warnings.push(format!(
            "expected appearances per variable B*k/p = {expected_appearances:.1} < 100; \
             ratios will be noisy (variance bound 1/(4*{expected_appearances:.0}))"
        ));
    }
    Ok(warnings)
}

/// Runs the full ensemble. Bit-identical output for a fixed `(data, cfg)`
/// regardless of how many rayon workers execute the instances.
pub fn run_ensemble(data: &Dataset, cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    let warnings = validate_config(data, cfg)?;
    let p = data.ncols();
    let plan = build_plan(p, cfg);

    let outcomes: Vec<Result<Option<(Vec<usize>, AppliedPolicy)>>> = plan
        .par_iter()
        .map(|inst| {
            let instance_seed = derive_seed(
                cfg.master_seed,
                &[TAG_INSTANCE, inst.partition as u64, inst.block as u64],
            );
            match run_instance(data, &inst.subset, cfg, instance_seed) {
                Ok(res) => Ok(Some(res)),
                Err(Error::Degenerate(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut tally = ImportanceTally::new(p);
    let mut degenerate = 0usize;
    let mut log = cfg.log_instances.then(Vec::new);
    for (inst, outcome) in plan.iter().zip(outcomes) {
        match outcome? {
            Some((selected_local, policy)) => {
                for &j in &inst.subset {
                    tally.appeared[j] += 1;
                }
                let selected_parent: Vec<usize> =
                    selected_local.iter().map(|&l| inst.subset[l]).collect();
                for &j in &selected_parent {
                    tally.selected[j] += 1;
                }
                if let Some(log) = log.as_mut() {
                    log.push(InstanceRecord {
                        partition: inst.partition,
                        block: inst.block,
                        subset: inst.subset.clone(),
                        selected: Some(selected_parent),
                        policy: Some(policy),
                    });
                }
            }
            None => {
                degenerate += 1;
                if let Some(log) = log.as_mut() {
                    log.push(InstanceRecord {
                        partition: inst.partition,
                        block: inst.block,
                        subset: inst.subset.clone(),
                        selected: None,
                        policy: None,
                    });
                }
            }
        }
    }

    if 2 * degenerate > cfg.num_instances {
        return Err(Error::validation(format!(
            "{degenerate} of {} instances were degenerate; the data are too \
             incomplete for the configured missing-data policy",
            cfg.num_instances
        )));
    }

    let ratios = tally.ratios();
    let (threshold_used, cv_curve) = match &cfg.threshold {
        ThresholdRule::Fixed(t) => (*t, None),
        ThresholdRule::CrossValidated(cv_cfg) => {
            let mut cv_cfg = cv_cfg.clone();
            if cv_cfg.seed.is_none() {
                cv_cfg.seed = Some(derive_seed(cfg.master_seed, &[TAG_THRESHOLD_CV]));
            }
            let (t, curve) = tune_threshold(data, &ratios, &cv_cfg)?;
            (t, Some(curve))
        }
    };

    let selected = SelectionMask {
        selected: ratios.iter().map(|&r| r >= threshold_used).collect(),
    };
    Ok(EnsembleResult {
        tally,
        ratios,
        selected,
        threshold_used,
        instances_run: cfg.num_instances,
        degenerate_instances: degenerate,
        cv_curve,
        warnings,
        instance_log: log,
    })
}

/// Expectation and covariance of the OLS estimate fitted on a subset of the
/// columns of a fixed design, per the partitioned-model identities: the
/// bias is `(X_S' X_S)^{-1} X_S' X_C beta_C` (C the complement of S) and the
/// covariance is `(X_S' X_S)^{-1} sigma^2`. With an orthogonal design the
/// bias vanishes.
pub fn subset_ols_moments(
    x_full: &DMatrix<f64>,
    beta: &DVector<f64>,
    subset: &[usize],
    noise_variance: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = x_full.ncols();
    if beta.len() != p {
        return Err(Error::validation("beta length does not match design"));
    }
    if subset.is_empty() || subset.iter().any(|&j| j >= p) {
        return Err(Error::validation("invalid subset"));
    }
    if x_full.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("design contains non-finite values"));
    }
    let complement: Vec<usize> = (0..p).filter(|j| !subset.contains(j)).collect();
    let xs = x_full.select_columns(subset.iter());
    let gram = xs.transpose() * &xs;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::numerical("subset Gram matrix is singular"))?;
    let covariance = chol.solve(&DMatrix::identity(subset.len(), subset.len())) * noise_variance;

    let bias = if complement.is_empty() {
        DVector::zeros(subset.len())
    } else {
        let xc = x_full.select_columns(complement.iter());
        let beta_c = DVector::from_iterator(complement.len(), complement.iter().map(|&j| beta[j]));
        chol.solve(&(xs.transpose() * xc * beta_c))
    };
    Ok((bias, covariance))
}


/// Test-only access to instance construction internals.
#[doc(hidden)]
pub mod test_hooks {
    use super::*;

    pub fn instance_design(
        data: &Dataset,
        subset: &[usize],
        cfg: &EnsembleConfig,
        instance_seed: u64,
    ) -> Result<(InstanceDesign, AppliedPolicy)> {
        build_instance_design(data, subset, cfg, instance_seed)
    }

    /// (partition, block, subset, instance_seed) for every planned instance.
    pub fn plan(p: usize, cfg: &EnsembleConfig) -> Vec<(usize, usize, Vec<usize>, u64)> {
        build_plan(p, cfg)
            .into_iter()
            .map(|i| {
                let seed = derive_seed(
                    cfg.master_seed,
                    &[TAG_INSTANCE, i.partition as u64, i.block as u64],
                );
                (i.partition, i.block, i.subset, seed)
            })
            .collect()
    }
}
