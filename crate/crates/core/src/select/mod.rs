//! The pluggable base variable-selection procedures applied to each
//! regression instance: cross-validated lasso, bidirectional stepwise by
//! AIC, and the fixed-X knockoff filter.

mod knockoff;
mod lasso;
mod stepwise;

pub use knockoff::{knockoff_construct, knockoff_statistics, knockoff_threshold, select_knockoff, KnockoffDesign};
pub use lasso::{default_lambda_path, kkt_max_violation, lasso_path, select_lasso, LassoPath};
pub use stepwise::select_stepwise_aic;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::SelectionMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Lasso,
    StepwiseAic,
    KnockoffFixedX,
}

impl SelectorKind {
    pub fn label(&self) -> &'static str {
        match self {
            SelectorKind::Lasso => "lasso",
            SelectorKind::StepwiseAic => "stepwise",
            SelectorKind::KnockoffFixedX => "knockoff",
        }
    }
}

impl std::str::FromStr for SelectorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lasso" => Ok(SelectorKind::Lasso),
            "stepwise" => Ok(SelectorKind::StepwiseAic),
            "knockoff" => Ok(SelectorKind::KnockoffFixedX),
            other => Err(Error::validation(format!(
                "unknown selector '{other}' (expected lasso, stepwise or knockoff)"
            ))),
        }
    }
}

/// Rule for picking the lasso penalty from the cross-validation curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LassoRule {
    /// Penalty minimizing the mean CV error.
    Min,
    /// Largest penalty within one standard error of the minimum.
    OneSe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepwiseStart {
    InterceptOnly,
    FullModel,
}

/// Choice and hyperparameters of the base selector. Seeds are always
/// derived per instance by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub kind: SelectorKind,
    pub lasso_cv_folds: usize,
    pub lasso_rule: LassoRule,
    pub knockoff_fdr_q: f64,
    pub knockoff_plus: bool,
    pub stepwise_start: StepwiseStart,
}

impl SelectorConfig {
    pub fn new(kind: SelectorKind) -> Self {
        SelectorConfig {
            kind,
            lasso_cv_folds: 10,
            lasso_rule: LassoRule::OneSe,
            knockoff_fdr_q: 0.10,
            knockoff_plus: true,
            stepwise_start: StepwiseStart::InterceptOnly,
        }
    }

    pub fn lasso() -> Self {
        Self::new(SelectorKind::Lasso)
    }

    pub fn stepwise() -> Self {
        Self::new(SelectorKind::StepwiseAic)
    }

    pub fn knockoff() -> Self {
        Self::new(SelectorKind::KnockoffFixedX)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.knockoff_fdr_q > 0.0 && self.knockoff_fdr_q < 1.0) {
            return Err(Error::validation(format!(
                "knockoff FDR level must lie in (0,1), got {}",
                self.knockoff_fdr_q
            )));
        }
        if self.lasso_cv_folds < 2 {
            return Err(Error::validation(format!(
                "lasso CV needs at least 2 folds, got {}",
                self.lasso_cv_folds
            )));
        }
        Ok(())
    }

    /// Minimum number of rows this selector needs for `m` candidate
    /// variables.
    pub fn min_rows(&self, m: usize) -> usize {
        match self.kind {
            SelectorKind::Lasso => self.lasso_cv_folds,
            SelectorKind::StepwiseAic => m + 3,
            SelectorKind::KnockoffFixedX => 2 * m,
        }
    }
}

/// A complete regression instance: the sampled covariate columns (no missing
/// cells) with the response and the mapping back into the parent dataset.
#[derive(Debug, Clone)]
pub struct InstanceDesign {
    xs: DMatrix<f64>,
    ys: DVector<f64>,
    column_map: Vec<usize>,
}

impl InstanceDesign {
    pub fn new(xs: DMatrix<f64>, ys: DVector<f64>, column_map: Vec<usize>) -> Result<Self> {
        if xs.ncols() < 1 {
            return Err(Error::validation("instance must have at least one column"));
        }
        if xs.nrows() != ys.len() {
            return Err(Error::validation(format!(
                "instance has {} rows but {} responses",
                xs.nrows(),
                ys.len()
            )));
        }
        if column_map.len() != xs.ncols() {
            return Err(Error::validation("column map length mismatch"));
        }
        if xs.iter().any(|v| !v.is_finite()) || ys.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("instance contains non-finite values"));
        }
        Ok(InstanceDesign { xs, ys, column_map })
    }

    pub fn nrows(&self) -> usize {
        self.xs.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.xs.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.xs
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.ys
    }

    pub fn column_map(&self) -> &[usize] {
        &self.column_map
    }
}

/// Runs the configured selector on an instance. The returned mask indexes
/// the instance's columns (use [`InstanceDesign::column_map`] to translate
/// back to the parent dataset).
pub fn run_selector(
    design: &InstanceDesign,
    cfg: &SelectorConfig,
    seed: u64,
) -> Result<SelectionMask> {
    cfg.validate()?;
    match cfg.kind {
        SelectorKind::Lasso => select_lasso(design, cfg, seed),
        SelectorKind::StepwiseAic => select_stepwise_aic(design, cfg.stepwise_start),
        SelectorKind::KnockoffFixedX => select_knockoff(design, cfg, seed),
    }
}
