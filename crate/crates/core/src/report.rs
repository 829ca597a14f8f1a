//! Aggregation of replicate rows into per-cell summaries and the
//! plot-ready tables behind the `report` command: selection quality by
//! configuration, sensitivity to the subset size and instance count, and
//! fixed-versus-CV thresholding.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::ReplicateRow;

/// Mean/SD summary of one experiment cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSummary {
    pub rho: f64,
    pub snr: f64,
    pub mechanism: String,
    pub method: String,
    pub variant: String,
    pub n: usize,
    pub p: usize,
    pub k: Option<usize>,
    #[serde(rename = "B")]
    pub num_instances: Option<usize>,
    pub r: Option<String>,
    pub replicates: usize,
    pub failures: usize,
    pub mean_tp: Option<f64>,
    pub sd_tp: Option<f64>,
    pub mean_fn: Option<f64>,
    pub sd_fn: Option<f64>,
    pub mean_fp: Option<f64>,
    pub sd_fp: Option<f64>,
    pub mean_missing_rate: f64,
    pub mean_runtime_s: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

type CellKey = (String, String, String, String, String, usize, usize, String, String);

fn cell_key(row: &ReplicateRow) -> CellKey {
    (
        format!("{}", row.rho),
        format!("{}", row.snr),
        row.mechanism.clone(),
        row.method.clone(),
        row.variant.clone(),
        row.n,
        row.p,
        row.k.map(|k| k.to_string()).unwrap_or_default(),
        format!(
            "{}|{}",
            row.num_instances.map(|b| b.to_string()).unwrap_or_default(),
            row.r.clone().unwrap_or_default()
        ),
    )
}

/// Groups replicate rows into per-cell summaries, in a stable order.
pub fn summarize(rows: &[ReplicateRow]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<CellKey, Vec<&ReplicateRow>> = BTreeMap::new();
    for row in rows {
        groups.entry(cell_key(row)).or_default().push(row);
    }
    groups
        .into_values()
        .map(|group| {
            let first = group[0];
            let ok: Vec<&&ReplicateRow> = group.iter().filter(|r| r.tp.is_some()).collect();
            let stats = |get: &dyn Fn(&ReplicateRow) -> f64| -> (Option<f64>, Option<f64>) {
                if ok.is_empty() {
                    (None, None)
                } else {
                    let vals: Vec<f64> = ok.iter().map(|r| get(r)).collect();
                    let (m, s) = mean_sd(&vals);
                    (Some(m), Some(s))
                }
            };
            let (mean_tp, sd_tp) = stats(&|r| r.tp.unwrap() as f64);
            let (mean_fn, sd_fn) = stats(&|r| r.false_negatives.unwrap() as f64);
            let (mean_fp, sd_fp) = stats(&|r| r.fp.unwrap() as f64);
            CellSummary {
                rho: first.rho,
                snr: first.snr,
                mechanism: first.mechanism.clone(),
                method: first.method.clone(),
                variant: first.variant.clone(),
                n: first.n,
                p: first.p,
                k: first.k,
                num_instances: first.num_instances,
                r: first.r.clone(),
                replicates: group.len(),
                failures: group.len() - ok.len(),
                mean_tp,
                sd_tp,
                mean_fn,
                sd_fn,
                mean_fp,
                sd_fp,
                mean_missing_rate: mean_sd(
                    &group.iter().map(|r| r.observed_missing_rate).collect::<Vec<_>>(),
                )
                .0,
                mean_runtime_s: mean_sd(&group.iter().map(|r| r.runtime_s).collect::<Vec<_>>()).0,
            }
        })
        .collect()
}

/// Reads replicate rows back from a results CSV.
pub fn load_replicates(path: impl AsRef<Path>) -> Result<Vec<ReplicateRow>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        rows.push(record?);
    }
    if rows.is_empty() {
        return Err(Error::validation(format!(
            "no replicate rows in {}",
            path.as_ref().display()
        )));
    }
    Ok(rows)
}

/// Writes replicate rows to CSV with a header.
pub fn write_replicates(rows: &[ReplicateRow], path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Mean TP/FP per configuration and method: the method-comparison bars.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub p: usize,
    pub rho: f64,
    pub snr: f64,
    pub mechanism: String,
    pub method: String,
    pub variant: String,
    pub mean_tp: Option<f64>,
    pub mean_fp: Option<f64>,
    pub failures: usize,
}

pub fn method_comparison(rows: &[ReplicateRow]) -> Vec<ComparisonRow> {
    summarize(rows)
        .into_iter()
        .map(|c| ComparisonRow {
            p: c.p,
            rho: c.rho,
            snr: c.snr,
            mechanism: c.mechanism,
            method: c.method,
            variant: c.variant,
            mean_tp: c.mean_tp,
            mean_fp: c.mean_fp,
            failures: c.failures,
        })
        .collect()
}

/// Mean TP/FP against the subset size: the k-sensitivity sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SubsetSizeRow {
    pub k: usize,
    pub method: String,
    pub rho: f64,
    pub snr: f64,
    pub mechanism: String,
    pub mean_tp: Option<f64>,
    pub mean_fp: Option<f64>,
}

pub fn subset_size_sweep(rows: &[ReplicateRow]) -> Result<Vec<SubsetSizeRow>> {
    let out: Vec<SubsetSizeRow> = summarize(rows)
        .into_iter()
        .filter(|c| c.variant == "algorithm" && c.k.is_some())
        .map(|c| SubsetSizeRow {
            k: c.k.unwrap(),
            method: c.method,
            rho: c.rho,
            snr: c.snr,
            mechanism: c.mechanism,
            mean_tp: c.mean_tp,
            mean_fp: c.mean_fp,
        })
        .collect();
    if out.is_empty() {
        return Err(Error::validation(
            "no algorithm rows with a subset size in the results",
        ));
    }
    Ok(out)
}

/// SD of TP/FP against the instance count: the B-stability sweep.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceCountRow {
    #[serde(rename = "B")]
    pub num_instances: usize,
    pub method: String,
    pub rho: f64,
    pub snr: f64,
    pub mechanism: String,
    pub sd_tp: Option<f64>,
    pub sd_fp: Option<f64>,
}

pub fn instance_count_sweep(rows: &[ReplicateRow]) -> Result<Vec<InstanceCountRow>> {
    let out: Vec<InstanceCountRow> = summarize(rows)
        .into_iter()
        .filter(|c| c.variant == "algorithm" && c.num_instances.is_some())
        .map(|c| InstanceCountRow {
            num_instances: c.num_instances.unwrap(),
            method: c.method,
            rho: c.rho,
            snr: c.snr,
            mechanism: c.mechanism,
            sd_tp: c.sd_tp,
            sd_fp: c.sd_fp,
        })
        .collect();
    if out.is_empty() {
        return Err(Error::validation("no algorithm rows in the results"));
    }
    Ok(out)
}

/// Fixed threshold versus cross-validated threshold.
#[derive(Debug, Clone, Serialize)]
pub struct ThresholdRuleRow {
    pub p: usize,
    pub rho: f64,
    pub snr: f64,
    pub method: String,
    pub threshold_rule: String,
    pub mean_tp: Option<f64>,
    pub mean_fp: Option<f64>,
    pub mean_chosen_threshold: Option<f64>,
}

pub fn threshold_rule_comparison(rows: &[ReplicateRow]) -> Result<Vec<ThresholdRuleRow>> {
    let mut groups: BTreeMap<(String, String, String, String, usize), Vec<&ReplicateRow>> =
        BTreeMap::new();
    for row in rows.iter().filter(|r| r.variant == "algorithm") {
        let rule = row.r.clone().unwrap_or_default();
        groups
            .entry((
                format!("{}", row.rho),
                format!("{}", row.snr),
                row.method.clone(),
                rule,
                row.p,
            ))
            .or_default()
            .push(row);
    }
    if groups.is_empty() {
        return Err(Error::validation("no algorithm rows in the results"));
    }
    Ok(groups
        .into_iter()
        .map(|((_, _, method, rule, p), group)| {
            let ok: Vec<&&ReplicateRow> = group.iter().filter(|r| r.tp.is_some()).collect();
            let mean = |get: &dyn Fn(&ReplicateRow) -> Option<f64>| -> Option<f64> {
                let vals: Vec<f64> = ok.iter().filter_map(|r| get(r)).collect();
                if vals.is_empty() {
                    None
                } else {
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            };
            ThresholdRuleRow {
                p,
                rho: group[0].rho,
                snr: group[0].snr,
                method,
                threshold_rule: rule,
                mean_tp: mean(&|r| r.tp.map(|v| v as f64)),
                mean_fp: mean(&|r| r.fp.map(|v| v as f64)),
                mean_chosen_threshold: mean(&|r| r.chosen_threshold),
            }
        })
        .collect())
}

/// The selection-quality table: one row per cell with TP/FN/FP means.
#[derive(Debug, Clone, Serialize)]
pub struct QualityTableRow {
    pub rho: f64,
    pub snr: f64,
    pub mech: String,
    pub method: String,
    pub variant: String,
    #[serde(rename = "TP")]
    pub tp: Option<f64>,
    #[serde(rename = "FN")]
    pub false_negatives: Option<f64>,
    #[serde(rename = "FP")]
    pub fp: Option<f64>,
}

pub fn quality_table(rows: &[ReplicateRow]) -> Vec<QualityTableRow> {
    summarize(rows)
        .into_iter()
        .map(|c| QualityTableRow {
            rho: c.rho,
            snr: c.snr,
            mech: c.mechanism,
            method: c.method,
            variant: c.variant,
            tp: c.mean_tp,
            false_negatives: c.mean_fn,
            fp: c.mean_fp,
        })
        .collect()
}

/// Serializes any serde-serializable row list to CSV.
pub fn write_csv<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}
