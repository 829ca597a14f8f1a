//! Command-line front end: ensemble selection on CSV data, the synthetic
//! benchmark harness, and report tables from saved results.
//!
//! Data outputs are files only; progress goes to standard error, so runs
//! are pipe-safe. Exit codes: 0 success, 1 runtime or validation failure,
//! 2 usage error.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ensel::data::{load_csv, Dataset};
use ensel::ensemble::{
    run_ensemble, EnsembleConfig, EnsembleResult, MissingPolicy, SamplingScheme, ThresholdRule,
};
use ensel::error::{Error, Result};
use ensel::report;
use ensel::select::{LassoRule, SelectorConfig, SelectorKind, StepwiseStart};
use ensel::sim::{
    run_experiment, ExperimentCell, Mechanism, MethodMode, MethodSpec, SimulationConfig,
};
use ensel::threshold::ThresholdCvConfig;

#[derive(Parser)]
#[command(
    name = "ensel",
    version,
    about = "Ensemble variable selection for linear models with missing data"
)]
struct Cli {
    /// Worker thread cap (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Key=value file supplying defaults for any long option.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the ensemble selector on a CSV dataset.
    Select(SelectArgs),
    /// Run the synthetic benchmark grid.
    Simulate(SimulateArgs),
    /// Build plot-ready tables from saved simulation results.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Name of the response column.
    #[arg(long)]
    response: Option<String>,
    /// Base selector: lasso | stepwise | knockoff.
    #[arg(long)]
    selector: Option<String>,
    /// Variables per subset.
    #[arg(short = 'k', long = "k")]
    subset_size: Option<usize>,
    /// Number of regression instances.
    #[arg(short = 'B', long = "B")]
    num_instances: Option<usize>,
    /// Selection threshold in (0,1], or "cv" for cross-validation.
    #[arg(short = 'r', long = "r")]
    threshold: Option<String>,
    /// Missing-data policy: complete-case | impute | auto.
    #[arg(long)]
    missing: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Token marking missing cells.
    #[arg(long)]
    na: Option<String>,
    /// Record one log entry per instance in the result JSON.
    #[arg(long)]
    log_instances: bool,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args, Debug)]
struct TuningArgs {
    /// CV folds inside the per-instance lasso.
    #[arg(long)]
    lasso_folds: Option<usize>,
    /// Penalty rule for the per-instance lasso: min | one-se.
    #[arg(long)]
    lasso_rule: Option<String>,
    /// Target FDR for the knockoff filter.
    #[arg(long)]
    knockoff_q: Option<f64>,
    /// Use the knockoff+ offset (true/false).
    #[arg(long)]
    knockoff_plus: Option<bool>,
    /// Stepwise start: intercept | full.
    #[arg(long)]
    stepwise_start: Option<String>,
    /// Condition per-instance imputation on the response (true/false).
    #[arg(long)]
    impute_with_response: Option<bool>,
    /// Folds for threshold cross-validation (with --r cv).
    #[arg(long)]
    cv_folds: Option<usize>,
    /// Subset sampling: partition | iid.
    #[arg(long)]
    sampling: Option<String>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Paper-style grid: low (p=100, k=6) | high (p=300, k=10).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    snr: Option<f64>,
    /// Number of nonzero coefficients.
    #[arg(long)]
    s: Option<usize>,
    /// Missing-data mechanism: none | mcar | mar.
    #[arg(long)]
    mechanism: Option<String>,
    /// Target missing rate.
    #[arg(long)]
    rate: Option<f64>,
    /// Replicates per cell.
    #[arg(short = 'T', long = "T")]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base selector: lasso | stepwise | knockoff.
    #[arg(long)]
    selector: Option<String>,
    /// Method variant: algorithm | standard | complete-case.
    #[arg(long)]
    variant: Option<String>,
    #[arg(short = 'k', long = "k")]
    subset_size: Option<usize>,
    #[arg(short = 'B', long = "B")]
    num_instances: Option<usize>,
    #[arg(short = 'r', long = "r")]
    threshold: Option<String>,
    /// Missing-data policy inside the algorithm.
    #[arg(long)]
    missing: Option<String>,
    #[command(flatten)]
    tuning: TuningArgs,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory holding replicates.csv from a simulate run.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// fig1 | fig2 | fig3 | fig4 | tables.
    #[arg(long)]
    figure: Option<String>,
    /// Output directory (default: the input directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Usage problems (missing or malformed options) exit with code 2;
/// runtime failures (I/O, validation, numerics) with code 1.
enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Run(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Manifest written next to every output set; enough to reproduce the run.
#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    argv: Vec<String>,
    master_seed: Option<u64>,
    threads: Option<usize>,
    resolved_config: serde_json::Value,
    artifacts: Vec<String>,
    wall_clock_s: f64,
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("ensel: could not configure {threads} threads: {e}");
            std::process::exit(1);
        }
    }
    let file_defaults = match cli.config.as_deref().map(read_config_file).transpose() {
        Ok(map) => map.unwrap_or_default(),
        Err(e) => {
            eprintln!("ensel: {e}");
            std::process::exit(1);
        }
    };
    let outcome = match cli.command {
        Command::Select(args) => cmd_select(args, &file_defaults, cli.threads),
        Command::Simulate(args) => cmd_simulate(args, &file_defaults, cli.threads),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("ensel: {msg}\nRun with --help for usage.");
            std::process::exit(2);
        }
        Err(CliError::Run(e)) => {
            eprintln!("ensel: {e}");
            std::process::exit(1);
        }
    }
}

/// `key = value` lines, `#` comments. Flag precedence: command line over
/// file over built-in defaults.
fn read_config_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::validation(format!(
                "{}:{}: expected key = value",
                path.display(),
                lineno + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn merged<T: std::str::FromStr>(
    cli_value: Option<T>,
    file: &HashMap<String, String>,
    key: &str,
) -> CliResult<Option<T>> {
    if cli_value.is_some() {
        return Ok(cli_value);
    }
    match file.get(key) {
        Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
            CliError::Run(Error::validation(format!(
                "config key '{key}': cannot parse '{raw}'"
            )))
        }),
        None => Ok(None),
    }
}

fn require<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| CliError::Usage(format!("missing required option --{flag}")))
}

fn parse_selector_config(
    kind: SelectorKind,
    tuning: &TuningArgs,
    file: &HashMap<String, String>,
) -> CliResult<SelectorConfig> {
    let mut cfg = SelectorConfig::new(kind);
    if let Some(folds) = merged(tuning.lasso_folds, file, "lasso_folds")? {
        cfg.lasso_cv_folds = folds;
    }
    // The min rule is the CLI default: with the usual 0.95 ratio threshold,
    // the one-SE rule starves true signals of per-instance selections.
    let rule = merged(tuning.lasso_rule.clone(), file, "lasso_rule")?
        .unwrap_or_else(|| "min".to_string());
    cfg.lasso_rule = match rule.as_str() {
        "min" => LassoRule::Min,
        "one-se" | "one_se" | "1se" => LassoRule::OneSe,
        other => return Err(CliError::Usage(format!("unknown lasso rule '{other}'"))),
    };
    if let Some(q) = merged(tuning.knockoff_q, file, "knockoff_q")? {
        cfg.knockoff_fdr_q = q;
    }
    if let Some(plus) = merged(tuning.knockoff_plus, file, "knockoff_plus")? {
        cfg.knockoff_plus = plus;
    }
    if let Some(start) = merged(tuning.stepwise_start.clone(), file, "stepwise_start")? {
        cfg.stepwise_start = match start.as_str() {
            "intercept" | "intercept-only" => StepwiseStart::InterceptOnly,
            "full" | "full-model" => StepwiseStart::FullModel,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown stepwise start '{other}'"
                )))
            }
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_threshold(raw: &str, cv_folds: Option<usize>, seed: u64) -> CliResult<ThresholdRule> {
    if raw == "cv" {
        let mut cv = ThresholdCvConfig::default();
        if let Some(folds) = cv_folds {
            cv.folds = folds;
        }
        cv.seed = Some(ensel::seed::derive_seed(seed, &[0x4356]));
        return Ok(ThresholdRule::CrossValidated(cv));
    }
    let t: f64 = raw.parse().map_err(|_| {
        CliError::Usage(format!("threshold must be a number or 'cv', got '{raw}'"))
    })?;
    Ok(ThresholdRule::Fixed(t))
}

fn write_manifest(
    dir: &Path,
    command: &str,
    master_seed: Option<u64>,
    threads: Option<usize>,
    resolved: serde_json::Value,
    artifacts: &[&str],
    started: Instant,
) -> Result<()> {
    let manifest = RunManifest {
        tool: "ensel",
        version: env!("CARGO_PKG_VERSION"),
        command: command.to_string(),
        argv: std::env::args().collect(),
        master_seed,
        threads,
        resolved_config: resolved,
        artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct RatioRow<'a> {
    variable: &'a str,
    appeared: u64,
    selected: u64,
    ratio: f64,
    selected_flag: bool,
}

fn write_ratios_csv(dir: &Path, data: &Dataset, result: &EnsembleResult) -> Result<PathBuf> {
    let path = dir.join("ratios.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    for (j, name) in data.column_names().iter().enumerate() {
        writer.serialize(RatioRow {
            variable: name,
            appeared: result.tally.appeared[j],
            selected: result.tally.selected[j],
            ratio: result.ratios[j],
            selected_flag: result.selected.selected[j],
        })?;
    }
    writer.flush()?;
    Ok(path)
}

fn cmd_select(
    args: SelectArgs,
    file: &HashMap<String, String>,
    threads: Option<usize>,
) -> CliResult<()> {
    let started = Instant::now();
    let data_path = require(merged(args.data, file, "data")?, "data")?;
    let response = require(merged(args.response, file, "response")?, "response")?;
    let selector_name = require(merged(args.selector, file, "selector")?, "selector")?;
    let kind: SelectorKind = selector_name
        .parse()
        .map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let subset_size = require(merged(args.subset_size, file, "k")?, "k")?;
    let num_instances = require(merged(args.num_instances, file, "B")?, "B")?;
    let threshold_raw = require(merged(args.threshold, file, "r")?, "r")?;
    let missing: MissingPolicy = merged(args.missing, file, "missing")?
        .as_deref()
        .unwrap_or("auto")
        .parse()
        .map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let seed = merged(args.seed, file, "seed")?.unwrap_or(0);
    let out_dir = merged(args.out, file, "out")?.unwrap_or_else(|| PathBuf::from("."));
    let na = merged(args.na, file, "na")?.unwrap_or_else(|| "NA".to_string());

    std::fs::create_dir_all(&out_dir)?;
    eprintln!("ensel select: loading {}", data_path.display());
    let data = load_csv(&data_path, &response, &na)?;
    eprintln!(
        "ensel select: {} rows, {} covariates, {:.1}% missing",
        data.nrows(),
        data.ncols(),
        100.0 * data.missing_fraction()
    );

    let selector = parse_selector_config(kind, &args.tuning, file)?;
    let cv_folds = merged(args.tuning.cv_folds, file, "cv_folds")?;
    let sampling = match merged(args.tuning.sampling.clone(), file, "sampling")?.as_deref() {
        None | Some("partition") => SamplingScheme::Partition,
        Some("iid") => SamplingScheme::Iid,
        Some(other) => {
            return Err(CliError::Usage(format!(
                "unknown sampling scheme '{other}'"
            )))
        }
    };
    let cfg = EnsembleConfig {
        subset_size,
        num_instances,
        threshold: parse_threshold(&threshold_raw, cv_folds, seed)?,
        missing,
        auto_complete_min_fraction: 0.8,
        sampling,
        master_seed: seed,
        selector,
        impute_with_response: merged(
            args.tuning.impute_with_response,
            file,
            "impute_with_response",
        )?
        .unwrap_or(false),
        log_instances: args.log_instances
            || file.get("log_instances").map(|v| v == "true").unwrap_or(false),
    };

    eprintln!(
        "ensel select: running {} instances of {} over subsets of {}",
        cfg.num_instances,
        cfg.selector.kind.label(),
        cfg.subset_size
    );
    let result = run_ensemble(&data, &cfg)?;
    for warning in &result.warnings {
        eprintln!("ensel select: warning: {warning}");
    }

    let ratios_path = write_ratios_csv(&out_dir, &data, &result)?;
    let mut artifacts = vec!["result.json".to_string(), "ratios.csv".to_string()];

    #[derive(Serialize)]
    struct SelectReport<'a> {
        config: &'a EnsembleConfig,
        column_names: &'a [String],
        result: &'a EnsembleResult,
    }
    let report_path = out_dir.join("result.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&SelectReport {
            config: &cfg,
            column_names: data.column_names(),
            result: &result,
        })?,
    )?;

    if let Some(curve) = &result.cv_curve {
        let path = out_dir.join("cv_curve.csv");
        report::write_csv(curve, &path)?;
        artifacts.push("cv_curve.csv".to_string());
    }

    write_manifest(
        &out_dir,
        "select",
        Some(seed),
        threads,
        serde_json::to_value(&cfg)?,
        &artifacts.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
        started,
    )?;
    eprintln!(
        "ensel select: {} of {} variables selected at threshold {} -> {}",
        result.selected.count(),
        data.ncols(),
        result.threshold_used,
        ratios_path.display()
    );
    Ok(())
}

fn preset_grid(preset: &str) -> CliResult<(Vec<(f64, f64)>, usize, usize, usize, usize)> {
    // ((rho, snr) grid, n, p, k, B)
    match preset {
        "low" => Ok((
            vec![(0.0, 2.0), (0.0, 4.0), (0.4, 2.0), (0.4, 4.0)],
            200,
            100,
            6,
            6000,
        )),
        "high" => Ok((
            vec![(0.0, 2.0), (0.0, 4.0), (0.4, 2.0), (0.4, 4.0)],
            200,
            300,
            10,
            6000,
        )),
        other => Err(CliError::Usage(format!(
            "unknown preset '{other}' (expected low or high)"
        ))),
    }
}

fn cmd_simulate(
    args: SimulateArgs,
    file: &HashMap<String, String>,
    threads: Option<usize>,
) -> CliResult<()> {
    let started = Instant::now();
    let out_dir = require(merged(args.out, file, "out")?, "out")?;
    let seed = merged(args.seed, file, "seed")?.unwrap_or(0);
    let replicates = merged(args.replicates, file, "T")?.unwrap_or(20);
    let mechanism: Mechanism = merged(args.mechanism, file, "mechanism")?
        .as_deref()
        .unwrap_or("none")
        .parse()
        .map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let rate = merged(args.rate, file, "rate")?.unwrap_or(0.2);
    let selector_name =
        merged(args.selector, file, "selector")?.unwrap_or_else(|| "lasso".to_string());
    let kind: SelectorKind = selector_name
        .parse()
        .map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let variant =
        merged(args.variant, file, "variant")?.unwrap_or_else(|| "algorithm".to_string());

    let preset = merged(args.preset, file, "preset")?;
    let (grid, n, p, preset_k, preset_b) = match preset.as_deref() {
        Some(name) => preset_grid(name)?,
        None => {
            let n = require(merged(args.n, file, "n")?, "n")?;
            let p = require(merged(args.p, file, "p")?, "p")?;
            let rho = require(merged(args.rho, file, "rho")?, "rho")?;
            let snr = require(merged(args.snr, file, "snr")?, "snr")?;
            (vec![(rho, snr)], n, p, p.min(6), 6000)
        }
    };
    let sparsity = merged(args.s, file, "s")?.unwrap_or(8);
    let subset_size = merged(args.subset_size, file, "k")?.unwrap_or(preset_k);
    let num_instances = merged(args.num_instances, file, "B")?.unwrap_or(preset_b);
    let threshold_raw = merged(args.threshold, file, "r")?.unwrap_or_else(|| "0.95".to_string());
    let missing: MissingPolicy = merged(args.missing, file, "missing")?
        .as_deref()
        .unwrap_or("impute")
        .parse()
        .map_err(|e: Error| CliError::Usage(e.to_string()))?;

    let mut selector = parse_selector_config(kind, &args.tuning, file)?;
    // Paper-style ensembles draw far fewer than 1/q variables per subset,
    // where the knockoff+ offset can never select anything; default to the
    // plain threshold there unless explicitly overridden.
    if matches!(kind, SelectorKind::KnockoffFixedX)
        && variant == "algorithm"
        && merged(args.tuning.knockoff_plus, file, "knockoff_plus")?.is_none()
        && (subset_size as f64) < 1.0 / selector.knockoff_fdr_q
    {
        eprintln!(
            "ensel simulate: subset size {} cannot support knockoff+ at q = {}; \
             using the plain knockoff threshold",
            subset_size, selector.knockoff_fdr_q
        );
        selector.knockoff_plus = false;
    }

    let mode = match variant.as_str() {
        "algorithm" => MethodMode::Ensemble {
            subset_size,
            num_instances,
            threshold: parse_threshold(
                &threshold_raw,
                merged(args.tuning.cv_folds, file, "cv_folds")?,
                seed,
            )?,
            missing,
        },
        "standard" => MethodMode::Direct,
        "complete-case" | "complete_case" => MethodMode::CompleteCase,
        other => {
            return Err(CliError::Usage(format!(
                "unknown variant '{other}' (expected algorithm, standard or complete-case)"
            )))
        }
    };
    let method = MethodSpec { selector, mode };

    let cells: Vec<ExperimentCell> = grid
        .iter()
        .map(|&(rho, snr)| ExperimentCell {
            sim: SimulationConfig {
                n_rows: n,
                n_vars: p,
                correlation: rho,
                snr,
                sparsity,
                mechanism,
                missing_rate: if matches!(mechanism, Mechanism::None) {
                    0.0
                } else {
                    rate
                },
            },
            method: method.clone(),
        })
        .collect();

    std::fs::create_dir_all(&out_dir)?;
    eprintln!(
        "ensel simulate: {} cells x {} replicates ({} {} / {})",
        cells.len(),
        replicates,
        variant,
        kind.label(),
        match mechanism {
            Mechanism::None => "complete data".to_string(),
            m => format!("{} at rate {rate}", m.label()),
        }
    );
    let rows = run_experiment(&cells, replicates, seed)?;

    let replicates_path = out_dir.join("replicates.csv");
    report::write_replicates(&rows, &replicates_path)?;
    let aggregate = report::summarize(&rows);
    std::fs::write(
        out_dir.join("aggregate.json"),
        serde_json::to_string_pretty(&aggregate)?,
    )?;

    #[derive(Serialize)]
    struct SimResolved<'a> {
        cells: &'a [ExperimentCell],
        replicates: usize,
        master_seed: u64,
    }
    write_manifest(
        &out_dir,
        "simulate",
        Some(seed),
        threads,
        serde_json::to_value(SimResolved {
            cells: &cells,
            replicates,
            master_seed: seed,
        })?,
        &["replicates.csv", "aggregate.json"],
        started,
    )?;
    let failures = rows.iter().filter(|r| r.failure.is_some()).count();
    eprintln!(
        "ensel simulate: wrote {} replicate rows ({} failures) -> {}",
        rows.len(),
        failures,
        replicates_path.display()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CliResult<()> {
    let input = require(args.input, "in")?;
    let figure = require(args.figure, "figure")?;
    let out_dir = args.out.unwrap_or_else(|| input.clone());
    std::fs::create_dir_all(&out_dir)?;

    let replicates_path = input.join("replicates.csv");
    if !replicates_path.exists() {
        return Err(CliError::Run(Error::validation(format!(
            "no replicates.csv under {}",
            input.display()
        ))));
    }
    let rows = report::load_replicates(&replicates_path)?;

    let out_path = match figure.as_str() {
        "fig1" => {
            let table = report::method_comparison(&rows);
            let path = out_dir.join("fig1.csv");
            report::write_csv(&table, &path)?;
            path
        }
        "fig2" => {
            let table = report::subset_size_sweep(&rows)?;
            let path = out_dir.join("fig2.csv");
            report::write_csv(&table, &path)?;
            path
        }
        "fig3" => {
            let table = report::instance_count_sweep(&rows)?;
            let path = out_dir.join("fig3.csv");
            report::write_csv(&table, &path)?;
            path
        }
        "fig4" => {
            let table = report::threshold_rule_comparison(&rows)?;
            let path = out_dir.join("fig4.csv");
            report::write_csv(&table, &path)?;
            path
        }
        "tables" => {
            let table = report::quality_table(&rows);
            let path = out_dir.join("tables.csv");
            report::write_csv(&table, &path)?;
            path
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown figure '{other}' (expected fig1..fig4 or tables)"
            )))
        }
    };
    eprintln!("ensel report: wrote {}", out_path.display());
    Ok(())
}
