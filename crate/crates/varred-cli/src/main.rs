//! `varred`: variance-reduced treatment effect estimation on CSV data.
//!
//! Three subcommands share one report convention: deterministic JSON with a
//! run manifest (command, config echo, input digests, seeds, duration).
//! Exit codes: 0 success, 2 invalid input or data, 1 internal failure.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use report::{to_deterministic_json, RunManifest, REPORT_SCHEMA_VERSION};
use varred::{
    comparison_metrics, estimate_combined, estimate_cupac, estimate_cuped, estimate_diff,
    fit_gbt_predictor, fit_linear_predictor, generate_additive, impute_missing_pre,
    load_experiment_csv, load_external_predictions, run_monte_carlo, select_covariates,
    validate_dataset, write_experiment_csv, ComparisonMetrics, Correction, DGPConfig,
    EstimateReport, ExperimentDataset, GbtHyperparams, ImputePolicy, MCReport, Method, Predictor,
    PredictorMode, SelectionConfig, SelectionResult, Severity, TestKind,
};

#[derive(Parser)]
#[command(
    name = "varred",
    version,
    about = "Treatment effect estimation with pre- and in-experiment variance reduction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate treatment effects from one experiment CSV.
    Estimate(EstimateArgs),
    /// Screen in-experiment covariates for balance across one or more experiments.
    Select(SelectArgs),
    /// Generate data from the additive model and run a Monte Carlo study.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Experiment CSV (columns: w, y, x_*, z_*, optional unit_id).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::All)]
    method: MethodArg,
    /// Outcome model: `linear`, `gbt`, or `external:<csv path>`.
    #[arg(long, default_value = "linear")]
    predictor: String,
    /// In-experiment covariates for the combined estimator: a comma list of
    /// column names, `auto` (run selection on this dataset), or
    /// `file:<path>` (a `varred select` report). Default: all z columns.
    #[arg(long)]
    z_select: Option<String>,
    /// Significance level for `--z-select auto`.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Confidence level for the reported intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, value_enum, default_value_t = ImputeArg::Mean)]
    impute: ImputeArg,
    /// Output path for the JSON report (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    /// Experiment CSV; repeat the flag for multiple experiments.
    #[arg(long)]
    data: Vec<PathBuf>,
    /// Directory whose *.csv files are loaded as experiments.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TestArg::Mw)]
    test: TestArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = CorrectionArg::None)]
    correction: CorrectionArg,
    /// Minimum fraction of non-zero values a covariate needs in every
    /// experiment to be tested.
    #[arg(long, default_value_t = 0.01)]
    min_nonzero: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON file holding the generator config and study layout.
    #[arg(long)]
    config: PathBuf,
    /// Also write one generated dataset (first grid size, base seed) as CSV.
    #[arg(long)]
    emit_data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Diff,
    Cuped,
    Cupac,
    Combined,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ImputeArg {
    Mean,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TestArg {
    Mw,
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CorrectionArg {
    None,
    Bonferroni,
    Holm,
}

enum CliError {
    /// Bad flags, unreadable or invalid input data: exit 2.
    User(String),
    /// Failure while producing output: exit 1.
    Internal(String),
}

impl From<varred::Error> for CliError {
    fn from(e: varred::Error) -> Self {
        CliError::User(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::Select(args) => cmd_select(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::User(msg)) => {
            eprintln!("error: {}", msg);
            ExitCode::from(2)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {}", msg);
            ExitCode::from(1)
        }
    }
}

#[derive(Serialize)]
struct EstimateOutput {
    schema_version: &'static str,
    manifest: RunManifest,
    validation_warnings: Vec<String>,
    estimates: Vec<EstimateReport>,
    metrics: Option<ComparisonMetrics>,
}

fn cmd_estimate(args: EstimateArgs) -> CliResult<()> {
    let started = Instant::now();
    let config_echo = serde_json::json!({
        "data": args.data.display().to_string(),
        "method": format!("{:?}", args.method).to_lowercase(),
        "predictor": args.predictor,
        "z_select": args.z_select,
        "alpha": args.alpha,
        "level": args.level,
        "impute": format!("{:?}", args.impute).to_lowercase(),
    });
    let mut manifest = RunManifest::new("estimate", config_echo);
    manifest
        .add_input(&args.data)
        .map_err(|e| CliError::User(format!("cannot read {}: {}", args.data.display(), e)))?;

    let raw = load_experiment_csv(&args.data)?;
    let mut methods = match args.method {
        MethodArg::Diff => vec![Method::Diff],
        MethodArg::Cuped => vec![Method::Cuped],
        MethodArg::Cupac => vec![Method::Cupac],
        MethodArg::Combined => vec![Method::Combined],
        MethodArg::All => vec![Method::Diff, Method::Cuped, Method::Cupac, Method::Combined],
    };

    if methods.contains(&Method::Combined) && raw.m() == 0 {
        if args.method == MethodArg::Combined {
            return Err(CliError::User(
                "no in-experiment covariates: the combined estimator needs z_* columns".into(),
            ));
        }
        eprintln!("warning: no in-experiment covariates; skipping the combined estimator");
        methods.retain(|m| *m != Method::Combined);
    }

    // diagnose before estimating; z-column problems only block methods
    // that actually adjust by z
    let validation = validate_dataset(&raw);
    let mut warnings = Vec::new();
    let uses_z = methods.contains(&Method::Combined);
    let mut blocking = Vec::new();
    for issue in &validation.issues {
        let about_z = issue
            .column
            .as_ref()
            .is_some_and(|c| raw.z_names().contains(c));
        match issue.severity {
            Severity::Error if uses_z || !about_z => blocking.push(issue.message.clone()),
            _ => {
                let text = format!("{}: {}", issue.severity, issue.message);
                eprintln!("warning: {}", text);
                warnings.push(text);
            }
        }
    }
    if !blocking.is_empty() {
        return Err(CliError::User(format!(
            "dataset failed validation: {}",
            blocking.join("; ")
        )));
    }

    let policy = match args.impute {
        ImputeArg::Mean => ImputePolicy::MeanPlusIndicator,
        ImputeArg::Zero => ImputePolicy::ZeroPlusIndicator,
    };
    let ds = impute_missing_pre(&raw, policy)?;

    let needs_predictor = methods
        .iter()
        .any(|m| matches!(m, Method::Cupac | Method::Combined));
    let predictor = if needs_predictor {
        Some(build_predictor(&args.predictor, &ds, &mut manifest)?)
    } else {
        None
    };

    let z_subset = if methods.contains(&Method::Combined) {
        let subset = resolve_z_subset(args.z_select.as_deref(), args.alpha, &ds, &mut manifest)?;
        if subset.is_empty() {
            if args.method == MethodArg::Combined {
                return Err(CliError::User(
                    "selection rejected every in-experiment covariate".into(),
                ));
            }
            eprintln!(
                "warning: selection rejected every in-experiment covariate; skipping the combined estimator"
            );
            methods.retain(|m| *m != Method::Combined);
            Vec::new()
        } else {
            subset
        }
    } else {
        Vec::new()
    };

    let mut estimates = Vec::new();
    for &method in &methods {
        let report = match method {
            Method::Diff => estimate_diff(&ds, args.level)?,
            Method::Cuped => estimate_cuped(&ds, args.level)?,
            Method::Cupac => estimate_cupac(
                &ds,
                predictor.as_ref().expect("predictor built"),
                args.level,
            )?,
            Method::Combined => estimate_combined(
                &ds,
                predictor.as_ref().expect("predictor built"),
                &z_subset,
                args.level,
            )?,
        };
        estimates.push(report);
    }

    let find = |m: Method| estimates.iter().find(|r| r.method == m);
    let metrics = match (
        find(Method::Diff),
        find(Method::Cupac),
        find(Method::Combined),
    ) {
        (Some(diff), Some(cupac), Some(combined)) => {
            match comparison_metrics(diff, cupac, combined) {
                Ok(m) => Some(m),
                Err(e) => {
                    eprintln!("warning: comparison metrics unavailable: {}", e);
                    None
                }
            }
        }
        _ => None,
    };

    manifest.duration_seconds = started.elapsed().as_secs_f64();
    let output = EstimateOutput {
        schema_version: REPORT_SCHEMA_VERSION,
        manifest,
        validation_warnings: warnings,
        estimates,
        metrics,
    };
    write_output(args.out.as_deref(), &output)
}

fn build_predictor(
    spec: &str,
    ds: &ExperimentDataset,
    manifest: &mut RunManifest,
) -> CliResult<Predictor> {
    match spec {
        "linear" => Ok(fit_linear_predictor(ds.x(), ds.y())?),
        "gbt" => Ok(fit_gbt_predictor(
            ds.x(),
            ds.y(),
            &GbtHyperparams::default(),
        )?),
        other => match other.strip_prefix("external:") {
            Some(path) => {
                let path = Path::new(path);
                manifest.add_input(path).map_err(|e| {
                    CliError::User(format!("cannot read {}: {}", path.display(), e))
                })?;
                Ok(load_external_predictions(path, ds)?)
            }
            None => Err(CliError::User(format!(
                "unknown predictor `{}` (expected linear, gbt, or external:<path>)",
                other
            ))),
        },
    }
}

fn resolve_z_subset(
    z_select: Option<&str>,
    alpha: f64,
    ds: &ExperimentDataset,
    manifest: &mut RunManifest,
) -> CliResult<Vec<usize>> {
    let names_to_indices = |names: &[String]| -> CliResult<Vec<usize>> {
        let mut indices = Vec::with_capacity(names.len());
        for name in names {
            match ds.z_names().iter().position(|n| n == name) {
                Some(j) => indices.push(j),
                None => {
                    return Err(CliError::User(format!(
                        "unknown in-experiment covariate `{}` (dataset has: {})",
                        name,
                        ds.z_names().join(", ")
                    )))
                }
            }
        }
        Ok(indices)
    };

    match z_select {
        None => Ok((0..ds.m()).collect()),
        Some("auto") => {
            let cfg = SelectionConfig {
                alpha,
                ..SelectionConfig::default()
            };
            let result = select_covariates(std::slice::from_ref(ds), &cfg)?;
            names_to_indices(&result.selected)
        }
        Some(spec) => {
            if let Some(path) = spec.strip_prefix("file:") {
                let path = Path::new(path);
                manifest.add_input(path).map_err(|e| {
                    CliError::User(format!("cannot read {}: {}", path.display(), e))
                })?;
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::User(format!("cannot read {}: {}", path.display(), e))
                })?;
                let value: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::User(format!("invalid selection report: {}", e)))?;
                let selected = value
                    .pointer("/selection/selected")
                    .and_then(|v| v.as_array())
                    .ok_or_else(|| {
                        CliError::User(format!(
                            "{} does not look like a selection report (missing selection.selected)",
                            path.display()
                        ))
                    })?;
                let names: Vec<String> = selected
                    .iter()
                    .map(|v| {
                        v.as_str().map(String::from).ok_or_else(|| {
                            CliError::User("selection.selected must hold strings".into())
                        })
                    })
                    .collect::<CliResult<_>>()?;
                names_to_indices(&names)
            } else {
                let names: Vec<String> = spec
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if names.is_empty() {
                    return Err(CliError::User("--z-select list is empty".into()));
                }
                names_to_indices(&names)
            }
        }
    }
}

#[derive(Serialize)]
struct SelectOutput {
    schema_version: &'static str,
    manifest: RunManifest,
    selection: SelectionResult,
}

fn cmd_select(args: SelectArgs) -> CliResult<()> {
    let started = Instant::now();
    let mut paths = args.data.clone();
    if let Some(dir) = &args.data_dir {
        let mut from_dir: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| CliError::User(format!("cannot read {}: {}", dir.display(), e)))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
            .collect();
        from_dir.sort();
        paths.extend(from_dir);
    }
    if paths.is_empty() {
        return Err(CliError::User(
            "no input data: pass --data <csv> (repeatable) or --data-dir <dir>".into(),
        ));
    }

    let config_echo = serde_json::json!({
        "data": paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "test": format!("{:?}", args.test).to_lowercase(),
        "alpha": args.alpha,
        "correction": format!("{:?}", args.correction).to_lowercase(),
        "min_nonzero": args.min_nonzero,
    });
    let mut manifest = RunManifest::new("select", config_echo);

    let mut experiments = Vec::with_capacity(paths.len());
    for path in &paths {
        manifest
            .add_input(path)
            .map_err(|e| CliError::User(format!("cannot read {}: {}", path.display(), e)))?;
        experiments.push(load_experiment_csv(path)?);
    }

    let cfg = SelectionConfig {
        alpha: args.alpha,
        test: match args.test {
            TestArg::Mw => TestKind::MannWhitney,
            TestArg::Welch => TestKind::WelchT,
        },
        correction: match args.correction {
            CorrectionArg::None => Correction::None,
            CorrectionArg::Bonferroni => Correction::Bonferroni,
            CorrectionArg::Holm => Correction::Holm,
        },
        min_nonzero_fraction: args.min_nonzero,
    };
    let selection = select_covariates(&experiments, &cfg)?;

    manifest.duration_seconds = started.elapsed().as_secs_f64();
    let output = SelectOutput {
        schema_version: REPORT_SCHEMA_VERSION,
        manifest,
        selection,
    };
    write_output(args.out.as_deref(), &output)
}

#[derive(serde::Deserialize, Serialize)]
struct SimulateSpec {
    dgp: DGPConfig,
    n_grid: Vec<usize>,
    replications: usize,
    #[serde(default = "all_estimators")]
    estimators: Vec<String>,
    #[serde(default)]
    predictor_mode: PredictorMode,
}

fn all_estimators() -> Vec<String> {
    ["diff", "cuped", "cupac", "combined"]
        .map(String::from)
        .to_vec()
}

#[derive(Serialize)]
struct SimulateOutput {
    schema_version: &'static str,
    manifest: RunManifest,
    report: MCReport,
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let started = Instant::now();
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::User(format!("cannot read {}: {}", args.config.display(), e)))?;
    let spec: SimulateSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::User(format!("invalid config: {}", e)))?;
    let methods: Vec<Method> = spec
        .estimators
        .iter()
        .map(|s| s.parse::<Method>())
        .collect::<Result<_, _>>()
        .map_err(|e: varred::Error| CliError::User(format!("invalid config: {}", e)))?;

    let config_echo = serde_json::to_value(&spec)
        .map_err(|e| CliError::Internal(format!("config echo failed: {}", e)))?;
    let mut manifest = RunManifest::new("simulate", config_echo);
    manifest
        .add_input(&args.config)
        .map_err(|e| CliError::User(format!("cannot read {}: {}", args.config.display(), e)))?;
    manifest.seeds = vec![spec.dgp.seed];

    if let Some(path) = &args.emit_data {
        let n = *spec
            .n_grid
            .first()
            .ok_or_else(|| CliError::User("invalid config: n_grid must not be empty".into()))?;
        let ds = generate_additive(&spec.dgp, n)?;
        write_experiment_csv(&ds, path)
            .map_err(|e| CliError::Internal(format!("cannot write {}: {}", path.display(), e)))?;
    }

    let report = run_monte_carlo(
        &spec.dgp,
        &spec.n_grid,
        spec.replications,
        &methods,
        spec.predictor_mode,
    )?;

    manifest.duration_seconds = started.elapsed().as_secs_f64();
    let output = SimulateOutput {
        schema_version: REPORT_SCHEMA_VERSION,
        manifest,
        report,
    };
    write_output(args.out.as_deref(), &output)
}

fn write_output<T: Serialize>(out: Option<&Path>, payload: &T) -> CliResult<()> {
    let text = to_deterministic_json(payload).map_err(|e| CliError::Internal(e.to_string()))?;
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Internal(format!("cannot write {}: {}", path.display(), e))),
        None => {
            print!("{}", text);
            Ok(())
        }
    }
}
