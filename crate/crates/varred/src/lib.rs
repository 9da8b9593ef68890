//! Variance-reduced treatment effect estimation for randomized experiments.
//!
//! Four estimators of the average treatment effect share one analysis
//! pipeline: the unadjusted difference in means, linear adjustment with
//! pre-experiment covariates, adjustment by an arbitrary fitted outcome
//! model, and a two-step combined estimator that additionally adjusts the
//! model residuals by mean-balanced in-experiment covariates. The crate
//! also ships the covariate screening procedure that decides which
//! in-experiment columns are safe to adjust by, and a seeded simulation
//! harness with closed-form oracle variances for checking all of it.
//!
//! ```
//! use varred::{estimate_diff, ExperimentDataset, Matrix};
//!
//! let ds = ExperimentDataset::new(
//!     "toy",
//!     vec![1, 1, 0, 0],
//!     vec![3.0, 5.0, 1.0, 3.0],
//!     Matrix::empty(4),
//!     vec![],
//!     Matrix::empty(4),
//!     vec![],
//!     None,
//! )?;
//! let report = estimate_diff(&ds, 0.95)?;
//! assert_eq!(report.tau_hat, 2.0);
//! assert_eq!(report.sigma2_hat, 8.0);
//! # Ok::<(), varred::Error>(())
//! ```
//!
//! The long-form guide lives in `book/`; its code blocks double as the
//! crate's doc-tests.

pub mod dataset;
pub mod error;
pub mod estimators;
pub mod gbt;
pub mod matrix;
pub mod predictors;
pub mod selection;
pub mod simulation;
pub mod stats;

pub use dataset::{
    impute_missing_pre, load_experiment_csv, validate_dataset, write_experiment_csv,
    ExperimentDataset, ImputePolicy, Severity, ValidationIssue, ValidationReport,
};
pub use error::{Error, Result};
pub use estimators::{
    comparison_metrics, estimate_combined, estimate_cupac, estimate_cuped, estimate_diff,
    ComparisonMetrics, EstimateReport, Method,
};
pub use gbt::{GbtHyperparams, GbtModel};
pub use matrix::Matrix;
pub use predictors::{
    fit_gbt_predictor, fit_linear_predictor, load_external_predictions, r_squared, Predictor,
};
pub use selection::{
    adjust_pvalues, fisher_combine, mann_whitney_u, mann_whitney_u_with, select_covariates,
    welch_t_test, Correction, MwMethod, SelectionConfig, SelectionResult, TestKind,
};
pub use simulation::{
    generate_additive, oracle_f_values, oracle_gamma, oracle_variances, run_monte_carlo, DGPConfig,
    HKind, MCReport, OracleVariances, PredictorMode,
};
pub use stats::{group_summary, midranks, ols_fit, sample_variance, GroupSummary, OlsFit};

// The guide's code blocks run as doc-tests so the book cannot drift from
// the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data-model.md")]
    mod data_model {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
