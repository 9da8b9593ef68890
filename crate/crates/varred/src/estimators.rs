//! Average-treatment-effect estimators with variance estimates.
//!
//! All four estimators share one shape: adjust the outcome, difference the
//! per-arm means of the adjusted values, and estimate the asymptotic
//! variance from the per-arm sample variances of those values. They differ
//! only in the adjustment:
//!
//! * `DIFF`: no adjustment.
//! * `CUPED`: subtract `theta' * x`, `theta` from a pooled least-squares
//!   fit of `y` on the pre-experiment covariates.
//! * `CUPAC`: subtract `f_hat(x)` for an arbitrary fitted outcome model.
//! * `COMBINED`: subtract `f_hat(x)`, then additionally `gamma' * z` with
//!   `gamma` from a pooled least-squares fit of the residuals on the
//!   selected in-experiment covariates.
//!
//! `sigma2_hat` is the variance of `sqrt(n) * (tau_hat - tau)`, so the
//! standard error is `sqrt(sigma2_hat / n)`. Confidence intervals use the
//! normal quantile; inference here is asymptotic.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::ExperimentDataset;
use crate::error::{Error, Result};
use crate::predictors::{r_squared, Predictor};
use crate::stats::{mean, ols_fit, sample_variance};

/// Estimator label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Diff,
    Cuped,
    Cupac,
    Combined,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Diff => "DIFF",
            Method::Cuped => "CUPED",
            Method::Cupac => "CUPAC",
            Method::Combined => "COMBINED",
        };
        write!(f, "{}", s)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "diff" => Ok(Method::Diff),
            "cuped" => Ok(Method::Cuped),
            "cupac" => Ok(Method::Cupac),
            "combined" => Ok(Method::Combined),
            other => Err(Error::Contract(format!(
                "unknown estimator `{}` (expected diff, cuped, cupac, or combined)",
                other
            ))),
        }
    }
}

/// A point estimate with its variance estimate and confidence interval.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub method: Method,
    pub tau_hat: f64,
    /// Estimated variance of `sqrt(n) * (tau_hat - tau)`.
    pub sigma2_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub n: usize,
    pub n1: usize,
    pub n0: usize,
    /// In-sample R-squared of the adjustment model, when one exists.
    pub r2_model: Option<f64>,
    pub gamma_hat: Option<Vec<f64>>,
    pub theta_hat: Option<Vec<f64>>,
    /// True when an adjustment fit needed the ridge fallback.
    pub rank_deficient: bool,
}

/// The two model-quality deltas and the variance-reduction ratio used to
/// compare the estimators on one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonMetrics {
    /// `sqrt(R2_combined) - sqrt(R2_cupac)`, R-squared clamped at 0.
    pub sqrt_r2_gain: f64,
    /// `1 - sigma2_cupac / sigma2_diff`.
    pub vr_cupac_vs_diff: f64,
    /// `1 - sigma2_combined / sigma2_cupac`.
    pub vr_combined_vs_cupac: f64,
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Contract(format!(
            "confidence level must be in (0, 1), got {}",
            level
        )));
    }
    Ok(())
}

fn split_by_arm<'a>(values: &'a [f64], w: &'a [u8]) -> (Vec<f64>, Vec<f64>) {
    let mut treated = Vec::new();
    let mut control = Vec::new();
    for (&v, &wi) in values.iter().zip(w) {
        if wi == 1 {
            treated.push(v);
        } else {
            control.push(v);
        }
    }
    (treated, control)
}

/// Difference of per-arm means of `adjusted`, with the shared variance
/// estimator `n * (var1/n1 + var0/n0)` where each arm's sample variance is
/// centered at that arm's own mean.
fn report_from_adjusted(
    ds: &ExperimentDataset,
    adjusted: &[f64],
    method: Method,
    level: f64,
) -> Result<EstimateReport> {
    check_level(level)?;
    let (treated, control) = split_by_arm(adjusted, ds.w());
    let (n1, n0) = (treated.len(), control.len());
    if n1 < 2 || n0 < 2 {
        return Err(Error::Degenerate(format!(
            "each arm needs at least 2 units for the variance estimator (n1={}, n0={})",
            n1, n0
        )));
    }
    let n = ds.n();
    let tau_hat = mean(&treated) - mean(&control);
    let var1 = sample_variance(&treated)?;
    let var0 = sample_variance(&control)?;
    let sigma2_hat = n as f64 * (var1 / n1 as f64 + var0 / n0 as f64);
    let se = (sigma2_hat / n as f64).sqrt();
    let z = Normal::standard().inverse_cdf((1.0 + level) / 2.0);
    Ok(EstimateReport {
        method,
        tau_hat,
        sigma2_hat,
        se,
        ci_low: tau_hat - z * se,
        ci_high: tau_hat + z * se,
        level,
        n,
        n1,
        n0,
        r2_model: None,
        gamma_hat: None,
        theta_hat: None,
        rank_deficient: false,
    })
}

/// Unadjusted difference-in-means estimate.
pub fn estimate_diff(ds: &ExperimentDataset, level: f64) -> Result<EstimateReport> {
    report_from_adjusted(ds, ds.y(), Method::Diff, level)
}

/// Linear regression adjustment with pre-experiment covariates.
pub fn estimate_cuped(ds: &ExperimentDataset, level: f64) -> Result<EstimateReport> {
    let fit = ols_fit(ds.x(), ds.y())?;
    let adjusted: Vec<f64> = (0..ds.n())
        .map(|i| {
            let mut v = ds.y()[i];
            for (j, coef) in fit.coefficients.iter().enumerate() {
                v -= coef * ds.x().value(i, j);
            }
            v
        })
        .collect();
    let mut report = report_from_adjusted(ds, &adjusted, Method::Cuped, level)?;
    report.rank_deficient = fit.rank_deficient;
    if ds.d() > 0 {
        report.r2_model = r_squared(ds.y(), &fit.predict(ds.x())?).ok();
    }
    report.theta_hat = Some(fit.coefficients);
    Ok(report)
}

/// Regression adjustment with a fitted outcome model (`y - f_hat(x)`).
pub fn estimate_cupac(
    ds: &ExperimentDataset,
    predictor: &Predictor,
    level: f64,
) -> Result<EstimateReport> {
    let f_hat = predictor.predict(ds.x())?;
    let adjusted: Vec<f64> = ds
        .y()
        .iter()
        .zip(f_hat.iter())
        .map(|(y, f)| y - f)
        .collect();
    let mut report = report_from_adjusted(ds, &adjusted, Method::Cupac, level)?;
    report.r2_model = r_squared(ds.y(), &f_hat).ok();
    Ok(report)
}

/// Two-step estimate: subtract `f_hat(x)`, then linearly adjust the residual
/// by the in-experiment covariate columns listed in `z_subset`.
pub fn estimate_combined(
    ds: &ExperimentDataset,
    predictor: &Predictor,
    z_subset: &[usize],
    level: f64,
) -> Result<EstimateReport> {
    if z_subset.is_empty() {
        return Err(Error::Contract(
            "combined estimator needs a nonempty set of in-experiment covariates".into(),
        ));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &j in z_subset {
        if j >= ds.m() {
            return Err(Error::Contract(format!(
                "z column index {} out of range (m = {})",
                j,
                ds.m()
            )));
        }
        if !seen.insert(j) {
            return Err(Error::Contract(format!("duplicate z column index {}", j)));
        }
    }

    let f_hat = predictor.predict(ds.x())?;
    let residual: Vec<f64> = ds
        .y()
        .iter()
        .zip(f_hat.iter())
        .map(|(y, f)| y - f)
        .collect();
    let z_sub = ds.z().select_columns(z_subset)?;
    let fit = ols_fit(&z_sub, &residual)?;

    let adjusted: Vec<f64> = (0..ds.n())
        .map(|i| {
            let mut v = residual[i];
            for (k, coef) in fit.coefficients.iter().enumerate() {
                v -= coef * z_sub.value(i, k);
            }
            v
        })
        .collect();
    let mut report = report_from_adjusted(ds, &adjusted, Method::Combined, level)?;
    report.rank_deficient = fit.rank_deficient;

    let mut gamma_full = vec![0.0; ds.m()];
    for (k, &j) in z_subset.iter().enumerate() {
        gamma_full[j] = fit.coefficients[k];
    }
    // combined model prediction: f_hat(x) + gamma' z + residual-fit intercept
    let combined_pred: Vec<f64> = (0..ds.n())
        .map(|i| {
            let mut v = f_hat[i] + fit.intercept;
            for (k, coef) in fit.coefficients.iter().enumerate() {
                v += coef * z_sub.value(i, k);
            }
            v
        })
        .collect();
    report.r2_model = r_squared(ds.y(), &combined_pred).ok();
    report.gamma_hat = Some(gamma_full);
    Ok(report)
}

/// Side-by-side comparison metrics; errors when a denominator variance
/// is exactly zero.
pub fn comparison_metrics(
    diff: &EstimateReport,
    cupac: &EstimateReport,
    combined: &EstimateReport,
) -> Result<ComparisonMetrics> {
    if diff.sigma2_hat == 0.0 || cupac.sigma2_hat == 0.0 {
        return Err(Error::Degenerate(
            "variance ratios are undefined when a baseline variance estimate is 0".into(),
        ));
    }
    let r2_cupac = cupac.r2_model.ok_or_else(|| {
        Error::Contract("comparison metrics need r2_model on the CUPAC report".into())
    })?;
    let r2_combined = combined.r2_model.ok_or_else(|| {
        Error::Contract("comparison metrics need r2_model on the combined report".into())
    })?;
    Ok(ComparisonMetrics {
        sqrt_r2_gain: r2_combined.max(0.0).sqrt() - r2_cupac.max(0.0).sqrt(),
        vr_cupac_vs_diff: 1.0 - cupac.sigma2_hat / diff.sigma2_hat,
        vr_combined_vs_cupac: 1.0 - combined.sigma2_hat / cupac.sigma2_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn dataset(
        w: Vec<u8>,
        y: Vec<f64>,
        x_cols: Vec<Vec<f64>>,
        z_cols: Vec<Vec<f64>>,
    ) -> ExperimentDataset {
        let n = w.len();
        let x_names = (0..x_cols.len()).map(|j| format!("x_{}", j + 1)).collect();
        let z_names = (0..z_cols.len()).map(|j| format!("z_{}", j + 1)).collect();
        ExperimentDataset::new(
            "t",
            w,
            y,
            Matrix::from_columns(n, x_cols).unwrap(),
            x_names,
            Matrix::from_columns(n, z_cols).unwrap(),
            z_names,
            None,
        )
        .unwrap()
    }

    #[test]
    fn diff_hand_example() {
        let ds = dataset(vec![1, 1, 0, 0], vec![3.0, 5.0, 1.0, 3.0], vec![], vec![]);
        let report = estimate_diff(&ds, 0.95).unwrap();
        assert!((report.tau_hat - 2.0).abs() < 1e-12);
        assert!((report.sigma2_hat - 8.0).abs() < 1e-12);
        assert!((report.se - (8.0f64 / 4.0).sqrt()).abs() < 1e-12);
        assert!(report.ci_low <= report.tau_hat && report.tau_hat <= report.ci_high);
        let half = report.ci_high - report.tau_hat;
        assert!((report.tau_hat - report.ci_low - half).abs() < 1e-12);
    }

    #[test]
    fn diff_constant_outcome() {
        let ds = dataset(vec![1, 1, 0, 0], vec![4.0; 4], vec![], vec![]);
        let report = estimate_diff(&ds, 0.95).unwrap();
        assert_eq!(report.tau_hat, 0.0);
        assert_eq!(report.sigma2_hat, 0.0);
    }

    #[test]
    fn diff_noiseless_effect() {
        let c = 1.75;
        let ds = dataset(vec![1, 1, 0, 0], vec![c, c, 0.0, 0.0], vec![], vec![]);
        let report = estimate_diff(&ds, 0.95).unwrap();
        assert_eq!(report.tau_hat, c);
        assert_eq!(report.sigma2_hat, 0.0);
    }

    #[test]
    fn diff_small_arm_errors() {
        let ds = dataset(vec![1, 0, 0, 0], vec![1.0, 2.0, 3.0, 4.0], vec![], vec![]);
        assert!(matches!(
            estimate_diff(&ds, 0.95),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn cuped_hand_example() {
        let ds = dataset(
            vec![1, 1, 0, 0],
            vec![2.0, 4.0, 1.0, 3.0],
            vec![vec![1.0, 2.0, 1.0, 2.0]],
            vec![],
        );
        let report = estimate_cuped(&ds, 0.95).unwrap();
        let theta = report.theta_hat.as_ref().unwrap();
        assert!((theta[0] - 2.0).abs() < 1e-10);
        assert!((report.tau_hat - 1.0).abs() < 1e-10);
        assert!(report.sigma2_hat.abs() < 1e-18);
    }

    #[test]
    fn cuped_constant_covariate_matches_diff() {
        let ds = dataset(
            vec![1, 1, 0, 0],
            vec![2.0, 4.0, 1.0, 3.0],
            vec![vec![5.0; 4]],
            vec![],
        );
        let cuped = estimate_cuped(&ds, 0.95).unwrap();
        let diff = estimate_diff(&ds, 0.95).unwrap();
        assert!(cuped.rank_deficient);
        assert!((cuped.tau_hat - diff.tau_hat).abs() < 1e-6);
        assert!((cuped.sigma2_hat - diff.sigma2_hat).abs() < 1e-6);
    }

    #[test]
    fn cupac_zero_predictor_equals_diff_bitwise() {
        let ds = dataset(
            vec![1, 1, 0, 0, 1, 0],
            vec![3.0, 5.5, 1.25, 3.0, 4.5, 2.0],
            vec![],
            vec![],
        );
        let zero = Predictor::External(vec![0.0; 6]);
        let cupac = estimate_cupac(&ds, &zero, 0.95).unwrap();
        let diff = estimate_diff(&ds, 0.95).unwrap();
        assert_eq!(cupac.tau_hat.to_bits(), diff.tau_hat.to_bits());
        assert_eq!(cupac.sigma2_hat.to_bits(), diff.sigma2_hat.to_bits());
        assert_eq!(cupac.se.to_bits(), diff.se.to_bits());
        assert_eq!(cupac.ci_low.to_bits(), diff.ci_low.to_bits());
        assert_eq!(cupac.ci_high.to_bits(), diff.ci_high.to_bits());
    }

    #[test]
    fn cupac_oracle_leakage_gives_zero_variance() {
        // documents why f must not be fit on the outcome being tested
        let y = vec![3.0, 5.0, 1.0, 3.0];
        let ds = dataset(vec![1, 1, 0, 0], y.clone(), vec![], vec![]);
        let leaky = Predictor::External(y);
        let report = estimate_cupac(&ds, &leaky, 0.95).unwrap();
        assert_eq!(report.tau_hat, 0.0);
        assert_eq!(report.sigma2_hat, 0.0);
    }

    #[test]
    fn combined_needs_nonempty_subset() {
        let ds = dataset(
            vec![1, 1, 0, 0],
            vec![1.0, 2.0, 3.0, 4.0],
            vec![],
            vec![vec![0.1, 0.2, 0.3, 0.4]],
        );
        let zero = Predictor::External(vec![0.0; 4]);
        assert!(matches!(
            estimate_combined(&ds, &zero, &[], 0.95),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            estimate_combined(&ds, &zero, &[3], 0.95),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn combined_perfect_in_experiment_adjustment() {
        // z equals the systematic residual part exactly and is balanced
        // across arms; the predictor is the true f, so the adjusted values
        // are constant within arms
        let z: Vec<f64> = vec![0.5, -0.25, 1.0, 0.5, -0.25, 1.0];
        let tau = 2.0;
        let w = vec![1u8, 1, 1, 0, 0, 0];
        let y: Vec<f64> = z
            .iter()
            .zip(w.iter())
            .map(|(&zi, &wi)| 3.0 * zi + tau * wi as f64)
            .collect();
        let ds = dataset(w, y, vec![], vec![z]);
        let f_true = Predictor::External(vec![0.0; 6]);
        let report = estimate_combined(&ds, &f_true, &[0], 0.95).unwrap();
        assert!(report.sigma2_hat < 1e-6, "sigma2 = {}", report.sigma2_hat);
        assert!((report.tau_hat - tau).abs() < 1e-8);
        let gamma = report.gamma_hat.as_ref().unwrap();
        assert!((gamma[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn location_and_scale_invariance() {
        let w = vec![1u8, 0, 1, 0, 1, 0, 1, 0];
        let x: Vec<f64> = vec![0.3, -0.2, 1.1, 0.7, -0.9, 0.4, 0.0, -1.3];
        let z: Vec<f64> = vec![1.0, 0.5, -0.25, 0.75, 0.1, -0.6, 0.9, -0.2];
        let y: Vec<f64> = (0..8)
            .map(|i| 1.5 * x[i] + 0.8 * z[i] + w[i] as f64 + 0.1 * (i as f64))
            .collect();
        let base = dataset(w.clone(), y.clone(), vec![x.clone()], vec![z.clone()]);
        let shift = 7.5;
        let scale = 2.5;
        let y_shifted: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let y_scaled: Vec<f64> = y.iter().map(|v| v * scale).collect();
        let shifted = dataset(w.clone(), y_shifted, vec![x.clone()], vec![z.clone()]);
        let scaled = dataset(w, y_scaled, vec![x], vec![z]);

        let zero = |n: usize| Predictor::External(vec![0.0; n]);
        type Estimate = Box<dyn Fn(&ExperimentDataset) -> EstimateReport>;
        let runs: Vec<Estimate> = vec![
            Box::new(|ds: &ExperimentDataset| estimate_diff(ds, 0.9).unwrap()),
            Box::new(|ds: &ExperimentDataset| estimate_cuped(ds, 0.9).unwrap()),
            Box::new(move |ds: &ExperimentDataset| estimate_cupac(ds, &zero(ds.n()), 0.9).unwrap()),
            Box::new(|ds: &ExperimentDataset| {
                let zero = Predictor::External(vec![0.0; ds.n()]);
                estimate_combined(ds, &zero, &[0], 0.9).unwrap()
            }),
        ];
        for run in &runs {
            let a = run(&base);
            let b = run(&shifted);
            let c = run(&scaled);
            assert!((a.tau_hat - b.tau_hat).abs() < 1e-10, "shift moved tau");
            assert!((c.tau_hat - scale * a.tau_hat).abs() < 1e-10);
            assert!((c.sigma2_hat - scale * scale * a.sigma2_hat).abs() < 1e-8);
        }
    }

    #[test]
    fn null_adjustment_invariance() {
        let w = vec![1u8, 0, 1, 0, 1, 0];
        let y = vec![2.0, 1.0, 3.0, 0.5, 2.5, 1.5];
        let x = vec![0.4, -0.1, 0.9, 0.2, -0.5, 0.3];
        let z = vec![1.0, 0.25, -0.5, 0.75, 0.0, -1.0];
        let base = dataset(w.clone(), y.clone(), vec![x.clone()], vec![z.clone()]);
        let padded = dataset(w, y, vec![x, vec![0.0; 6]], vec![z, vec![0.0; 6]]);
        let a = estimate_cuped(&base, 0.95).unwrap();
        let b = estimate_cuped(&padded, 0.95).unwrap();
        assert!((a.tau_hat - b.tau_hat).abs() < 1e-10);

        // a zero z column in the subset gets its coefficient pinned at 0
        let f0 = Predictor::External(vec![0.0; 6]);
        let c = estimate_combined(&base, &f0, &[0], 0.95).unwrap();
        let d = estimate_combined(&padded, &f0, &[0, 1], 0.95).unwrap();
        assert!((c.tau_hat - d.tau_hat).abs() < 1e-10);
        assert_eq!(d.gamma_hat.as_ref().unwrap()[1], 0.0);
    }

    #[test]
    fn metrics_identity_and_arithmetic() {
        let mk = |sigma2: f64, r2: Option<f64>| EstimateReport {
            method: Method::Cupac,
            tau_hat: 0.0,
            sigma2_hat: sigma2,
            se: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
            level: 0.95,
            n: 100,
            n1: 50,
            n0: 50,
            r2_model: r2,
            gamma_hat: None,
            theta_hat: None,
            rank_deficient: false,
        };
        let metrics =
            comparison_metrics(&mk(10.0, None), &mk(5.0, Some(0.16)), &mk(1.0, Some(0.36)))
                .unwrap();
        assert!((metrics.vr_combined_vs_cupac - 0.8).abs() < 1e-12);
        assert!((metrics.vr_cupac_vs_diff - 0.5).abs() < 1e-12);
        assert!((metrics.sqrt_r2_gain - 0.2).abs() < 1e-12);

        // combined identical to cupac: both deltas vanish
        let same = comparison_metrics(&mk(10.0, None), &mk(5.0, Some(0.25)), &mk(5.0, Some(0.25)))
            .unwrap();
        assert_eq!(same.sqrt_r2_gain, 0.0);
        assert_eq!(same.vr_combined_vs_cupac, 0.0);

        assert!(matches!(
            comparison_metrics(&mk(0.0, None), &mk(5.0, Some(0.2)), &mk(1.0, Some(0.3))),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn invalid_level_rejected() {
        let ds = dataset(vec![1, 1, 0, 0], vec![1.0, 2.0, 3.0, 4.0], vec![], vec![]);
        assert!(matches!(estimate_diff(&ds, 1.0), Err(Error::Contract(_))));
        assert!(matches!(estimate_diff(&ds, 0.0), Err(Error::Contract(_))));
    }
}
