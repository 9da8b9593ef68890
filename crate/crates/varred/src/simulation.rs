//! Synthetic data from an additive outcome model, closed-form oracle
//! variances, and a Monte Carlo runner for checking the estimators against
//! those oracles.
//!
//! The generator draws standardized covariates (`Var[X] = I`, `Var[Z] = I`)
//! with per-coordinate coupling `Z_j = rho * X_j + sqrt(1 - rho^2) * xi_j`,
//! then assembles
//!
//! ```text
//! Y = g(X) + h(Z) + tau * W + eps,    W ~ Bernoulli(p) independent
//! ```
//!
//! with linear `g`. `h` is either linear or a standardized Hermite cubic
//! `(z^3 - 3z) / sqrt(6)` per coordinate, which keeps `Var[h]` equal to
//! `||beta_h||^2` and the conditional moments analytic.
//!
//! Oracle variances come in two scales: `v_*` is the residual-scale variance
//! of one adjusted observation, and `sigma2_* = (1/p + 1/(1-p)) * v_*` is the
//! asymptotic variance of `sqrt(n) * (tau_hat - tau)` that the estimators'
//! `sigma2_hat` targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ExperimentDataset;
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_combined, estimate_cupac, estimate_cuped, estimate_diff, EstimateReport, Method,
};
use crate::gbt::GbtHyperparams;
use crate::matrix::Matrix;
use crate::predictors::{fit_gbt_predictor, fit_linear_predictor, Predictor};
use crate::stats::{mean, sample_variance};

/// Shape of the in-experiment signal `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HKind {
    Linear,
    Cubic,
}

/// Parameters of the additive data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DGPConfig {
    pub d: usize,
    pub m: usize,
    pub beta_g: Vec<f64>,
    pub beta_h: Vec<f64>,
    pub h_kind: HKind,
    pub tau: f64,
    /// Treatment assignment probability.
    #[serde(default = "default_assignment_probability")]
    pub p: f64,
    /// Noise standard deviation.
    pub sigma_eps: f64,
    /// Per-coordinate coupling between `X_j` and `Z_j`.
    pub rho: f64,
    pub seed: u64,
}

fn default_assignment_probability() -> f64 {
    0.5
}

impl DGPConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta_g.len() != self.d {
            return Err(Error::Contract(format!(
                "beta_g has {} entries for d = {}",
                self.beta_g.len(),
                self.d
            )));
        }
        if self.beta_h.len() != self.m {
            return Err(Error::Contract(format!(
                "beta_h has {} entries for m = {}",
                self.beta_h.len(),
                self.m
            )));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Contract(format!(
                "assignment probability must be in (0, 1), got {}",
                self.p
            )));
        }
        if self.sigma_eps < 0.0 {
            return Err(Error::Contract("sigma_eps must be >= 0".into()));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::Contract(format!(
                "rho must be in [-1, 1], got {}",
                self.rho
            )));
        }
        if self.rho != 0.0 && self.m > self.d {
            return Err(Error::Contract(format!(
                "coupled coordinates require m <= d (m = {}, d = {}, rho = {})",
                self.m, self.d, self.rho
            )));
        }
        Ok(())
    }

    fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seed = seed;
        cfg
    }
}

/// Residual-scale and asymptotic-scale variances of the three estimators
/// under a [`DGPConfig`].
#[derive(Debug, Clone, Serialize)]
pub struct OracleVariances {
    pub v_diff: f64,
    pub v_cupac: f64,
    pub v_combined: f64,
    /// `1/p + 1/(1-p)`; 4 at p = 1/2.
    pub inflation: f64,
    pub sigma2_diff: f64,
    pub sigma2_cupac: f64,
    pub sigma2_combined: f64,
    /// True when the values come from Monte Carlo integration (cubic `h`)
    /// rather than closed forms.
    pub approximate: bool,
}

/// Standardized third Hermite polynomial; mean 0, variance 1 under N(0,1).
fn hermite3(z: f64) -> f64 {
    (z * z * z - 3.0 * z) / 6.0f64.sqrt()
}

/// The population-optimal pre-experiment predictor
/// `f(x) = g(x) + E[h(Z) | X = x] + tau * p`, evaluated on every row of `x`.
pub fn oracle_f_values(cfg: &DGPConfig, x: &Matrix) -> Vec<f64> {
    let n = x.n_rows();
    let mut out = vec![cfg.tau * cfg.p; n];
    for (j, &b) in cfg.beta_g.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(x.column(j)) {
            *o += b * v;
        }
    }
    let coupled = cfg.m.min(cfg.d);
    match cfg.h_kind {
        HKind::Linear => {
            for (j, &b) in cfg.beta_h[..coupled].iter().enumerate() {
                let scale = cfg.rho * b;
                for (o, v) in out.iter_mut().zip(x.column(j)) {
                    *o += scale * v;
                }
            }
        }
        HKind::Cubic => {
            for (j, &b) in cfg.beta_h[..coupled].iter().enumerate() {
                let scale = cfg.rho.powi(3) * b;
                for (o, v) in out.iter_mut().zip(x.column(j)) {
                    *o += scale * hermite3(*v);
                }
            }
        }
    }
    out
}

/// The population coefficient the second adjustment step estimates:
/// `gamma = E[Cov[Z, h(Z) | X]]`.
pub fn oracle_gamma(cfg: &DGPConfig) -> Vec<f64> {
    match cfg.h_kind {
        HKind::Linear => cfg
            .beta_h
            .iter()
            .map(|b| (1.0 - cfg.rho * cfg.rho) * b)
            .collect(),
        // E[Cov[Z, He3(Z) | X]] integrates to zero for every coupling
        HKind::Cubic => vec![0.0; cfg.m],
    }
}

/// Draw `n` units from the additive model. Deterministic given `cfg.seed`.
pub fn generate_additive(cfg: &DGPConfig, n: usize) -> Result<ExperimentDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal_column =
        |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(rng)).collect() };

    let x_cols: Vec<Vec<f64>> = (0..cfg.d).map(|_| normal_column(&mut rng)).collect();
    let xi_cols: Vec<Vec<f64>> = (0..cfg.m).map(|_| normal_column(&mut rng)).collect();
    let noise = normal_column(&mut rng);
    let w: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(cfg.p))).collect();

    let shrink = (1.0 - cfg.rho * cfg.rho).sqrt();
    let z_cols: Vec<Vec<f64>> = (0..cfg.m)
        .map(|j| {
            xi_cols[j]
                .iter()
                .enumerate()
                .map(|(i, &xi)| {
                    let coupled = if j < cfg.d {
                        cfg.rho * x_cols[j][i]
                    } else {
                        0.0
                    };
                    coupled + shrink * xi
                })
                .collect()
        })
        .collect();

    let y: Vec<f64> = (0..n)
        .map(|i| {
            let g: f64 = cfg
                .beta_g
                .iter()
                .zip(x_cols.iter())
                .map(|(b, col)| b * col[i])
                .sum();
            let h: f64 = match cfg.h_kind {
                HKind::Linear => cfg
                    .beta_h
                    .iter()
                    .zip(z_cols.iter())
                    .map(|(b, col)| b * col[i])
                    .sum(),
                HKind::Cubic => cfg
                    .beta_h
                    .iter()
                    .zip(z_cols.iter())
                    .map(|(b, col)| b * hermite3(col[i]))
                    .sum(),
            };
            g + h + cfg.tau * w[i] as f64 + cfg.sigma_eps * noise[i]
        })
        .collect();

    ExperimentDataset::new(
        format!("sim_{}", cfg.seed),
        w,
        y,
        Matrix::from_columns(n, x_cols)?,
        (1..=cfg.d).map(|j| format!("x_{}", j)).collect(),
        Matrix::from_columns(n, z_cols)?,
        (1..=cfg.m).map(|j| format!("z_{}", j)).collect(),
        None,
    )
}

/// Sample count for the cubic-case Monte Carlo integrator.
const ORACLE_MC_SAMPLES: usize = 10_000_000;
/// Internal seed for the integrator, independent of user seeds.
const ORACLE_MC_SEED: u64 = 0xAC1E_5EED;

/// Oracle variances for the three estimators under `cfg`.
///
/// Linear `h` uses closed forms. Cubic `h` integrates the same moments with
/// a fixed-seed Monte Carlo sample and is flagged `approximate`.
pub fn oracle_variances(cfg: &DGPConfig) -> Result<OracleVariances> {
    cfg.validate()?;
    let inflation = 1.0 / cfg.p + 1.0 / (1.0 - cfg.p);
    let sigma2 = cfg.sigma_eps * cfg.sigma_eps;
    let (v_diff, v_cupac, v_combined, approximate) = match cfg.h_kind {
        HKind::Linear => {
            let norm_g: f64 = cfg.beta_g.iter().map(|b| b * b).sum();
            let norm_h: f64 = cfg.beta_h.iter().map(|b| b * b).sum();
            let coupled = cfg.m.min(cfg.d);
            let shared: f64 = cfg.beta_g[..coupled]
                .iter()
                .zip(cfg.beta_h[..coupled].iter())
                .map(|(g, h)| g * h)
                .sum();
            let rho2 = cfg.rho * cfg.rho;
            let v_diff = norm_g + norm_h + 2.0 * cfg.rho * shared + sigma2;
            let v_cupac = (1.0 - rho2) * norm_h + sigma2;
            let v_combined = rho2 * (1.0 - rho2) * norm_h + sigma2;
            (v_diff, v_cupac, v_combined, false)
        }
        HKind::Cubic => {
            let (var_gh, e_var_h_given_x, gamma_norm2) = integrate_cubic_moments(cfg);
            let v_diff = var_gh + sigma2;
            let v_cupac = e_var_h_given_x + sigma2;
            let v_combined = v_cupac - gamma_norm2;
            (v_diff, v_cupac, v_combined, true)
        }
    };
    Ok(OracleVariances {
        v_diff,
        v_cupac,
        v_combined,
        inflation,
        sigma2_diff: inflation * v_diff,
        sigma2_cupac: inflation * v_cupac,
        sigma2_combined: inflation * v_combined,
        approximate,
    })
}

/// Monte Carlo estimates of `Var[g + h]`, `E[Var[h | X]]`, and
/// `||E[Cov[Z, h(Z) | X]]||^2` for the cubic model.
fn integrate_cubic_moments(cfg: &DGPConfig) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_MC_SEED);
    let shrink = (1.0 - cfg.rho * cfg.rho).sqrt();
    let n = ORACLE_MC_SAMPLES;

    let mut sum_gh = 0.0;
    let mut sum_gh2 = 0.0;
    let mut sum_cond2 = 0.0;
    let mut sum_zh = vec![0.0; cfg.m];
    let mut sum_condmeans = vec![0.0; cfg.m];
    let mut x = vec![0.0; cfg.d];
    let mut z = vec![0.0; cfg.m];

    for _ in 0..n {
        for xj in x.iter_mut() {
            *xj = StandardNormal.sample(&mut rng);
        }
        for (j, zj) in z.iter_mut().enumerate() {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let coupled = if j < cfg.d { cfg.rho * x[j] } else { 0.0 };
            *zj = coupled + shrink * xi;
        }
        let g: f64 = cfg.beta_g.iter().zip(x.iter()).map(|(b, v)| b * v).sum();
        let h: f64 = cfg
            .beta_h
            .iter()
            .zip(z.iter())
            .map(|(b, v)| b * hermite3(*v))
            .sum();
        let e_h_given_x: f64 = cfg.rho.powi(3)
            * cfg
                .beta_h
                .iter()
                .enumerate()
                .map(|(j, b)| if j < cfg.d { b * hermite3(x[j]) } else { 0.0 })
                .sum::<f64>();
        let gh = g + h;
        sum_gh += gh;
        sum_gh2 += gh * gh;
        let cond = h - e_h_given_x;
        sum_cond2 += cond * cond;
        for j in 0..cfg.m {
            sum_zh[j] += z[j] * h;
            let e_z_given_x = if j < cfg.d { cfg.rho * x[j] } else { 0.0 };
            sum_condmeans[j] += e_z_given_x * e_h_given_x;
        }
    }

    let nf = n as f64;
    let mean_gh = sum_gh / nf;
    let var_gh = sum_gh2 / nf - mean_gh * mean_gh;
    let e_var_h_given_x = sum_cond2 / nf;
    let gamma_norm2: f64 = (0..cfg.m)
        .map(|j| {
            let gamma_j = sum_zh[j] / nf - sum_condmeans[j] / nf;
            gamma_j * gamma_j
        })
        .sum();
    (var_gh, e_var_h_given_x, gamma_norm2)
}

/// Which predictor each replication uses for the model-based estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    /// The population-optimal `f` from the config; no fitting.
    #[default]
    OracleF,
    FitLinear,
    FitGbt,
}

/// Confidence level used by the Monte Carlo runner's coverage panels.
pub const MC_CI_LEVEL: f64 = 0.95;

/// Aggregates for one (estimator, sample size) cell.
#[derive(Debug, Clone, Serialize)]
pub struct McPanel {
    pub method: Method,
    pub n: usize,
    pub mean_tau_hat: f64,
    /// Empirical variance of `sqrt(n) * tau_hat` across replications.
    pub var_sqrt_n_tau_hat: f64,
    pub mean_sigma2_hat: f64,
    pub ci_coverage: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaErrorPoint {
    pub n: usize,
    /// Mean of `||gamma_hat - gamma||` across replications.
    pub mean_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FErrorPoint {
    pub n: usize,
    /// Mean in-sample L2 distance between the predictor and the true `f`.
    pub mean_l2: f64,
}

/// Full Monte Carlo study output.
#[derive(Debug, Clone, Serialize)]
pub struct MCReport {
    pub dgp: DGPConfig,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub predictor_mode: PredictorMode,
    pub estimators: Vec<Method>,
    pub ci_level: f64,
    pub oracle: OracleVariances,
    pub panels: Vec<McPanel>,
    pub gamma_error: Vec<GammaErrorPoint>,
    /// Slope of `log mean ||gamma_hat - gamma||` against `log n`; present
    /// when the combined estimator ran on at least two grid points.
    pub gamma_error_slope: Option<f64>,
    pub f_error_l2: Vec<FErrorPoint>,
}

struct RepOutcome {
    estimates: Vec<(Method, f64, f64, bool)>,
    gamma_error: Option<f64>,
    f_error: Option<f64>,
}

/// Run `replications` independent draws at every sample size in `n_grid`
/// and aggregate the requested estimators.
///
/// Replication `r` uses seed `cfg.seed + r`; replications run in parallel
/// but are aggregated in index order, so reports are bitwise reproducible.
pub fn run_monte_carlo(
    cfg: &DGPConfig,
    n_grid: &[usize],
    replications: usize,
    estimators: &[Method],
    predictor_mode: PredictorMode,
) -> Result<MCReport> {
    cfg.validate()?;
    if replications < 1 {
        return Err(Error::Contract("replications must be >= 1".into()));
    }
    if n_grid.is_empty() {
        return Err(Error::Contract("n_grid must not be empty".into()));
    }
    if estimators.is_empty() {
        return Err(Error::Contract("estimators must not be empty".into()));
    }
    let mut methods = estimators.to_vec();
    methods.sort();
    methods.dedup();

    let oracle = oracle_variances(cfg)?;
    let gamma_true = oracle_gamma(cfg);
    let needs_predictor = methods
        .iter()
        .any(|m| matches!(m, Method::Cupac | Method::Combined));

    let mut panels = Vec::new();
    let mut gamma_error = Vec::new();
    let mut f_error_l2 = Vec::new();

    for &n in n_grid {
        let outcomes: Vec<Result<RepOutcome>> = (0..replications)
            .into_par_iter()
            .map(|r| {
                let seed = cfg.seed.wrapping_add(r as u64);
                run_replication(
                    &cfg.with_seed(seed),
                    n,
                    &methods,
                    predictor_mode,
                    needs_predictor,
                    &gamma_true,
                )
                .map_err(|e| {
                    Error::Degenerate(format!("replication {} (seed {}, n {}): {}", r, seed, n, e))
                })
            })
            .collect();
        let mut reps = Vec::with_capacity(replications);
        for outcome in outcomes {
            reps.push(outcome?);
        }

        for (mi, &method) in methods.iter().enumerate() {
            let taus: Vec<f64> = reps.iter().map(|r| r.estimates[mi].1).collect();
            let sigma2s: Vec<f64> = reps.iter().map(|r| r.estimates[mi].2).collect();
            let covered = reps.iter().filter(|r| r.estimates[mi].3).count();
            let scaled: Vec<f64> = taus.iter().map(|t| (n as f64).sqrt() * t).collect();
            let var_scaled = if scaled.len() >= 2 {
                sample_variance(&scaled)?
            } else {
                0.0
            };
            panels.push(McPanel {
                method,
                n,
                mean_tau_hat: mean(&taus),
                var_sqrt_n_tau_hat: var_scaled,
                mean_sigma2_hat: mean(&sigma2s),
                ci_coverage: covered as f64 / replications as f64,
                replications,
            });
        }
        if methods.contains(&Method::Combined) {
            let errs: Vec<f64> = reps.iter().filter_map(|r| r.gamma_error).collect();
            gamma_error.push(GammaErrorPoint {
                n,
                mean_error: mean(&errs),
            });
        }
        if needs_predictor {
            let errs: Vec<f64> = reps.iter().filter_map(|r| r.f_error).collect();
            f_error_l2.push(FErrorPoint {
                n,
                mean_l2: mean(&errs),
            });
        }
    }

    let gamma_error_slope = log_log_slope(&gamma_error);
    Ok(MCReport {
        dgp: cfg.clone(),
        n_grid: n_grid.to_vec(),
        replications,
        predictor_mode,
        estimators: methods,
        ci_level: MC_CI_LEVEL,
        oracle,
        panels,
        gamma_error,
        gamma_error_slope,
        f_error_l2,
    })
}

fn run_replication(
    cfg: &DGPConfig,
    n: usize,
    methods: &[Method],
    predictor_mode: PredictorMode,
    needs_predictor: bool,
    gamma_true: &[f64],
) -> Result<RepOutcome> {
    let ds = generate_additive(cfg, n)?;
    let f_true = oracle_f_values(cfg, ds.x());
    let predictor = if needs_predictor {
        Some(match predictor_mode {
            PredictorMode::OracleF => Predictor::External(f_true.clone()),
            PredictorMode::FitLinear => fit_linear_predictor(ds.x(), ds.y())?,
            PredictorMode::FitGbt => fit_gbt_predictor(ds.x(), ds.y(), &GbtHyperparams::default())?,
        })
    } else {
        None
    };

    let z_all: Vec<usize> = (0..ds.m()).collect();
    let mut estimates = Vec::with_capacity(methods.len());
    let mut gamma_error = None;
    for &method in methods {
        let report: EstimateReport = match method {
            Method::Diff => estimate_diff(&ds, MC_CI_LEVEL)?,
            Method::Cuped => estimate_cuped(&ds, MC_CI_LEVEL)?,
            Method::Cupac => estimate_cupac(
                &ds,
                predictor.as_ref().expect("predictor built"),
                MC_CI_LEVEL,
            )?,
            Method::Combined => {
                let report = estimate_combined(
                    &ds,
                    predictor.as_ref().expect("predictor built"),
                    &z_all,
                    MC_CI_LEVEL,
                )?;
                if let Some(gamma_hat) = &report.gamma_hat {
                    let err: f64 = gamma_hat
                        .iter()
                        .zip(gamma_true.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    gamma_error = Some(err);
                }
                report
            }
        };
        let covered = report.ci_low <= cfg.tau && cfg.tau <= report.ci_high;
        estimates.push((method, report.tau_hat, report.sigma2_hat, covered));
    }

    let f_error = predictor.as_ref().map(|p| {
        let f_hat = p.predict(ds.x()).expect("predictor aligned to dataset");
        let mse = f_hat
            .iter()
            .zip(f_true.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64;
        mse.sqrt()
    });

    Ok(RepOutcome {
        estimates,
        gamma_error,
        f_error,
    })
}

/// Least-squares slope of `ln(mean_error)` on `ln(n)`.
fn log_log_slope(points: &[GammaErrorPoint]) -> Option<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.mean_error > 0.0)
        .map(|p| ((p.n as f64).ln(), p.mean_error.ln()))
        .collect();
    if usable.len() < 2 {
        return None;
    }
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / usable.len() as f64;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / usable.len() as f64;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
