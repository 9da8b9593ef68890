//! Selection of in-experiment covariates that are balanced across arms.
//!
//! A covariate can only be used for adjustment if its mean is the same in
//! treatment and control; otherwise adjusting by it absorbs part of the
//! effect being measured. Candidates are screened with a two-sample test
//! per experiment, the per-experiment p-values are combined with Fisher's
//! method, an optional family-wise correction is applied, and covariates
//! whose adjusted combined p-value stays **above** alpha are selected.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::gamma_ur;

use crate::dataset::ExperimentDataset;
use crate::error::{Error, Result};
use crate::stats::{mean, midranks, sample_variance};

/// Two-sample test used to probe for a mean shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    WelchT,
    MannWhitney,
}

/// Multiple-testing correction over the combined p-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    None,
    Bonferroni,
    Holm,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionConfig {
    pub alpha: f64,
    pub test: TestKind,
    pub correction: Correction,
    /// A covariate must have at least this fraction of non-zero values in
    /// every experiment to be tested at all.
    pub min_nonzero_fraction: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            test: TestKind::MannWhitney,
            correction: Correction::None,
            min_nonzero_fraction: 0.01,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Contract(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.min_nonzero_fraction) {
            return Err(Error::Contract(format!(
                "min_nonzero_fraction must be in [0, 1], got {}",
                self.min_nonzero_fraction
            )));
        }
        Ok(())
    }
}

/// Outcome of [`select_covariates`].
#[derive(Debug, Clone, Serialize)]
pub struct SelectionResult {
    /// experiment id -> covariate name -> p-value.
    pub per_experiment_pvalues: BTreeMap<String, BTreeMap<String, f64>>,
    pub combined_pvalues: BTreeMap<String, f64>,
    pub adjusted_pvalues: BTreeMap<String, f64>,
    /// Covariates whose adjusted combined p-value exceeds alpha, sorted.
    pub selected: Vec<String>,
    /// Tested covariates with adjusted p <= alpha, sorted.
    pub rejected: Vec<String>,
    /// Covariates that failed the sparsity pre-filter, sorted.
    pub filtered_out: Vec<String>,
}

/// Two-sided Welch t-test for a difference in means.
///
/// Degenerate zero-variance samples short-circuit: equal means give p = 1,
/// different means give p = 0.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Degenerate(format!(
            "welch test needs at least 2 observations per sample ({}, {})",
            a.len(),
            b.len()
        )));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a)?, sample_variance(b)?);
    if va == 0.0 && vb == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sa = va / na;
    let sb = vb / nb;
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Degenerate(format!("invalid t distribution: {}", e)))?;
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

/// Which code path [`mann_whitney_u`] takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MwMethod {
    /// Exact enumeration up to a combined size of 16, normal approximation
    /// beyond that.
    Auto,
    Exact,
    NormalApprox,
}

/// Combined sample size up to which the exact permutation distribution is
/// enumerated (worst case C(16, 8) = 12870 subsets).
pub const MW_EXACT_CUTOFF: usize = 16;

/// Two-sided Mann-Whitney U test with midranks and tie correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<f64> {
    mann_whitney_u_with(a, b, MwMethod::Auto)
}

pub fn mann_whitney_u_with(a: &[f64], b: &[f64], method: MwMethod) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate(
            "mann-whitney test needs at least 1 observation per sample".into(),
        ));
    }
    let n_total = a.len() + b.len();
    let exact = match method {
        MwMethod::Exact => true,
        MwMethod::NormalApprox => false,
        MwMethod::Auto => n_total <= MW_EXACT_CUTOFF,
    };
    let mut combined: Vec<f64> = Vec::with_capacity(n_total);
    combined.extend_from_slice(a);
    combined.extend_from_slice(b);
    let ranks = midranks(&combined);
    if exact {
        if n_total > 32 {
            return Err(Error::Contract(format!(
                "exact enumeration is limited to 32 observations, got {}",
                n_total
            )));
        }
        Ok(mw_exact_p(&ranks, a.len()))
    } else {
        Ok(mw_normal_p(&ranks, a.len()))
    }
}

/// Exact two-sided p: the fraction of equally sized rank subsets whose U
/// statistic deviates from its mean at least as much as the observed one.
fn mw_exact_p(ranks: &[f64], na: usize) -> f64 {
    let n = ranks.len();
    let nb = n - na;
    let mu = na as f64 * nb as f64 / 2.0;
    let offset = (na * (na + 1)) as f64 / 2.0;
    let observed: f64 = ranks[..na].iter().sum::<f64>() - offset;
    let dev_obs = (observed - mu).abs();

    let mut count: u64 = 0;
    let mut total: u64 = 0;
    let na_u32 = na as u32;
    for mask in 0u64..(1u64 << n) {
        if mask.count_ones() != na_u32 {
            continue;
        }
        total += 1;
        let mut sum = 0.0;
        let mut bits = mask;
        while bits != 0 {
            let i = bits.trailing_zeros() as usize;
            sum += ranks[i];
            bits &= bits - 1;
        }
        let dev = (sum - offset - mu).abs();
        if dev >= dev_obs - 1e-9 {
            count += 1;
        }
    }
    count as f64 / total as f64
}

/// Normal approximation with a 0.5 continuity correction and an Edgeworth
/// kurtosis term. A zero variance (every value equal) is treated as no
/// evidence against the null: p = 1.
///
/// The rank sum of one arm is the sum of a without-replacement draw from
/// the observed midranks, so its exact second and fourth null moments
/// follow from the population central sums; that covers ties exactly and
/// makes the plain normal tail accurate enough for unbalanced small arms.
fn mw_normal_p(ranks: &[f64], na: usize) -> f64 {
    let n = ranks.len();
    let nb = n - na;
    let (na_f, nb_f, n_f) = (na as f64, nb as f64, n as f64);
    let mu = na_f * nb_f / 2.0;
    let u: f64 = ranks[..na].iter().sum::<f64>() - na_f * (na_f + 1.0) / 2.0;

    // midranks always average to (n + 1) / 2, ties included
    let r_bar = (n_f + 1.0) / 2.0;
    let (mut v2, mut v4) = (0.0, 0.0);
    for &r in ranks {
        let d = r - r_bar;
        let d2 = d * d;
        v2 += d2;
        v4 += d2 * d2;
    }
    let pairs = na_f * nb_f;
    // equals the classical tie-corrected variance of U
    let var = pairs * v2 / (n_f * (n_f - 1.0));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    let mut tail = Normal::standard().sf(z);
    if n >= 4 {
        let mu4 = pairs / (n_f * (n_f - 1.0) * (n_f - 2.0) * (n_f - 3.0))
            * ((n_f * n_f + n_f - 6.0 * pairs) * v4 + 3.0 * (na_f - 1.0) * (nb_f - 1.0) * v2 * v2);
        let excess_kurtosis = mu4 / (var * var) - 3.0;
        let density = (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        tail += density * (excess_kurtosis / 24.0) * (z * z * z - 3.0 * z);
    }
    (2.0 * tail.max(0.0)).clamp(0.0, 1.0)
}

/// Fisher's method: `-2 * sum(ln p)` compared to chi-square with `2k`
/// degrees of freedom. Zero p-values are clamped to `1e-300`.
pub fn fisher_combine(pvals: &[f64]) -> Result<f64> {
    if pvals.is_empty() {
        return Err(Error::Contract(
            "fisher_combine needs at least one p-value".into(),
        ));
    }
    let mut statistic = 0.0;
    for &p in pvals {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Contract(format!("p-value {} outside [0, 1]", p)));
        }
        let p = p.max(1e-300);
        statistic += -2.0 * p.ln();
    }
    if statistic <= 0.0 {
        return Ok(1.0);
    }
    // chi-square survival at statistic with 2k dof
    Ok(gamma_ur(pvals.len() as f64, statistic / 2.0).clamp(0.0, 1.0))
}

/// Family-wise corrections; keys are preserved.
pub fn adjust_pvalues(pvals: &BTreeMap<String, f64>, method: Correction) -> BTreeMap<String, f64> {
    let m = pvals.len();
    match method {
        Correction::None => pvals.clone(),
        Correction::Bonferroni => pvals
            .iter()
            .map(|(k, &p)| (k.clone(), (p * m as f64).min(1.0)))
            .collect(),
        Correction::Holm => {
            let mut order: Vec<(&String, f64)> = pvals.iter().map(|(k, &p)| (k, p)).collect();
            order.sort_by(|a, b| {
                a.1.partial_cmp(&b.1)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.0.cmp(b.0))
            });
            let mut out = BTreeMap::new();
            let mut running: f64 = 0.0;
            for (i, (k, p)) in order.into_iter().enumerate() {
                let step = ((m - i) as f64 * p).min(1.0);
                running = running.max(step);
                out.insert(k.clone(), running);
            }
            out
        }
    }
}

/// Screen every in-experiment covariate across one or more experiments.
///
/// Covariates must appear with identical names in every experiment. The
/// sparsity pre-filter removes covariates that lack non-zero values in any
/// experiment; the rest are tested per experiment, combined with Fisher's
/// method over experiments sorted by id, corrected, and split into
/// `selected` (adjusted p > alpha) and `rejected`.
pub fn select_covariates(
    experiments: &[ExperimentDataset],
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    cfg.validate()?;
    let Some(first) = experiments.first() else {
        return Err(Error::Contract(
            "select_covariates needs at least one experiment".into(),
        ));
    };
    let names: Vec<String> = first.z_names().to_vec();
    for ds in experiments {
        if ds.z_names() != names.as_slice() {
            return Err(Error::SchemaMismatch(format!(
                "experiment `{}` has z columns [{}], expected [{}]",
                ds.experiment_id(),
                ds.z_names().join(", "),
                names.join(", ")
            )));
        }
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for ds in experiments {
            if !seen.insert(ds.experiment_id().to_string()) {
                return Err(Error::Contract(format!(
                    "duplicate experiment id `{}`",
                    ds.experiment_id()
                )));
            }
        }
    }

    // sparsity pre-filter, applied uniformly across experiments
    let mut filtered_out = Vec::new();
    let mut tested_idx = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let sparse_somewhere = experiments.iter().any(|ds| {
            let col = ds.z().column(j);
            if col.is_empty() {
                return true;
            }
            let nonzero = col.iter().filter(|&&v| v != 0.0).count();
            (nonzero as f64 / col.len() as f64) < cfg.min_nonzero_fraction
        });
        if sparse_somewhere {
            filtered_out.push(name.clone());
        } else {
            tested_idx.push(j);
        }
    }

    let mut per_experiment: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    // experiments in id order so the Fisher sums have a fixed reduction order
    let mut by_id: Vec<&ExperimentDataset> = experiments.iter().collect();
    by_id.sort_by(|a, b| a.experiment_id().cmp(b.experiment_id()));

    let mut per_covariate: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ds in &by_id {
        let mut row = BTreeMap::new();
        for &j in &tested_idx {
            let col = ds.z().column(j);
            let (treated, control) = split_arm(col, ds.w());
            let p = match cfg.test {
                TestKind::WelchT => welch_t_test(&treated, &control),
                TestKind::MannWhitney => mann_whitney_u(&treated, &control),
            }
            .map_err(|e| {
                Error::Degenerate(format!(
                    "experiment `{}`, covariate `{}`: {}",
                    ds.experiment_id(),
                    names[j],
                    e
                ))
            })?;
            row.insert(names[j].clone(), p);
            per_covariate.entry(names[j].clone()).or_default().push(p);
        }
        per_experiment.insert(ds.experiment_id().to_string(), row);
    }

    let mut combined = BTreeMap::new();
    for (name, pvals) in &per_covariate {
        combined.insert(name.clone(), fisher_combine(pvals)?);
    }
    let adjusted = adjust_pvalues(&combined, cfg.correction);

    let mut selected = Vec::new();
    let mut rejected = Vec::new();
    for (name, &p) in &adjusted {
        if p > cfg.alpha {
            selected.push(name.clone());
        } else {
            rejected.push(name.clone());
        }
    }

    Ok(SelectionResult {
        per_experiment_pvalues: per_experiment,
        combined_pvalues: combined,
        adjusted_pvalues: adjusted,
        selected,
        rejected,
        filtered_out,
    })
}

fn split_arm(col: &[f64], w: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let mut treated = Vec::new();
    let mut control = Vec::new();
    for (&v, &wi) in col.iter().zip(w) {
        if wi == 1 {
            treated.push(v);
        } else {
            control.push(v);
        }
    }
    (treated, control)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn snorm(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    #[test]
    fn welch_identical_samples() {
        let p = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn welch_separated_constants() {
        let p = welch_t_test(&[0.0; 4], &[5.0; 4]).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn welch_equal_constants() {
        let p = welch_t_test(&[2.0; 4], &[2.0; 4]).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn welch_power_at_large_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 10_000;
        let a: Vec<f64> = (0..n).map(|_| snorm(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| 0.5 + snorm(&mut rng)).collect();
        let p = welch_t_test(&a, &b).unwrap();
        assert!(p < 1e-10, "p = {}", p);
    }

    #[test]
    fn welch_small_sample_errors() {
        assert!(matches!(
            welch_t_test(&[1.0], &[1.0, 2.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn mw_exact_hand_example() {
        // all 6 splits of {1,2,3,4}: only {1,2} and {3,4} deviate maximally
        let p = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-12, "p = {}", p);
    }

    #[test]
    fn mw_identical_multisets() {
        let p = mann_whitney_u(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(p >= 0.99);
    }

    #[test]
    fn mw_full_tie_is_no_evidence() {
        let p = mann_whitney_u(&[5.0; 3], &[5.0; 4]).unwrap();
        assert_eq!(p, 1.0);
        // large-sample path as well
        let p = mann_whitney_u(&vec![5.0; 30], &vec![5.0; 40]).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn mw_empty_sample_errors() {
        assert!(matches!(
            mann_whitney_u(&[], &[1.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn mw_power_at_large_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 10_000;
        let a: Vec<f64> = (0..n).map(|_| snorm(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| 0.5 + snorm(&mut rng)).collect();
        let p = mann_whitney_u(&a, &b).unwrap();
        assert!(p < 1e-10, "p = {}", p);
    }

    #[test]
    fn fisher_no_evidence() {
        assert_eq!(fisher_combine(&[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn fisher_closed_form_df4() {
        // T = -4 ln(0.5); survival of chi2_4 = exp(-T/2) (1 + T/2)
        let p = fisher_combine(&[0.5, 0.5]).unwrap();
        let t_half = -2.0 * 0.5f64.ln();
        let expected = (-t_half).exp() * (1.0 + t_half);
        assert!((p - expected).abs() < 1e-12);
        assert!((p - 0.5966).abs() < 1e-4);
    }

    #[test]
    fn fisher_single_p_is_identity() {
        let p = fisher_combine(&[0.05]).unwrap();
        assert!((p - 0.05).abs() < 1e-12);
    }

    #[test]
    fn fisher_clamps_zero() {
        let p = fisher_combine(&[0.0, 0.5]).unwrap();
        assert!(p > 0.0 && p < 1e-250);
    }

    #[test]
    fn fisher_empty_errors() {
        assert!(matches!(fisher_combine(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn fisher_uniform_inputs_stay_uniform() {
        // KS distance of combined p against U(0,1) over 2000 draws
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let uniform = rand_distr::Uniform::new(0.0f64, 1.0);
        let mut draws: Vec<f64> = (0..2000)
            .map(|_| {
                let ps: Vec<f64> = (0..3).map(|_| uniform.sample(&mut rng)).collect();
                fisher_combine(&ps).unwrap()
            })
            .collect();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let ecdf_hi = (i + 1) as f64 / n;
                let ecdf_lo = i as f64 / n;
                (ecdf_hi - p).abs().max((p - ecdf_lo).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.05, "ks = {}", ks);
    }

    #[test]
    fn bonferroni_hand_example() {
        let pvals: BTreeMap<String, f64> =
            [("a".to_string(), 0.01), ("b".to_string(), 0.04)].into();
        let adj = adjust_pvalues(&pvals, Correction::Bonferroni);
        assert!((adj["a"] - 0.02).abs() < 1e-12);
        assert!((adj["b"] - 0.08).abs() < 1e-12);
    }

    #[test]
    fn holm_hand_example() {
        let pvals: BTreeMap<String, f64> =
            [("a".to_string(), 0.01), ("b".to_string(), 0.04)].into();
        let adj = adjust_pvalues(&pvals, Correction::Holm);
        assert!((adj["a"] - 0.02).abs() < 1e-12);
        assert!((adj["b"] - 0.04).abs() < 1e-12);
    }

    #[test]
    fn single_p_corrections_are_identity() {
        let pvals: BTreeMap<String, f64> = [("a".to_string(), 0.03)].into();
        assert_eq!(adjust_pvalues(&pvals, Correction::Bonferroni)["a"], 0.03);
        assert_eq!(adjust_pvalues(&pvals, Correction::Holm)["a"], 0.03);
    }

    #[test]
    fn holm_dominated_by_bonferroni() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let uniform = rand_distr::Uniform::new(0.0f64, 1.0);
        for _ in 0..50 {
            let pvals: BTreeMap<String, f64> = (0..7)
                .map(|i| (format!("c{}", i), uniform.sample(&mut rng)))
                .collect();
            let holm = adjust_pvalues(&pvals, Correction::Holm);
            let bonf = adjust_pvalues(&pvals, Correction::Bonferroni);
            for (k, &raw) in &pvals {
                assert!(holm[k] <= bonf[k] + 1e-15);
                assert!(holm[k] >= raw - 1e-15);
                assert!(bonf[k] >= raw - 1e-15);
            }
        }
    }

    fn experiment(
        id: &str,
        w: Vec<u8>,
        z_cols: Vec<Vec<f64>>,
        z_names: Vec<&str>,
    ) -> ExperimentDataset {
        let n = w.len();
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        ExperimentDataset::new(
            id,
            w,
            y,
            Matrix::empty(n),
            vec![],
            Matrix::from_columns(n, z_cols).unwrap(),
            z_names.into_iter().map(String::from).collect(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn shifted_covariate_gets_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let n = 10_000;
        let w: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let z: Vec<f64> = w.iter().map(|&wi| wi as f64 + snorm(&mut rng)).collect();
        let ds = experiment("e1", w, vec![z], vec!["z_shift"]);
        let result = select_covariates(&[ds], &SelectionConfig::default()).unwrap();
        assert_eq!(result.rejected, vec!["z_shift".to_string()]);
        assert!(result.selected.is_empty());
    }

    #[test]
    fn null_covariate_usually_selected() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 2000;
        let mut kept = 0;
        let runs = 100;
        for _ in 0..runs {
            let w: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            let z: Vec<f64> = (0..n).map(|_| snorm(&mut rng)).collect();
            let ds = experiment("e1", w, vec![z], vec!["z_null"]);
            let result = select_covariates(&[ds], &SelectionConfig::default()).unwrap();
            if result.selected == vec!["z_null".to_string()] {
                kept += 1;
            }
        }
        // selection keeps a null covariate with probability about 1 - alpha
        assert!(kept >= 88, "kept {} of {}", kept, runs);
    }

    #[test]
    fn sparse_covariate_is_filtered_not_tested() {
        let w = vec![1, 1, 0, 0];
        let dead = vec![0.0; 4];
        let live = vec![1.0, 2.0, 3.0, 4.0];
        let ds = experiment("e1", w, vec![dead, live], vec!["z_dead", "z_live"]);
        let result = select_covariates(&[ds], &SelectionConfig::default()).unwrap();
        assert_eq!(result.filtered_out, vec!["z_dead".to_string()]);
        assert!(!result.combined_pvalues.contains_key("z_dead"));
        assert!(result.combined_pvalues.contains_key("z_live"));
    }

    #[test]
    fn schema_mismatch_errors() {
        let a = experiment(
            "e1",
            vec![1, 1, 0, 0],
            vec![vec![1.0, 2.0, 3.0, 4.0]],
            vec!["z_a"],
        );
        let b = experiment(
            "e2",
            vec![1, 1, 0, 0],
            vec![vec![1.0, 2.0, 3.0, 4.0]],
            vec!["z_b"],
        );
        assert!(matches!(
            select_covariates(&[a, b], &SelectionConfig::default()),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn empty_experiment_list_errors() {
        assert!(matches!(
            select_covariates(&[], &SelectionConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn every_covariate_lands_in_exactly_one_bucket() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let n = 400;
        let w: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let cols: Vec<Vec<f64>> = vec![
            (0..n).map(|_| snorm(&mut rng)).collect(),
            w.iter()
                .map(|&wi| 2.0 * wi as f64 + snorm(&mut rng))
                .collect(),
            vec![0.0; n],
        ];
        let ds = experiment("e1", w, cols, vec!["z_null", "z_shift", "z_dead"]);
        let result = select_covariates(&[ds], &SelectionConfig::default()).unwrap();
        let mut all: Vec<String> = result
            .selected
            .iter()
            .chain(result.rejected.iter())
            .chain(result.filtered_out.iter())
            .cloned()
            .collect();
        all.sort();
        assert_eq!(all, vec!["z_dead", "z_null", "z_shift"]);
    }

    #[test]
    fn pvalues_stochastically_dominate_uniform_under_null() {
        // empirical CDF at alpha must not exceed alpha + 2 binomial SEs
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let reps = 2000;
        let n = 200;
        for test in [TestKind::WelchT, TestKind::MannWhitney] {
            let mut pvals = Vec::with_capacity(reps);
            for _ in 0..reps {
                let a: Vec<f64> = (0..n).map(|_| snorm(&mut rng)).collect();
                let b: Vec<f64> = (0..n).map(|_| snorm(&mut rng)).collect();
                let p = match test {
                    TestKind::WelchT => welch_t_test(&a, &b).unwrap(),
                    TestKind::MannWhitney => mann_whitney_u(&a, &b).unwrap(),
                };
                pvals.push(p);
            }
            for alpha in [0.01, 0.05, 0.1] {
                let hits = pvals.iter().filter(|&&p| p <= alpha).count() as f64;
                let ecdf = hits / reps as f64;
                let se = (alpha * (1.0 - alpha) / reps as f64).sqrt();
                assert!(
                    ecdf <= alpha + 2.0 * se,
                    "{:?}: ecdf({}) = {}",
                    test,
                    alpha,
                    ecdf
                );
            }
        }
    }
}
