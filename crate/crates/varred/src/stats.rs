//! Shared numerical primitives: group summaries, sample variance, least
//! squares with a degeneracy fallback, and midranks for rank tests.

use nalgebra::{DMatrix, DVector};

use crate::dataset::ExperimentDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-arm sample means of outcome and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub n1: usize,
    pub n0: usize,
    pub y_bar_1: f64,
    pub y_bar_0: f64,
    pub x_bar_1: Vec<f64>,
    pub x_bar_0: Vec<f64>,
    pub z_bar_1: Vec<f64>,
    pub z_bar_0: Vec<f64>,
}

/// Result of [`ols_fit`].
///
/// `coefficients` are the slopes of the centered regression; `intercept`
/// restores the original location. When the centered Gram matrix is singular
/// to working precision the fit falls back to a small ridge penalty and both
/// `rank_deficient` and `ridge_used` record that.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub rank_deficient: bool,
    pub ridge_used: f64,
}

impl OlsFit {
    /// Fitted value for one row of features.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row.iter())
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }

    /// Fitted values for every row of `x`.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.coefficients.len() {
            return Err(Error::Contract(format!(
                "predictor expects {} feature column(s), got {}",
                self.coefficients.len(),
                x.n_cols()
            )));
        }
        let mut out = vec![self.intercept; x.n_rows()];
        for (j, coef) in self.coefficients.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(x.column(j)) {
                *o += coef * v;
            }
        }
        Ok(out)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Arm-wise arithmetic means of `y`, `x`, and `z`.
pub fn group_summary(ds: &ExperimentDataset) -> Result<GroupSummary> {
    let n1 = ds.n1();
    let n0 = ds.n0();
    if n1 == 0 || n0 == 0 {
        return Err(Error::Degenerate(format!(
            "each arm needs at least one unit (n1={}, n0={})",
            n1, n0
        )));
    }
    let arm_mean = |col: &[f64], arm: u8| -> f64 {
        let (mut sum, mut count) = (0.0, 0usize);
        for (&v, &wi) in col.iter().zip(ds.w()) {
            if wi == arm {
                sum += v;
                count += 1;
            }
        }
        sum / count as f64
    };
    Ok(GroupSummary {
        n1,
        n0,
        y_bar_1: arm_mean(ds.y(), 1),
        y_bar_0: arm_mean(ds.y(), 0),
        x_bar_1: (0..ds.d()).map(|j| arm_mean(ds.x().column(j), 1)).collect(),
        x_bar_0: (0..ds.d()).map(|j| arm_mean(ds.x().column(j), 0)).collect(),
        z_bar_1: (0..ds.m()).map(|j| arm_mean(ds.z().column(j), 1)).collect(),
        z_bar_0: (0..ds.m()).map(|j| arm_mean(ds.z().column(j), 0)).collect(),
    })
}

/// Unbiased sample variance with the `len - 1` denominator.
pub fn sample_variance(v: &[f64]) -> Result<f64> {
    if v.len() < 2 {
        return Err(Error::Degenerate(format!(
            "sample variance needs at least 2 observations, got {}",
            v.len()
        )));
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    Ok(ss / (v.len() - 1) as f64)
}

/// Relative diagonal threshold below which the centered design is treated
/// as singular.
const OLS_SINGULAR_RTOL: f64 = 1e-12;

/// Least squares of `response` on `design` with an intercept.
///
/// The design is centered column-wise and factored by Householder QR. If a
/// diagonal entry of `R` falls below `1e-12` times the largest one, the
/// centered Gram matrix is deemed singular to working precision and the fit
/// switches to ridge with `lambda = 1e-8 * trace(Gram) / k`.
pub fn ols_fit(design: &Matrix, response: &[f64]) -> Result<OlsFit> {
    let n = design.n_rows();
    let k = design.n_cols();
    if n == 0 {
        return Err(Error::Degenerate("cannot fit on an empty dataset".into()));
    }
    if response.len() != n {
        return Err(Error::Contract(format!(
            "response has {} rows, design has {}",
            response.len(),
            n
        )));
    }
    let y_bar = mean(response);
    if k == 0 {
        return Ok(OlsFit {
            coefficients: Vec::new(),
            intercept: y_bar,
            rank_deficient: false,
            ridge_used: 0.0,
        });
    }

    let col_means: Vec<f64> = (0..k).map(|j| mean(design.column(j))).collect();

    // Exactly constant columns carry no information after centering; give
    // them coefficient 0 and solve over the rest. Ridge is reserved for
    // genuine collinearity among the remaining columns.
    let active: Vec<usize> = (0..k)
        .filter(|&j| {
            let col = design.column(j);
            col.iter().any(|&v| v != col[0])
        })
        .collect();
    let dropped_constant = active.len() < k;

    let mut coefficients = vec![0.0; k];
    let (rank_deficient, ridge_used) = if active.is_empty() {
        (dropped_constant, 0.0)
    } else {
        let mut centered = DMatrix::<f64>::zeros(n, active.len());
        for (jc, &j) in active.iter().enumerate() {
            let col = design.column(j);
            for i in 0..n {
                centered[(i, jc)] = col[i] - col_means[j];
            }
        }
        let yc = DVector::from_iterator(n, response.iter().map(|v| v - y_bar));
        let (beta, singular, lambda) = if n >= active.len() {
            solve_qr(&centered, &yc)
                .map_or_else(|| solve_ridge(&centered, &yc), |beta| (beta, false, 0.0))
        } else {
            // more columns than rows can never be full rank after centering
            solve_ridge(&centered, &yc)
        };
        for (jc, &j) in active.iter().enumerate() {
            coefficients[j] = beta[jc];
        }
        (singular || dropped_constant, lambda)
    };

    let intercept = y_bar
        - coefficients
            .iter()
            .zip(col_means.iter())
            .map(|(b, m)| b * m)
            .sum::<f64>();
    Ok(OlsFit {
        coefficients,
        intercept,
        rank_deficient,
        ridge_used,
    })
}

fn solve_qr(centered: &DMatrix<f64>, yc: &DVector<f64>) -> Option<Vec<f64>> {
    let qr = centered.clone().qr();
    let r = qr.r();
    let k = r.ncols();
    let max_diag = (0..k).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if max_diag == 0.0 {
        return None;
    }
    for j in 0..k {
        if r[(j, j)].abs() <= OLS_SINGULAR_RTOL * max_diag {
            return None;
        }
    }
    let qty = qr.q().tr_mul(yc);
    r.solve_upper_triangular(&qty)
        .map(|beta| beta.iter().copied().collect())
}

fn solve_ridge(centered: &DMatrix<f64>, yc: &DVector<f64>) -> (Vec<f64>, bool, f64) {
    let k = centered.ncols();
    let gram = centered.tr_mul(centered);
    let lambda = 1e-8 * gram.trace() / k as f64;
    let mut penalized = gram;
    for j in 0..k {
        penalized[(j, j)] += lambda;
    }
    let rhs = centered.tr_mul(yc);
    let beta = penalized
        .cholesky()
        .map(|chol| chol.solve(&rhs).iter().copied().collect())
        .unwrap_or_else(|| vec![0.0; k]);
    (beta, true, lambda)
}

/// Average ranks (1-based) with ties sharing their midrank.
pub fn midranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the average of ranks i+1..=j+1
        let midrank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    ranks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use proptest::prelude::*;

    fn toy_dataset() -> ExperimentDataset {
        let z = Matrix::from_columns(4, vec![vec![1.0, 1.0, 0.0, 0.0]]).unwrap();
        ExperimentDataset::new(
            "t",
            vec![1, 1, 0, 0],
            vec![3.0, 5.0, 1.0, 3.0],
            Matrix::empty(4),
            vec![],
            z,
            vec!["z_w".into()],
            None,
        )
        .unwrap()
    }

    #[test]
    fn group_summary_hand_example() {
        let s = group_summary(&toy_dataset()).unwrap();
        assert_eq!(s.y_bar_1, 4.0);
        assert_eq!(s.y_bar_0, 2.0);
        // z equals w, so the arm means are the indicator values
        assert_eq!(s.z_bar_1, vec![1.0]);
        assert_eq!(s.z_bar_0, vec![0.0]);
    }

    #[test]
    fn group_summary_constant_outcome() {
        let ds = ExperimentDataset::new(
            "t",
            vec![1, 0, 1, 0],
            vec![7.0; 4],
            Matrix::empty(4),
            vec![],
            Matrix::empty(4),
            vec![],
            None,
        )
        .unwrap();
        let s = group_summary(&ds).unwrap();
        assert_eq!(s.y_bar_1, 7.0);
        assert_eq!(s.y_bar_0, 7.0);
    }

    #[test]
    fn group_summary_empty_arm_errors() {
        let ds = ExperimentDataset::new(
            "t",
            vec![1, 1],
            vec![1.0, 2.0],
            Matrix::empty(2),
            vec![],
            Matrix::empty(2),
            vec![],
            None,
        )
        .unwrap();
        assert!(matches!(group_summary(&ds), Err(Error::Degenerate(_))));
    }

    #[test]
    fn sample_variance_hand_examples() {
        assert_eq!(sample_variance(&[3.0, 5.0]).unwrap(), 2.0);
        assert_eq!(sample_variance(&[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(sample_variance(&[4.0, 4.0, 4.0]).unwrap(), 0.0);
        assert!(matches!(sample_variance(&[1.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ols_hand_example() {
        let design = Matrix::from_columns(4, vec![vec![1.0, 2.0, 1.0, 2.0]]).unwrap();
        let fit = ols_fit(&design, &[2.0, 4.0, 1.0, 3.0]).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-10);
        assert!((fit.intercept - (-0.5)).abs() < 1e-10);
        assert!(!fit.rank_deficient);
        assert_eq!(fit.ridge_used, 0.0);
    }

    #[test]
    fn ols_constant_response() {
        let design = Matrix::from_columns(4, vec![vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let fit = ols_fit(&design, &[5.0; 4]).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-10);
        assert!((fit.intercept - 5.0).abs() < 1e-10);
    }

    #[test]
    fn ols_collinear_falls_back_to_ridge() {
        let col = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let design = Matrix::from_columns(5, vec![col.clone(), col.clone()]).unwrap();
        let y: Vec<f64> = col.iter().map(|v| 2.0 * v + 1.0).collect();
        let fit = ols_fit(&design, &y).unwrap();
        assert!(fit.rank_deficient);
        assert!(fit.ridge_used > 0.0);
        // fitted values still minimize SSE: predictions match y closely
        let x = Matrix::from_columns(5, vec![col.clone(), col]).unwrap();
        let pred = fit.predict(&x).unwrap();
        let sse: f64 = pred
            .iter()
            .zip(y.iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        assert!(sse < 1e-6, "sse = {}", sse);
    }

    #[test]
    fn ols_empty_errors() {
        let design = Matrix::empty(0);
        assert!(matches!(ols_fit(&design, &[]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ols_residuals_orthogonal_to_design() {
        let c1 = vec![0.2, 1.7, -0.3, 2.2, 0.9, -1.4, 0.5, 1.1];
        let c2 = vec![1.0, -0.5, 0.25, 0.75, -1.25, 0.5, 2.0, -0.75];
        let y = vec![0.9, 2.1, -0.2, 3.3, 0.1, -1.9, 2.4, 0.6];
        let design = Matrix::from_columns(8, vec![c1.clone(), c2.clone()]).unwrap();
        let fit = ols_fit(&design, &y).unwrap();
        assert_eq!(fit.ridge_used, 0.0);
        let pred = fit.predict(&design).unwrap();
        let resid: Vec<f64> = y.iter().zip(pred.iter()).map(|(a, b)| a - b).collect();
        let scale: f64 = y.iter().map(|v| v.abs()).fold(1.0, f64::max);
        assert!(resid.iter().sum::<f64>().abs() < 1e-8 * scale);
        for col in [&c1, &c2] {
            let dot: f64 = resid.iter().zip(col.iter()).map(|(r, v)| r * v).sum();
            assert!(dot.abs() < 1e-8 * scale, "dot = {}", dot);
        }
    }

    #[test]
    fn midranks_hand_examples() {
        assert_eq!(
            midranks(&[10.0, 20.0, 20.0, 30.0]),
            vec![1.0, 2.5, 2.5, 4.0]
        );
        assert_eq!(midranks(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(midranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    proptest! {
        #[test]
        fn midranks_sum_exact(v in proptest::collection::vec(-1e6..1e6f64, 1..200)) {
            let n = v.len();
            let sum: f64 = midranks(&v).iter().sum();
            prop_assert_eq!(sum, (n * (n + 1)) as f64 / 2.0);
        }

        #[test]
        fn variance_affine(
            v in proptest::collection::vec(-1e3..1e3f64, 2..50),
            a in -10.0..10.0f64,
            b in -10.0..10.0f64,
        ) {
            let base = sample_variance(&v).unwrap();
            let scaled: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let got = sample_variance(&scaled).unwrap();
            let want = a * a * base;
            prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
        }

        #[test]
        fn ols_recovers_linear_model(
            beta in -5.0..5.0f64,
            c in -5.0..5.0f64,
            seedish in proptest::collection::vec(-100.0..100.0f64, 6..40),
        ) {
            // well-conditioned single-column design from the raw draws
            let spread: Vec<f64> = seedish.iter().enumerate().map(|(i, v)| v + i as f64).collect();
            let y: Vec<f64> = spread.iter().map(|v| beta * v + c).collect();
            let design = Matrix::from_columns(spread.len(), vec![spread.clone()]).unwrap();
            let fit = ols_fit(&design, &y).unwrap();
            if !fit.rank_deficient {
                prop_assert!((fit.coefficients[0] - beta).abs() < 1e-8 * beta.abs().max(1.0));
                prop_assert!((fit.intercept - c).abs() < 1e-8 * c.abs().max(1.0));
            }
        }
    }
}
