//! Long-run behavior of the screening pipeline under the null.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use varred::{select_covariates, ExperimentDataset, Matrix, SelectionConfig};

/// A balanced covariate observed across five experiments should survive
/// screening in about 1 - alpha of runs: the Fisher-combined p-value is
/// uniform under the null, so the keep rate at alpha = 0.05 must land in
/// [0.93, 0.98] over 200 seeded runs.
#[test]
fn null_covariate_keep_rate_matches_alpha() {
    let n = 10_000;
    let runs = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(90_300);
    let mut kept = 0;
    for _ in 0..runs {
        let experiments: Vec<ExperimentDataset> = (0..5)
            .map(|e| {
                let w: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
                let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                ExperimentDataset::new(
                    format!("exp_{}", e),
                    w,
                    (0..n).map(|i| i as f64).collect(),
                    Matrix::empty(n),
                    vec![],
                    Matrix::from_columns(n, vec![z]).unwrap(),
                    vec!["z_null".into()],
                    None,
                )
                .unwrap()
            })
            .collect();
        let result = select_covariates(&experiments, &SelectionConfig::default()).unwrap();
        if result.selected == vec!["z_null".to_string()] {
            kept += 1;
        }
    }
    let rate = kept as f64 / runs as f64;
    assert!(
        (0.93..=0.98).contains(&rate),
        "keep rate {} outside [0.93, 0.98]",
        rate
    );
}
