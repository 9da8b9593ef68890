//! Estimator behavior on draws from the additive model, checked against
//! the closed-form oracle variances.

use varred::{
    estimate_combined, estimate_cupac, estimate_cuped, fit_linear_predictor, generate_additive,
    oracle_variances, DGPConfig, HKind, Matrix,
};

fn linear_cfg(seed: u64) -> DGPConfig {
    DGPConfig {
        d: 1,
        m: 1,
        beta_g: vec![1.0],
        beta_h: vec![2.0],
        h_kind: HKind::Linear,
        tau: 1.0,
        p: 0.5,
        sigma_eps: 1.0,
        rho: 0.0,
        seed,
    }
}

#[test]
fn cupac_variance_tracks_oracle() {
    let cfg = linear_cfg(101);
    let oracle = oracle_variances(&cfg).unwrap();
    let ds = generate_additive(&cfg, 100_000).unwrap();
    let pred = fit_linear_predictor(ds.x(), ds.y()).unwrap();
    let report = estimate_cupac(&ds, &pred, 0.95).unwrap();
    let v_hat = report.sigma2_hat / oracle.inflation;
    assert!(
        (v_hat - oracle.v_cupac).abs() < 0.1 * oracle.v_cupac,
        "v_hat = {}, oracle = {}",
        v_hat,
        oracle.v_cupac
    );
}

#[test]
fn combined_variance_tracks_oracle() {
    let cfg = linear_cfg(103);
    let oracle = oracle_variances(&cfg).unwrap();
    let ds = generate_additive(&cfg, 100_000).unwrap();
    let pred = fit_linear_predictor(ds.x(), ds.y()).unwrap();
    let report = estimate_combined(&ds, &pred, &[0], 0.95).unwrap();
    let v_hat = report.sigma2_hat / oracle.inflation;
    assert!(
        (v_hat - oracle.v_combined).abs() < 0.1 * oracle.v_combined,
        "v_hat = {}, oracle = {}",
        v_hat,
        oracle.v_combined
    );
}

#[test]
fn combined_with_noise_z_stays_near_cupac() {
    // beta_h = 0 makes z pure noise: gamma_hat shrinks to 0 and the two
    // estimates agree within CUPAC's own standard error
    let mut cfg = linear_cfg(107);
    cfg.beta_h = vec![0.0];
    let ds = generate_additive(&cfg, 100_000).unwrap();
    let pred = fit_linear_predictor(ds.x(), ds.y()).unwrap();
    let cupac = estimate_cupac(&ds, &pred, 0.95).unwrap();
    let combined = estimate_combined(&ds, &pred, &[0], 0.95).unwrap();
    assert!(
        (combined.tau_hat - cupac.tau_hat).abs() <= 3.0 * cupac.se,
        "combined {} vs cupac {} (se {})",
        combined.tau_hat,
        cupac.tau_hat,
        cupac.se
    );
    let gamma = combined.gamma_hat.as_ref().unwrap();
    assert!(gamma[0].abs() < 0.05, "gamma = {}", gamma[0]);
}

#[test]
fn cuped_with_uninformative_x_recovers_tau() {
    // x is independent noise and y = tau * w exactly
    use rand::SeedableRng;
    use rand_distr::Distribution;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(109);
    let n = 10_000;
    let tau = 2.0;
    let w: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let x: Vec<f64> = (0..n)
        .map(|_| rand_distr::StandardNormal.sample(&mut rng))
        .collect();
    let y: Vec<f64> = w.iter().map(|&wi| tau * wi as f64).collect();
    let ds = varred::ExperimentDataset::new(
        "noise_x",
        w,
        y,
        Matrix::from_columns(n, vec![x]).unwrap(),
        vec!["x_1".into()],
        Matrix::empty(n),
        vec![],
        None,
    )
    .unwrap();
    let report = estimate_cuped(&ds, 0.95).unwrap();
    assert!(
        (report.tau_hat - tau).abs() < 0.05,
        "tau_hat = {}",
        report.tau_hat
    );
}
