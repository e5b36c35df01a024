use longrun::experiments::{run_fig_suite, ExperimentSpec};
use longrun::model::{stationary_cov_sr, stationary_cov_ulr, ModelParams};
use longrun::simulator::simulate_array;
use nalgebra::DMatrix;
use rayon::prelude::*;

/// Cross-sectional moments at one date over independent paths.
fn moments_at(params: &ModelParams, t_len: usize, row: usize, reps: u64) -> (DMatrix<f64>, Vec<[f64; 2]>) {
    let draws: Vec<Vec<[f64; 2]>> = (0..reps)
        .into_par_iter()
        .map(|seed| {
            let p = simulate_array(params, t_len, 500 + seed).unwrap();
            (0..p.n()).map(|i| [p.y.row(row)[i], p.y.row(row + 1)[i]]).collect()
        })
        .collect();
    let n = params.n();
    let mut cov = DMatrix::zeros(n, n);
    for d in &draws {
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] += d[i][0] * d[j][0] / reps as f64;
            }
        }
    }
    let pairs = draws.iter().map(|d| d[0]).collect();
    (cov, pairs)
}

#[test]
fn reference_model_marginal_variance() {
    let params = ModelParams::reference_bivariate();
    let reps = 3000;
    let (cov, _) = moments_at(&params, 1000, 999 - 1, reps);
    let a = &params.ulr.a_mat;
    let target = stationary_cov_sr(&params.sr).unwrap() + a * stationary_cov_ulr(&params.ulr).unwrap() * a.transpose();
    for i in 0..2 {
        // Gaussian variance estimator has standard error v * sqrt(2 / reps).
        let se = target[(i, i)] * (2.0 / reps as f64).sqrt();
        assert!((cov[(i, i)] - target[(i, i)]).abs() < 3.0 * se, "coordinate {i}: {} vs {}", cov[(i, i)], target[(i, i)]);
    }
}

#[test]
fn pure_long_run_path_is_exact_autoregression() {
    let theta = 2.5f64.ln() / 10.0;
    let params = ModelParams::univariate(0.0, 0.0, theta, 1.0).unwrap();
    let t_len = 200;
    let reps = 4000;
    let (_, pairs) = moments_at(&params, t_len, 100, reps);
    let (sxx, sxy) = pairs.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0] * p[0], b + p[0] * p[1]));
    let rho = sxy / sxx;
    let target = (-theta / t_len as f64).exp();
    // Regression slope: residual variance over the lag-zero sum of squares.
    let se = ((1.0 - target * target) / reps as f64).sqrt();
    assert!((rho - target).abs() < 3.0 * se, "{rho} vs {target}");
}

#[test]
fn simulation_is_reproducible_per_seed() {
    let params = ModelParams::reference_bivariate();
    let a = simulate_array(&params, 2000, 4).unwrap();
    let b = simulate_array(&params, 2000, 4).unwrap();
    assert_eq!(a, b);
    assert!(a.decomposition_error() < 1e-12);
    assert_ne!(a.y, simulate_array(&params, 2000, 5).unwrap().y);
}

#[test]
fn silent_model_flags_every_correlation_family() {
    let mut spec = ExperimentSpec::bivariate();
    spec.params.sr.omega_half = DMatrix::zeros(2, 2);
    spec.params.ulr.s_mat = DMatrix::zeros(1, 1);
    spec.options.set("svg", "false");
    let dir = tempfile::tempdir().unwrap();
    let out = run_fig_suite(&spec, dir.path()).unwrap();
    assert!(!out.degenerate.is_empty());
    assert!(out.degenerate.iter().all(|(_, flag)| *flag), "{:?}", out.degenerate);
}

#[test]
fn reference_local_means_move_together() {
    let mut spec = ExperimentSpec::bivariate();
    let dir = tempfile::tempdir().unwrap();
    spec.options.set("svg", "false");
    let out = run_fig_suite(&spec, dir.path()).unwrap();
    assert!(out.mean_correlations[0] > 0.5, "{:?}", out.mean_correlations);
    assert!(dir.path().join("manifest.csv").exists());
}
