use longrun::acf::{local_means, regular_grid, LocalMeans};
use longrun::estimator::{estimate, fit_ar1, long_run_variance, step1_sr, step3_pca, EstimateConfig, FactorRule};
use longrun::model::{sr_autocov, stationary_cov_sr, ModelParams};
use longrun::rng::{derive_seed, GaussianStream};
use longrun::simulator::simulate_array;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Direct conditional log-likelihood, innovation variance concentrated out.
fn loglik_direct(x: &[f64], rho: f64) -> f64 {
    let n = (x.len() - 1) as f64;
    let rss: f64 = x.windows(2).map(|w| (w[1] - rho * w[0]).powi(2)).sum();
    -0.5 * n * (rss / n).ln()
}

/// Two-stage exhaustive grid search over the admissible range.
fn brute_force_rho(x: &[f64]) -> f64 {
    let bound = 0.999;
    let argmax = |lo: f64, hi: f64, n: usize| {
        (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .max_by(|a, b| loglik_direct(x, *a).total_cmp(&loglik_direct(x, *b)))
            .unwrap()
    };
    let coarse = argmax(-bound, bound, 99_900);
    argmax((coarse - 4e-5).max(-bound), (coarse + 4e-5).min(bound), 8_000)
}

fn ar1_path(rho: f64, k: usize, seed: u64) -> Vec<f64> {
    let mut stream = GaussianStream::new(seed, 0);
    let mut x = stream.next_normal() / (1.0 - rho * rho).sqrt();
    (0..k)
        .map(|_| {
            let out = x;
            x = rho * x + stream.next_normal();
            out
        })
        .collect()
}

#[test]
fn ar1_fit_matches_grid_search_oracle() {
    let rho = (-(2.5f64.ln() / 10.0) / 25.0 * 10.0).exp();
    let mut worst: f64 = 0.0;
    for r in 0..200 {
        let x = ar1_path(rho, 25, derive_seed(77, r));
        let fit = fit_ar1(&x).unwrap();
        worst = worst.max((fit.rho - brute_force_rho(&x)).abs());
    }
    assert!(worst < 1e-6, "largest deviation {worst:e}");
}

#[test]
fn step1_inverts_reference_moments() {
    let params = ModelParams::reference_bivariate();
    let g0 = stationary_cov_sr(&params.sr).unwrap();
    let g1 = sr_autocov(&params.sr, 1).unwrap();
    let fit = step1_sr(&g0, &g1).unwrap();
    assert!((&fit.phi_hat - &params.sr.phi).amax() < 1e-10);
    let omega = DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 4.0]);
    assert!((&fit.omega_hat - omega).amax() < 1e-10);
}

#[test]
fn univariate_long_run_variance_near_closed_form() {
    let params = ModelParams::univariate(0.5, 1.0, 1.0, 0.0).unwrap();
    let path = simulate_array(&params, 10_000, 11).unwrap();
    let v = long_run_variance(&path.y_s, 50).unwrap()[(0, 0)];
    assert!((v / 4.0 - 1.0).abs() < 0.15, "long-run variance {v}");
}

#[test]
fn noiseless_local_means_track_the_long_run_path() {
    let mut params = ModelParams::reference_bivariate();
    params.sr.omega_half = DMatrix::zeros(2, 2);
    let (t, h) = (7200, 60);
    let path = simulate_array(&params, t, 5).unwrap();
    let grid = regular_grid(20, t, h).unwrap();
    let means = local_means(&path.y, &grid, h).unwrap();
    for (c, m) in grid.iter().zip(&means.means) {
        // Window covers dates round(cT)+1..=round(cT)+H, rows round(cT)..
        let start = (c * t as f64).round() as usize;
        let avg = (start..start + h).fold(DVector::zeros(1), |acc, r| acc + path.y_l.row_vector(r)) / h as f64;
        assert!((m - &path.a_mat * avg).amax() < 1e-10, "c = {c}");
        let drift = (m - &path.a_mat * path.y_l.row_vector(start)).amax();
        assert!(drift < 0.5, "c = {c}: {drift}");
    }
}

#[test]
fn estimation_is_deterministic() {
    let params = ModelParams::reference_bivariate();
    let y = simulate_array(&params, 7200, 21).unwrap().y;
    let config = EstimateConfig::regular(20, 7200, 60).unwrap();
    let a = estimate(&y, &config).unwrap();
    let b = estimate(&y, &config).unwrap();
    assert_eq!(a.render_text(), b.render_text());
}

fn means_from(values: &[f64], n: usize) -> LocalMeans {
    let k = values.len() / n;
    LocalMeans {
        c_grid: (0..k).map(|i| i as f64 / k as f64).collect(),
        means: values.chunks_exact(n).map(DVector::from_column_slice).collect(),
        window: 1,
        t_len: k + 1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pca_output_is_orthonormal_and_reconstructs(values in prop::collection::vec(-5.0f64..5.0, 24)) {
        let means = means_from(&values, 3);
        let fit = step3_pca(&means, &FactorRule::TraceShare(0.05)).unwrap();
        prop_assume!(fit.l_hat > 0);
        let gram = fit.a_hat.transpose() * &fit.a_hat;
        prop_assert!((gram - DMatrix::identity(fit.l_hat, fit.l_hat)).amax() < 1e-10);
        for (m, f) in means.means.iter().zip(&fit.y_l_hat) {
            let residual = m - &fit.a_hat * f;
            prop_assert!((fit.a_hat.transpose() * residual).amax() < 1e-10);
        }
        for j in 0..fit.l_hat {
            let lead = fit.a_hat.column(j).iter().copied().find(|v| v.abs() > 1e-12).unwrap_or(1.0);
            prop_assert!(lead > 0.0);
        }
    }

    #[test]
    fn ar1_fit_stays_inside_bounds(seed in 0u64..10_000, rho in -0.99f64..0.99) {
        let x = ar1_path(rho, 25, seed);
        let fit = fit_ar1(&x).unwrap();
        prop_assert!(fit.rho.abs() <= 0.999);
        prop_assert!(fit.innovation_var > 0.0);
        prop_assert!(fit.loglik >= longrun::estimator::Ar1Stats::new(&x).profile_loglik(0.0) - 1e-9);
    }

    #[test]
    fn step1_recovers_random_stable_models(p in -0.9f64..0.9, q in -0.9f64..0.9, off in -1.0f64..1.0) {
        let sr = longrun::model::SRParams::new(
            DMatrix::from_row_slice(2, 2, &[p, 0.0, 0.0, q]),
            DMatrix::from_row_slice(2, 2, &[1.0, off, 0.0, 1.5]),
        ).unwrap();
        let g0 = stationary_cov_sr(&sr).unwrap();
        let g1 = sr_autocov(&sr, 1).unwrap();
        let fit = step1_sr(&g0, &g1).unwrap();
        prop_assert!((&fit.phi_hat - &sr.phi).amax() < 1e-8);
        prop_assert!((&fit.omega_hat - sr.omega()).amax() < 1e-8);
    }
}

