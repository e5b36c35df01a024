//! Five-step estimation: short-run moments, local means, PCA of the local
//! means, Gaussian maximum likelihood for the OU factor on the long-run grid
//! and fitted-value residuals.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::acf::{averaged_sr_acov, local_means, regular_grid, LocalMeans};
use crate::error::{Error, Result};
use crate::linalg::{self, psd_factor, symmetrize};
use crate::model::fix_column_sign;
use crate::series::Series;
use crate::table::Table;

/// Short-run moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortRunFit {
    /// Averaged lag-0 short-run autocovariance the fit is based on.
    pub gamma0_hat: DMatrix<f64>,
    pub phi_hat: DMatrix<f64>,
    pub omega_hat: DMatrix<f64>,
    /// Lower-triangular factor of `omega_hat`.
    pub omega_half_hat: DMatrix<f64>,
    /// Smallest eigenvalue of `Γ0 - Φ̂Γ0Φ̂'` before clipping.
    pub omega_min_eigenvalue: f64,
    pub omega_clipped: bool,
    pub spectral_radius: f64,
}

impl ShortRunFit {
    pub fn nonstationary(&self) -> bool {
        self.spectral_radius >= 1.0
    }

    /// `(I - Φ̂)^{-1} Ω̂ (I - Φ̂)^{-1}'`.
    pub fn long_run_cov(&self) -> Result<DMatrix<f64>> {
        let n = self.phi_hat.nrows();
        let inv = (DMatrix::<f64>::identity(n, n) - &self.phi_hat)
            .try_inverse()
            .ok_or_else(|| Error::Singular("I - Φ̂".into()))?;
        Ok(symmetrize(&(&inv * &self.omega_hat * inv.transpose())))
    }
}

fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// `Φ̂ = Γ1 Γ0^{-1}`, `Ω̂ = Γ0 - Φ̂ Γ0 Φ̂'`. Negative eigenvalues of `Ω̂` are
/// clipped at zero and reported.
pub fn step1_sr(gamma0: &DMatrix<f64>, gamma1: &DMatrix<f64>) -> Result<ShortRunFit> {
    let n = linalg::ensure_square(gamma0, "Γ0")?;
    if gamma1.shape() != (n, n) {
        return Err(Error::Dimension("Γ0 and Γ1 differ in shape".into()));
    }
    let g0 = symmetrize(gamma0);
    let svd = g0.clone().svd(false, false);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || svd.singular_values.min() <= 1e-13 * smax {
        return Err(Error::Singular("Γ0".into()));
    }
    let g0_inv = g0.clone().try_inverse().ok_or_else(|| Error::Singular("Γ0".into()))?;
    let phi_hat = gamma1 * g0_inv;
    let raw = symmetrize(&(&g0 - &phi_hat * &g0 * phi_hat.transpose()));
    let (values, vectors) = sorted_eigen(&raw);
    let min_eig = values.iter().copied().fold(f64::INFINITY, f64::min);
    let clipped = min_eig < 0.0;
    let omega_hat = if clipped {
        let d = DMatrix::from_diagonal(&DVector::from_iterator(n, values.iter().map(|v| v.max(0.0))));
        symmetrize(&(&vectors * d * vectors.transpose()))
    } else {
        raw
    };
    Ok(ShortRunFit {
        spectral_radius: linalg::spectral_radius(&phi_hat),
        omega_half_hat: psd_factor(&omega_hat)?,
        phi_hat,
        omega_hat,
        omega_min_eigenvalue: min_eig,
        omega_clipped: clipped,
        gamma0_hat: g0,
    })
}

pub fn step2_means(y: &Series, c_grid: &[f64], window: usize) -> Result<LocalMeans> {
    local_means(y, c_grid, window)
}

/// Rule selecting the number of long-run factors from the PCA spectrum.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorRule {
    /// Count eigenvalues of `M̂` whose share of the trace exceeds the value.
    TraceShare(f64),
    /// Sequential test against the sampling noise of the local means: with
    /// `noise_cov` the covariance of one local mean, the trailing eigenvalue
    /// sums of the whitened `M̂` are compared with χ² critical values with
    /// `(K-j+1)(n-j+1)` degrees of freedom.
    Significance { level: f64, noise_cov: DMatrix<f64> },
}

impl FactorRule {
    /// Significance rule with the local-mean noise `Σ_∞ / H`.
    pub fn significance(level: f64, sigma_inf: &DMatrix<f64>, window: usize) -> Self {
        FactorRule::Significance {
            level,
            noise_cov: sigma_inf / window as f64,
        }
    }
}

/// PCA output of step 3.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFit {
    pub l_hat: usize,
    /// `n × L̂`, orthonormal columns with positive leading entry.
    pub a_hat: DMatrix<f64>,
    /// `Â' m̂(c_k)` for every grid point.
    pub y_l_hat: Vec<DVector<f64>>,
    /// Eigenvalues of `M̂ = Σ m̂ m̂'` in decreasing order.
    pub eigenvalues: Vec<f64>,
    /// `(statistic, critical value)` of each significance test performed.
    pub tests: Vec<(f64, f64)>,
    /// Set when `M̂` vanishes.
    pub degenerate: bool,
}

impl FactorFit {
    pub fn y_l_series(&self) -> Series {
        let mut s = Series::with_capacity(self.l_hat.max(1), self.y_l_hat.len());
        if self.l_hat == 0 {
            return Series::from_flat(1, Vec::new()).expect("empty series");
        }
        for v in &self.y_l_hat {
            s.push(v.as_slice()).expect("consistent dimension");
        }
        s
    }
}

fn inverse_sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = sorted_eigen(m);
    let top = values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) || values.iter().any(|v| *v <= 1e-12 * top) {
        return Err(Error::Singular("local-mean noise covariance".into()));
    }
    let d = DMatrix::from_diagonal(&DVector::from_iterator(values.len(), values.iter().map(|v| v.sqrt().recip())));
    Ok(symmetrize(&(&vectors * d * vectors.transpose())))
}

fn count_significant(means: &LocalMeans, level: f64, noise_cov: &DMatrix<f64>) -> Result<(usize, Vec<(f64, f64)>)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("test level must be in (0,1), got {level}")));
    }
    let n = means.dim();
    let k = means.len();
    if noise_cov.shape() != (n, n) {
        return Err(Error::Dimension("noise covariance does not match the means".into()));
    }
    let w = inverse_sqrt_psd(noise_cov)?;
    let mut mw = DMatrix::zeros(n, n);
    for m in &means.means {
        let v = &w * m;
        mw += &v * v.transpose();
    }
    let (values, _) = sorted_eigen(&mw);
    let mut tests = Vec::new();
    let mut l_hat = 0;
    for j in 1..=n.min(k.saturating_sub(1)) {
        let stat: f64 = values[j - 1..].iter().sum();
        let df = ((k - j + 1) * (n - j + 1)) as f64;
        let crit = ChiSquared::new(df)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .inverse_cdf(1.0 - level);
        tests.push((stat, crit));
        if stat > crit {
            l_hat = j;
        } else {
            break;
        }
    }
    Ok((l_hat, tests))
}

/// PCA of `M̂ = Σ_k m̂(c_k) m̂(c_k)'`.
pub fn step3_pca(means: &LocalMeans, rule: &FactorRule) -> Result<FactorFit> {
    if means.len() < 2 {
        return Err(Error::InvalidParameter(format!("PCA needs K >= 2 means, got {}", means.len())));
    }
    let n = means.dim();
    let mut m_hat = DMatrix::zeros(n, n);
    for m in &means.means {
        m_hat += m * m.transpose();
    }
    let (eigenvalues, vectors) = sorted_eigen(&m_hat);
    let trace: f64 = eigenvalues.iter().sum();
    let degenerate = !(trace > 0.0);
    let (l_hat, tests) = if degenerate {
        (0, Vec::new())
    } else {
        match rule {
            FactorRule::TraceShare(share) => (eigenvalues.iter().filter(|v| **v / trace > *share).count(), Vec::new()),
            FactorRule::Significance { level, noise_cov } => count_significant(means, *level, noise_cov)?,
        }
    };
    let mut a_hat = vectors.columns(0, l_hat).into_owned();
    for j in 0..l_hat {
        fix_column_sign(&mut a_hat, j);
    }
    let y_l_hat = means.means.iter().map(|m| a_hat.transpose() * m).collect();
    Ok(FactorFit {
        l_hat,
        a_hat,
        y_l_hat,
        eigenvalues,
        tests,
        degenerate,
    })
}

/// Bounds of the autoregressive coefficient in the likelihood search.
pub const RHO_BOUND: f64 = 0.999;
const GRID_POINTS: usize = 512;

/// Sufficient statistics of a conditional AR(1) likelihood without intercept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Stats {
    pub sxx: f64,
    pub sxy: f64,
    pub syy: f64,
    pub n: usize,
}

impl Ar1Stats {
    pub fn new(x: &[f64]) -> Self {
        let mut s = Self {
            sxx: 0.0,
            sxy: 0.0,
            syy: 0.0,
            n: x.len().saturating_sub(1),
        };
        for w in x.windows(2) {
            s.sxx += w[0] * w[0];
            s.sxy += w[1] * w[0];
            s.syy += w[1] * w[1];
        }
        s
    }

    pub fn rss(&self, rho: f64) -> f64 {
        (self.syy - 2.0 * rho * self.sxy + rho * rho * self.sxx).max(0.0)
    }

    /// Profile log-likelihood in `ρ` with the innovation variance
    /// concentrated out.
    pub fn profile_loglik(&self, rho: f64) -> f64 {
        let n = self.n as f64;
        -0.5 * n * ((2.0 * std::f64::consts::PI * self.rss(rho) / n).ln() + 1.0)
    }
}

/// Conditional Gaussian AR(1) fit `x_k = ρ x_{k-1} + ω ε_k` with the
/// stationary variance `σ_c² = ω² / (1 - ρ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Fit {
    pub rho: f64,
    pub innovation_var: f64,
    pub stationary_var: f64,
    pub loglik: f64,
    pub n_obs: usize,
    pub at_boundary: bool,
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Maximizes the profile likelihood on `[-0.999, 0.999]` by a 512-point grid
/// scan refined with golden-section search.
pub fn fit_ar1(x: &[f64]) -> Result<Ar1Fit> {
    if x.len() < 3 {
        return Err(Error::InvalidParameter(format!("AR(1) fit needs >= 3 points, got {}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite observation".into()));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let spread = x.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(spread > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("constant series: autoregressive coefficient at the boundary".into()));
    }
    let stats = Ar1Stats::new(x);
    let step = 2.0 * RHO_BOUND / (GRID_POINTS - 1) as f64;
    let grid = |i: usize| -RHO_BOUND + i as f64 * step;
    let best = (0..GRID_POINTS)
        .max_by(|&a, &b| stats.profile_loglik(grid(a)).total_cmp(&stats.profile_loglik(grid(b))))
        .expect("non-empty grid");
    let lo = grid(best.saturating_sub(1));
    let hi = grid((best + 1).min(GRID_POINTS - 1));
    let mut rho = golden_max(|r| stats.profile_loglik(r), lo, hi, 1e-13);
    for edge in [-RHO_BOUND, RHO_BOUND] {
        if stats.profile_loglik(edge) > stats.profile_loglik(rho) {
            rho = edge;
        }
    }
    let innovation_var = stats.rss(rho) / stats.n as f64;
    if !(innovation_var > 0.0) {
        return Err(Error::Degenerate("AR(1) fit has zero residual variance".into()));
    }
    Ok(Ar1Fit {
        rho,
        innovation_var,
        stationary_var: innovation_var / (1.0 - rho * rho),
        loglik: stats.profile_loglik(rho),
        n_obs: stats.n,
        at_boundary: RHO_BOUND - rho.abs() < 1e-9,
    })
}

/// OU drift and diffusion estimated from the factor values on a grid with
/// spacing `1/k_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRunFit {
    pub theta_hat: DMatrix<f64>,
    pub s_hat: DMatrix<f64>,
    /// Autoregressive coefficient on the grid (`exp(-Θ̂/K)`).
    pub rho_hat: DMatrix<f64>,
    pub innovation_cov: DMatrix<f64>,
    pub loglik: f64,
    pub k_scale: f64,
    /// Univariate case: `ρ̂ < 0`, `|ρ̂|` was used for `θ̂`.
    pub negative_rho: bool,
    pub at_boundary: bool,
    /// `|ρ̂|` is within two standard errors of zero.
    pub weakly_identified: bool,
    /// Multivariate case: `Θ̂` comes from the principal matrix logarithm.
    pub principal_branch: bool,
}

impl LongRunFit {
    pub fn theta_scalar(&self) -> f64 {
        self.theta_hat[(0, 0)]
    }

    pub fn s_scalar(&self) -> f64 {
        self.s_hat[(0, 0)]
    }

    pub fn rho_scalar(&self) -> f64 {
        self.rho_hat[(0, 0)]
    }
}

/// Recovers `SS'` from the drift and the one-step innovation covariance.
fn diffusion_from_innovation(theta: &DMatrix<f64>, innov: &DMatrix<f64>, k_scale: f64) -> Result<DMatrix<f64>> {
    let l = theta.nrows();
    let ks = linalg::kron_sum(theta)?;
    let decay = linalg::mat_exp(&(-&ks / k_scale))?;
    let lhs = DMatrix::<f64>::identity(l * l, l * l) - decay;
    let rhs = &ks * DMatrix::from_column_slice(l * l, 1, innov.as_slice());
    let v = linalg::solve(&lhs, &rhs, "I - exp(-(Θ⊕Θ)/K)")?;
    Ok(symmetrize(&DMatrix::from_column_slice(l, l, v.as_slice())))
}

pub fn step4_mle_ou(y_l_hat: &Series, k_scale: f64) -> Result<LongRunFit> {
    if !(k_scale > 0.0) {
        return Err(Error::InvalidParameter("grid scale K must be > 0".into()));
    }
    let l = y_l_hat.dim();
    if l == 0 || y_l_hat.is_empty() {
        return Err(Error::InvalidParameter("no long-run factor to fit".into()));
    }
    if l == 1 {
        let x = y_l_hat.column(0);
        let fit = fit_ar1(&x)?;
        let r = fit.rho.abs();
        let theta = if r > 0.0 { -k_scale * r.ln() } else { f64::INFINITY };
        let s2 = 2.0 * theta * fit.stationary_var;
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        return Ok(LongRunFit {
            theta_hat: one(theta),
            s_hat: one(s2.sqrt()),
            rho_hat: one(fit.rho),
            innovation_cov: one(fit.innovation_var),
            loglik: fit.loglik,
            k_scale,
            negative_rho: fit.rho < 0.0,
            at_boundary: fit.at_boundary,
            weakly_identified: r < 2.0 / (fit.n_obs as f64).sqrt(),
            principal_branch: false,
        });
    }
    let n_obs = y_l_hat.len() - 1;
    if n_obs <= l {
        return Err(Error::InvalidParameter(format!("VAR(1) with L = {l} needs more than {} points", l + 1)));
    }
    let mut sxx = DMatrix::zeros(l, l);
    let mut sxy = DMatrix::zeros(l, l);
    for t in 1..y_l_hat.len() {
        let prev = y_l_hat.row_vector(t - 1);
        let cur = y_l_hat.row_vector(t);
        sxx += &prev * prev.transpose();
        sxy += &cur * prev.transpose();
    }
    let sxx_inv = sxx.try_inverse().ok_or_else(|| Error::Degenerate("factor values are collinear".into()))?;
    let rho = &sxy * sxx_inv;
    let mut innov = DMatrix::zeros(l, l);
    for t in 1..y_l_hat.len() {
        let e = y_l_hat.row_vector(t) - &rho * y_l_hat.row_vector(t - 1);
        innov += &e * e.transpose();
    }
    innov /= n_obs as f64;
    let det = innov.determinant();
    if !(det > 0.0) {
        return Err(Error::Degenerate("singular VAR(1) innovation covariance".into()));
    }
    let theta = -linalg::mat_log(&rho)? * k_scale;
    let ss = diffusion_from_innovation(&theta, &innov, k_scale)?;
    let loglik = -0.5 * n_obs as f64 * (l as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + l as f64);
    Ok(LongRunFit {
        s_hat: psd_factor(&ss)?,
        at_boundary: linalg::spectral_radius(&rho) >= RHO_BOUND,
        theta_hat: theta,
        rho_hat: rho,
        innovation_cov: innov,
        loglik,
        k_scale,
        negative_rho: false,
        weakly_identified: false,
        principal_branch: true,
    })
}

/// One row of the fitted-value comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub gamma: f64,
    pub date: usize,
    pub observed: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residual: DVector<f64>,
}

/// Long-run level at the date `d` (1-based): `Â Â' m̂` over the window of
/// `window` dates ending at `d`.
fn level_at(y: &Series, a_hat: &DMatrix<f64>, d: usize, window: usize) -> DVector<f64> {
    let m = y.mean_over(d - window..d);
    a_hat * (a_hat.transpose() * m)
}

/// Fitted values `Φ̂^{Δ}[y(γ_{k-1}T) - ŷ_l(γ_{k-1})] + ŷ_l(γ_k)` with the
/// long-run level estimated from the window ending at each grid date.
pub fn step5_residuals(
    y: &Series,
    phi_hat: &DMatrix<f64>,
    a_hat: &DMatrix<f64>,
    gamma_grid: &[f64],
    window: usize,
) -> Result<Vec<ResidualRow>> {
    if gamma_grid.len() < 2 {
        return Err(Error::Window("residual grid needs at least two points".into()));
    }
    if gamma_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Window("residual grid must be increasing".into()));
    }
    let t_len = y.len();
    let dates = gamma_grid
        .iter()
        .map(|&g| {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::Window(format!("grid point {g} outside (0, 1]")));
            }
            let d = (g * t_len as f64).round() as usize;
            if d < window.max(1) || d > t_len {
                return Err(Error::Window(format!("grid point {g} leaves no window of {window} dates")));
            }
            Ok(d)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(dates.len() - 1);
    for k in 1..dates.len() {
        let (d0, d1) = (dates[k - 1], dates[k]);
        if d1 <= d0 {
            return Err(Error::Window("residual grid points map to the same date".into()));
        }
        let power = linalg::mat_pow(phi_hat, (d1 - d0) as u64)?;
        let base = y.row_vector(d0 - 1) - level_at(y, a_hat, d0, window);
        let fitted = power * base + level_at(y, a_hat, d1, window);
        let observed = y.row_vector(d1 - 1);
        rows.push(ResidualRow {
            gamma: gamma_grid[k],
            date: d1,
            residual: &observed - &fitted,
            observed,
            fitted,
        });
    }
    Ok(rows)
}

/// Bartlett-weighted long-run covariance `Γ0 + Σ_{h≤b} (1 - h/(b+1))(Γh + Γh')`
/// with autocovariances around the pooled mean.
pub fn long_run_variance(y: &Series, bandwidth: usize) -> Result<DMatrix<f64>> {
    let len = y.len();
    if bandwidth >= len {
        return Err(Error::Window(format!("bandwidth {bandwidth} must be below the length {len}")));
    }
    let mean = y.mean_over(0..len);
    let neg: Vec<f64> = mean.iter().map(|v| -v).collect();
    let e = y.shifted(&neg);
    let n = y.dim();
    let gamma = |h: usize| e.cross_moment(h..len, h) * ((len - h) as f64 / len as f64);
    let mut out = gamma(0);
    for h in 1..=bandwidth {
        let w = 1.0 - h as f64 / (bandwidth + 1) as f64;
        let g = gamma(h);
        out += (&g + g.transpose()) * w;
    }
    debug_assert_eq!(out.nrows(), n);
    Ok(symmetrize(&out))
}

/// Settings of the full estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateConfig {
    pub c_grid: Vec<f64>,
    pub window: usize,
    pub factor_rule: FactorChoice,
    /// Spacing of the long-run grid is `1/k_scale`.
    pub k_scale: f64,
    pub residual_grid: Option<Vec<f64>>,
}

/// Factor-count rule as configured; the significance rule needs the
/// short-run fit to form its noise covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorChoice {
    TraceShare(f64),
    Significance(f64),
}

impl Default for FactorChoice {
    fn default() -> Self {
        FactorChoice::Significance(0.01)
    }
}

impl EstimateConfig {
    /// Regular grid of `k` windows of length `window` ending at `jT/k`.
    pub fn regular(k: usize, t_len: usize, window: usize) -> Result<Self> {
        Ok(Self {
            c_grid: regular_grid(k, t_len, window)?,
            window,
            factor_rule: FactorChoice::default(),
            k_scale: k as f64,
            residual_grid: None,
        })
    }
}

/// All estimates with the settings and diagnostics that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationReport {
    pub n: usize,
    pub t_len: usize,
    pub config: EstimateConfig,
    pub short_run: ShortRunFit,
    pub means: LocalMeans,
    pub factors: FactorFit,
    pub long_run: Option<LongRunFit>,
    pub sigma_inf_hat: DMatrix<f64>,
    pub residuals: Vec<ResidualRow>,
    pub warnings: Vec<String>,
}

impl EstimationReport {
    /// Nominal rates: short-run moments `1/sqrt(H K)`, local means and
    /// loadings `1/sqrt(H)`; the drift has no consistent estimator.
    pub fn rates(&self) -> (f64, f64) {
        let h = self.config.window as f64;
        let k = self.means.len() as f64;
        ((h * k).sqrt().recip(), h.sqrt().recip())
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "estimation report");
        let _ = writeln!(s, "  observations T = {}, dimension n = {}", self.t_len, self.n);
        let _ = writeln!(s, "  windows K = {}, length H = {}", self.means.len(), self.config.window);
        let (r_sr, r_m) = self.rates();
        let _ = writeln!(s, "  nominal rates: short run {r_sr:.4}, local means {r_m:.4}, drift inconsistent");
        let _ = writeln!(s, "\nshort run");
        let _ = writeln!(s, "  phi_hat = {}", fmt_matrix(&self.short_run.phi_hat));
        let _ = writeln!(s, "  omega_hat = {}", fmt_matrix(&self.short_run.omega_hat));
        let _ = writeln!(s, "  spectral radius = {:.6}", self.short_run.spectral_radius);
        let _ = writeln!(s, "  sigma_inf_hat = {}", fmt_matrix(&self.sigma_inf_hat));
        let _ = writeln!(s, "\nfactors");
        let _ = writeln!(s, "  eigenvalues = {:?}", self.factors.eigenvalues);
        let _ = writeln!(s, "  L_hat = {}", self.factors.l_hat);
        let _ = writeln!(s, "  a_hat = {}", fmt_matrix(&self.factors.a_hat));
        if let Some(lr) = &self.long_run {
            let _ = writeln!(s, "\nlong run");
            let _ = writeln!(s, "  rho_hat = {}", fmt_matrix(&lr.rho_hat));
            let _ = writeln!(s, "  theta_hat = {}", fmt_matrix(&lr.theta_hat));
            let _ = writeln!(s, "  s_hat = {}", fmt_matrix(&lr.s_hat));
            let _ = writeln!(s, "  loglik = {:.6}", lr.loglik);
        }
        if !self.residuals.is_empty() {
            let k = self.residuals.len() as f64;
            let mean = self.residuals.iter().fold(DVector::zeros(self.n), |acc, r| acc + &r.residual) / k;
            let _ = writeln!(s, "\nresiduals: {} points, mean = {:?}", self.residuals.len(), mean.as_slice());
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(s, "\nwarnings");
            for w in &self.warnings {
                let _ = writeln!(s, "  - {w}");
            }
        }
        s
    }

    /// Long format `quantity, i, j, value` (1-based indices).
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["quantity", "i", "j", "value"]);
        fn put(t: &mut Table, name: &str, m: &DMatrix<f64>) {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    t.push_strings(vec![name.into(), (i + 1).to_string(), (j + 1).to_string(), m[(i, j)].to_string()]);
                }
            }
        }
        put(&mut t, "gamma0", &self.short_run.gamma0_hat);
        put(&mut t, "phi", &self.short_run.phi_hat);
        put(&mut t, "omega", &self.short_run.omega_hat);
        put(&mut t, "sigma_inf", &self.sigma_inf_hat);
        put(&mut t, "a", &self.factors.a_hat);
        put(&mut t, "eigenvalue", &DMatrix::from_column_slice(self.factors.eigenvalues.len(), 1, &self.factors.eigenvalues));
        put(&mut t, "L", &DMatrix::from_element(1, 1, self.factors.l_hat as f64));
        for (k, v) in self.factors.y_l_hat.iter().enumerate() {
            for (j, x) in v.iter().enumerate() {
                t.push_strings(vec!["y_l".into(), (k + 1).to_string(), (j + 1).to_string(), x.to_string()]);
            }
        }
        if let Some(lr) = &self.long_run {
            put(&mut t, "rho", &lr.rho_hat);
            put(&mut t, "theta", &lr.theta_hat);
            put(&mut t, "s", &lr.s_hat);
            put(&mut t, "loglik", &DMatrix::from_element(1, 1, lr.loglik));
            put(&mut t, "k_scale", &DMatrix::from_element(1, 1, lr.k_scale));
        }
        for (k, r) in self.residuals.iter().enumerate() {
            for (i, x) in r.residual.iter().enumerate() {
                t.push_strings(vec!["residual".into(), (k + 1).to_string(), (i + 1).to_string(), x.to_string()]);
            }
        }
        t
    }
}

pub fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = m
        .row_iter()
        .map(|r| r.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[{}]", rows.join("; "))
}

/// Estimates read back from the long-format report CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportTable {
    entries: Vec<(String, usize, usize, f64)>,
}

impl ReportTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let bad = |msg: &str| Error::Parse {
                line,
                msg: msg.to_string(),
            };
            if record.len() != 4 {
                return Err(bad("expected quantity,i,j,value"));
            }
            let i: usize = record[1].parse().map_err(|_| bad("bad row index"))?;
            let j: usize = record[2].parse().map_err(|_| bad("bad column index"))?;
            let v: f64 = record[3].parse().map_err(|_| bad("bad value"))?;
            if i == 0 || j == 0 {
                return Err(bad("indices are 1-based"));
            }
            entries.push((record[0].to_string(), i, j, v));
        }
        Ok(Self { entries })
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn matrix(&self, name: &str) -> Option<DMatrix<f64>> {
        let rows: Vec<_> = self.entries.iter().filter(|e| e.0 == name).collect();
        let nr = rows.iter().map(|e| e.1).max()?;
        let nc = rows.iter().map(|e| e.2).max()?;
        let mut m = DMatrix::from_element(nr, nc, f64::NAN);
        for e in rows {
            m[(e.1 - 1, e.2 - 1)] = e.3;
        }
        Some(m)
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.matrix(name).map(|m| m[(0, 0)])
    }

    pub fn require(&self, name: &str) -> Result<DMatrix<f64>> {
        self.matrix(name)
            .ok_or_else(|| Error::Config(format!("report lacks '{name}'")))
    }
}

/// Runs steps 1 to 5 on an observed array.
pub fn estimate(y: &Series, config: &EstimateConfig) -> Result<EstimationReport> {
    let mut warnings = Vec::new();
    let g0 = averaged_sr_acov(y, &config.c_grid, config.window, 0)?;
    let g1 = averaged_sr_acov(y, &config.c_grid, config.window, 1)?;
    let short_run = step1_sr(&g0, &g1)?;
    if short_run.omega_clipped {
        warnings.push(format!(
            "omega_hat had a negative eigenvalue {:.3e}; clipped at zero",
            short_run.omega_min_eigenvalue
        ));
    }
    if short_run.nonstationary() {
        warnings.push(format!("phi_hat spectral radius {:.4} >= 1", short_run.spectral_radius));
    }
    let sigma_inf_hat = short_run.long_run_cov()?;
    let means = step2_means(y, &config.c_grid, config.window)?;
    let rule = match config.factor_rule {
        FactorChoice::TraceShare(v) => FactorRule::TraceShare(v),
        FactorChoice::Significance(level) => FactorRule::significance(level, &sigma_inf_hat, config.window),
    };
    let factors = step3_pca(&means, &rule)?;
    if factors.degenerate {
        warnings.push("local means vanish; no long-run factor".into());
    } else if factors.l_hat == 0 {
        warnings.push("no significant long-run factor".into());
    }
    let long_run = if factors.l_hat > 0 {
        let fit = match step4_mle_ou(&factors.y_l_series(), config.k_scale) {
            Ok(fit) => fit,
            Err(e) => {
                warnings.push(format!("long-run fit unavailable: {e}"));
                return finish(y, config, short_run, sigma_inf_hat, means, factors, None, warnings);
            }
        };
        if fit.negative_rho {
            warnings.push("negative autoregressive coefficient; |rho| used for theta".into());
        }
        if fit.at_boundary {
            warnings.push("autoregressive coefficient at the search boundary".into());
        }
        if fit.weakly_identified {
            warnings.push("autoregressive coefficient indistinguishable from zero".into());
        }
        if fit.principal_branch {
            warnings.push("theta_hat uses the principal matrix logarithm".into());
        }
        Some(fit)
    } else {
        None
    };
    finish(y, config, short_run, sigma_inf_hat, means, factors, long_run, warnings)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    y: &Series,
    config: &EstimateConfig,
    short_run: ShortRunFit,
    sigma_inf_hat: DMatrix<f64>,
    means: LocalMeans,
    factors: FactorFit,
    long_run: Option<LongRunFit>,
    warnings: Vec<String>,
) -> Result<EstimationReport> {
    let residuals = match &config.residual_grid {
        Some(grid) => step5_residuals(y, &short_run.phi_hat, &factors.a_hat, grid, config.window)?,
        None => Vec::new(),
    };
    Ok(EstimationReport {
        n: y.dim(),
        t_len: y.len(),
        config: config.clone(),
        short_run,
        means,
        factors,
        long_run,
        sigma_inf_hat,
        residuals,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sr_autocov, stationary_cov_sr, ModelParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn step1_recovers_exact_moments() {
        let p = ModelParams::reference_bivariate();
        let g0 = stationary_cov_sr(&p.sr).unwrap();
        let g1 = sr_autocov(&p.sr, 1).unwrap();
        let fit = step1_sr(&g0, &g1).unwrap();
        assert!((&fit.phi_hat - &p.sr.phi).amax() < 1e-10);
        assert!((&fit.omega_hat - p.sr.omega()).amax() < 1e-10);
        let h = &fit.omega_half_hat;
        assert!((h * h.transpose() - p.sr.omega()).amax() < 1e-9);
        assert_eq!(h[(0, 1)], 0.0);
        assert!(!fit.omega_clipped);
    }

    #[test]
    fn step1_scalar_and_white_noise() {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let fit = step1_sr(&one(4.0 / 3.0), &one(2.0 / 3.0)).unwrap();
        assert_relative_eq!(fit.phi_hat[(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(fit.omega_hat[(0, 0)], 1.0, epsilon = 1e-14);
        let g0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let fit = step1_sr(&g0, &DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(fit.phi_hat, DMatrix::zeros(2, 2));
        assert!((&fit.omega_hat - &g0).amax() < 1e-15);
        assert!(step1_sr(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn step1_clips_negative_omega() {
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let fit = step1_sr(&one(1.0), &one(1.2)).unwrap();
        assert!(fit.omega_clipped);
        assert_eq!(fit.omega_hat[(0, 0)], 0.0);
    }

    fn means_of(vs: &[[f64; 2]]) -> LocalMeans {
        LocalMeans {
            c_grid: (0..vs.len()).map(|k| k as f64 / vs.len() as f64).collect(),
            means: vs.iter().map(|v| DVector::from_column_slice(v)).collect(),
            window: 10,
            t_len: 1000,
        }
    }

    #[test]
    fn pca_rank_one() {
        let m = means_of(&[[1.0, 1.0], [-2.0, -2.0], [0.5, 0.5]]);
        let fit = step3_pca(&m, &FactorRule::TraceShare(0.05)).unwrap();
        assert_eq!(fit.l_hat, 1);
        assert_relative_eq!(fit.a_hat[(0, 0)], 0.5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(fit.a_hat[(1, 0)], 0.5f64.sqrt(), epsilon = 1e-12);
        assert!(fit.eigenvalues[1].abs() < 1e-12);
        assert_relative_eq!(fit.y_l_hat[1][0], -2.0 * 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn pca_degenerate_and_small() {
        let m = means_of(&[[0.0, 0.0], [0.0, 0.0]]);
        let fit = step3_pca(&m, &FactorRule::TraceShare(0.05)).unwrap();
        assert_eq!(fit.l_hat, 0);
        assert!(fit.degenerate);
        assert_eq!(fit.a_hat.ncols(), 0);
        assert!(step3_pca(&means_of(&[[1.0, 0.0]]), &FactorRule::TraceShare(0.05)).is_err());
    }

    #[test]
    fn significance_rule_counts_strong_factor() {
        let vals: Vec<[f64; 2]> = (0..20).map(|k| {
            let f = 3.0 + (k as f64).sin();
            [f + 0.01 * (k as f64).cos(), f - 0.01 * (k as f64 * 1.7).sin()]
        }).collect();
        let rule = FactorRule::Significance { level: 0.01, noise_cov: DMatrix::identity(2, 2) * 1e-4 };
        let fit = step3_pca(&means_of(&vals), &rule).unwrap();
        assert_eq!(fit.l_hat, 1);
        assert_eq!(fit.tests.len(), 2);
    }

    #[test]
    fn ar1_constant_is_degenerate() {
        assert!(matches!(fit_ar1(&[2.0; 10]), Err(Error::Degenerate(_))));
        assert!(fit_ar1(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn long_run_variance_cases() {
        let y = Series::univariate((0..1000).map(|t| ((t * 7919 % 1000) as f64 / 1000.0) - 0.5).collect());
        let g0 = long_run_variance(&y, 0).unwrap();
        let mean = y.as_flat().iter().sum::<f64>() / 1000.0;
        let var = y.as_flat().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1000.0;
        assert_relative_eq!(g0[(0, 0)], var, epsilon = 1e-14);
        assert!(long_run_variance(&y, 1000).is_err());
    }

    #[test]
    fn residuals_collapse_without_short_run_dynamics() {
        let y = Series::from_flat(2, (0..400).map(|t| ((t / 2) as f64 * 0.1).sin()).collect()).unwrap();
        let a = DMatrix::from_row_slice(2, 1, &[0.5f64.sqrt(), 0.5f64.sqrt()]);
        let rows = step5_residuals(&y, &DMatrix::zeros(2, 2), &a, &[0.25, 0.5, 0.75, 1.0], 10).unwrap();
        for r in &rows {
            let expected = level_at(&y, &a, r.date, 10);
            assert!((&r.fitted - expected).amax() < 1e-14);
        }
        assert!(step5_residuals(&y, &DMatrix::zeros(2, 2), &a, &[0.01, 0.5], 10).is_err());
    }

    proptest! {
        #[test]
        fn ar1_matches_closed_form(xs in proptest::collection::vec(-5.0f64..5.0, 5..60)) {
            let stats = Ar1Stats::new(&xs);
            prop_assume!(stats.sxx > 1e-6);
            prop_assume!(stats.rss(stats.sxy / stats.sxx) > 1e-9);
            let fit = fit_ar1(&xs).unwrap();
            let ols = (stats.sxy / stats.sxx).clamp(-RHO_BOUND, RHO_BOUND);
            prop_assert!((fit.rho - ols).abs() < 1e-7);
        }

        #[test]
        fn pca_loadings_orthonormal(vals in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 3..25)) {
            let arr: Vec<[f64; 2]> = vals.iter().map(|v| [v.0, v.1]).collect();
            let fit = step3_pca(&means_of(&arr), &FactorRule::TraceShare(0.0)).unwrap();
            let gram = fit.a_hat.transpose() * &fit.a_hat;
            prop_assert!((gram - DMatrix::identity(fit.l_hat, fit.l_hat)).amax() < 1e-10);
            for j in 0..fit.l_hat {
                let first = fit.a_hat.column(j).iter().copied().find(|v| v.abs() > 1e-12).unwrap();
                prop_assert!(first > 0.0);
            }
        }
    }
}
