//! Long-horizon predictive quantiles, Monte-Carlo confidence belts for the
//! long-run autoregressive coefficient and the Bonferroni min-max bound that
//! accounts for the estimation risk on the drift.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{fit_ar1, ReportTable};
use crate::linalg;
use crate::model::{stationary_cov_sr, ModelParams};
use crate::rng::{derive_seed, normal_quantile, streams, GaussianStream};
use crate::table::Table;

/// `s²(1 - e^{-2θγ}) / (2θ)`, continuous at `θ = 0` where it equals `s²γ`.
pub fn ulr_forecast_variance(theta: f64, s: f64, gamma: f64) -> f64 {
    if theta == 0.0 {
        s * s * gamma
    } else if theta.is_infinite() {
        0.0
    } else {
        -s * s * (-2.0 * theta * gamma).exp_m1() / (2.0 * theta)
    }
}

fn quantile_unchecked(theta: f64, alpha: f64, gamma: f64, eta: f64, s: f64, y_l: f64) -> Result<f64> {
    let z = normal_quantile(1.0 - alpha)?;
    let decay = if theta.is_infinite() { 0.0 } else { (-theta * gamma).exp() };
    Ok(decay * y_l + z * (eta * eta + ulr_forecast_variance(theta, s, gamma)).sqrt())
}

/// `e^{-θγ} y_l + Ψ^{-1}(1-α) sqrt(η² + s²(1 - e^{-2θγ})/(2θ))`.
pub fn theoretical_quantile(theta: f64, alpha: f64, gamma: f64, eta: f64, s: f64, y_l: f64) -> Result<f64> {
    if !(theta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "drift must be > 0, got {theta}; use quantile_at_zero_drift for the limit"
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon ratio must be > 0, got {gamma}")));
    }
    quantile_unchecked(theta, alpha, gamma, eta, s, y_l)
}

/// Limit of [`theoretical_quantile`] as the drift tends to zero.
pub fn quantile_at_zero_drift(alpha: f64, gamma: f64, eta: f64, s: f64, y_l: f64) -> Result<f64> {
    quantile_unchecked(0.0, alpha, gamma, eta, s, y_l)
}

/// Gaussian law of a forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HorizonMode {
    /// `h` calendar steps, negligible against `T`: the long-run level is frozen.
    Short { h: u64 },
    /// Horizon `γT`: the short run has forgotten its state.
    Long { gamma: f64 },
}

/// Predictive law of `y(T + horizon)` given `y_s(T)` and `y_l(1)`.
pub fn predictive_distribution(
    params: &ModelParams,
    y_s: &DVector<f64>,
    y_l: &DVector<f64>,
    mode: HorizonMode,
) -> Result<GaussianLaw> {
    if y_s.len() != params.n() || y_l.len() != params.l() {
        return Err(Error::Dimension("state does not match the model".into()));
    }
    let a = &params.ulr.a_mat;
    let gamma0 = stationary_cov_sr(&params.sr)?;
    match mode {
        HorizonMode::Short { h } => {
            let ph = linalg::mat_pow(&params.sr.phi, h)?;
            let cov = linalg::symmetrize(&(&gamma0 - &ph * &gamma0 * ph.transpose()));
            Ok(GaussianLaw {
                mean: &ph * y_s + a * y_l,
                cov,
            })
        }
        HorizonMode::Long { gamma } => {
            if !(gamma > 0.0) {
                return Err(Error::InvalidParameter("horizon ratio must be > 0".into()));
            }
            let (decay, sigma) = if gamma.is_infinite() {
                (DMatrix::zeros(params.l(), params.l()), crate::model::stationary_cov_ulr(&params.ulr)?)
            } else {
                params.ulr.transition(gamma)?
            };
            Ok(GaussianLaw {
                mean: a * (decay * y_l),
                cov: linalg::symmetrize(&(a * sigma * a.transpose() + gamma0)),
            })
        }
    }
}

/// Default belt grid: `0.005, 0.010, ..., 0.995` then `0.996, ..., 0.999`.
pub fn default_rho_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (1..=199).map(|i| i as f64 * 0.005).collect();
    g.extend([0.996, 0.997, 0.998, 0.999]);
    g
}

/// Levels tabulated by default.
pub const DEFAULT_LEVELS: [f64; 5] = [0.05, 0.1, 0.5, 0.9, 0.95];

/// Empirical quantile (linear interpolation between order statistics).
pub fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Finite-sample distribution of `ρ̂` over a grid of true `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBelt {
    pub k: usize,
    pub rho_grid: Vec<f64>,
    pub levels: Vec<f64>,
    /// Sorted `ρ̂` draws per grid point.
    pub samples: Vec<Vec<f64>>,
    pub reps: usize,
    pub seed: u64,
}

impl ConfidenceBelt {
    pub fn quantile(&self, grid_index: usize, level: f64) -> f64 {
        sorted_quantile(&self.samples[grid_index], level)
    }

    pub fn curve(&self, level: f64) -> Vec<f64> {
        (0..self.rho_grid.len()).map(|i| self.quantile(i, level)).collect()
    }

    pub fn to_table(&self) -> Table {
        let mut header = vec!["rho".to_string()];
        header.extend(self.levels.iter().map(|l| format!("q_{l}")));
        let mut t = Table::new(header);
        t.comment(format!("K: {}, reps: {}, seed: {}", self.k, self.reps, self.seed));
        for (i, rho) in self.rho_grid.iter().enumerate() {
            let mut row = vec![rho.to_string()];
            row.extend(self.levels.iter().map(|&l| self.quantile(i, l).to_string()));
            t.push_strings(row);
        }
        t
    }
}

/// Simulates `y(0..=K)` with `y(0) ~ N(0,1)` and
/// `y(k) = ρ y(k-1) + sqrt(1-ρ²) ε(k)`, returning the conditional MLE of `ρ`.
pub fn simulate_rho_hat(rho: f64, k: usize, seed: u64) -> Result<f64> {
    let mut stream = GaussianStream::new(seed, streams::AUX);
    let scale = (1.0 - rho * rho).sqrt();
    let mut y = Vec::with_capacity(k + 1);
    let mut x = stream.next_normal();
    y.push(x);
    for _ in 0..k {
        x = rho * x + scale * stream.next_normal();
        y.push(x);
    }
    Ok(fit_ar1(&y)?.rho)
}

pub fn build_belt(k: usize, rho_grid: &[f64], levels: &[f64], reps: usize, seed: u64) -> Result<ConfidenceBelt> {
    if k < 2 {
        return Err(Error::InvalidParameter("belt needs K >= 2".into()));
    }
    if reps < 2 {
        return Err(Error::InvalidParameter("belt needs at least 2 replications per cell".into()));
    }
    if rho_grid.is_empty() || rho_grid.windows(2).any(|w| w[1] <= w[0]) || rho_grid.iter().any(|r| !(*r > 0.0 && *r < 1.0)) {
        return Err(Error::InvalidParameter("belt grid must be increasing inside (0,1)".into()));
    }
    if levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(Error::InvalidParameter("belt levels must lie in (0,1)".into()));
    }
    let mut levels = levels.to_vec();
    levels.sort_by(f64::total_cmp);
    let samples = rho_grid
        .par_iter()
        .enumerate()
        .map(|(i, &rho)| {
            let cell_seed = derive_seed(seed, i as u64);
            let mut draws = (0..reps)
                .map(|r| simulate_rho_hat(rho, k, derive_seed(cell_seed, r as u64)))
                .collect::<Result<Vec<_>>>()?;
            draws.sort_by(f64::total_cmp);
            Ok(draws)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConfidenceBelt {
        k,
        rho_grid: rho_grid.to_vec(),
        levels,
        samples,
        reps,
        seed,
    })
}

/// Confidence set for `ρ` and the implied drift interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoInterval {
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub theta_lo: f64,
    pub theta_hi: f64,
    /// The set reaches the smallest grid value.
    pub clipped_low: bool,
    /// The set reaches the largest grid value.
    pub clipped_high: bool,
    /// No grid segment satisfied the belt; the whole grid is returned.
    pub empty: bool,
}

impl RhoInterval {
    pub fn contains(&self, rho: f64) -> bool {
        self.rho_lo <= rho && rho <= self.rho_hi
    }
}

/// Sub-interval of `[0,1]` where `a + b t ≤ 0`.
fn linear_le_zero(a: f64, b: f64) -> Option<(f64, f64)> {
    if b == 0.0 {
        return (a <= 0.0).then_some((0.0, 1.0));
    }
    let root = -a / b;
    let (lo, hi) = if b > 0.0 { (0.0, root.min(1.0)) } else { (root.max(0.0), 1.0) };
    (lo <= hi).then_some((lo, hi))
}

/// `{ρ : q_low(ρ) ≤ ρ̂ ≤ q_high(ρ)}` with curves interpolated linearly
/// between grid points; the smallest interval containing the set.
pub fn invert_belt(belt: &ConfidenceBelt, rho_hat: f64, low_level: f64, high_level: f64) -> Result<RhoInterval> {
    if !(low_level < high_level) || !(low_level > 0.0) || !(high_level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "belt levels must satisfy 0 < {low_level} < {high_level} < 1"
        )));
    }
    let lo_curve = belt.curve(low_level);
    let hi_curve = belt.curve(high_level);
    let grid = &belt.rho_grid;
    let mut hull: Option<(f64, f64)> = None;
    let mut absorb = |a: f64, b: f64| {
        hull = Some(match hull {
            None => (a, b),
            Some((x, y)) => (x.min(a), y.max(b)),
        });
    };
    if grid.len() == 1 {
        if lo_curve[0] <= rho_hat && rho_hat <= hi_curve[0] {
            absorb(grid[0], grid[0]);
        }
    }
    for i in 0..grid.len().saturating_sub(1) {
        let (r0, r1) = (grid[i], grid[i + 1]);
        // q_low(t) - ρ̂ ≤ 0 and ρ̂ - q_high(t) ≤ 0 for t ∈ [0,1].
        let a = linear_le_zero(lo_curve[i] - rho_hat, lo_curve[i + 1] - lo_curve[i]);
        let b = linear_le_zero(rho_hat - hi_curve[i], hi_curve[i] - hi_curve[i + 1]);
        if let (Some(a), Some(b)) = (a, b) {
            let (t0, t1) = (a.0.max(b.0), a.1.min(b.1));
            if t0 <= t1 {
                absorb(r0 + t0 * (r1 - r0), r0 + t1 * (r1 - r0));
            }
        }
    }
    let first = grid[0];
    let last = *grid.last().expect("non-empty grid");
    let (rho_lo, rho_hi, empty) = match hull {
        Some((a, b)) => (a, b, false),
        None => (first, last, true),
    };
    let k = belt.k as f64;
    let (clipped_low, clipped_high) = (rho_lo <= first, rho_hi >= last);
    // A set reaching the edge of the grid is open beyond it: up to the unit
    // root on the right, to no persistence on the left.
    Ok(RhoInterval {
        rho_lo,
        rho_hi,
        theta_lo: if clipped_high { 0.0 } else { -k * rho_hi.ln() },
        theta_hi: if clipped_low { f64::INFINITY } else { -k * rho_lo.ln() },
        clipped_low,
        clipped_high,
        empty,
    })
}

/// Equal-tailed inversion at confidence `1 - α₁`.
pub fn invert_two_sided(belt: &ConfidenceBelt, rho_hat: f64, alpha1: f64) -> Result<RhoInterval> {
    invert_belt(belt, rho_hat, alpha1 / 2.0, 1.0 - alpha1 / 2.0)
}

/// Plug-in parameters of the univariate long-horizon quantile other than the
/// drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileInputs {
    pub eta: f64,
    pub s: f64,
    /// Current long-run level `y_l(1)`.
    pub y_l: f64,
    /// Horizon as a fraction of the sample length.
    pub gamma: f64,
}

impl QuantileInputs {
    pub fn quantile(&self, theta: f64, alpha: f64) -> Result<f64> {
        if theta < 0.0 || theta.is_nan() {
            return Err(Error::InvalidParameter(format!("drift must be >= 0, got {theta}")));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter("horizon ratio must be > 0".into()));
        }
        quantile_unchecked(theta, alpha, self.gamma, self.eta, self.s, self.y_l)
    }

    fn mirrored(&self) -> Self {
        Self { y_l: -self.y_l, ..*self }
    }
}

const THETA_SCAN: usize = 256;

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs() + b.abs()) {
        if fc <= fd {
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

/// `max_{θ ∈ [θ_lo, θ_hi]} q(θ)` at level `1 - α + α₁`, scanned on 256
/// points plus the endpoints and refined around the best interior point.
/// Returns the bound and the maximizing drift.
pub fn bonferroni_bound(alpha: f64, alpha1: f64, theta_lo: f64, theta_hi: f64, inputs: &QuantileInputs) -> Result<(f64, f64)> {
    if !(alpha1 > 0.0 && alpha1 < alpha && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("need 0 < α₁ = {alpha1} < α = {alpha} < 1")));
    }
    if theta_lo.is_nan() || theta_hi.is_nan() || theta_lo > theta_hi {
        return Err(Error::InvalidParameter(format!("empty drift interval [{theta_lo}, {theta_hi}]")));
    }
    let tail = alpha - alpha1;
    let q = |th: f64| inputs.quantile(th, tail);
    if theta_lo == theta_hi {
        return Ok((q(theta_lo)?, theta_lo));
    }
    // Interior scan points are geometric between positive surrogates of the
    // endpoints; the endpoints themselves (possibly 0 or ∞) are evaluated exactly.
    let upper = if theta_hi.is_infinite() { theta_lo.max(1.0) * 1e6 } else { theta_hi };
    let lower = if theta_lo > 0.0 { theta_lo } else { upper * 1e-9 };
    let point = |i: usize| lower * (upper / lower).powf(i as f64 / (THETA_SCAN + 1) as f64);
    let mut best = (q(theta_lo)?, theta_lo);
    let mut best_index = 0;
    for i in 1..=THETA_SCAN + 1 {
        let th = if i == THETA_SCAN + 1 { theta_hi } else { point(i) };
        let v = q(th)?;
        if v > best.0 {
            best = (v, th);
            best_index = i;
        }
    }
    if (1..=THETA_SCAN).contains(&best_index) {
        let (a, b) = (point(best_index - 1), point(best_index + 1));
        let th = golden_min(|x| q(x).map(|v| -v).unwrap_or(f64::INFINITY), a, b, 1e-12);
        let v = q(th)?;
        if v > best.0 {
            best = (v, th);
        }
    }
    Ok(best)
}

/// Min-max prediction bound with its decomposition into the plug-in quantile,
/// the drift-shift term and the level-shift term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionInterval {
    pub gamma: f64,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub alpha1_star: f64,
    pub theta_star: f64,
    pub theta_hat: f64,
    pub rho_interval: RhoInterval,
    pub plug_in: f64,
    pub decomposition: [f64; 3],
}

const ALPHA1_GRID: usize = 64;

/// `θ̂ = -K ln|ρ̂|` (infinite at zero).
pub fn theta_from_rho(rho_hat: f64, k: f64) -> f64 {
    let r = rho_hat.abs();
    if r > 0.0 {
        -k * r.ln()
    } else {
        f64::INFINITY
    }
}

/// One-sided upper bound `Q*(α) = min_{α₁} max_{θ ∈ I(1-α₁)} q(1-α+α₁; θ)`.
pub fn minmax_interval(alpha: f64, belt: &ConfidenceBelt, rho_hat: f64, inputs: &QuantileInputs) -> Result<PredictionInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("α must be in (0,1), got {alpha}")));
    }
    let evaluate = |a1: f64| -> Result<(f64, f64, RhoInterval)> {
        let set = invert_two_sided(belt, rho_hat.abs(), a1)?;
        let (b, th) = bonferroni_bound(alpha, a1, set.theta_lo, set.theta_hi, inputs)?;
        Ok((b, th, set))
    };
    let grid_point = |i: usize| alpha * i as f64 / (ALPHA1_GRID + 1) as f64;
    let mut best_i = 1;
    let mut best = evaluate(grid_point(1))?;
    for i in 2..=ALPHA1_GRID {
        let cand = evaluate(grid_point(i))?;
        if cand.0 < best.0 {
            best = cand;
            best_i = i;
        }
    }
    let mut alpha1_star = grid_point(best_i);
    let refined = golden_min(
        |a1| evaluate(a1).map(|r| r.0).unwrap_or(f64::INFINITY),
        grid_point(best_i - 1).max(alpha * 1e-6),
        grid_point(best_i + 1),
        1e-10,
    );
    let cand = evaluate(refined)?;
    if cand.0 < best.0 {
        best = cand;
        alpha1_star = refined;
    }
    let (_, theta_star, rho_interval) = best;
    let theta_hat = theta_from_rho(rho_hat, belt.k as f64);
    let plug_in = inputs.quantile(theta_hat, alpha)?;
    let at_star = inputs.quantile(theta_star, alpha)?;
    let q_star = inputs.quantile(theta_star, alpha - alpha1_star)?;
    Ok(PredictionInterval {
        gamma: inputs.gamma,
        level: 1.0 - alpha,
        lower: f64::NEG_INFINITY,
        upper: q_star,
        alpha1_star,
        theta_star,
        theta_hat,
        rho_interval,
        plug_in,
        decomposition: [plug_in, at_star - plug_in, q_star - at_star],
    })
}

/// Two-sided interval with `α/2` in each tail; the lower end is the mirrored
/// upper bound of `-y`.
pub fn minmax_two_sided(alpha: f64, belt: &ConfidenceBelt, rho_hat: f64, inputs: &QuantileInputs) -> Result<(f64, f64)> {
    let up = minmax_interval(alpha / 2.0, belt, rho_hat, inputs)?;
    let down = minmax_interval(alpha / 2.0, belt, rho_hat, &inputs.mirrored())?;
    Ok((-down.upper, up.upper))
}

/// Quantile at the point estimate of the drift.
pub fn plug_in_interval(alpha: f64, theta_hat: f64, inputs: &QuantileInputs) -> Result<f64> {
    if !theta_hat.is_finite() && theta_hat != f64::INFINITY {
        return Err(Error::InvalidParameter("drift estimate is not finite".into()));
    }
    inputs.quantile(theta_hat, alpha)
}

/// Two-sided plug-in interval with `α/2` in each tail.
pub fn plug_in_two_sided(alpha: f64, theta_hat: f64, inputs: &QuantileInputs) -> Result<(f64, f64)> {
    let up = plug_in_interval(alpha / 2.0, theta_hat, inputs)?;
    let down = plug_in_interval(alpha / 2.0, theta_hat, &inputs.mirrored())?;
    Ok((-down, up))
}

/// Forecast inputs for coordinate `coordinate` (0-based) of a one-factor
/// report: `y_i = a_i y_l + y_s,i`. Returns the inputs, `ρ̂` and `K`.
pub fn inputs_from_report(report: &ReportTable, coordinate: usize, gamma: f64) -> Result<(QuantileInputs, f64, usize)> {
    let a = report.require("a")?;
    if a.ncols() != 1 {
        return Err(Error::UnsupportedDimension("prediction needs exactly one long-run factor".into()));
    }
    if coordinate >= a.nrows() {
        return Err(Error::Dimension(format!("coordinate {} out of range 1..={}", coordinate + 1, a.nrows())));
    }
    let gamma0 = report.require("gamma0")?;
    let y_l = report.require("y_l")?;
    let rho = report.require("rho")?[(0, 0)];
    let s = report.require("s")?[(0, 0)];
    let k = report.require("k_scale")?[(0, 0)];
    let a_i = a[(coordinate, 0)];
    Ok((
        QuantileInputs {
            eta: gamma0[(coordinate, coordinate)].max(0.0).sqrt(),
            s: a_i.abs() * if s.is_finite() { s } else { 0.0 },
            y_l: a_i * y_l[(y_l.nrows() - 1, 0)],
            gamma,
        },
        rho,
        k.round() as usize,
    ))
}

/// Long format of a one-sided min-max interval and its decomposition.
pub fn interval_table(pi: &PredictionInterval) -> Table {
    let mut t = Table::new([
        "gamma",
        "level",
        "lower",
        "upper",
        "plug_in",
        "drift_shift",
        "level_shift",
        "alpha1_star",
        "theta_star",
        "theta_hat",
        "rho_lo",
        "rho_hi",
        "clipped",
    ]);
    let ri = &pi.rho_interval;
    t.push_strings(vec![
        pi.gamma.to_string(),
        pi.level.to_string(),
        pi.lower.to_string(),
        pi.upper.to_string(),
        pi.decomposition[0].to_string(),
        pi.decomposition[1].to_string(),
        pi.decomposition[2].to_string(),
        pi.alpha1_star.to_string(),
        pi.theta_star.to_string(),
        pi.theta_hat.to_string(),
        ri.rho_lo.to_string(),
        ri.rho_hi.to_string(),
        (ri.clipped_low || ri.clipped_high || ri.empty).to_string(),
    ]);
    t
}
