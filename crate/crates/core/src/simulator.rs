//! Seeded simulation of the triangular array `y_T(t) = y_s(t) + A y_l(t/T)`,
//! of the OU factor on arbitrary grids and of the local-to-unity model zoo.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::psd_factor;
use crate::model::{discretize_ulr, stationary_cov_sr, stationary_cov_ulr, AConvention, ModelParams, ULRParams};
use crate::rng::{derive_seed, streams, GaussianStream};
use crate::series::Series;
use crate::table::Table;

/// `out = m x` for a dense matrix and slices.
fn mul_into(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..x.len()).map(|j| m[(i, j)] * x[j]).sum();
    }
}

/// Draws `N(0, f f')` given the factor `f`.
fn draw_with_factor(f: &DMatrix<f64>, stream: &mut GaussianStream) -> Vec<f64> {
    let mut z = vec![0.0; f.ncols()];
    stream.fill_normal(&mut z);
    let mut out = vec![0.0; f.nrows()];
    mul_into(f, &z, &mut out);
    out
}

/// Simulated trajectory with its latent components. Row `t-1` of each series
/// holds date `t = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayPath {
    pub t_max: usize,
    pub y: Series,
    pub y_s: Series,
    /// `y_l(t/T)`, dimension `L`.
    pub y_l: Series,
    /// `y_l(0)`, the stationary starting value.
    pub y_l_init: DVector<f64>,
    /// Loading matrix actually used to build `y`.
    pub a_mat: DMatrix<f64>,
    pub convention: AConvention,
    pub seed: u64,
}

impl ArrayPath {
    pub fn n(&self) -> usize {
        self.y.dim()
    }

    pub fn l(&self) -> usize {
        self.y_l.dim()
    }

    /// Largest violation of `y = y_s + A y_l` over the path.
    pub fn decomposition_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut buf = vec![0.0; self.n()];
        for t in 0..self.t_max {
            mul_into(&self.a_mat, self.y_l.row(t), &mut buf);
            for i in 0..self.n() {
                worst = worst.max((self.y.row(t)[i] - self.y_s.row(t)[i] - buf[i]).abs());
            }
        }
        worst
    }

    pub fn to_table(&self) -> Table {
        let n = self.n();
        let l = self.l();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("y_{i}")));
        header.extend((1..=n).map(|i| format!("ys_{i}")));
        header.extend((1..=l).map(|j| format!("yl_{j}")));
        let mut table = Table::new(header);
        table.comment(format!("seed: {}", self.seed));
        table.comment(format!("a_convention: {}", self.convention.as_str()));
        for t in 0..self.t_max {
            let mut row = vec![(t + 1).to_string()];
            row.extend(self.y.row(t).iter().map(|v| v.to_string()));
            row.extend(self.y_s.row(t).iter().map(|v| v.to_string()));
            row.extend(self.y_l.row(t).iter().map(|v| v.to_string()));
            table.push_strings(row);
        }
        table
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_table().write(path)
    }
}

/// Exact one-step sampler `x ← ρ x + Σ^{1/2} ε`.
#[derive(Debug, Clone)]
pub struct VarStepper {
    pub rho: DMatrix<f64>,
    pub chol: DMatrix<f64>,
    z: Vec<f64>,
    tmp: Vec<f64>,
}

impl VarStepper {
    pub fn new(rho: DMatrix<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let chol = psd_factor(cov)?;
        let d = rho.nrows();
        Ok(Self {
            rho,
            chol,
            z: vec![0.0; d],
            tmp: vec![0.0; d],
        })
    }

    /// OU transition over a step `dt` on the factor time scale.
    pub fn ou(ulr: &ULRParams, dt: f64) -> Result<Self> {
        let (rho, sigma) = ulr.transition(dt)?;
        Self::new(rho, &sigma)
    }

    pub fn step(&mut self, x: &mut [f64], stream: &mut GaussianStream) {
        stream.fill_normal(&mut self.z);
        mul_into(&self.rho, x, &mut self.tmp);
        for (i, xi) in x.iter_mut().enumerate() {
            let shock: f64 = self.z.iter().enumerate().map(|(j, z)| self.chol[(i, j)] * z).sum();
            *xi = self.tmp[i] + shock;
        }
    }
}

/// Simulates the array with `A` used as given.
pub fn simulate_array(params: &ModelParams, t_max: usize, seed: u64) -> Result<ArrayPath> {
    simulate_array_with(params, t_max, seed, AConvention::Raw)
}

/// Simulates the array; with [`AConvention::Normalized`] the columns of `A`
/// are orthonormalized first.
pub fn simulate_array_with(
    params: &ModelParams,
    t_max: usize,
    seed: u64,
    convention: AConvention,
) -> Result<ArrayPath> {
    if t_max < 2 {
        return Err(Error::InvalidParameter(format!("T must be >= 2, got {t_max}")));
    }
    let params = match convention {
        AConvention::Raw => params.clone(),
        AConvention::Normalized => params.with_normalized_a()?,
    };
    let n = params.n();
    let l = params.l();
    let a_mat = params.ulr.a_mat.clone();

    let mut sr_step = VarStepper::new(params.sr.phi.clone(), &params.sr.omega())?;
    let disc = discretize_ulr(&params.ulr, t_max as u64)?;
    let mut lr_step = VarStepper::new(disc.rho_mat, &disc.sigma_t)?;

    let mut sr_init = GaussianStream::new(seed, streams::SHORT_RUN_INIT);
    let mut lr_init = GaussianStream::new(seed, streams::LONG_RUN_INIT);
    let mut sr_noise = GaussianStream::new(seed, streams::SHORT_RUN);
    let mut lr_noise = GaussianStream::new(seed, streams::LONG_RUN);

    let mut xs = draw_with_factor(&psd_factor(&stationary_cov_sr(&params.sr)?)?, &mut sr_init);
    let mut xl = draw_with_factor(&psd_factor(&stationary_cov_ulr(&params.ulr)?)?, &mut lr_init);
    let y_l_init = DVector::from_column_slice(&xl);

    let mut y = Series::with_capacity(n, t_max);
    let mut y_s = Series::with_capacity(n, t_max);
    let mut y_l = Series::with_capacity(l, t_max);
    let mut obs = vec![0.0; n];
    for _ in 0..t_max {
        sr_step.step(&mut xs, &mut sr_noise);
        lr_step.step(&mut xl, &mut lr_noise);
        mul_into(&a_mat, &xl, &mut obs);
        for i in 0..n {
            obs[i] += xs[i];
        }
        y.push(&obs)?;
        y_s.push(&xs)?;
        y_l.push(&xl)?;
    }
    Ok(ArrayPath {
        t_max,
        y,
        y_s,
        y_l,
        y_l_init,
        a_mat,
        convention,
        seed,
    })
}

/// Exact OU sampling on an increasing grid, started from the stationary law.
pub fn simulate_ou(ulr: &ULRParams, grid: &[f64], seed: u64) -> Result<Series> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    if grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidParameter("grid has non-finite points".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("grid must be strictly increasing".into()));
    }
    let mut init = GaussianStream::new(seed, streams::LONG_RUN_INIT);
    let mut noise = GaussianStream::new(seed, streams::LONG_RUN);
    let mut x = draw_with_factor(&psd_factor(&stationary_cov_ulr(ulr)?)?, &mut init);
    let mut out = Series::with_capacity(ulr.l(), grid.len());
    out.push(&x)?;
    let mut stepper: Option<(f64, VarStepper)> = None;
    for w in grid.windows(2) {
        let dt = w[1] - w[0];
        let reuse = matches!(&stepper, Some((prev, _)) if (prev - dt).abs() <= 1e-14 * dt);
        if !reuse {
            stepper = Some((dt, VarStepper::ou(ulr, dt)?));
        }
        let (_, s) = stepper.as_mut().expect("stepper initialized");
        s.step(&mut x, &mut noise);
        out.push(&x)?;
    }
    Ok(out)
}

/// Tags of the local-to-unity comparison models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LtuTag {
    RandomWalk,
    Singular,
    LtuZeroInit,
    LtuStationary,
    LtuScaled,
    RwScaled,
    Ulr,
    TimeDeformed,
}

impl LtuTag {
    pub const ALL: [LtuTag; 8] = [
        LtuTag::RandomWalk,
        LtuTag::Singular,
        LtuTag::LtuZeroInit,
        LtuTag::LtuStationary,
        LtuTag::LtuScaled,
        LtuTag::RwScaled,
        LtuTag::Ulr,
        LtuTag::TimeDeformed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LtuTag::RandomWalk => "random_walk",
            LtuTag::Singular => "singular",
            LtuTag::LtuZeroInit => "ltu_zero_init",
            LtuTag::LtuStationary => "ltu_stationary",
            LtuTag::LtuScaled => "ltu_scaled",
            LtuTag::RwScaled => "rw_scaled",
            LtuTag::Ulr => "ulr",
            LtuTag::TimeDeformed => "time_deformed",
        }
    }

    pub fn needs_c(&self) -> bool {
        !matches!(self, LtuTag::RandomWalk | LtuTag::Singular | LtuTag::RwScaled)
    }
}

impl fmt::Display for LtuTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LtuTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LtuTag::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown LTU variant '{s}'")))
    }
}

/// A local-to-unity comparison model with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtuVariant {
    pub tag: LtuTag,
    pub c: Option<f64>,
    pub sigma: f64,
    pub d: Option<f64>,
}

impl LtuVariant {
    /// Validates that `c` is given exactly for the mean-reverting tags and `d`
    /// exactly for [`LtuTag::TimeDeformed`].
    pub fn new(tag: LtuTag, c: Option<f64>, sigma: f64, d: Option<f64>) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
        }
        match (tag.needs_c(), c) {
            (true, None) => return Err(Error::InvalidParameter(format!("{tag} needs c"))),
            (false, Some(_)) => return Err(Error::InvalidParameter(format!("{tag} takes no c"))),
            (true, Some(c)) if !(c > 0.0) => {
                return Err(Error::InvalidParameter(format!("c must be > 0, got {c}")))
            }
            _ => {}
        }
        match (tag == LtuTag::TimeDeformed, d) {
            (true, None) => return Err(Error::InvalidParameter("time_deformed needs d".into())),
            (false, Some(_)) => return Err(Error::InvalidParameter(format!("{tag} takes no d"))),
            (true, Some(d)) if !(d > 0.0 && d <= 1.0) => {
                return Err(Error::InvalidParameter(format!("d must be in (0,1], got {d}")))
            }
            _ => {}
        }
        Ok(Self { tag, c, sigma, d })
    }

    /// Builds a variant from its tag, filling only the parameters it uses.
    pub fn with_defaults(tag: LtuTag, c: f64, sigma: f64, d: f64) -> Result<Self> {
        Self::new(
            tag,
            tag.needs_c().then_some(c),
            sigma,
            (tag == LtuTag::TimeDeformed).then_some(d),
        )
    }

    /// `(ρ, innovation sd, initial sd)` of the recursion for a given `T`.
    fn recursion(&self, t_max: usize) -> (f64, f64, f64) {
        let t = t_max as f64;
        let c = self.c.unwrap_or(0.0);
        let s = self.sigma;
        match self.tag {
            LtuTag::RandomWalk => (1.0, s, 0.0),
            LtuTag::Singular => (1.0, 0.0, s),
            LtuTag::LtuZeroInit => ((-c / t).exp(), s, 0.0),
            LtuTag::LtuStationary => {
                let r = (-c / t).exp();
                (r, s, s / (1.0 - r * r).sqrt())
            }
            LtuTag::LtuScaled => ((-c / t).exp(), s / t, 0.0),
            LtuTag::RwScaled => (1.0, s / t, 0.0),
            LtuTag::Ulr | LtuTag::TimeDeformed => {
                let scale = match self.tag {
                    LtuTag::TimeDeformed => t.powf(self.d.unwrap_or(1.0)),
                    _ => t,
                };
                let r = (-c / scale).exp();
                (r, s * (1.0 - r * r).sqrt(), s)
            }
        }
    }

    /// Exact variance of `y_T(t)`.
    pub fn theoretical_variance(&self, t_max: usize, t: usize) -> f64 {
        let (r, e, i) = self.recursion(t_max);
        let r2 = r * r;
        let tf = t as f64;
        let geometric = if (1.0 - r2).abs() < 1e-300 {
            tf
        } else {
            // (1 - r^{2t}) / (1 - r²), stable for r close to one.
            -(2.0 * tf * r.ln()).exp_m1() / (1.0 - r2)
        };
        r2.powf(tf) * i * i + e * e * geometric
    }
}

impl fmt::Display for LtuVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(sigma={}", self.tag, self.sigma)?;
        if let Some(c) = self.c {
            write!(f, ", c={c}")?;
        }
        if let Some(d) = self.d {
            write!(f, ", d={d}")?;
        }
        f.write_str(")")
    }
}

/// Path `y_T(1..T)` of an LTU variant.
pub fn simulate_ltu(variant: &LtuVariant, t_max: usize, seed: u64) -> Result<Vec<f64>> {
    if t_max < 1 {
        return Err(Error::InvalidParameter("T must be >= 1".into()));
    }
    let (r, e, i) = variant.recursion(t_max);
    let mut init = GaussianStream::new(seed, streams::LONG_RUN_INIT);
    let mut noise = GaussianStream::new(seed, streams::LONG_RUN);
    let mut y = i * init.next_normal();
    let mut out = Vec::with_capacity(t_max);
    for _ in 0..t_max {
        y = r * y + e * noise.next_normal();
        out.push(y);
    }
    Ok(out)
}

/// Monte-Carlo estimate of `max_t P(|y_T(t)| > level)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimate {
    pub prob: f64,
    pub std_err: f64,
    /// Date `t` (1-based) attaining the maximum.
    pub t_at_max: usize,
    pub reps: usize,
}

/// Sums per-date contributions of `reps` replications. Replications are folded
/// in fixed chunks so the result does not depend on the thread schedule.
fn per_date_sum<F>(reps: usize, t_max: usize, f: F) -> Vec<u64>
where
    F: Fn(usize, &mut [u64]) + Sync,
{
    const CHUNK: usize = 64;
    (0..reps.div_ceil(CHUNK))
        .into_par_iter()
        .map(|ci| {
            let mut acc = vec![0u64; t_max];
            for k in ci * CHUNK..((ci + 1) * CHUNK).min(reps) {
                f(k, &mut acc);
            }
            acc
        })
        .reduce(
            || vec![0u64; t_max],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        )
}

pub fn tail_prob(variant: &LtuVariant, t_max: usize, level: f64, reps: usize, seed: u64) -> Result<TailEstimate> {
    if reps < 100 {
        return Err(Error::InvalidParameter(format!("tail_prob needs reps >= 100, got {reps}")));
    }
    if t_max < 1 {
        return Err(Error::InvalidParameter("T must be >= 1".into()));
    }
    let counts = per_date_sum(reps, t_max, |k, acc| {
        let path = simulate_ltu(variant, t_max, derive_seed(seed, k as u64)).expect("validated T");
        for (a, y) in acc.iter_mut().zip(path) {
            if y.abs() > level {
                *a += 1;
            }
        }
    });
    let (t_idx, &max_count) = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("T >= 1");
    let p = max_count as f64 / reps as f64;
    Ok(TailEstimate {
        prob: p,
        std_err: (p * (1.0 - p) / reps as f64).sqrt(),
        t_at_max: t_idx + 1,
        reps,
    })
}

/// Monte-Carlo variance of `y_T(t)` at a single date `t` (1-based).
pub fn ltu_variance_at(variant: &LtuVariant, t_max: usize, t: usize, reps: usize, seed: u64) -> Result<f64> {
    if t == 0 || t > t_max {
        return Err(Error::InvalidParameter(format!("date {t} outside 1..={t_max}")));
    }
    if reps < 2 {
        return Err(Error::InvalidParameter("need at least 2 replications".into()));
    }
    let values: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|k| simulate_ltu(variant, t_max, derive_seed(seed, k as u64)).map(|p| p[t - 1]))
        .collect::<Result<_>>()?;
    let mean = values.iter().sum::<f64>() / reps as f64;
    Ok(values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64)
}
