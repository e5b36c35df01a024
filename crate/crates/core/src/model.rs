//! Model parameterization, exact discretization of the long-run OU factor and
//! theoretical second-order quantities.
//!
//! The short-run (SR) block is the VAR(1) `y_s(t) = Φ y_s(t-1) + Ω^{1/2} ε_t`.
//! The ultra-long-run (ULR) block is the OU diffusion
//! `d y_l(τ) = -Θ y_l(τ) dτ + S dW_τ` observed at `τ = t/T`, so on the
//! calendar grid it is the VAR(1) with coefficient `exp(-Θ/T)` and innovation
//! covariance `Σ_T` solving `(Θ⊕Θ) vec Σ_T = (I - exp(-(Θ⊕Θ)/T)) vec(SS')`.
//!
//! # Printed versus stationary second-order formulas
//!
//! The closed forms commonly quoted for the univariate autocovariance and
//! spectrum of this model do not agree with the stationary two-component
//! process: the quoted ULR autocovariance term `(s²/2θ)(1 - e^{-2hθ/T})`
//! vanishes at lag zero and grows with the lag, and the quoted spectrum's ULR
//! coefficient `s²/(2πθ)` integrates to twice the ULR variance. Both forms are
//! kept ([`AcovVariant::Printed`], [`SpectrumVariant::Printed`]) next to the
//! internally consistent ones ([`AcovVariant::StationaryOu`],
//! [`SpectrumVariant::Normalized`]); the experiments module audits them
//! against simulation.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::config::KvDocument;
use crate::error::{Error, Result};
use crate::linalg::{self, ensure_square};

const LYAPUNOV_TOL: f64 = 1e-12;
const LYAPUNOV_MAX_ITER: usize = 1_000_000;

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} has non-finite entries")))
    }
}

/// Short-run VAR(1) block.
#[derive(Debug, Clone, PartialEq)]
pub struct SRParams {
    /// Autoregressive matrix `Φ` (n×n).
    pub phi: DMatrix<f64>,
    /// `Ω^{1/2}`, lower-triangular by convention.
    pub omega_half: DMatrix<f64>,
}

impl SRParams {
    pub fn new(phi: DMatrix<f64>, omega_half: DMatrix<f64>) -> Result<Self> {
        let n = ensure_square(&phi, "Φ")?;
        if omega_half.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "Ω^1/2 must be {n}x{n}, got {}x{}",
                omega_half.nrows(),
                omega_half.ncols()
            )));
        }
        check_finite(&phi, "Φ")?;
        check_finite(&omega_half, "Ω^1/2")?;
        let radius = linalg::spectral_radius(&phi);
        if radius >= 1.0 {
            return Err(Error::NonStationary(radius));
        }
        Ok(Self { phi, omega_half })
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    /// `Ω = Ω^{1/2} Ω^{1/2}'`.
    pub fn omega(&self) -> DMatrix<f64> {
        &self.omega_half * self.omega_half.transpose()
    }
}

/// Ultra-long-run OU block.
#[derive(Debug, Clone, PartialEq)]
pub struct ULRParams {
    /// Drift `Θ` (L×L).
    pub theta: DMatrix<f64>,
    /// Diffusion `S` (L×L). Zero is accepted for degenerate simulations.
    pub s_mat: DMatrix<f64>,
    /// Factor sensitivities `A` (n×L).
    pub a_mat: DMatrix<f64>,
}

impl ULRParams {
    pub fn new(theta: DMatrix<f64>, s_mat: DMatrix<f64>, a_mat: DMatrix<f64>) -> Result<Self> {
        let l = ensure_square(&theta, "Θ")?;
        if l == 0 {
            return Err(Error::Dimension("Θ must be at least 1x1".into()));
        }
        if s_mat.shape() != (l, l) {
            return Err(Error::Dimension(format!("S must be {l}x{l}")));
        }
        if a_mat.ncols() != l {
            return Err(Error::Dimension(format!("A must have {l} columns")));
        }
        if l > a_mat.nrows() {
            return Err(Error::Dimension(format!(
                "number of long-run factors {l} exceeds dimension {}",
                a_mat.nrows()
            )));
        }
        check_finite(&theta, "Θ")?;
        check_finite(&s_mat, "S")?;
        check_finite(&a_mat, "A")?;
        let decay = linalg::spectral_radius(&linalg::mat_exp(&(-&theta))?);
        if decay >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "exp(-Θ) has spectral radius {decay:.6} >= 1"
            )));
        }
        Ok(Self {
            theta,
            s_mat,
            a_mat,
        })
    }

    pub fn l(&self) -> usize {
        self.theta.nrows()
    }

    pub fn ss(&self) -> DMatrix<f64> {
        &self.s_mat * self.s_mat.transpose()
    }

    /// Exact transition over a time step `dt` on the OU scale:
    /// `(exp(-Θ dt), Σ_dt)`.
    pub fn transition(&self, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!("time step must be > 0, got {dt}")));
        }
        let l = self.l();
        let rho = linalg::mat_exp(&(-&self.theta * dt))?;
        let ks = linalg::kron_sum(&self.theta)?;
        let decay = linalg::mat_exp(&(-&ks * dt))?;
        let rhs = (DMatrix::<f64>::identity(l * l, l * l) - decay) * linalg::vec_of(&self.ss());
        let rhs = DMatrix::from_column_slice(l * l, 1, rhs.as_slice());
        let vec_sigma = linalg::solve(&ks, &rhs, "Θ⊕Θ (degenerate drift)")?;
        let sigma = linalg::symmetrize(&linalg::unvec(
            &DVector::from_column_slice(vec_sigma.as_slice()),
            l,
            l,
        ));
        Ok((rho, sigma))
    }

    /// Whether `A'A = I` holds to `tol`.
    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let l = self.l();
        (self.a_mat.transpose() * &self.a_mat - DMatrix::<f64>::identity(l, l)).amax() <= tol
    }

    /// Checks the identification conditions: full column rank of `A`.
    pub fn check_rank(&self) -> Result<()> {
        let svd = self.a_mat.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 1e-10 * smax.max(1e-300) {
            return Err(Error::InvalidParameter("A does not have full column rank".into()));
        }
        Ok(())
    }
}

/// Convention under which `A` was supplied to a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AConvention {
    /// `A` used exactly as given.
    Raw,
    /// `A` replaced by an orthonormal basis of its column space (`A'A = I`).
    Normalized,
}

impl AConvention {
    pub fn as_str(&self) -> &'static str {
        match self {
            AConvention::Raw => "raw",
            AConvention::Normalized => "normalized",
        }
    }
}

/// Orthonormal basis of the column space of `a`, columns signed so that their
/// first non-negligible entry is positive.
pub fn orthonormalize_columns(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)].abs() < 1e-12 {
            return Err(Error::InvalidParameter("A does not have full column rank".into()));
        }
        fix_column_sign(&mut q, j);
    }
    Ok(q)
}

/// Flips column `j` so that its first entry with magnitude above 1e-12 is positive.
pub fn fix_column_sign(m: &mut DMatrix<f64>, j: usize) {
    if let Some(first) = m.column(j).iter().copied().find(|v| v.abs() > 1e-12) {
        if first < 0.0 {
            m.column_mut(j).neg_mut();
        }
    }
}

/// Full parameter set of the SR + ULR system.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub sr: SRParams,
    pub ulr: ULRParams,
}

impl ModelParams {
    pub fn new(sr: SRParams, ulr: ULRParams) -> Result<Self> {
        if sr.n() != ulr.a_mat.nrows() {
            return Err(Error::Dimension(format!(
                "Φ is {}x{} but A has {} rows",
                sr.n(),
                sr.n(),
                ulr.a_mat.nrows()
            )));
        }
        Ok(Self { sr, ulr })
    }

    /// Univariate model `n = L = 1`.
    pub fn univariate(phi: f64, eta: f64, theta: f64, s: f64) -> Result<Self> {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        Self::new(
            SRParams::new(m(phi), m(eta))?,
            ULRParams::new(m(theta), m(s), m(1.0))?,
        )
    }

    /// Bivariate design with a single long-run factor: `Φ = diag(0.3, 0.7)`,
    /// `Ω^{1/2} = [[1, 1], [0, 2]]`, `A = (1, 1)'`, `exp(-10θ) = 0.4`, `s = 1`.
    pub fn reference_bivariate() -> Self {
        let sr = SRParams::new(
            DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, 0.7]),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]),
        )
        .expect("reference SR block is stationary");
        let ulr = ULRParams::new(
            DMatrix::from_element(1, 1, 2.5f64.ln() / 10.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
        )
        .expect("reference ULR block is valid");
        Self { sr, ulr }
    }

    pub fn n(&self) -> usize {
        self.sr.n()
    }

    pub fn l(&self) -> usize {
        self.ulr.l()
    }

    pub fn is_univariate(&self) -> bool {
        self.n() == 1 && self.l() == 1
    }

    fn scalar(&self, m: &DMatrix<f64>) -> Result<f64> {
        if !self.is_univariate() {
            return Err(Error::UnsupportedDimension(format!(
                "univariate accessor used with n = {}, L = {}",
                self.n(),
                self.l()
            )));
        }
        Ok(m[(0, 0)])
    }

    pub fn phi(&self) -> Result<f64> {
        self.scalar(&self.sr.phi)
    }

    pub fn eta(&self) -> Result<f64> {
        self.scalar(&self.sr.omega_half)
    }

    pub fn theta(&self) -> Result<f64> {
        self.scalar(&self.ulr.theta)
    }

    pub fn s(&self) -> Result<f64> {
        self.scalar(&self.ulr.s_mat)
    }

    /// Same model with `A` replaced by its orthonormalized columns.
    pub fn with_normalized_a(&self) -> Result<Self> {
        let mut out = self.clone();
        out.ulr.a_mat = orthonormalize_columns(&self.ulr.a_mat)?;
        Ok(out)
    }

    /// Unconditional covariance `Γ_s(0) + A Σ A'` of the observed array.
    pub fn observed_cov(&self) -> Result<DMatrix<f64>> {
        let a = &self.ulr.a_mat;
        Ok(stationary_cov_sr(&self.sr)? + a * stationary_cov_ulr(&self.ulr)? * a.transpose())
    }

    pub fn from_kv(doc: &KvDocument) -> Result<Self> {
        let n: usize = doc.required("n")?;
        let l: usize = doc.parsed("L")?.unwrap_or(1);
        let mat = |key: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            let v = doc
                .numbers(key)?
                .ok_or_else(|| Error::Config(format!("missing key '{key}'")))?;
            if v.len() != rows * cols {
                return Err(Error::Config(format!(
                    "key '{key}' needs {} entries, got {}",
                    rows * cols,
                    v.len()
                )));
            }
            Ok(DMatrix::from_row_slice(rows, cols, &v))
        };
        Self::new(
            SRParams::new(mat("phi", n, n)?, mat("omega_half", n, n)?)?,
            ULRParams::new(mat("theta", l, l)?, mat("s", l, l)?, mat("a", n, l)?)?,
        )
    }

    pub fn to_kv(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        write_kv(&mut doc, self);
        doc
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Writes the documented model keys into `doc`.
pub fn write_kv(doc: &mut KvDocument, p: &ModelParams) {
    doc.set("n", p.n().to_string());
    doc.set("L", p.l().to_string());
    doc.set_numbers("phi", &row_major(&p.sr.phi));
    doc.set_numbers("omega_half", &row_major(&p.sr.omega_half));
    doc.set_numbers("a", &row_major(&p.ulr.a_mat));
    doc.set_numbers("theta", &row_major(&p.ulr.theta));
    doc.set_numbers("s", &row_major(&p.ulr.s_mat));
}

/// Calendar-time VAR(1) form of the ULR factor for a given `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedULR {
    /// `exp(-Θ/T)`.
    pub rho_mat: DMatrix<f64>,
    /// Innovation covariance `Σ_T`.
    pub sigma_t: DMatrix<f64>,
    pub t: u64,
}

pub fn discretize_ulr(ulr: &ULRParams, t: u64) -> Result<DiscretizedULR> {
    if t < 1 {
        return Err(Error::InvalidParameter("T must be >= 1".into()));
    }
    let (rho_mat, sigma_t) = ulr.transition(1.0 / t as f64)?;
    Ok(DiscretizedULR {
        rho_mat,
        sigma_t,
        t,
    })
}

/// Stationary covariance `Σ` of the OU factor: `(Θ⊕Θ) vec Σ = vec(SS')`.
pub fn stationary_cov_ulr(ulr: &ULRParams) -> Result<DMatrix<f64>> {
    let l = ulr.l();
    let ks = linalg::kron_sum(&ulr.theta)?;
    let rhs = DMatrix::from_column_slice(l * l, 1, ulr.ss().as_slice());
    let v = linalg::solve(&ks, &rhs, "Θ⊕Θ (degenerate drift)")?;
    Ok(linalg::symmetrize(&DMatrix::from_column_slice(l, l, v.as_slice())))
}

/// `Γ_s(0)` from the discrete Lyapunov equation `Γ = ΦΓΦ' + Ω`, solved by
/// fixed-point iteration.
pub fn stationary_cov_sr(sr: &SRParams) -> Result<DMatrix<f64>> {
    let radius = linalg::spectral_radius(&sr.phi);
    if radius >= 1.0 {
        return Err(Error::NonStationary(radius));
    }
    let omega = sr.omega();
    let phi_t = sr.phi.transpose();
    let mut gamma = omega.clone();
    for _ in 0..LYAPUNOV_MAX_ITER {
        let next = &sr.phi * &gamma * &phi_t + &omega;
        let delta = (&next - &gamma).amax();
        gamma = next;
        if delta <= LYAPUNOV_TOL * gamma.amax().max(1.0) {
            return Ok(linalg::symmetrize(&gamma));
        }
    }
    Err(Error::NonStationary(radius))
}

/// `Γ_s(h) = Φ^h Γ_s(0)`.
pub fn sr_autocov(sr: &SRParams, h: u64) -> Result<DMatrix<f64>> {
    Ok(linalg::mat_pow(&sr.phi, h)? * stationary_cov_sr(sr)?)
}

/// Long-run covariance `Σ_∞ = Σ_h cov(y_s(t), y_s(t-h)) = (I-Φ)^{-1} Ω (I-Φ)^{-1}'`.
pub fn long_run_cov_sr(sr: &SRParams) -> Result<DMatrix<f64>> {
    let n = sr.n();
    let inv = (DMatrix::<f64>::identity(n, n) - &sr.phi)
        .try_inverse()
        .ok_or_else(|| Error::Singular("I - Φ".into()))?;
    Ok(linalg::symmetrize(&(&inv * sr.omega() * inv.transpose())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcovVariant {
    /// `η²φ^h + (s²/2θ)(1 - e^{-2hθ/T})`, the commonly printed form.
    Printed,
    /// `η²φ^h/(1-φ²) + (s²/2θ) e^{-hθ/T}`, the autocovariance of the
    /// stationary two-component process.
    StationaryOu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumVariant {
    /// ULR coefficient `s²/(2πθ)`, as commonly printed.
    Printed,
    /// ULR coefficient `s²/(4πθ)`; integrates to the lag-0 variance.
    Normalized,
}

/// Theoretical autocovariance of the univariate array at lag `h`.
pub fn theo_acov_univ(p: &ModelParams, t: u64, h: u64, variant: AcovVariant) -> Result<f64> {
    let (phi, eta, theta, s) = (p.phi()?, p.eta()?, p.theta()?, p.s()?);
    let var_l = s * s / (2.0 * theta);
    let x = h as f64 * theta / t as f64;
    let phi_h = phi.powi(h.min(i32::MAX as u64) as i32);
    Ok(match variant {
        AcovVariant::Printed => eta * eta * phi_h + var_l * (1.0 - (-2.0 * x).exp()),
        AcovVariant::StationaryOu => eta * eta * phi_h / (1.0 - phi * phi) + var_l * (-x).exp(),
    })
}

/// `1 + r² - 2r cos w` without cancellation for `r` near one.
fn stable_denominator(r: f64, w: f64) -> f64 {
    (1.0 - r).powi(2) + 4.0 * r * (0.5 * w).sin().powi(2)
}

/// Theoretical spectral density of the univariate array at frequency `w`.
pub fn theo_spectrum_univ(p: &ModelParams, t: u64, w: f64, variant: SpectrumVariant) -> Result<f64> {
    let (phi, eta, theta, s) = (p.phi()?, p.eta()?, p.theta()?, p.s()?);
    let sr = eta * eta / (2.0 * PI) / stable_denominator(phi, w);
    let r = (-theta / t as f64).exp();
    let coef = match variant {
        SpectrumVariant::Printed => s * s / (2.0 * PI * theta),
        SpectrumVariant::Normalized => s * s / (4.0 * PI * theta),
    };
    let ulr = coef * (1.0 - r * r) / stable_denominator(r, w);
    Ok(sr + ulr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitKind {
    /// Limit of the printed autocovariance along `h_T = cT`.
    AcovLongLag,
    /// Limit of the printed spectrum along `w_T = sqrt(λ/T)`.
    SpectrumZero,
}

/// Closed-form large-`T` limits of the printed second-order formulas.
///
/// For `SpectrumZero` the returned value is the limit of the printed spectrum,
/// `η²/(2π(1-φ)²) + s²/(πλ)`. The frequently quoted `2θ/λ` ULR term drops the
/// `s²/(2πθ)` coefficient; the two agree when `s² = 2πθ`.
pub fn prop_limits(p: &ModelParams, c_or_lambda: f64, kind: LimitKind) -> Result<f64> {
    let (phi, eta, theta, s) = (p.phi()?, p.eta()?, p.theta()?, p.s()?);
    if !(c_or_lambda > 0.0) {
        return Err(Error::InvalidParameter("limit argument must be > 0".into()));
    }
    Ok(match kind {
        LimitKind::AcovLongLag => s * s / (2.0 * theta) * (1.0 - (-2.0 * c_or_lambda * theta).exp()),
        LimitKind::SpectrumZero => {
            let sr = if c_or_lambda.is_infinite() { 0.0 } else { s * s / (PI * c_or_lambda) };
            eta * eta / (2.0 * PI * (1.0 - phi).powi(2)) + sr
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn theta_ref() -> f64 {
        2.5f64.ln() / 10.0
    }

    #[test]
    fn discretize_reference_scalar() {
        let p = ModelParams::univariate(0.0, 1.0, theta_ref(), 1.0).unwrap();
        let d = discretize_ulr(&p.ulr, 7200).unwrap();
        assert_relative_eq!(d.rho_mat[(0, 0)], 0.999_987_273_820_813_6, max_relative = 1e-13);
        assert_relative_eq!(d.sigma_t[(0, 0)], 1.388_871_213_677_508_6e-4, max_relative = 1e-9);
    }

    #[test]
    fn discretize_unit_scalar() {
        let p = ModelParams::univariate(0.0, 1.0, 1.0, 1.0).unwrap();
        let d = discretize_ulr(&p.ulr, 1).unwrap();
        assert_relative_eq!(d.rho_mat[(0, 0)], (-1.0f64).exp(), max_relative = 1e-13);
        assert_relative_eq!(d.sigma_t[(0, 0)], 0.432_332_358_381_693_65, max_relative = 1e-12);
        assert!(discretize_ulr(&p.ulr, 0).is_err());
    }

    #[test]
    fn stationary_cov_ulr_values() {
        let p = ModelParams::univariate(0.0, 1.0, 0.5, 1.0).unwrap();
        assert_relative_eq!(stationary_cov_ulr(&p.ulr).unwrap()[(0, 0)], 1.0, max_relative = 1e-14);
        let p = ModelParams::univariate(0.0, 1.0, theta_ref(), 1.0).unwrap();
        assert_relative_eq!(
            stationary_cov_ulr(&p.ulr).unwrap()[(0, 0)],
            5.456_783_339_686_457,
            max_relative = 1e-12
        );
    }

    #[test]
    fn stationary_cov_ulr_diagonal_drift() {
        let theta = DMatrix::from_diagonal(&nalgebra::dvector![0.4, 1.3]);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 2.0]);
        let ulr = ULRParams::new(theta.clone(), s.clone(), DMatrix::identity(2, 2)).unwrap();
        let sigma = stationary_cov_ulr(&ulr).unwrap();
        let ss = &s * s.transpose();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(
                    sigma[(i, j)],
                    ss[(i, j)] / (theta[(i, i)] + theta[(j, j)]),
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn lyapunov_reference_values() {
        let p = ModelParams::reference_bivariate();
        let g = stationary_cov_sr(&p.sr).unwrap();
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[2.197_802_197_802_198, 2.531_645_569_620_253, 2.531_645_569_620_253, 7.843_137_254_901_96],
        );
        assert!((&g - expected).amax() < 1e-10);
        let resid = &p.sr.phi * &g * p.sr.phi.transpose() + p.sr.omega() - &g;
        assert!(resid.norm() < 1e-10);
        assert!((&g - g.transpose()).amax() < 1e-10);
    }

    #[test]
    fn lyapunov_white_noise_and_scalar() {
        let sr = SRParams::new(DMatrix::zeros(2, 2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 2.0]))
            .unwrap();
        assert!((stationary_cov_sr(&sr).unwrap() - sr.omega()).amax() < 1e-15);
        let p = ModelParams::univariate(0.5, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(stationary_cov_sr(&p.sr).unwrap()[(0, 0)], 4.0 / 3.0, max_relative = 1e-11);
    }

    #[test]
    fn nonstationary_phi_rejected() {
        let r = SRParams::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0));
        assert!(matches!(r, Err(Error::NonStationary(_))));
    }

    #[test]
    fn acov_variants() {
        let p = ModelParams::univariate(0.5, 1.2, 0.5, 1.0).unwrap();
        assert_relative_eq!(theo_acov_univ(&p, 100, 0, AcovVariant::Printed).unwrap(), 1.44);
        let st = theo_acov_univ(&p, 100, 0, AcovVariant::StationaryOu).unwrap();
        assert_relative_eq!(st, 1.44 / 0.75 + 1.0, max_relative = 1e-14);
        let white = ModelParams::univariate(0.0, 1.2, 0.5, 1.0).unwrap();
        assert_relative_eq!(
            theo_acov_univ(&white, 100, 0, AcovVariant::StationaryOu).unwrap(),
            1.44 + 1.0,
            max_relative = 1e-14
        );
        let multi = ModelParams::reference_bivariate();
        assert!(matches!(
            theo_acov_univ(&multi, 10, 1, AcovVariant::Printed),
            Err(Error::UnsupportedDimension(_))
        ));
    }

    #[test]
    fn acov_printed_long_lag_limit() {
        let p = ModelParams::univariate(0.5, 1.0, 0.5, 1.0).unwrap();
        let t = 1_000_000;
        let v = theo_acov_univ(&p, t, t, AcovVariant::Printed).unwrap();
        assert_relative_eq!(v, 0.632_120_558_828_557_7, max_relative = 1e-12);
        assert_relative_eq!(
            prop_limits(&p, 1.0, LimitKind::AcovLongLag).unwrap(),
            0.632_120_558_828_557_7,
            max_relative = 1e-14
        );
        assert!(prop_limits(&p, 1e-12, LimitKind::AcovLongLag).unwrap() < 1e-11);
    }

    #[test]
    fn spectrum_white_noise_flat() {
        let p = ModelParams::univariate(0.0, 1.5, 0.5, 1e-9).unwrap();
        for &w in &[-3.0, -1.0, 0.2, 2.0, PI] {
            let v = theo_spectrum_univ(&p, 100, w, SpectrumVariant::Printed).unwrap();
            assert_relative_eq!(v, 2.25 / (2.0 * PI), max_relative = 1e-9);
        }
    }

    #[test]
    fn spectrum_near_zero_frequency() {
        // With s² = 2πθ the printed-limit constant 2θ/λ and s²/(πλ) coincide.
        let theta = 0.3;
        let s = (2.0 * PI * theta).sqrt();
        let p = ModelParams::univariate(0.4, 1.0, theta, s).unwrap();
        let lambda = 2.0;
        let t = 10_000_000u64;
        let w = (lambda / t as f64).sqrt();
        let got = theo_spectrum_univ(&p, t, w, SpectrumVariant::Printed).unwrap();
        let printed_limit = 1.0 / (2.0 * PI) / 0.36 + 2.0 * theta / lambda;
        assert_relative_eq!(got, printed_limit, max_relative = 1e-3);
        assert_relative_eq!(got, prop_limits(&p, lambda, LimitKind::SpectrumZero).unwrap(), max_relative = 1e-3);
        // General parameters follow the s²/(πλ) form.
        let q = ModelParams::univariate(0.4, 1.0, 0.7, 1.3).unwrap();
        let got = theo_spectrum_univ(&q, t, w, SpectrumVariant::Printed).unwrap();
        assert_relative_eq!(got, prop_limits(&q, lambda, LimitKind::SpectrumZero).unwrap(), max_relative = 1e-3);
        assert_relative_eq!(
            prop_limits(&q, f64::INFINITY, LimitKind::SpectrumZero).unwrap(),
            1.0 / (2.0 * PI * 0.36),
            max_relative = 1e-14
        );
    }

    fn trapezoid_spectrum(p: &ModelParams, t: u64, variant: SpectrumVariant) -> f64 {
        let n = 400_000;
        let step = 2.0 * PI / n as f64;
        // Periodic integrand: the trapezoid rule reduces to a plain sum.
        (0..n)
            .map(|k| theo_spectrum_univ(p, t, -PI + k as f64 * step, variant).unwrap())
            .sum::<f64>()
            * step
    }

    #[test]
    fn normalized_spectrum_integrates_to_variance() {
        let p = ModelParams::univariate(0.5, 1.0, 0.8, 1.2).unwrap();
        let t = 20;
        let target = 1.0 / 0.75 + 1.44 / 1.6;
        let integral = trapezoid_spectrum(&p, t, SpectrumVariant::Normalized);
        assert!((integral - target).abs() < 1e-6, "{integral} vs {target}");
        let printed = trapezoid_spectrum(&p, t, SpectrumVariant::Printed);
        assert!((printed - (1.0 / 0.75 + 2.0 * 1.44 / 1.6)).abs() < 1e-6);
    }

    #[test]
    fn kv_round_trip() {
        let p = ModelParams::reference_bivariate();
        let back = ModelParams::from_kv(&KvDocument::parse(&p.to_kv().render()).unwrap()).unwrap();
        assert_eq!(back, p);
        let bad = KvDocument::parse("n = 2\nphi = 1 0 0").unwrap();
        assert!(ModelParams::from_kv(&bad).is_err());
    }

    #[test]
    fn normalization_of_a() {
        let p = ModelParams::reference_bivariate().with_normalized_a().unwrap();
        assert!(p.ulr.is_orthonormal(1e-14));
        assert_relative_eq!(p.ulr.a_mat[(0, 0)], 0.5f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(p.ulr.a_mat[(1, 0)], 0.5f64.sqrt(), max_relative = 1e-14);
    }

    proptest! {
        #[test]
        fn scalar_sigma_identity(theta in 0.01f64..5.0, s in 0.1f64..3.0, t in 1u64..100_000) {
            let p = ModelParams::univariate(0.0, 1.0, theta, s).unwrap();
            let d = discretize_ulr(&p.ulr, t).unwrap();
            let stat = stationary_cov_ulr(&p.ulr).unwrap()[(0, 0)];
            let rho = d.rho_mat[(0, 0)];
            let expected = stat * (1.0 - rho * rho);
            prop_assert!((d.sigma_t[(0, 0)] - expected).abs() <= 1e-12 * stat.max(1.0));
        }

        #[test]
        fn local_to_unity_small_sigma_rates(
            t1 in 1u64..5000, extra in 1u64..5000,
            d0 in 0.05f64..2.0, d1 in 0.05f64..2.0, off in -0.2f64..0.2,
        ) {
            let theta = DMatrix::from_row_slice(2, 2, &[d0, off, 0.0, d1]);
            let ulr = ULRParams::new(theta, DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
            let a = discretize_ulr(&ulr, t1).unwrap();
            let b = discretize_ulr(&ulr, t1 + extra).unwrap();
            let id = DMatrix::<f64>::identity(2, 2);
            prop_assert!((&b.rho_mat - &id).norm() < (&a.rho_mat - &id).norm());
            prop_assert!(b.sigma_t.norm() < a.sigma_t.norm());
        }

        #[test]
        fn stationary_acov_non_increasing(
            phi in 0.0f64..0.95, theta in 0.01f64..3.0, t in 10u64..10_000, h in 0u64..500,
        ) {
            let p = ModelParams::univariate(phi, 1.0, theta, 1.0).unwrap();
            let a = theo_acov_univ(&p, t, h, AcovVariant::StationaryOu).unwrap();
            let b = theo_acov_univ(&p, t, h + 1, AcovVariant::StationaryOu).unwrap();
            prop_assert!(b <= a + 1e-15);
        }
    }

    #[test]
    fn stationary_acov_vanishes_far_out() {
        let p = ModelParams::univariate(0.5, 1.0, 1.0, 1.0).unwrap();
        assert!(theo_acov_univ(&p, 100, 100_000, AcovVariant::StationaryOu).unwrap() < 1e-200);
    }
}
