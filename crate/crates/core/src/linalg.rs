//! Small dense linear-algebra helpers: matrix exponential and logarithm,
//! Kronecker sums, integer powers and PSD square roots.
//!
//! Dimensions in this crate are tiny (a handful of series, one to four
//! long-run factors), so everything works on `DMatrix<f64>` without any
//! blocking or workspace reuse.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Diagonal Padé order used by [`mat_exp`].
const PADE_ORDER: usize = 6;
/// Scaling target for the 1-norm before the Padé step.
const PADE_NORM_TARGET: f64 = 0.5;

pub(crate) fn ensure_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Maximum absolute column sum.
pub fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Matrix exponential by scaling and squaring with a fixed `[6/6]` Padé
/// approximant.
pub fn mat_exp(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = ensure_square(m, "matrix exponential argument")?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "matrix exponential argument has non-finite entries".into(),
        ));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = norm1(m);
    let squarings = if norm > PADE_NORM_TARGET {
        (norm / PADE_NORM_TARGET).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings);

    // c_k = (2q-k)! q! / ((2q)! k! (q-k)!)
    let q = PADE_ORDER;
    let mut coef = vec![1.0f64; q + 1];
    for k in 1..=q {
        coef[k] = coef[k - 1] * (q - k + 1) as f64 / (k * (2 * q - k + 1)) as f64;
    }
    let ident = DMatrix::<f64>::identity(n, n);
    let mut numer = ident.clone() * coef[0];
    let mut denom = ident.clone() * coef[0];
    let mut power = ident;
    for (k, c) in coef.iter().enumerate().skip(1) {
        power = &power * &scaled;
        numer += &power * *c;
        if k % 2 == 0 {
            denom += &power * *c;
        } else {
            denom -= &power * *c;
        }
    }
    let lu = denom.lu();
    let mut result = lu
        .solve(&numer)
        .ok_or_else(|| Error::Singular("Padé denominator".into()))?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Kronecker sum `I ⊗ Θ + Θ ⊗ I`.
pub fn kron_sum(theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = ensure_square(theta, "Kronecker sum argument")?;
    let ident = DMatrix::<f64>::identity(l, l);
    Ok(ident.kronecker(theta) + theta.kronecker(&ident))
}

/// Column-stacking vectorization.
pub fn vec_of(m: &DMatrix<f64>) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &nalgebra::DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// `m^k` by repeated squaring.
pub fn mat_pow(m: &DMatrix<f64>, mut k: u64) -> Result<DMatrix<f64>> {
    let n = ensure_square(m, "matrix power base")?;
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    Ok(result)
}

/// Factor `F` with `F Fᵀ = m` for a symmetric positive semidefinite `m`.
///
/// Lower-triangular (Cholesky) whenever `m` is positive definite; otherwise a
/// symmetric square root with negative rounding noise clipped to zero.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(m, "covariance")?;
    let sym = symmetrize(m);
    if let Some(ch) = sym.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if eig.eigenvalues.iter().any(|&v| v < -1e-9 * scale.max(1e-300)) {
        return Err(Error::InvalidParameter(
            "covariance matrix is not positive semidefinite".into(),
        ));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

fn sqrtm_denman_beavers(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let y_inv = y
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("square-root iteration".into()))?;
        let z_inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("square-root iteration".into()))?;
        let y_next = (&y + z_inv) * 0.5;
        let z_next = (&z + y_inv) * 0.5;
        let delta = norm1(&(&y_next - &y)) / norm1(&y_next).max(1e-300);
        y = y_next;
        z = z_next;
        if delta < 1e-15 {
            break;
        }
    }
    Ok(y)
}

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// Fails when `m` has a real eigenvalue that is zero or negative, where the
/// principal branch is undefined.
pub fn mat_log(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = ensure_square(m, "matrix logarithm argument")?;
    for z in m.complex_eigenvalues().iter() {
        if z.im.abs() <= 1e-12 * z.norm().max(1.0) && z.re <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "matrix logarithm undefined: real eigenvalue {:.6} is not positive",
                z.re
            )));
        }
    }
    let ident = DMatrix::<f64>::identity(n, n);
    let mut x = m.clone();
    let mut roots = 0;
    while norm1(&(&x - &ident)) > 0.25 {
        x = sqrtm_denman_beavers(&x)?;
        roots += 1;
        if roots > 60 {
            return Err(Error::Singular("matrix logarithm did not converge".into()));
        }
    }
    let e = &x - &ident;
    let mut term = e.clone();
    let mut sum = e.clone();
    for j in 2..200 {
        term = &term * &e;
        let contrib = &term * (if j % 2 == 0 { -1.0 } else { 1.0 } / j as f64);
        sum += &contrib;
        if norm1(&contrib) < 1e-18 {
            break;
        }
    }
    Ok(sum * 2f64.powi(roots))
}

/// Solves `a x = b` through an LU factorization.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular(what.to_string()))
}
