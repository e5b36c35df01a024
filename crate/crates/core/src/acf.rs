//! Sample autocovariances: global, distant-lag, local (windowed) and averaged
//! short-run families, local means and the autocovariance of local means.
//!
//! Dates follow the convention `c ↦ round(c T)`; the window attached to `c`
//! holds the 1-based dates `round(cT)+1 ..= round(cT)+H`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::series::Series;
use crate::table::Table;

/// Two-window demeaned autocovariance over 0-based dates `range` at lag `h`:
/// cross-moment mean minus the product of the means of `y_t` and `y_{t-h}`.
fn windowed_acov(y: &Series, start: usize, len: usize, h: usize) -> DMatrix<f64> {
    let range = start..start + len;
    let lead = y.mean_over(range.clone());
    let lag = y.mean_over(start - h..start + len - h);
    let mut g = y.cross_moment(range, h) - lead * lag.transpose();
    if h == 0 {
        g = symmetrize(&g);
    }
    g
}

/// Global sample autocovariance at lag `h` with separate demeaning of the
/// leading and lagged windows.
pub fn sample_acov(y: &Series, h: usize) -> Result<DMatrix<f64>> {
    if h >= y.len() {
        return Err(Error::Window(format!("lag {h} needs more than {} observations", y.len())));
    }
    Ok(windowed_acov(y, h, y.len() - h, h))
}

/// Converts a fraction of the sample to a date offset.
pub fn date_index(c: f64, t_len: usize) -> Result<usize> {
    if !c.is_finite() || c < 0.0 {
        return Err(Error::Window(format!("fraction c = {c} is not a valid date")));
    }
    Ok((c * t_len as f64).round() as usize)
}

/// Autocovariance at the distant lag `round(cT)`. With `demean = false` this is
/// the raw cross-product mean `1/(T-h) Σ_{t>h} y_t y_{t-h}'`.
pub fn sample_acov_distant(y: &Series, c: f64, demean: bool) -> Result<DMatrix<f64>> {
    let h = date_index(c, y.len())?;
    if h < 1 || h >= y.len() {
        return Err(Error::Window(format!(
            "distant lag round(cT) = {h} must lie in [1, {})",
            y.len()
        )));
    }
    if demean {
        sample_acov(y, h)
    } else {
        Ok(y.cross_moment(h..y.len(), h))
    }
}

fn check_window(y: &Series, start: usize, window: usize, h: usize) -> Result<()> {
    if window < 1 {
        return Err(Error::Window("window length must be >= 1".into()));
    }
    if h > window {
        return Err(Error::Window(format!("lag {h} exceeds window length {window}")));
    }
    if start < h {
        return Err(Error::Window(format!(
            "lag {h} reaches before the first observation for a window starting at date {}",
            start + 1
        )));
    }
    if start + window > y.len() {
        return Err(Error::Window(format!(
            "window of dates {}..={} overflows the sample of length {}",
            start + 1,
            start + window,
            y.len()
        )));
    }
    Ok(())
}

/// Local autocovariance over the window `(cT, cT+H]`.
pub fn local_acov(y: &Series, c: f64, window: usize, h: usize) -> Result<DMatrix<f64>> {
    let start = date_index(c, y.len())?;
    check_window(y, start, window, h)?;
    Ok(windowed_acov(y, start, window, h))
}

/// Regular grid `c_k = k/K - H/T`, `k = 1..K`, so that window `k` ends at date
/// `kT/K` and the last window ends at `T`.
pub fn regular_grid(k: usize, t_len: usize, window: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Window("grid needs K >= 1".into()));
    }
    let shift = window as f64 / t_len as f64;
    if 1.0 / k as f64 <= shift {
        return Err(Error::Window(format!(
            "window {window} does not fit between grid points spaced T/K = {}",
            t_len as f64 / k as f64
        )));
    }
    Ok((1..=k).map(|j| j as f64 / k as f64 - shift).collect())
}

/// Window means on a grid of dates.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMeans {
    pub c_grid: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub window: usize,
    pub t_len: usize,
}

impl LocalMeans {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map(|m| m.len()).unwrap_or(0)
    }

    /// The means as a series on the long-run time scale.
    pub fn as_series(&self) -> Series {
        Series::from_rows(&self.means).expect("means share one dimension")
    }

    pub fn to_table(&self) -> Table {
        let n = self.dim();
        let mut header = vec!["k".to_string(), "c".to_string(), "window_end".to_string()];
        header.extend((1..=n).map(|i| format!("m_{i}")));
        let mut t = Table::new(header);
        for (k, (c, m)) in self.c_grid.iter().zip(&self.means).enumerate() {
            let end = (c * self.t_len as f64).round() as usize + self.window;
            let mut row = vec![(k + 1).to_string(), c.to_string(), end.to_string()];
            row.extend(m.iter().map(|v| v.to_string()));
            t.push_strings(row);
        }
        t
    }
}

/// `m̂(c_k) = (1/H) Σ_{t = c_kT+1}^{c_kT+H} y_t` for every grid point.
pub fn local_means(y: &Series, c_grid: &[f64], window: usize) -> Result<LocalMeans> {
    if c_grid.is_empty() {
        return Err(Error::Window("empty date grid".into()));
    }
    let mut means = Vec::with_capacity(c_grid.len());
    for &c in c_grid {
        let start = date_index(c, y.len())?;
        check_window(y, start, window, 0)?;
        means.push(y.mean_over(start..start + window));
    }
    Ok(LocalMeans {
        c_grid: c_grid.to_vec(),
        means,
        window,
        t_len: y.len(),
    })
}

/// Average of the local autocovariances over the grid.
pub fn averaged_sr_acov(y: &Series, c_grid: &[f64], window: usize, h: usize) -> Result<DMatrix<f64>> {
    if c_grid.is_empty() {
        return Err(Error::Window("empty date grid".into()));
    }
    let mut acc = DMatrix::zeros(y.dim(), y.dim());
    for &c in c_grid {
        acc += local_acov(y, c, window, h)?;
    }
    Ok(acc / c_grid.len() as f64)
}

/// Autocovariance of the local-mean series at `lag` on the long-run scale.
/// Fails when a coordinate of the means has no variation.
pub fn acf_of_means(means: &LocalMeans, lag: usize) -> Result<DMatrix<f64>> {
    if lag >= means.len() {
        return Err(Error::Window(format!("lag {lag} needs more than {} means", means.len())));
    }
    let s = means.as_series();
    let g0 = sample_acov(&s, 0)?;
    if g0.diagonal().iter().any(|v| *v <= f64::EPSILON * 1e-3) {
        return Err(Error::Degenerate("local means have zero variance".into()));
    }
    sample_acov(&s, lag)
}

/// Scales an autocovariance to correlations using lag-0 variances.
pub fn to_correlation(g: &DMatrix<f64>, g0: &DMatrix<f64>) -> DMatrix<f64> {
    let d = g0.diagonal().map(|v| v.sqrt());
    DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)] / (d[i] * d[j]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcfKind {
    Standard,
    Distant,
    Local,
    AveragedSr,
    LongRunOfMeans,
}

impl AcfKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AcfKind::Standard => "standard",
            AcfKind::Distant => "distant",
            AcfKind::Local => "local",
            AcfKind::AveragedSr => "averaged_sr",
            AcfKind::LongRunOfMeans => "long_run_of_means",
        }
    }
}

/// A table of autocovariance matrices over increasing lags.
#[derive(Debug, Clone, PartialEq)]
pub struct AcfEstimate {
    pub kind: AcfKind,
    pub lags: Vec<usize>,
    pub values: Vec<DMatrix<f64>>,
    pub c_grid: Vec<f64>,
    pub window: Option<usize>,
    /// Set when the lag-0 variance vanishes so correlations are undefined.
    pub degenerate: bool,
}

impl AcfEstimate {
    fn build(
        kind: AcfKind,
        max_lag: usize,
        c_grid: Vec<f64>,
        window: Option<usize>,
        f: impl Fn(usize) -> Result<DMatrix<f64>>,
    ) -> Result<Self> {
        let lags: Vec<usize> = (0..=max_lag).collect();
        let values = lags.iter().map(|&h| f(h)).collect::<Result<Vec<_>>>()?;
        let degenerate = values[0].diagonal().iter().any(|v| *v <= 0.0);
        Ok(Self {
            kind,
            lags,
            values,
            c_grid,
            window,
            degenerate,
        })
    }

    pub fn standard(y: &Series, max_lag: usize) -> Result<Self> {
        Self::build(AcfKind::Standard, max_lag, Vec::new(), None, |h| sample_acov(y, h))
    }

    pub fn local(y: &Series, c: f64, window: usize, max_lag: usize) -> Result<Self> {
        Self::build(AcfKind::Local, max_lag, vec![c], Some(window), |h| local_acov(y, c, window, h))
    }

    pub fn averaged(y: &Series, c_grid: &[f64], window: usize, max_lag: usize) -> Result<Self> {
        Self::build(AcfKind::AveragedSr, max_lag, c_grid.to_vec(), Some(window), |h| {
            averaged_sr_acov(y, c_grid, window, h)
        })
    }

    /// Autocovariances of the local means; a constant mean series is reported
    /// as degenerate instead of failing.
    pub fn of_means(means: &LocalMeans, max_lag: usize) -> Result<Self> {
        let s = means.as_series();
        Self::build(
            AcfKind::LongRunOfMeans,
            max_lag,
            means.c_grid.clone(),
            Some(means.window),
            |h| {
                if h >= s.len() {
                    return Err(Error::Window(format!("lag {h} needs more than {} means", s.len())));
                }
                sample_acov(&s, h)
            },
        )
    }

    /// Distant-lag autocovariances at `round(c T)` for each `c`.
    pub fn distant(y: &Series, cs: &[f64], demean: bool) -> Result<Self> {
        let mut pairs = cs
            .iter()
            .map(|&c| Ok((date_index(c, y.len())?, sample_acov_distant(y, c, demean)?)))
            .collect::<Result<Vec<_>>>()?;
        pairs.sort_by_key(|p| p.0);
        pairs.dedup_by_key(|p| p.0);
        let g0 = sample_acov(y, 0)?;
        Ok(Self {
            kind: AcfKind::Distant,
            lags: pairs.iter().map(|p| p.0).collect(),
            values: pairs.into_iter().map(|p| p.1).collect(),
            c_grid: cs.to_vec(),
            window: None,
            degenerate: g0.diagonal().iter().any(|v| *v <= 0.0),
        })
    }

    /// Long format `lag, i, j, acov, acf` with 1-based coordinates. The
    /// correlation column is empty when the estimate is degenerate.
    pub fn to_table(&self, g0: Option<&DMatrix<f64>>) -> Table {
        let mut t = Table::new(["lag", "i", "j", "acov", "acf"]);
        t.comment(format!("kind: {}", self.kind.as_str()));
        if let Some(w) = self.window {
            t.comment(format!("window: {w}"));
        }
        if self.degenerate {
            t.comment("degenerate: zero variance, correlations undefined");
        }
        let base = g0.unwrap_or(&self.values[0]);
        let positive = base.diagonal().iter().all(|v| *v > 0.0);
        for (lag, g) in self.lags.iter().zip(&self.values) {
            let r = positive.then(|| to_correlation(g, base));
            for i in 0..g.nrows() {
                for j in 0..g.ncols() {
                    let corr = r.as_ref().map(|r| r[(i, j)].to_string()).unwrap_or_default();
                    t.push_strings(vec![
                        lag.to_string(),
                        (i + 1).to_string(),
                        (j + 1).to_string(),
                        g[(i, j)].to_string(),
                        corr,
                    ]);
                }
            }
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hand_computed_lag_one() {
        let y = Series::univariate(vec![1.0, 2.0, 3.0]);
        assert_relative_eq!(sample_acov(&y, 1).unwrap()[(0, 0)], 0.25, epsilon = 1e-15);
        assert!(sample_acov(&y, 3).is_err());
    }

    #[test]
    fn constants_give_zero() {
        let y = Series::from_flat(2, [1.5, -2.0].repeat(40)).unwrap();
        for h in 0..5 {
            assert!(sample_acov(&y, h).unwrap().amax() < 1e-14);
            assert!(local_acov(&y, 0.25, 10, h).unwrap().amax() < 1e-14);
        }
        let m = local_means(&y, &[0.0, 0.5], 10).unwrap();
        assert_eq!(m.means[1].as_slice(), &[1.5, -2.0]);
        assert!(matches!(acf_of_means(&m, 1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn distant_raw_equals_direct_sum() {
        let y = Series::univariate((0..100).map(|t| ((t * 37 % 11) as f64).sin()).collect());
        let h = 25;
        let direct: f64 = (h..100).map(|t| y.row(t)[0] * y.row(t - h)[0]).sum::<f64>() / (100 - h) as f64;
        let got = sample_acov_distant(&y, 0.25, false).unwrap()[(0, 0)];
        assert_eq!(got, direct);
        assert!(sample_acov_distant(&y, 0.001, false).is_err());
    }

    #[test]
    fn window_rules() {
        let y = Series::univariate((0..100).map(|t| t as f64).collect());
        assert!(local_acov(&y, 0.95, 10, 0).is_err());
        assert!(local_acov(&y, 0.9, 10, 0).is_ok());
        assert!(local_acov(&y, 0.0, 10, 1).is_err());
        assert!(local_acov(&y, 0.1, 5, 6).is_err());
        assert!(local_means(&y, &[0.95], 10).is_err());
        assert!(regular_grid(20, 100, 5).is_err());
        let g = regular_grid(20, 7200, 60).unwrap();
        assert_eq!(g.len(), 20);
        let last_end = date_index(g[19], 7200).unwrap() + 60;
        assert_eq!(last_end, 7200);
    }

    #[test]
    fn averaged_single_point_is_local() {
        let y = Series::univariate((0..200).map(|t| ((t * t) as f64).cos()).collect());
        let a = averaged_sr_acov(&y, &[0.3], 40, 2).unwrap();
        let b = local_acov(&y, 0.3, 40, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn acf_table_layout() {
        let y = Series::from_flat(2, (0..40).map(|v| (v as f64).sin()).collect()).unwrap();
        let est = AcfEstimate::standard(&y, 2).unwrap();
        let t = est.to_table(None);
        assert_eq!(t.rows.len(), 3 * 4);
        assert_relative_eq!(t.rows[0][4].parse::<f64>().unwrap(), 1.0, epsilon = 1e-14);
    }
}
