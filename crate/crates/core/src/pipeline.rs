//! Application to observed series: CSV ingestion, block-average filtering of
//! the long-run component, autoregressive fits on both time scales and the
//! comparison of raw, plug-in and estimation-risk adjusted intervals.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::fit_ar1;
use crate::prediction::{
    build_belt, default_rho_grid, minmax_two_sided, plug_in_two_sided, theta_from_rho, ConfidenceBelt, QuantileInputs,
    DEFAULT_LEVELS,
};
use crate::rng::normal_quantile;
use crate::table::Table;

/// Observed series sharing a date column.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesBundle {
    pub names: Vec<String>,
    pub dates: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl SeriesBundle {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// Column selection for [`ingest_csv`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestSchema {
    /// Date column header; the first column when unset.
    pub date_column: Option<String>,
    /// Value columns in output order; every other column when unset.
    pub columns: Option<Vec<String>>,
}

/// Reads a CSV with a header row, a date column and numeric columns. Lines
/// starting with `#` are skipped. Line numbers in errors are 1-based file
/// lines.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &IngestSchema) -> Result<SeriesBundle> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Parse {
            line: 1,
            msg: "empty file".into(),
        });
    }
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("column '{name}' not found"),
        })
    };
    let date_idx = match &schema.date_column {
        Some(name) => find(name)?,
        None => 0,
    };
    let value_idx: Vec<usize> = match &schema.columns {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|i| *i != date_idx).collect(),
    };
    if value_idx.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "need a date column and at least one numeric column".into(),
        });
    }
    let mut bundle = SeriesBundle {
        names: value_idx.iter().map(|&i| headers[i].to_string()).collect(),
        dates: Vec::new(),
        values: vec![Vec::new(); value_idx.len()],
    };
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != headers.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let date = record[date_idx].to_string();
        if !seen.insert(date.clone()) {
            return Err(Error::Parse {
                line,
                msg: format!("duplicate date '{date}'"),
            });
        }
        for (slot, &i) in value_idx.iter().enumerate() {
            let cell = &record[i];
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column '{}': '{cell}' is not a number", &headers[i]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("column '{}': non-finite value", &headers[i]),
                });
            }
            bundle.values[slot].push(v);
        }
        bundle.dates.push(date);
    }
    if bundle.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "no data rows".into(),
        });
    }
    Ok(bundle)
}

/// Non-overlapping block means assigned to the block middles.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredULR {
    pub block_len: usize,
    /// 0-based mid-block positions.
    pub centers: Vec<f64>,
    pub averages: Vec<Vec<f64>>,
    /// Trailing observations not forming a complete block.
    pub dropped: usize,
}

impl FilteredULR {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn to_table(&self, bundle: &SeriesBundle) -> Table {
        let mut header = vec!["block".to_string(), "center".to_string(), "center_date".to_string()];
        header.extend(bundle.names.iter().cloned());
        let mut t = Table::new(header);
        t.comment(format!("block_len: {}, dropped: {}", self.block_len, self.dropped));
        for (k, c) in self.centers.iter().enumerate() {
            let mut row = vec![(k + 1).to_string(), c.to_string(), bundle.dates[c.floor() as usize].clone()];
            row.extend(self.averages.iter().map(|a| a[k].to_string()));
            t.push_strings(row);
        }
        t
    }
}

pub fn block_filter(bundle: &SeriesBundle, block_len: usize) -> Result<FilteredULR> {
    if block_len < 2 {
        return Err(Error::InvalidParameter("block length must be >= 2".into()));
    }
    let t_obs = bundle.len();
    if block_len > t_obs {
        return Err(Error::InvalidParameter(format!(
            "block length {block_len} exceeds the {t_obs} observations"
        )));
    }
    let blocks = t_obs / block_len;
    let averages = bundle
        .values
        .iter()
        .map(|v| {
            v.chunks_exact(block_len)
                .map(|c| c.iter().sum::<f64>() / block_len as f64)
                .collect()
        })
        .collect();
    Ok(FilteredULR {
        block_len,
        centers: (0..blocks).map(|k| (k * block_len) as f64 + (block_len - 1) as f64 / 2.0).collect(),
        averages,
        dropped: t_obs - blocks * block_len,
    })
}

/// `|ρ|^{1/block}`: the per-period coefficient implied by a block coefficient.
pub fn quarter_scale(rho_ulr: f64, block_len: usize) -> f64 {
    rho_ulr.abs().powf(1.0 / block_len as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Row {
    pub name: String,
    pub rho_ulr: f64,
    pub rho_quarter: f64,
    pub negative: bool,
    /// Constant series or zero coefficient.
    pub degenerate: bool,
}

fn demeaned(x: &[f64]) -> (f64, Vec<f64>) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (m, x.iter().map(|v| v - m).collect())
}

/// AR(1) conditional MLE on each demeaned filtered series.
pub fn fit_table1(filtered: &FilteredULR, names: &[String]) -> Result<Vec<Table1Row>> {
    if filtered.len() < 3 {
        return Err(Error::InvalidParameter("need at least 3 filtered points".into()));
    }
    Ok(filtered
        .averages
        .iter()
        .zip(names)
        .map(|(a, name)| match fit_ar1(&demeaned(a).1) {
            Ok(fit) => Table1Row {
                name: name.clone(),
                rho_ulr: fit.rho,
                rho_quarter: quarter_scale(fit.rho, filtered.block_len),
                negative: fit.rho < 0.0,
                degenerate: fit.rho == 0.0,
            },
            Err(_) => Table1Row {
                name: name.clone(),
                rho_ulr: f64::NAN,
                rho_quarter: f64::NAN,
                negative: false,
                degenerate: true,
            },
        })
        .collect())
}

pub fn table1_table(rows: &[Table1Row], block_len: usize) -> Table {
    let mut t = Table::new(["series", "rho_ulr", "rho_quarter", "negative", "degenerate"]);
    t.comment(format!("block_len: {block_len}"));
    for r in rows {
        t.push_strings(vec![
            r.name.clone(),
            r.rho_ulr.to_string(),
            r.rho_quarter.to_string(),
            r.negative.to_string(),
            r.degenerate.to_string(),
        ]);
    }
    t
}

/// Ordinary least squares AR(p) with intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct ArFit {
    pub intercept: f64,
    pub coefs: Vec<f64>,
    pub innovation_var: f64,
}

pub fn fit_ar_ols(y: &[f64], order: usize) -> Result<ArFit> {
    if !(1..=4).contains(&order) {
        return Err(Error::InvalidParameter(format!("AR order must be in 1..=4, got {order}")));
    }
    let n = y.len().saturating_sub(order);
    if n < order + 2 {
        return Err(Error::InvalidParameter("series too short for the AR order".into()));
    }
    let x = DMatrix::from_fn(n, order + 1, |i, j| if j == 0 { 1.0 } else { y[order + i - j] });
    let target = DVector::from_iterator(n, y[order..].iter().copied());
    let xtx = x.transpose() * &x;
    let beta = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("AR regressors are collinear".into()))?
        .solve(&(x.transpose() * &target));
    let resid = &target - &x * &beta;
    let var = resid.norm_squared() / (n - order - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::Degenerate("AR residual variance vanishes".into()));
    }
    Ok(ArFit {
        intercept: beta[0],
        coefs: beta.iter().skip(1).copied().collect(),
        innovation_var: var,
    })
}

impl ArFit {
    /// Mean and variance of the `h`-step forecast from the end of `y`.
    pub fn forecast(&self, y: &[f64], h: usize) -> (f64, f64) {
        let p = self.coefs.len();
        let mut hist: Vec<f64> = y[y.len() - p..].to_vec();
        for _ in 0..h {
            let next = self.intercept + (0..p).map(|i| self.coefs[i] * hist[hist.len() - 1 - i]).sum::<f64>();
            hist.push(next);
        }
        let mut psi = vec![1.0];
        for j in 1..h {
            let v = (1..=p.min(j)).map(|i| self.coefs[i - 1] * psi[j - i]).sum();
            psi.push(v);
        }
        let var = self.innovation_var * psi.iter().map(|v| v * v).sum::<f64>();
        (*hist.last().expect("h >= 1"), var)
    }
}

/// Settings of the interval comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table2Options {
    pub ar_order: usize,
    pub belt_reps: usize,
    pub seed: u64,
}

impl Default for Table2Options {
    fn default() -> Self {
        Self {
            ar_order: 1,
            belt_reps: 1000,
            seed: 20220216,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table2Row {
    pub name: String,
    /// Raw-data AR interval.
    pub raw: (f64, f64),
    /// Plug-in long-run interval.
    pub plug_in: (f64, f64),
    /// Estimation-risk adjusted long-run interval.
    pub adjusted: (f64, f64),
    pub degenerate: bool,
    pub note: String,
}

impl Table2Row {
    fn degenerate(name: &str, note: String) -> Self {
        let nan = (f64::NAN, f64::NAN);
        Self {
            name: name.into(),
            raw: nan,
            plug_in: nan,
            adjusted: nan,
            degenerate: true,
            note,
        }
    }
}

/// Horizon in blocks, rounded to the nearest integer (at least one).
pub fn horizon_blocks(horizon: usize, block_len: usize) -> usize {
    ((horizon as f64 / block_len as f64).round() as usize).max(1)
}

/// Pooled within-block variance: the short-run noise once block means are
/// removed.
fn within_block_variance(x: &[f64], block_len: usize, blocks: usize) -> f64 {
    let mut ss = 0.0;
    for b in x.chunks_exact(block_len).take(blocks) {
        let m = b.iter().sum::<f64>() / block_len as f64;
        ss += b.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    ss / (blocks * (block_len - 1)) as f64
}

fn series_intervals(
    name: &str,
    raw: &[f64],
    filtered: &[f64],
    block_len: usize,
    horizon: usize,
    alpha: f64,
    belt: &ConfidenceBelt,
    options: &Table2Options,
) -> Result<Table2Row> {
    let k = filtered.len();
    let (mu, x) = demeaned(filtered);
    let fit = fit_ar1(&x)?;
    let ar = fit_ar_ols(raw, options.ar_order)?;
    let (mean, var) = ar.forecast(raw, horizon);
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let raw_iv = (mean - z * var.sqrt(), mean + z * var.sqrt());

    let theta_hat = theta_from_rho(fit.rho, k as f64);
    let s_hat = if theta_hat.is_finite() {
        (2.0 * theta_hat * fit.stationary_var).sqrt()
    } else {
        0.0
    };
    let inputs = QuantileInputs {
        eta: within_block_variance(raw, block_len, k).sqrt(),
        s: s_hat,
        y_l: *x.last().expect("non-empty"),
        gamma: horizon_blocks(horizon, block_len) as f64 / k as f64,
    };
    let (p_lo, p_hi) = plug_in_two_sided(alpha, theta_hat, &inputs)?;
    let (a_lo, a_hi) = minmax_two_sided(alpha, belt, fit.rho, &inputs)?;
    let mut note = String::new();
    if fit.rho < 0.0 {
        note.push_str("negative rho; |rho| used");
    }
    Ok(Table2Row {
        name: name.into(),
        raw: raw_iv,
        plug_in: (mu + p_lo, mu + p_hi),
        adjusted: (mu + a_lo, mu + a_hi),
        degenerate: false,
        note,
    })
}

/// Raw AR, plug-in and min-max intervals at `horizon` periods for each series.
/// The belt is built for the number of filtered points.
pub fn table2_intervals(
    bundle: &SeriesBundle,
    filtered: &FilteredULR,
    horizon: usize,
    alpha: f64,
    options: &Table2Options,
) -> Result<Vec<Table2Row>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter("alpha must lie in (0,1)".into()));
    }
    if horizon < 1 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    let belt = build_belt(filtered.len(), &default_rho_grid(), &DEFAULT_LEVELS, options.belt_reps, options.seed)?;
    table2_with_belt(bundle, filtered, horizon, alpha, &belt, options)
}

/// [`table2_intervals`] with a prebuilt belt; its `k` must equal the number of
/// filtered points.
pub fn table2_with_belt(
    bundle: &SeriesBundle,
    filtered: &FilteredULR,
    horizon: usize,
    alpha: f64,
    belt: &ConfidenceBelt,
    options: &Table2Options,
) -> Result<Vec<Table2Row>> {
    if belt.k != filtered.len() {
        return Err(Error::InvalidParameter(format!(
            "belt built for K = {}, filtered series has {} points",
            belt.k,
            filtered.len()
        )));
    }
    Ok(bundle
        .values
        .par_iter()
        .zip(&filtered.averages)
        .zip(&bundle.names)
        .map(|((raw, avg), name)| {
            series_intervals(name, raw, avg, filtered.block_len, horizon, alpha, belt, options)
                .unwrap_or_else(|e| Table2Row::degenerate(name, e.to_string()))
        })
        .collect())
}

pub fn table2_table(rows: &[Table2Row], horizon: usize, horizon_ulr: usize, alpha: f64) -> Table {
    let mut t = Table::new([
        "series",
        "raw_lower",
        "raw_upper",
        "plug_in_lower",
        "plug_in_upper",
        "adjusted_lower",
        "adjusted_upper",
        "degenerate",
        "note",
    ]);
    t.comment(format!("horizon: {horizon} periods, {horizon_ulr} blocks; level: {}", 1.0 - alpha));
    for r in rows {
        t.push_strings(vec![
            r.name.clone(),
            r.raw.0.to_string(),
            r.raw.1.to_string(),
            r.plug_in.0.to_string(),
            r.plug_in.1.to_string(),
            r.adjusted.0.to_string(),
            r.adjusted.1.to_string(),
            r.degenerate.to_string(),
            r.note.clone(),
        ]);
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApplyConfig {
    pub block_len: usize,
    pub horizon: usize,
    pub alpha: f64,
    pub table2: Table2Options,
}

impl Default for ApplyConfig {
    fn default() -> Self {
        Self {
            block_len: 11,
            horizon: 200,
            alpha: 0.05,
            table2: Table2Options::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplyReport {
    pub bundle: SeriesBundle,
    pub filtered: FilteredULR,
    pub table1: Vec<Table1Row>,
    pub table2: Vec<Table2Row>,
    pub horizon_blocks: usize,
    pub log: String,
}

/// Full run on a bundle; writes `table1.csv`, `table2.csv`, `filtered.csv` and
/// `run.log` when `out_dir` is given.
pub fn apply_bundle(bundle: SeriesBundle, config: &ApplyConfig, out_dir: Option<&Path>) -> Result<ApplyReport> {
    let filtered = block_filter(&bundle, config.block_len)?;
    let table1 = fit_table1(&filtered, &bundle.names)?;
    let table2 = table2_intervals(&bundle, &filtered, config.horizon, config.alpha, &config.table2)?;
    let hb = horizon_blocks(config.horizon, config.block_len);
    let mut log = String::new();
    let _ = writeln!(log, "observations: {} series: {}", bundle.len(), bundle.names.join(", "));
    let _ = writeln!(log, "block length: {} blocks: {}", config.block_len, filtered.len());
    if filtered.dropped > 0 {
        let _ = writeln!(log, "notice: {} trailing observations dropped (partial block)", filtered.dropped);
    }
    let _ = writeln!(log, "horizon: {} periods = {} blocks (from {:.3})", config.horizon, hb, config.horizon as f64 / config.block_len as f64);
    let _ = writeln!(
        log,
        "alpha: {} raw AR order: {} belt reps: {} seed: {}",
        config.alpha, config.table2.ar_order, config.table2.belt_reps, config.table2.seed
    );
    for r in &table1 {
        if r.degenerate {
            let _ = writeln!(log, "warning: {} has a degenerate long-run fit", r.name);
        }
    }
    for r in &table2 {
        if r.degenerate {
            let _ = writeln!(log, "warning: {} intervals unavailable: {}", r.name, r.note);
        } else if r.adjusted.1 - r.adjusted.0 < r.plug_in.1 - r.plug_in.0 {
            let _ = writeln!(log, "notice: {} adjusted interval narrower than plug-in", r.name);
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        table1_table(&table1, config.block_len).write(dir.join("table1.csv"))?;
        table2_table(&table2, config.horizon, hb, config.alpha).write(dir.join("table2.csv"))?;
        filtered.to_table(&bundle).write(dir.join("filtered.csv"))?;
        std::fs::write(dir.join("run.log"), &log)?;
    }
    Ok(ApplyReport {
        bundle,
        filtered,
        table1,
        table2,
        horizon_blocks: hb,
        log,
    })
}

pub fn apply(input: impl AsRef<Path>, config: &ApplyConfig, out_dir: Option<&Path>) -> Result<ApplyReport> {
    apply_bundle(ingest_csv(input, &IngestSchema::default())?, config, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bundle(values: Vec<Vec<f64>>) -> SeriesBundle {
        let n = values[0].len();
        SeriesBundle {
            names: (0..values.len()).map(|i| format!("s{i}")).collect(),
            dates: (0..n).map(|i| i.to_string()).collect(),
            values,
        }
    }

    #[test]
    fn block_filter_counts_and_means() {
        let b = bundle(vec![(0..275).map(|i| i as f64).collect()]);
        let f = block_filter(&b, 11).unwrap();
        assert_eq!(f.len(), 25);
        assert_eq!(f.dropped, 0);
        assert_eq!(f.averages[0][0], 5.0);
        assert_eq!(f.centers[0], 5.0);
        let mean_avg = f.averages[0].iter().sum::<f64>() / 25.0;
        assert_relative_eq!(mean_avg, 137.0, epsilon = 1e-12);
        let alt = bundle(vec![(0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()]);
        assert!(block_filter(&alt, 4).unwrap().averages[0].iter().all(|v| *v == 0.0));
        assert!(block_filter(&alt, 21).is_err());
        assert!(block_filter(&alt, 1).is_err());
    }

    #[test]
    fn quarter_scale_examples() {
        assert!((quarter_scale(-0.275, 11) - 0.889).abs() < 1e-3);
        assert!((quarter_scale(0.546, 11) - 0.947).abs() < 1e-3);
        assert_eq!(quarter_scale(0.0, 11), 0.0);
    }

    #[test]
    fn ar_forecast_one_step() {
        let y: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let fit = fit_ar_ols(&y, 1).unwrap();
        let (m, v) = fit.forecast(&y, 1);
        assert_relative_eq!(m, fit.intercept + fit.coefs[0] * y[49], epsilon = 1e-12);
        assert_relative_eq!(v, fit.innovation_var, epsilon = 1e-12);
        let (_, v2) = fit.forecast(&y, 2);
        assert_relative_eq!(v2, fit.innovation_var * (1.0 + fit.coefs[0].powi(2)), epsilon = 1e-12);
        assert!(fit_ar_ols(&y, 5).is_err());
    }

    #[test]
    fn horizon_rounding() {
        assert_eq!(horizon_blocks(200, 11), 18);
        assert_eq!(horizon_blocks(3, 11), 1);
    }

    #[test]
    fn constant_series_flagged() {
        let b = bundle(vec![vec![0.0; 66]]);
        let f = block_filter(&b, 11).unwrap();
        assert!(fit_table1(&f, &b.names).unwrap()[0].degenerate);
        let opts = Table2Options {
            belt_reps: 50,
            ..Default::default()
        };
        let rows = table2_intervals(&b, &f, 22, 0.05, &opts).unwrap();
        assert!(rows[0].degenerate);
    }
}
