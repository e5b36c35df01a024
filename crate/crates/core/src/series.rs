use std::ops::Range;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A multivariate time series stored row-major: `len()` observations of
/// dimension `dim()`. Observation `t` (0-based) is `row(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    dim: usize,
    data: Vec<f64>,
}

impl Series {
    pub fn with_capacity(dim: usize, len: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(dim * len),
        }
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Dimension(format!(
                "{} values cannot form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn univariate(values: Vec<f64>) -> Self {
        Self {
            dim: 1,
            data: values,
        }
    }

    pub fn from_rows(rows: &[DVector<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut s = Self::with_capacity(dim.max(1), rows.len());
        s.dim = dim;
        for r in rows {
            s.push(r.as_slice())?;
        }
        Ok(s)
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Dimension(format!(
                "row of length {} pushed into series of dimension {}",
                row.len(),
                self.dim
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn row_vector(&self, t: usize) -> DVector<f64> {
        DVector::from_column_slice(self.row(t))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Copy of the observations with 0-based indices in `range`.
    pub fn slice(&self, range: Range<usize>) -> Series {
        Series {
            dim: self.dim,
            data: self.data[range.start * self.dim..range.end * self.dim].to_vec(),
        }
    }

    /// Mean of the observations with 0-based indices in `range`.
    pub fn mean_over(&self, range: Range<usize>) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim);
        let count = range.len();
        for t in range {
            for (j, v) in self.row(t).iter().enumerate() {
                m[j] += v;
            }
        }
        if count > 0 {
            m /= count as f64;
        }
        m
    }

    /// `(1/N) Σ_t y_{t} y_{t-lag}'` over 0-based `t` in `range`.
    pub(crate) fn cross_moment(&self, range: Range<usize>, lag: usize) -> DMatrix<f64> {
        let n = self.dim;
        let mut acc = DMatrix::zeros(n, n);
        let count = range.len();
        for t in range {
            let a = self.row(t);
            let b = self.row(t - lag);
            for i in 0..n {
                for j in 0..n {
                    acc[(i, j)] += a[i] * b[j];
                }
            }
        }
        if count > 0 {
            acc /= count as f64;
        }
        acc
    }

    /// Adds a constant vector to every observation.
    pub fn shifted(&self, shift: &[f64]) -> Series {
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.dim) {
            for (v, s) in row.iter_mut().zip(shift) {
                *v += s;
            }
        }
        out
    }
}

/// Reads the observed columns of a path CSV.
///
/// Columns whose header is `y_<i>` are collected in order; when there are
/// none, every column except a leading `t`/`date` column is used.
pub fn read_observed_csv(path: impl AsRef<Path>) -> Result<Series> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let mut cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("y_"))
        .map(|(i, _)| i)
        .collect();
    if cols.is_empty() {
        cols = headers
            .iter()
            .enumerate()
            .filter(|(i, h)| !(*i == 0 && matches!(*h, "t" | "date" | "k")))
            .map(|(i, _)| i)
            .collect();
    }
    if cols.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no numeric columns".into(),
        });
    }
    let mut series = Series::with_capacity(cols.len(), 1024);
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = idx + 2;
        let mut row = Vec::with_capacity(cols.len());
        for &c in &cols {
            let cell = record.get(c).ok_or_else(|| Error::Parse {
                line,
                msg: "ragged row".into(),
            })?;
            row.push(cell.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric cell '{cell}'"),
            })?);
        }
        series.push(&row)?;
    }
    if series.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no observations".into(),
        });
    }
    Ok(series)
}
