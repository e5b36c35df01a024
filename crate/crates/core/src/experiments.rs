//! Seeded Monte-Carlo experiments: the simulated-design figure suite, the
//! local-mean variance diagnostic, the drift impossibility demonstration,
//! coverage studies and the second-order formula audit.
//!
//! Every artifact is a pure function of the experiment spec; CSV artifacts
//! carry the spec hash in a `# spec-hash:` comment line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::acf::{averaged_sr_acov, date_index, local_means, regular_grid, sample_acov_distant, AcfEstimate, AcfKind};
use crate::config::KvDocument;
use crate::error::{Error, Result};
use crate::estimator::{estimate, fit_ar1, step1_sr, EstimateConfig, FactorChoice};
use crate::model::{theo_spectrum_univ, theo_acov_univ, AcovVariant, ModelParams, SpectrumVariant};
use crate::prediction::{
    build_belt, invert_two_sided, minmax_interval, plug_in_interval, sorted_quantile, theta_from_rho, ConfidenceBelt,
    QuantileInputs,
};
use crate::rng::{derive_seed, streams, GaussianStream};
use crate::simulator::{simulate_array, simulate_ou};
use crate::svg::{Band, Plot};
use crate::table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    FigSuite,
    Appendix3,
    Impossibility,
    BeltCoverage,
    MinmaxCoverage,
    Audit,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::FigSuite => "fig_suite",
            ExperimentKind::Appendix3 => "appendix3",
            ExperimentKind::Impossibility => "impossibility",
            ExperimentKind::BeltCoverage => "belt_coverage",
            ExperimentKind::MinmaxCoverage => "minmax_coverage",
            ExperimentKind::Audit => "audit",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fig_suite" => ExperimentKind::FigSuite,
            "appendix3" => ExperimentKind::Appendix3,
            "impossibility" => ExperimentKind::Impossibility,
            "belt_coverage" => ExperimentKind::BeltCoverage,
            "minmax_coverage" => ExperimentKind::MinmaxCoverage,
            "audit" => ExperimentKind::Audit,
            other => return Err(Error::Config(format!("unknown experiment kind '{other}'"))),
        })
    }
}

/// Named presets accepted by [`ExperimentSpec::preset`].
pub const PRESETS: [&str; 6] = ["bivariate", "appendix3", "impossibility", "belt_coverage", "minmax_coverage", "audit"];

/// Full description of one experiment. Kind-specific settings live in
/// `options` and take part in the hash.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub kind: ExperimentKind,
    pub params: ModelParams,
    pub t_len: usize,
    pub window: usize,
    pub k: usize,
    pub c_grid: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    /// Artifact names to emit; empty means all.
    pub outputs: Vec<String>,
    pub options: KvDocument,
}

const SPEC_KEYS: [&str; 16] = [
    "name", "kind", "T", "H", "K", "c_grid", "reps", "seed", "outputs", "n", "L", "phi", "omega_half", "a", "theta", "s",
];

impl ExperimentSpec {
    /// Simulated design with `c_k` spaced `1/20` and windows of 60 dates.
    pub fn bivariate() -> Self {
        let (t_len, window, k) = (7200, 60, 20);
        let mut options = KvDocument::new();
        options.set("svg", "true");
        Self {
            name: "bivariate".into(),
            kind: ExperimentKind::FigSuite,
            params: ModelParams::reference_bivariate(),
            t_len,
            window,
            k,
            c_grid: regular_grid(k, t_len, window).expect("preset grid fits"),
            reps: 1,
            seed: 20220216,
            outputs: Vec::new(),
            options,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::bivariate();
        let univariate = |phi, eta, theta, s| ModelParams::univariate(phi, eta, theta, s);
        let mut spec = match name {
            "bivariate" | "fig" => return Ok(base),
            "appendix3" => {
                let mut s = Self {
                    name: name.into(),
                    kind: ExperimentKind::Appendix3,
                    params: univariate(0.0, 1.0, 2.5f64.ln() / 10.0, 1.0)?,
                    reps: 100_000,
                    ..base
                };
                s.options = KvDocument::new();
                s.options.set("c", "0.5");
                s.options.set("h_grid", "30 60 120");
                s
            }
            "impossibility" => {
                let mut s = Self {
                    name: name.into(),
                    kind: ExperimentKind::Impossibility,
                    params: univariate(0.5, 1.0, 1.0, 4.0)?,
                    k: 25,
                    reps: 2000,
                    ..base
                };
                s.options = KvDocument::new();
                s.options.set("t_grid", "7200 28800");
                s.options.set("h_grid", "60 240");
                s
            }
            "belt_coverage" => {
                let mut s = Self {
                    name: name.into(),
                    kind: ExperimentKind::BeltCoverage,
                    k: 25,
                    reps: 10_000,
                    ..base
                };
                s.options = KvDocument::new();
                s.options.set("true_rho", "0.5 0.9");
                s.options.set("alpha1", "0.1");
                s.options.set("belt_reps", "1000");
                s
            }
            "minmax_coverage" => {
                let mut s = Self {
                    name: name.into(),
                    kind: ExperimentKind::MinmaxCoverage,
                    k: 25,
                    reps: 1000,
                    ..base
                };
                s.options = KvDocument::new();
                for (key, v) in [("rho", "0.9"), ("eta", "0.5"), ("gamma", "0.72"), ("alpha", "0.05"), ("belt_reps", "1000")] {
                    s.options.set(key, v);
                }
                s
            }
            "audit" => {
                let mut s = Self {
                    name: name.into(),
                    kind: ExperimentKind::Audit,
                    params: univariate(0.5, 1.0, 2.5f64.ln() / 10.0, 1.0)?,
                    reps: 100_000,
                    ..base
                };
                s.options = KvDocument::new();
                s.options.set("path_reps", "200");
                s.options.set("c_grid_acov", "0.1 0.25 0.5");
                s
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset '{other}'; available: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        spec.c_grid = regular_grid(spec.k, spec.t_len, spec.window)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        doc.set("name", self.name.clone());
        doc.set("kind", self.kind.as_str());
        doc.set("T", self.t_len.to_string());
        doc.set("H", self.window.to_string());
        doc.set("K", self.k.to_string());
        doc.set_numbers("c_grid", &self.c_grid);
        doc.set("reps", self.reps.to_string());
        doc.set("seed", self.seed.to_string());
        doc.set("outputs", self.outputs.join(" "));
        crate::model::write_kv(&mut doc, &self.params);
        for key in self.options.keys() {
            doc.set(key, self.options.get(key).unwrap_or_default());
        }
        doc
    }

    /// Missing keys fall back to the `bivariate` preset; the grid defaults to
    /// the regular grid implied by `T`, `H` and `K`.
    pub fn from_kv(doc: &KvDocument) -> Result<Self> {
        let base = Self::bivariate();
        let kind = match doc.get("kind") {
            Some(k) => k.parse()?,
            None => base.kind,
        };
        let params = if doc.get("n").is_some() {
            ModelParams::from_kv(doc)?
        } else {
            base.params
        };
        let t_len = doc.parsed("T")?.unwrap_or(base.t_len);
        let window = doc.parsed("H")?.unwrap_or(base.window);
        let k = doc.parsed("K")?.unwrap_or(base.k);
        let c_grid = match doc.numbers("c_grid")? {
            Some(g) => g,
            None => regular_grid(k, t_len, window)?,
        };
        let mut options = KvDocument::new();
        for key in doc.keys().filter(|k| !SPEC_KEYS.contains(k)) {
            options.set(key, doc.get(key).unwrap_or_default());
        }
        let spec = Self {
            name: doc.get("name").unwrap_or("custom").to_string(),
            kind,
            params,
            t_len,
            window,
            k,
            c_grid,
            reps: doc.parsed("reps")?.unwrap_or(base.reps),
            seed: doc.parsed("seed")?.unwrap_or(base.seed),
            outputs: doc.get("outputs").map(|s| s.split_whitespace().map(String::from).collect()).unwrap_or_default(),
            options,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A preset name or a path to a key-value spec file.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if PRESETS.contains(&name_or_path) || name_or_path == "fig" {
            Self::preset(name_or_path)
        } else {
            Self::from_kv(&KvDocument::read(name_or_path)?)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_len < 2 || self.window < 1 || self.k < 1 || self.reps < 1 {
            return Err(Error::Config("T >= 2, H >= 1, K >= 1 and reps >= 1 are required".into()));
        }
        for &c in &self.c_grid {
            let start = date_index(c, self.t_len)?;
            if start + self.window > self.t_len {
                return Err(Error::Config(format!(
                    "window at c = {c} covers dates {}..={} beyond T = {}",
                    start + 1,
                    start + self.window,
                    self.t_len
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical key-value rendering.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_kv().render().as_bytes()))
    }

    fn wants(&self, artifact: &str) -> bool {
        self.outputs.is_empty() || self.outputs.iter().any(|o| o == artifact)
    }

    fn option_f64(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.options.parsed(key)?.unwrap_or(default))
    }

    fn option_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        Ok(self.options.numbers(key)?.unwrap_or_else(|| default.to_vec()))
    }
}

/// A written artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub path: PathBuf,
}

struct ArtifactWriter<'a> {
    dir: &'a Path,
    hash: String,
    seed: u64,
    written: Vec<Artifact>,
}

impl<'a> ArtifactWriter<'a> {
    fn new(dir: &'a Path, spec: &ExperimentSpec) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir,
            hash: spec.hash(),
            seed: spec.seed,
            written: Vec::new(),
        })
    }

    fn table(&mut self, file: &str, mut table: Table) -> Result<()> {
        table.comments.insert(0, format!("spec-hash: {}", self.hash));
        table.comments.insert(1, format!("seed: {}", self.seed));
        let path = self.dir.join(file);
        table.write(&path)?;
        self.written.push(Artifact { name: file.into(), path });
        Ok(())
    }

    fn plot(&mut self, file: &str, plot: Plot) -> Result<()> {
        let path = self.dir.join(file);
        plot.write(&path)?;
        self.written.push(Artifact { name: file.into(), path });
        Ok(())
    }

    fn finish(self) -> Result<Vec<Artifact>> {
        let mut manifest = Table::new(["artifact", "spec_hash"]);
        for a in &self.written {
            manifest.push([a.name.as_str(), self.hash.as_str()]);
        }
        manifest.write(self.dir.join("manifest.csv"))?;
        Ok(self.written)
    }
}

/// Outcome of an experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub spec_hash: String,
    pub artifacts: Vec<Artifact>,
    pub notes: Vec<String>,
}

/// Summary statistics of the figure suite.
#[derive(Debug, Clone, PartialEq)]
pub struct FigSuiteOutput {
    pub summary: RunSummary,
    /// Sample correlation between the local-mean series of coordinates `0`
    /// and `j`, for `j = 1..n`.
    pub mean_correlations: Vec<f64>,
    /// Whether each ACF artifact was flagged degenerate.
    pub degenerate: Vec<(String, bool)>,
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

fn acf_plot(title: &str, est: &AcfEstimate) -> Plot {
    let n = est.values[0].nrows();
    let mut plot = Plot::new(title);
    for i in 0..n {
        let g0 = est.values[0][(i, i)];
        let pts = est
            .lags
            .iter()
            .zip(&est.values)
            .map(|(l, g)| (*l as f64, if g0 > 0.0 { g[(i, i)] / g0 } else { 0.0 }))
            .collect();
        plot = plot.line(format!("y_{}", i + 1), pts);
    }
    plot
}

/// Path, local means and the four ACF families of one simulated array.
pub fn run_fig_suite(spec: &ExperimentSpec, out_dir: &Path) -> Result<FigSuiteOutput> {
    spec.validate()?;
    let path = simulate_array(&spec.params, spec.t_len, spec.seed)?;
    let y = &path.y;
    let svg = spec.options.parsed::<bool>("svg")?.unwrap_or(false);
    let mut w = ArtifactWriter::new(out_dir, spec)?;
    let mut degenerate = Vec::new();

    if spec.wants("path") {
        w.table("path.csv", path.to_table())?;
        if svg {
            let stride = (spec.t_len / 2000).max(1);
            let mut plot = Plot::new("simulated trajectory");
            for i in 0..y.dim() {
                let pts = (0..y.len()).step_by(stride).map(|t| ((t + 1) as f64, y.row(t)[i])).collect();
                plot = plot.line(format!("y_{}", i + 1), pts);
            }
            w.plot("path.svg", plot)?;
        }
    }
    let means = local_means(y, &spec.c_grid, spec.window)?;
    let mean_correlations = (1..y.dim())
        .map(|j| {
            let s = means.as_series();
            correlation(&s.column(0), &s.column(j))
        })
        .collect();
    if spec.wants("local_means") {
        w.table("local_means.csv", means.to_table())?;
        if svg {
            let mut plot = Plot::new("local means");
            let s = means.as_series();
            for i in 0..s.dim() {
                let pts = means.c_grid.iter().zip(s.column(i)).map(|(c, v)| (*c, v)).collect();
                plot = plot.line(format!("m_{}", i + 1), pts);
            }
            w.plot("local_means.svg", plot)?;
        }
    }
    let mut emit = |w: &mut ArtifactWriter, name: &str, est: AcfEstimate| -> Result<()> {
        degenerate.push((name.to_string(), est.degenerate));
        if spec.wants(name) {
            if svg {
                w.plot(&format!("{name}.svg"), acf_plot(name, &est))?;
            }
            w.table(&format!("{name}.csv"), est.to_table(None))?;
        }
        Ok(())
    };
    emit(&mut w, "acf_standard", AcfEstimate::standard(y, 1000.min(y.len() - 1))?)?;
    let head = y.slice(0..spec.window.min(y.len()));
    let mut local = AcfEstimate::standard(&head, 15.min(head.len() - 1))?;
    local.kind = AcfKind::Local;
    local.window = Some(head.len());
    local.c_grid = vec![0.0];
    emit(&mut w, "acf_local", local)?;
    let first_start = spec
        .c_grid
        .iter()
        .map(|&c| date_index(c, y.len()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .min()
        .unwrap_or(0);
    let avg_lag = 15.min(spec.window).min(first_start);
    emit(&mut w, "acf_averaged", AcfEstimate::averaged(y, &spec.c_grid, spec.window, avg_lag)?)?;
    let means_lag = 10.min(means.len().saturating_sub(1));
    emit(&mut w, "acf_means", AcfEstimate::of_means(&means, means_lag)?)?;

    let mut notes = Vec::new();
    if degenerate.iter().any(|d| d.1) {
        notes.push("zero variance: correlations undefined".into());
    }
    let spec_hash = w.hash.clone();
    Ok(FigSuiteOutput {
        summary: RunSummary {
            spec_hash,
            artifacts: w.finish()?,
            notes,
        },
        mean_correlations,
        degenerate,
    })
}

/// One window length of the local-mean variance diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Appendix3Row {
    pub window: usize,
    /// `H · Var(Δ)` over the replications.
    pub empirical: f64,
    /// `(1/3) s² e^{2θc} H² / T`.
    pub predicted: f64,
    /// Exact `H · Var(Δ)` for an OU started at zero.
    pub exact: f64,
    pub ratio: f64,
    /// Set when `H² > T`, outside the regime of the expansion.
    pub too_large: bool,
}

/// Variance of `Δ = (1/H) Σ_{j=1}^{H} [y_l(c + j/T) - e^{-θj/T} y_l(c)]`, the
/// window mean of the future Brownian contribution, against its printed
/// small-window approximation.
pub fn appendix3_variance_check(
    theta: f64,
    s: f64,
    c: f64,
    windows: &[usize],
    t_len: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<Appendix3Row>> {
    if !(theta > 0.0) || s < 0.0 || t_len < 1 || reps < 2 {
        return Err(Error::InvalidParameter("need θ > 0, s >= 0, T >= 1 and reps >= 2".into()));
    }
    let rho = (-theta / t_len as f64).exp();
    let sd = s * ((1.0 - rho * rho) / (2.0 * theta)).sqrt();
    windows
        .iter()
        .enumerate()
        .map(|(wi, &h)| {
            if h < 1 {
                return Err(Error::Window("window must be >= 1".into()));
            }
            let cell = derive_seed(seed, wi as u64);
            let (sum, sumsq) = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let mut g = GaussianStream::new(derive_seed(cell, r as u64), streams::LONG_RUN);
                    let (mut x, mut acc) = (0.0, 0.0);
                    for _ in 0..h {
                        x = rho * x + sd * g.next_normal();
                        acc += x;
                    }
                    let m = acc / h as f64;
                    (m, m * m)
                })
                .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            let n = reps as f64;
            let var = (sumsq - sum * sum / n) / (n - 1.0);
            let empirical = h as f64 * var.max(0.0);
            let mut exact = 0.0;
            for i in 1..=h {
                let wgt = (1.0 - rho.powi((h - i + 1) as i32)) / (1.0 - rho);
                exact += wgt * wgt;
            }
            exact *= sd * sd / h as f64;
            let predicted = s * s * (2.0 * theta * c).exp() * (h * h) as f64 / (3.0 * t_len as f64);
            Ok(Appendix3Row {
                window: h,
                empirical,
                predicted,
                exact,
                ratio: if predicted > 0.0 { empirical / predicted } else { f64::NAN },
                too_large: h * h > t_len,
            })
        })
        .collect()
}

pub fn appendix3_table(rows: &[Appendix3Row]) -> Table {
    let mut t = Table::new(["H", "empirical", "predicted", "exact", "ratio", "too_large"]);
    for r in rows {
        t.push_strings(vec![
            r.window.to_string(),
            r.empirical.to_string(),
            r.predicted.to_string(),
            r.exact.to_string(),
            r.ratio.to_string(),
            r.too_large.to_string(),
        ]);
    }
    t
}

/// Interquartile range of a sample; `NaN` with fewer than two values.
pub fn iqr(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    sorted_quantile(&v, 0.75) - sorted_quantile(&v, 0.25)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionRow {
    pub t_len: usize,
    pub window: usize,
    pub theta_hat: Vec<f64>,
    pub phi_hat: Vec<f64>,
    pub iqr_theta: f64,
    pub iqr_phi: f64,
    /// Dispersion is undefined for a single replication.
    pub undefined: bool,
}

/// Dispersion of `θ̂` and `φ̂` as `T` grows with `K` fixed. Windows scale with
/// `T` so the short-run sample `K·H` grows while the long-run sample stays at
/// `K` points.
pub fn impossibility_demo(
    params: &ModelParams,
    k: usize,
    designs: &[(usize, usize)],
    reps: usize,
    seed: u64,
) -> Result<Vec<DispersionRow>> {
    if !params.is_univariate() {
        return Err(Error::UnsupportedDimension("impossibility demo needs n = L = 1".into()));
    }
    designs
        .iter()
        .enumerate()
        .map(|(di, &(t_len, window))| {
            let grid = regular_grid(k, t_len, window)?;
            let cell = derive_seed(seed, di as u64);
            let draws = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let path = simulate_array(params, t_len, derive_seed(cell, r as u64))?;
                    let g0 = averaged_sr_acov(&path.y, &grid, window, 0)?;
                    let g1 = averaged_sr_acov(&path.y, &grid, window, 1)?;
                    let phi = step1_sr(&g0, &g1)?.phi_hat[(0, 0)];
                    let means = local_means(&path.y, &grid, window)?;
                    let theta = theta_from_rho(fit_ar1(&means.as_series().column(0))?.rho, k as f64);
                    Ok((theta, phi))
                })
                .collect::<Result<Vec<_>>>()?;
            let theta_hat: Vec<f64> = draws.iter().map(|d| d.0).collect();
            let phi_hat: Vec<f64> = draws.iter().map(|d| d.1).collect();
            Ok(DispersionRow {
                t_len,
                window,
                iqr_theta: iqr(&theta_hat),
                iqr_phi: iqr(&phi_hat),
                undefined: reps < 2,
                theta_hat,
                phi_hat,
            })
        })
        .collect()
}

pub fn dispersion_table(rows: &[DispersionRow]) -> Table {
    let mut t = Table::new(["T", "H", "reps", "iqr_theta", "iqr_phi", "ratio_theta", "ratio_phi", "undefined"]);
    let base = rows.first();
    for r in rows {
        let (rt, rp) = base.map(|b| (r.iqr_theta / b.iqr_theta, r.iqr_phi / b.iqr_phi)).unwrap_or((f64::NAN, f64::NAN));
        t.push_strings(vec![
            r.t_len.to_string(),
            r.window.to_string(),
            r.theta_hat.len().to_string(),
            r.iqr_theta.to_string(),
            r.iqr_phi.to_string(),
            rt.to_string(),
            rp.to_string(),
            r.undefined.to_string(),
        ]);
    }
    t
}

/// Per-replication summary of a full estimation run on simulated data.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationDraw {
    pub seed: u64,
    pub phi_hat: DMatrix<f64>,
    pub gamma0_hat: DMatrix<f64>,
    pub gamma1_hat: DMatrix<f64>,
    pub l_hat: usize,
    /// `|<â_1, a/|a|>|` for the first true loading column; zero when no
    /// factor is selected.
    pub alignment: f64,
}

/// Runs [`estimate`] on one simulated array per seed.
pub fn estimation_study(
    params: &ModelParams,
    t_len: usize,
    window: usize,
    k: usize,
    factor_rule: FactorChoice,
    seeds: &[u64],
) -> Result<Vec<EstimationDraw>> {
    let mut config = EstimateConfig::regular(k, t_len, window)?;
    config.factor_rule = factor_rule;
    let a_true = params.ulr.a_mat.column(0).normalize();
    seeds
        .par_iter()
        .map(|&seed| {
            let path = simulate_array(params, t_len, seed)?;
            let report = estimate(&path.y, &config)?;
            let alignment = if report.factors.l_hat > 0 {
                report.factors.a_hat.column(0).dot(&a_true).abs()
            } else {
                0.0
            };
            Ok(EstimationDraw {
                seed,
                phi_hat: report.short_run.phi_hat.clone(),
                gamma0_hat: averaged_sr_acov(&path.y, &config.c_grid, window, 0)?,
                gamma1_hat: averaged_sr_acov(&path.y, &config.c_grid, window, 1)?,
                l_hat: report.factors.l_hat,
                alignment,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageRow {
    pub rho: f64,
    pub coverage: f64,
    pub std_err: f64,
    pub reps: usize,
}

/// Frequency with which the inverted `1 - α₁` belt set covers each true `ρ`.
pub fn belt_coverage(belt: &ConfidenceBelt, true_rhos: &[f64], alpha1: f64, reps: usize, seed: u64) -> Result<Vec<CoverageRow>> {
    if reps < 1 {
        return Err(Error::InvalidParameter("coverage needs reps >= 1".into()));
    }
    true_rhos
        .iter()
        .enumerate()
        .map(|(i, &rho)| {
            let cell = derive_seed(seed, i as u64);
            let hits = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let rho_hat = crate::prediction::simulate_rho_hat(rho, belt.k, derive_seed(cell, r as u64))?;
                    Ok(invert_two_sided(belt, rho_hat, alpha1)?.contains(rho) as usize)
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .sum::<usize>();
            let p = hits as f64 / reps as f64;
            Ok(CoverageRow {
                rho,
                coverage: p,
                std_err: (p * (1.0 - p) / reps as f64).sqrt(),
                reps,
            })
        })
        .collect()
}

/// Design of the prediction coverage study: the long-run factor observed on
/// `K+1` points of a stationary AR(1) with unit variance, forecast at horizon
/// `γ` with an additive short-run noise of scale `η`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinmaxDesign {
    pub k: usize,
    pub rho: f64,
    pub eta: f64,
    pub gamma: f64,
    pub alpha: f64,
}

impl MinmaxDesign {
    pub fn theta(&self) -> f64 {
        -(self.k as f64) * self.rho.ln()
    }

    /// Diffusion making the factor's stationary variance one.
    pub fn s(&self) -> f64 {
        (2.0 * self.theta()).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinmaxCoverage {
    pub design: MinmaxDesign,
    pub reps: usize,
    pub coverage_minmax: f64,
    pub coverage_plug_in: f64,
    pub mean_minmax: f64,
    pub mean_plug_in: f64,
    /// Largest `|Σ decomposition - Q*|` over replications.
    pub max_identity_error: f64,
}

/// One-sided coverage of the min-max and plug-in bounds on simulated futures.
pub fn minmax_coverage(design: &MinmaxDesign, belt: &ConfidenceBelt, reps: usize, seed: u64) -> Result<MinmaxCoverage> {
    if belt.k != design.k {
        return Err(Error::InvalidParameter("belt and design disagree on K".into()));
    }
    if !(design.rho > 0.0 && design.rho < 1.0) || reps < 1 {
        return Err(Error::InvalidParameter("need 0 < ρ < 1 and reps >= 1".into()));
    }
    let (theta, s) = (design.theta(), design.s());
    let scale = (1.0 - design.rho * design.rho).sqrt();
    let decay = (-theta * design.gamma).exp();
    let cond_sd = (1.0 - decay * decay).sqrt();
    let draws = (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(seed, r as u64);
            let mut g = GaussianStream::new(rep_seed, streams::LONG_RUN);
            let mut x = g.next_normal();
            let mut path = vec![x];
            for _ in 0..design.k {
                x = design.rho * x + scale * g.next_normal();
                path.push(x);
            }
            let rho_hat = fit_ar1(&path)?.rho;
            let inputs = QuantileInputs {
                eta: design.eta,
                s,
                y_l: x,
                gamma: design.gamma,
            };
            let pi = minmax_interval(design.alpha, belt, rho_hat, &inputs)?;
            let plug = plug_in_interval(design.alpha, theta_from_rho(rho_hat, design.k as f64), &inputs)?;
            let mut f = GaussianStream::new(rep_seed, streams::FUTURE);
            let future = decay * x + cond_sd * f.next_normal() + design.eta * f.next_normal();
            let err = (pi.decomposition.iter().sum::<f64>() - pi.upper).abs();
            Ok((future <= pi.upper, future <= plug, pi.upper, plug, err))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = reps as f64;
    Ok(MinmaxCoverage {
        design: *design,
        reps,
        coverage_minmax: draws.iter().filter(|d| d.0).count() as f64 / n,
        coverage_plug_in: draws.iter().filter(|d| d.1).count() as f64 / n,
        mean_minmax: draws.iter().map(|d| d.2).sum::<f64>() / n,
        mean_plug_in: draws.iter().map(|d| d.3).sum::<f64>() / n,
        max_identity_error: draws.iter().map(|d| d.4).fold(0.0, f64::max),
    })
}

/// Composite Simpson rule on `[0, π]` with geometrically spaced breakpoints,
/// doubled for the symmetric integrand on `(-π, π]`.
pub fn integrate_symmetric(f: impl Fn(f64) -> f64) -> f64 {
    const SEGMENTS: usize = 800;
    const SUB: usize = 8;
    let lo = 1e-12f64;
    let mut edges = vec![0.0];
    edges.extend((0..=SEGMENTS).map(|i| lo * (std::f64::consts::PI / lo).powf(i as f64 / SEGMENTS as f64)));
    let mut total = 0.0;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let h = (b - a) / SUB as f64;
        let mut acc = f(a) + f(b);
        for j in 1..SUB {
            acc += f(a + j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
        }
        total += acc * h / 3.0;
    }
    2.0 * total
}

/// Numeric check of the printed and normalized spectral forms, and of the
/// printed and stationary autocovariance forms at distant lags.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumAudit {
    pub t_len: usize,
    pub integral_ulr_printed: f64,
    pub integral_ulr_normalized: f64,
    pub integral_total_printed: f64,
    pub integral_total_normalized: f64,
    pub analytic_ulr_variance: f64,
    pub simulated_ulr_variance: f64,
    pub factor_printed: f64,
    pub factor_normalized: f64,
    /// `(c, printed, stationary_ou, simulated raw cross-moment)`.
    pub acov_rows: Vec<(f64, f64, f64, f64)>,
}

impl SpectrumAudit {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["quantity", "value"]);
        let mut put = |k: &str, v: f64| t.push_strings(vec![k.into(), v.to_string()]);
        put("integral_ulr_printed", self.integral_ulr_printed);
        put("integral_ulr_normalized", self.integral_ulr_normalized);
        put("integral_total_printed", self.integral_total_printed);
        put("integral_total_normalized", self.integral_total_normalized);
        put("analytic_ulr_variance", self.analytic_ulr_variance);
        put("simulated_ulr_variance", self.simulated_ulr_variance);
        put("factor_printed", self.factor_printed);
        put("factor_normalized", self.factor_normalized);
        for &(c, p, s, m) in &self.acov_rows {
            put(&format!("acov_printed_c{c}"), p);
            put(&format!("acov_stationary_ou_c{c}"), s);
            put(&format!("acov_simulated_c{c}"), m);
        }
        t
    }
}

pub fn spectrum_audit(
    params: &ModelParams,
    t_len: usize,
    draws: usize,
    path_reps: usize,
    acov_cs: &[f64],
    seed: u64,
) -> Result<SpectrumAudit> {
    let (phi, theta, s) = (params.phi()?, params.theta()?, params.s()?);
    let ulr_only = ModelParams::univariate(phi, 0.0, theta, s)?;
    let t = t_len as u64;
    let spec = |p: &ModelParams, v: SpectrumVariant| integrate_symmetric(|w| theo_spectrum_univ(p, t, w, v).unwrap_or(f64::NAN));
    let integral_ulr_printed = spec(&ulr_only, SpectrumVariant::Printed);
    let integral_ulr_normalized = spec(&ulr_only, SpectrumVariant::Normalized);
    let integral_total_printed = spec(params, SpectrumVariant::Printed);
    let integral_total_normalized = spec(params, SpectrumVariant::Normalized);

    // Stationary draws of y_l(1) after one exact transition over the unit interval.
    let values = (0..draws)
        .into_par_iter()
        .map(|r| simulate_ou(&params.ulr, &[0.0, 1.0], derive_seed(seed, r as u64)).map(|p| p.row(1)[0]))
        .collect::<Result<Vec<_>>>()?;
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let simulated_ulr_variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);

    let path_seed = derive_seed(seed, u64::MAX);
    let moments = (0..path_reps)
        .into_par_iter()
        .map(|r| {
            let path = simulate_array(params, t_len, derive_seed(path_seed, r as u64))?;
            acov_cs
                .iter()
                .map(|&c| sample_acov_distant(&path.y, c, false).map(|m| m[(0, 0)]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acov_rows = Vec::new();
    for (j, &c) in acov_cs.iter().enumerate() {
        let h = date_index(c, t_len)? as u64;
        let sim = moments.iter().map(|m| m[j]).sum::<f64>() / moments.len().max(1) as f64;
        acov_rows.push((
            c,
            theo_acov_univ(params, t, h, AcovVariant::Printed)?,
            theo_acov_univ(params, t, h, AcovVariant::StationaryOu)?,
            sim,
        ));
    }
    Ok(SpectrumAudit {
        t_len,
        integral_ulr_printed,
        integral_ulr_normalized,
        integral_total_printed,
        integral_total_normalized,
        analytic_ulr_variance: s * s / (2.0 * theta),
        simulated_ulr_variance,
        factor_printed: integral_ulr_printed / simulated_ulr_variance,
        factor_normalized: integral_ulr_normalized / simulated_ulr_variance,
        acov_rows,
    })
}

fn coverage_table(rows: &[CoverageRow]) -> Table {
    let mut t = Table::new(["rho", "coverage", "std_err", "reps"]);
    for r in rows {
        t.push([r.rho, r.coverage, r.std_err, r.reps as f64]);
    }
    t
}

/// Runs any experiment kind and writes its artifacts and manifest.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunSummary> {
    spec.validate()?;
    if spec.kind == ExperimentKind::FigSuite {
        return Ok(run_fig_suite(spec, out_dir)?.summary);
    }
    let mut w = ArtifactWriter::new(out_dir, spec)?;
    let mut notes = Vec::new();
    match spec.kind {
        ExperimentKind::FigSuite => unreachable!(),
        ExperimentKind::Appendix3 => {
            let windows: Vec<usize> = spec.option_list("h_grid", &[spec.window as f64])?.iter().map(|h| *h as usize).collect();
            let rows = appendix3_variance_check(
                spec.params.theta()?,
                spec.params.s()?,
                spec.option_f64("c", 0.5)?,
                &windows,
                spec.t_len,
                spec.reps,
                spec.seed,
            )?;
            for r in rows.iter().filter(|r| r.too_large) {
                notes.push(format!("H = {} is large relative to T; expansion not reliable", r.window));
            }
            w.table("appendix3.csv", appendix3_table(&rows))?;
        }
        ExperimentKind::Impossibility => {
            let ts = spec.option_list("t_grid", &[spec.t_len as f64])?;
            let hs = spec.option_list("h_grid", &[spec.window as f64])?;
            if ts.len() != hs.len() {
                return Err(Error::Config("t_grid and h_grid must have equal length".into()));
            }
            let designs: Vec<(usize, usize)> = ts.iter().zip(&hs).map(|(t, h)| (*t as usize, *h as usize)).collect();
            let rows = impossibility_demo(&spec.params, spec.k, &designs, spec.reps, spec.seed)?;
            if rows.iter().any(|r| r.undefined) {
                notes.push("dispersion undefined with a single replication".into());
            }
            w.table("impossibility.csv", dispersion_table(&rows))?;
        }
        ExperimentKind::BeltCoverage => {
            let belt = build_belt(
                spec.k,
                &crate::prediction::default_rho_grid(),
                &crate::prediction::DEFAULT_LEVELS,
                spec.option_f64("belt_reps", 1000.0)? as usize,
                spec.seed,
            )?;
            let rows = belt_coverage(
                &belt,
                &spec.option_list("true_rho", &[0.5, 0.9])?,
                spec.option_f64("alpha1", 0.1)?,
                spec.reps,
                derive_seed(spec.seed, 1),
            )?;
            w.table("belt.csv", belt.to_table())?;
            w.table("belt_coverage.csv", coverage_table(&rows))?;
            if spec.options.parsed::<bool>("svg")?.unwrap_or(true) {
                let lo = belt.curve(0.05);
                let hi = belt.curve(0.95);
                let plot = Plot::new("confidence belt (5% and 95% quantiles of rho_hat)")
                    .band(Band {
                        x: belt.rho_grid.clone(),
                        lower: lo,
                        upper: hi,
                    })
                    .line("median", belt.rho_grid.iter().copied().zip(belt.curve(0.5)).collect())
                    .line("diagonal", belt.rho_grid.iter().map(|r| (*r, *r)).collect());
                w.plot("belt.svg", plot)?;
            }
        }
        ExperimentKind::MinmaxCoverage => {
            let design = MinmaxDesign {
                k: spec.k,
                rho: spec.option_f64("rho", 0.9)?,
                eta: spec.option_f64("eta", 0.5)?,
                gamma: spec.option_f64("gamma", 0.72)?,
                alpha: spec.option_f64("alpha", 0.05)?,
            };
            let belt = build_belt(
                spec.k,
                &crate::prediction::default_rho_grid(),
                &crate::prediction::DEFAULT_LEVELS,
                spec.option_f64("belt_reps", 1000.0)? as usize,
                spec.seed,
            )?;
            let cov = minmax_coverage(&design, &belt, spec.reps, derive_seed(spec.seed, 1))?;
            let mut t = Table::new(["quantity", "value"]);
            for (k, v) in [
                ("coverage_minmax", cov.coverage_minmax),
                ("coverage_plug_in", cov.coverage_plug_in),
                ("mean_minmax", cov.mean_minmax),
                ("mean_plug_in", cov.mean_plug_in),
                ("max_identity_error", cov.max_identity_error),
            ] {
                t.push_strings(vec![k.into(), v.to_string()]);
            }
            w.table("minmax_coverage.csv", t)?;
        }
        ExperimentKind::Audit => {
            let audit = spectrum_audit(
                &spec.params,
                spec.t_len,
                spec.reps,
                spec.option_f64("path_reps", 200.0)? as usize,
                &spec.option_list("c_grid_acov", &[0.1, 0.25, 0.5])?,
                spec.seed,
            )?;
            notes.push(format!(
                "printed spectrum integrates to {:.4} times the simulated ULR variance",
                audit.factor_printed
            ));
            w.table("audit.csv", audit.to_table())?;
        }
    }
    let spec_hash = w.hash.clone();
    Ok(RunSummary {
        spec_hash,
        artifacts: w.finish()?,
        notes,
    })
}
