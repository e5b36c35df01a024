use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use longrun::acf::{regular_grid, AcfEstimate, LocalMeans};
use longrun::config::KvDocument;
use longrun::estimator::{estimate, EstimateConfig, FactorChoice, ReportTable};
use longrun::experiments::{run_experiment, ExperimentSpec};
use longrun::model::{AConvention, ModelParams};
use longrun::pipeline::{apply, ApplyConfig, Table2Options};
use longrun::prediction::{build_belt, default_rho_grid, inputs_from_report, interval_table, minmax_interval, DEFAULT_LEVELS};
use longrun::series::read_observed_csv;
use longrun::simulator::{simulate_array_with, simulate_ltu, tail_prob, LtuTag, LtuVariant};
use longrun::svg::{Band, Plot};
use longrun::table::Table;

#[derive(Parser)]
#[command(name = "longrun", version, about = "Short-run / ultra-long-run SVAR toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the observed array with its latent components.
    Simulate(SimulateArgs),
    /// Simulate local-to-unity variants and their tail diagnostics.
    Ltu(LtuArgs),
    /// Sample autocovariances of a path CSV.
    Acf(AcfArgs),
    /// Run the five-step estimation on a path CSV.
    Estimate(EstimateArgs),
    /// Tabulate the confidence belt of the AR(1) estimator.
    Belt(BeltArgs),
    /// Min-max prediction bound from an estimation report.
    Predict(PredictArgs),
    /// Run a preset or a spec-file experiment.
    Experiment {
        #[command(subcommand)]
        action: ExperimentAction,
    },
    /// Apply the method to observed series.
    Apply(ApplyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Model file (keys n, L, phi, omega_half, a, theta, s); the reference
    /// bivariate model when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "t", default_value_t = 7200)]
    t_len: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Orthonormalize the loadings before simulating.
    #[arg(long)]
    normalized_a: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LtuArgs {
    /// Variant tags, or `all`.
    #[arg(long, num_args = 1.., default_values_t = vec!["all".to_string()])]
    variant: Vec<String>,
    #[arg(long = "t", default_value_t = 1000)]
    t_len: usize,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    d: f64,
    /// Tail threshold in units of sigma.
    #[arg(long, default_value_t = 4.0)]
    level: f64,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AcfKindArg {
    Standard,
    Local,
    Averaged,
    Means,
    Distant,
}

#[derive(Args)]
struct AcfArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "standard")]
    kind: AcfKindArg,
    #[arg(long, default_value_t = 15)]
    max_lag: usize,
    /// Window start fraction for `local`.
    #[arg(long, default_value_t = 0.0)]
    c: f64,
    #[arg(long, default_value_t = 60)]
    window: usize,
    /// Number of windows of the regular grid.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Fractions `c` for `distant`.
    #[arg(long, num_args = 1.., default_values_t = vec![0.1, 0.25, 0.5])]
    c_values: Vec<f64>,
    /// Demean the distant-lag cross-moment.
    #[arg(long)]
    demean: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FactorRuleArg {
    Significance,
    TraceShare,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    /// Key-value file with `H`, `K` or `c_grid`, `factor_rule`, `threshold`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    factor_rule: Option<FactorRuleArg>,
    /// Test level for `significance`, share for `trace-share`.
    #[arg(long)]
    threshold: Option<f64>,
    /// Also compute step-5 residuals on the grid.
    #[arg(long)]
    residuals: bool,
    /// Output directory for `report.txt` and `estimates.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BeltArgs {
    #[arg(long, default_value_t = 25)]
    k: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 20220216)]
    seed: u64,
    #[arg(long, num_args = 1.., default_values_t = DEFAULT_LEVELS.to_vec())]
    levels: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write an SVG next to the CSV.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// `estimates.csv` written by `estimate`.
    #[arg(long)]
    report: PathBuf,
    /// Horizon as a fraction of the sample length.
    #[arg(long)]
    gamma: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// 1-based observed coordinate to forecast.
    #[arg(long, default_value_t = 1)]
    coordinate: usize,
    #[arg(long, default_value_t = 1000)]
    belt_reps: usize,
    #[arg(long, default_value_t = 20220216)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ExperimentAction {
    /// Run a preset name or a key-value spec file.
    Run {
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ApplyArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 11)]
    block: usize,
    #[arg(long, default_value_t = 200)]
    horizon: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    ar_order: usize,
    #[arg(long, default_value_t = 1000)]
    belt_reps: usize,
    #[arg(long, default_value_t = 20220216)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Ltu(a) => ltu(a),
        Command::Acf(a) => acf(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Belt(a) => belt(a),
        Command::Predict(a) => predict(a),
        Command::Experiment {
            action: ExperimentAction::Run { spec, out },
        } => {
            let spec = ExperimentSpec::load(&spec).with_context(|| format!("loading experiment '{spec}'"))?;
            let summary = run_experiment(&spec, &out)?;
            println!("spec-hash {}", summary.spec_hash);
            for a in &summary.artifacts {
                println!("wrote {}", a.path.display());
            }
            for n in &summary.notes {
                println!("note: {n}");
            }
            Ok(())
        }
        Command::Apply(a) => {
            let config = ApplyConfig {
                block_len: a.block,
                horizon: a.horizon,
                alpha: a.alpha,
                table2: Table2Options {
                    ar_order: a.ar_order,
                    belt_reps: a.belt_reps,
                    seed: a.seed,
                },
            };
            let report = apply(&a.input, &config, Some(&a.out)).with_context(|| format!("applying to {}", a.input.display()))?;
            print!("{}", report.log);
            Ok(())
        }
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let params = match &a.config {
        Some(p) => ModelParams::from_kv(&KvDocument::read(p)?).with_context(|| format!("reading {}", p.display()))?,
        None => ModelParams::reference_bivariate(),
    };
    let convention = if a.normalized_a { AConvention::Normalized } else { AConvention::Raw };
    let path = simulate_array_with(&params, a.t_len, a.seed, convention)?;
    ensure_parent(&a.out)?;
    path.write_csv(&a.out)?;
    println!("wrote {} dates to {}", a.t_len, a.out.display());
    Ok(())
}

fn ltu(a: LtuArgs) -> Result<()> {
    let tags: Vec<LtuTag> = if a.variant.iter().any(|v| v == "all") {
        LtuTag::ALL.to_vec()
    } else {
        a.variant.iter().map(|v| v.parse()).collect::<longrun::Result<_>>()?
    };
    std::fs::create_dir_all(&a.out)?;
    let mut summary = Table::new(["variant", "T", "level", "prob", "std_err", "t_at_max", "reps"]);
    for tag in tags {
        let variant = LtuVariant::with_defaults(tag, a.c, a.sigma, a.d)?;
        let path = simulate_ltu(&variant, a.t_len, a.seed)?;
        let mut t = Table::new(["t", "y"]);
        t.comment(format!("variant: {variant}"));
        for (i, y) in path.iter().enumerate() {
            t.push([(i + 1) as f64, *y]);
        }
        t.write(a.out.join(format!("ltu_{}.csv", tag.as_str())))?;
        let tail = tail_prob(&variant, a.t_len, a.level * a.sigma, a.reps, a.seed)?;
        summary.push_strings(vec![
            tag.as_str().into(),
            a.t_len.to_string(),
            (a.level * a.sigma).to_string(),
            tail.prob.to_string(),
            tail.std_err.to_string(),
            tail.t_at_max.to_string(),
            tail.reps.to_string(),
        ]);
    }
    summary.write(a.out.join("tail_summary.csv"))?;
    println!("wrote {}", a.out.join("tail_summary.csv").display());
    Ok(())
}

fn acf(a: AcfArgs) -> Result<()> {
    let y = read_observed_csv(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let est = match a.kind {
        AcfKindArg::Standard => AcfEstimate::standard(&y, a.max_lag)?,
        AcfKindArg::Local => AcfEstimate::local(&y, a.c, a.window, a.max_lag)?,
        AcfKindArg::Averaged => AcfEstimate::averaged(&y, &regular_grid(a.k, y.len(), a.window)?, a.window, a.max_lag)?,
        AcfKindArg::Means => {
            let means: LocalMeans = longrun::acf::local_means(&y, &regular_grid(a.k, y.len(), a.window)?, a.window)?;
            AcfEstimate::of_means(&means, a.max_lag.min(means.len().saturating_sub(1)))?
        }
        AcfKindArg::Distant => AcfEstimate::distant(&y, &a.c_values, a.demean)?,
    };
    ensure_parent(&a.out)?;
    est.to_table(None).write(&a.out)?;
    if est.degenerate {
        eprintln!("warning: zero variance, correlations undefined");
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn estimate_cmd(a: EstimateArgs) -> Result<()> {
    let y = read_observed_csv(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let doc = match &a.config {
        Some(p) => KvDocument::read(p)?,
        None => KvDocument::new(),
    };
    let window = a.window.or(doc.parsed("H")?).unwrap_or(60);
    let k = a.k.or(doc.parsed("K")?).unwrap_or(20);
    let mut config = match doc.numbers("c_grid")? {
        Some(grid) => {
            let mut c = EstimateConfig::regular(1, y.len(), window)?;
            c.k_scale = grid.len() as f64;
            c.c_grid = grid;
            c
        }
        None => EstimateConfig::regular(k, y.len(), window)?,
    };
    let rule = match a.factor_rule {
        Some(FactorRuleArg::Significance) => "significance".to_string(),
        Some(FactorRuleArg::TraceShare) => "trace_share".to_string(),
        None => doc.get("factor_rule").unwrap_or("significance").to_string(),
    };
    let threshold = a.threshold.or(doc.parsed("threshold")?);
    config.factor_rule = match rule.as_str() {
        "significance" => FactorChoice::Significance(threshold.unwrap_or(0.01)),
        "trace_share" => FactorChoice::TraceShare(threshold.unwrap_or(0.05)),
        other => bail!("unknown factor rule '{other}'"),
    };
    if a.residuals {
        config.residual_grid = Some(config.c_grid.iter().map(|c| c + window as f64 / y.len() as f64).collect());
    }
    let report = estimate(&y, &config)?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("report.txt"), report.render_text())?;
    report.to_table().write(a.out.join("estimates.csv"))?;
    print!("{}", report.render_text());
    Ok(())
}

fn belt(a: BeltArgs) -> Result<()> {
    let belt = build_belt(a.k, &default_rho_grid(), &a.levels, a.reps, a.seed)?;
    ensure_parent(&a.out)?;
    belt.to_table().write(&a.out)?;
    if a.svg {
        let lo = *belt.levels.first().expect("levels");
        let hi = *belt.levels.last().expect("levels");
        let plot = Plot::new(format!("confidence belt, K = {}", a.k))
            .band(Band {
                x: belt.rho_grid.clone(),
                lower: belt.curve(lo),
                upper: belt.curve(hi),
            })
            .line("median", belt.rho_grid.iter().copied().zip(belt.curve(0.5)).collect())
            .line("diagonal", belt.rho_grid.iter().map(|r| (*r, *r)).collect());
        plot.write(a.out.with_extension("svg"))?;
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    if a.coordinate == 0 {
        bail!("coordinates are 1-based");
    }
    let report = ReportTable::read(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let (inputs, rho_hat, k) = inputs_from_report(&report, a.coordinate - 1, a.gamma)?;
    let belt = build_belt(k, &default_rho_grid(), &DEFAULT_LEVELS, a.belt_reps, a.seed)?;
    let pi = minmax_interval(a.alpha, &belt, rho_hat, &inputs)?;
    ensure_parent(&a.out)?;
    interval_table(&pi).write(&a.out)?;
    println!(
        "upper bound {:.6} (plug-in {:.6}, alpha1* {:.5}, theta* {:.5})",
        pi.upper, pi.plug_in, pi.alpha1_star, pi.theta_star
    );
    Ok(())
}
