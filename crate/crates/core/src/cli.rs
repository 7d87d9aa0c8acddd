//! Command-line front end.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage, input or configuration error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimateResult, EstimatorKind, EstimatorOptions};
use crate::inference::{
    asymptotic_covariance, qlm_confidence_set, qlm_test, wald_unit_root, LinearHypothesis, QlmOptions, QlmResult,
    QlmVariant, WaldResult, DELTA_SING,
};
use crate::limit::{signed_root_mean, draw_limit_law, mean_sd};
use crate::panel::PanelDataset;

#[derive(Debug, Parser)]
#[command(name = "panel-mmle", version, about = "Modified ML estimation and tests for panel AR(1) models")]
pub struct Cli {
    /// worker threads (defaults to all cores)
    #[arg(long, global = true, env = "PANEL_MMLE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate rho, sigma^2 and beta from a panel CSV
    Estimate(EstimateArgs),
    /// Quasi-LM, unit-root Wald test or QLM confidence set
    Test(TestArgs),
    /// Run a Monte Carlo experiment config
    Experiment(ExperimentArgs),
    /// Simulate the limit law at rho = 1
    Limitdist(LimitArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct PanelArgs {
    /// panel CSV with columns unit,period,y,x1..xK
    #[arg(long)]
    pub data: PathBuf,
    /// remove time effects by cross-sectional demeaning
    #[arg(long)]
    pub time_effects: bool,
    /// keep period 0 as is when removing time effects
    #[arg(long)]
    pub no_demean_initial: bool,
}

impl PanelArgs {
    fn load(&self) -> Result<PanelDataset> {
        let f = File::open(&self.data)
            .map_err(|e| Error::Usage(format!("cannot open {}: {e}", self.data.display())))?;
        let d = PanelDataset::read_csv(BufReader::new(f))?;
        if self.time_effects {
            if d.n_units() < 2 {
                return Err(Error::InvalidPanel("time effects need at least two units".into()));
            }
            return Ok(d.demean_cross_section(!self.no_demean_initial));
        }
        Ok(d)
    }
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    pub rmin: f64,
    #[arg(long, default_value_t = 1.4)]
    pub rmax: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub grid_step: f64,
    /// golden-section tolerance
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 8)]
    pub multistarts: usize,
    /// weight matrix for W and F: `identity` or `diag:a,b,...`
    #[arg(long, default_value = "identity")]
    pub weight: String,
}

impl SolverArgs {
    fn options(&self, k: usize) -> Result<EstimatorOptions> {
        if !(self.rmin < self.rmax) || !(self.grid_step > 0.0) || !(self.tol > 0.0) {
            return Err(Error::Usage("need rmin < rmax and positive grid step and tolerance".into()));
        }
        Ok(EstimatorOptions {
            r_min: self.rmin,
            r_max: self.rmax,
            grid_step: self.grid_step,
            golden_tol: self.tol,
            multistarts: self.multistarts.max(1),
            weight: parse_weight(&self.weight, 2 + k)?,
            ..EstimatorOptions::default()
        })
    }
}

fn parse_weight(s: &str, p: usize) -> Result<Option<DMatrix<f64>>> {
    if s == "identity" {
        return Ok(None);
    }
    let body = s
        .strip_prefix("diag:")
        .ok_or_else(|| Error::Usage(format!("weight {s:?} must be `identity` or `diag:a,b,...`")))?;
    let d: Vec<f64> = body
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Usage(format!("bad weight entry {v:?}"))))
        .collect::<Result<_>>()?;
    if d.len() != p || d.iter().any(|v| !(*v >= 0.0)) || !(d[0] > 0.0) {
        return Err(Error::Usage(format!("weight needs {p} non-negative entries with a positive first one")));
    }
    Ok(Some(DMatrix::from_diagonal(&d.into())))
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// estimators: lsdv, lsdv_bc, c, w, f
    #[arg(long, value_delimiter = ',', default_value = "c")]
    pub estimator: Vec<EstimatorKind>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// refuse the sandwich covariance when |rho| >= 1 - delta
    #[arg(long, default_value_t = DELTA_SING)]
    pub delta_sing: f64,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum TestKind {
    Qlm,
    Wald,
    Confset,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    #[arg(long, value_enum, default_value = "qlm")]
    pub test: TestKind,
    /// restrictions such as rho=0.8, s2n=1, b1=0 (repeat or comma-separate)
    #[arg(long, value_delimiter = ',')]
    pub h0: Vec<String>,
    #[arg(long, value_enum, default_value = "auto")]
    pub variant: CliVariant,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// center per-unit scores in the outer-product matrix
    #[arg(long)]
    pub center_scores: bool,
    /// grid for the confidence set as lo:hi:step
    #[arg(long, default_value = "-0.99:1.0:0.01", allow_hyphen_values = true)]
    pub grid: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum CliVariant {
    Auto,
    Standard,
    Unity,
}

impl From<CliVariant> for QlmVariant {
    fn from(v: CliVariant) -> Self {
        match v {
            CliVariant::Auto => QlmVariant::Auto,
            CliVariant::Standard => QlmVariant::Standard,
            CliVariant::Unity => QlmVariant::Unity,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON experiment config
    #[arg(long)]
    pub config: PathBuf,
    /// override the replication count of every block
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LimitArgs {
    #[arg(long = "T", alias = "t")]
    pub t: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// CSV of the draws; only the summary is printed when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    estimator: String,
    rho_hat: f64,
    sigma2_hat: f64,
    beta_hat: Vec<f64>,
    lan_exists: bool,
    interior_root: bool,
    fallback: bool,
    boundary: bool,
    roots: Vec<f64>,
    objective: f64,
    iterations: usize,
    second_derivative: f64,
    std_errors: Option<Vec<f64>>,
    covariance: Option<Vec<Vec<f64>>>,
    warning: Option<String>,
}

impl EstimateReport {
    fn new(e: &EstimateResult, data: &PanelDataset, delta: f64) -> Result<Self> {
        let interior = matches!(e.kind, EstimatorKind::MmleC | EstimatorKind::MmleW | EstimatorKind::MmleF)
            && e.lan_exists;
        let (std_errors, covariance, warning) = match asymptotic_covariance(data, &e.theta, None, delta) {
            Ok(m) => {
                let c = m.covariance;
                (Some(m_std(&c)), Some(c.row_iter().map(|r| r.iter().copied().collect()).collect()), None)
            }
            Err(Error::NearUnitCircle(r)) => (
                None,
                None,
                Some(format!("|rho_hat| = {r:.4} is near the unit circle; use the QLM or Wald test for inference")),
            ),
            Err(err) => return Err(err),
        };
        Ok(Self {
            estimator: e.kind.label().to_string(),
            rho_hat: e.theta.rho,
            sigma2_hat: e.theta.sigma2,
            beta_hat: e.theta.beta.iter().copied().collect(),
            lan_exists: e.lan_exists,
            interior_root: interior,
            fallback: e.fallback,
            boundary: e.boundary,
            roots: e.roots.clone(),
            objective: e.objective,
            iterations: e.iterations,
            second_derivative: e.second_derivative,
            std_errors,
            covariance,
            warning,
        })
    }
}

fn m_std(c: &DMatrix<f64>) -> Vec<f64> {
    c.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
}

fn open_out<'a>(path: &Option<PathBuf>, stdout: &'a mut Out) -> Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(stdout),
    })
}

/// Destination for command output; `Send` so commands can run inside a worker pool.
pub type Out = dyn Write + Send;

fn write_json<T: Serialize>(v: &T, w: &mut dyn Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, v)?;
    writeln!(w)?;
    Ok(())
}

pub fn cmd_estimate(a: &EstimateArgs, stdout: &mut Out) -> Result<()> {
    let data = a.panel.load()?;
    let opts = a.solver.options(data.n_covariates())?;
    let mut reports = Vec::new();
    for k in &a.estimator {
        let e = estimate(&data, *k, &opts).map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("{}: {m}", k.label())),
            other => other,
        })?;
        reports.push(EstimateReport::new(&e, &data, a.delta_sing)?);
    }
    let mut w = open_out(&a.out, stdout)?;
    match a.format {
        Format::Json => write_json(
            &serde_json::json!({
                "n_units": data.n_units(),
                "n_periods": data.n_periods(),
                "n_covariates": data.n_covariates(),
                "estimates": reports,
            }),
            &mut *w,
        )?,
        Format::Csv => {
            let mut wr = csv::Writer::from_writer(&mut *w);
            let k = data.n_covariates();
            let mut head = vec!["estimator".to_string(), "rho_hat".into(), "sigma2_hat".into()];
            head.extend((1..=k).map(|j| format!("beta{j}")));
            head.extend(["lan_exists", "fallback", "boundary", "se_rho", "warning"].map(String::from));
            wr.write_record(&head)?;
            for r in &reports {
                let mut row = vec![r.estimator.clone(), r.rho_hat.to_string(), r.sigma2_hat.to_string()];
                row.extend(r.beta_hat.iter().map(|b| b.to_string()));
                row.push(r.lan_exists.to_string());
                row.push(r.fallback.to_string());
                row.push(r.boundary.to_string());
                row.push(r.std_errors.as_ref().map(|s| s[0].to_string()).unwrap_or_default());
                row.push(r.warning.clone().unwrap_or_default());
                wr.write_record(&row)?;
            }
            wr.flush()?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Usage(format!("bad grid {s:?}; use lo:hi:step"))))
        .collect::<Result<_>>()?;
    let [lo, hi, step] = parts[..] else {
        return Err(Error::Usage(format!("bad grid {s:?}; use lo:hi:step")));
    };
    if !(step > 0.0 && hi >= lo) {
        return Err(Error::Usage("grid needs hi >= lo and a positive step".into()));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

#[derive(Serialize)]
#[serde(untagged)]
enum TestReport {
    Qlm(QlmResult),
    Wald(WaldResult),
    Set { alpha: f64, intervals: Vec<(f64, f64)> },
}

pub fn cmd_test(a: &TestArgs, stdout: &mut Out) -> Result<()> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(Error::Usage("alpha must lie in (0, 1)".into()));
    }
    let data = a.panel.load()?;
    let report = match a.test {
        TestKind::Qlm => {
            if a.h0.is_empty() {
                return Err(Error::Usage("--h0 is required for the QLM test".into()));
            }
            let h = LinearHypothesis::parse(&a.h0, data.n_covariates())?;
            let opts = QlmOptions { alpha: a.alpha, center_scores: a.center_scores };
            TestReport::Qlm(qlm_test(&data, &h, a.variant.into(), &opts)?)
        }
        TestKind::Wald => TestReport::Wald(wald_unit_root(&data, a.alpha, &a.solver.options(data.n_covariates())?)?),
        TestKind::Confset => {
            let grid = parse_grid(&a.grid)?;
            TestReport::Set { alpha: a.alpha, intervals: qlm_confidence_set(&data, a.alpha, &grid)? }
        }
    };
    let mut w = open_out(&a.out, stdout)?;
    write_json(&report, &mut *w)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_experiment(a: &ExperimentArgs, stdout: &mut Out) -> Result<()> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| Error::Usage(format!("cannot read {}: {e}", a.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(r) = a.reps {
        if r == 0 {
            return Err(Error::Usage("--reps must be positive".into()));
        }
        cfg = cfg.with_reps(r);
    }
    let table = cfg.run(|i, n, e| {
        let s = &e.spec;
        eprintln!(
            "[{i}/{n}] {} T={} N={} sigma_mu2={} rho={}",
            s.design.label(),
            s.n_periods,
            s.n_units,
            s.sigma_mu2,
            s.rho
        );
    })?;
    let mut w = open_out(&a.out, stdout)?;
    match a.format {
        Format::Csv => table.write_csv(&mut *w)?,
        Format::Json => write_json(&table, &mut *w)?,
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct LimitSummary {
    t: usize,
    draws: usize,
    var_z1: f64,
    share_z1_positive: f64,
    mean_signed_root: f64,
    mean_signed_root_se: f64,
    sd_rho_component: f64,
    sd_sigma_component: f64,
}

pub fn cmd_limitdist(a: &LimitArgs, stdout: &mut Out) -> Result<()> {
    if a.draws < 2 {
        return Err(Error::Usage("--draws must be at least 2".into()));
    }
    let draws = draw_limit_law(a.t, a.sigma2, &DMatrix::zeros(0, 0), a.draws, a.seed)?;
    if let Some(p) = &a.out {
        let mut wr = csv::Writer::from_writer(BufWriter::new(File::create(p)?));
        wr.write_record(["z1", "z2", "v0", "v4", "v5", "rc", "rho_component", "rho_lower_root", "sigma_component"])?;
        for d in &draws {
            wr.write_record(
                [d.z1, d.z2, d.v0, d.v4, d.v5, d.rc, d.rho_component, d.rho_lower_root, d.sigma_component]
                    .map(|v| v.to_string()),
            )?;
        }
        wr.flush()?;
    }
    let z1: Vec<f64> = draws.iter().map(|d| d.z1).collect();
    let rho: Vec<f64> = draws.iter().map(|d| d.rho_component).collect();
    let sig: Vec<f64> = draws.iter().map(|d| d.sigma_component).collect();
    let sign = signed_root_mean(a.t, a.draws, a.seed)?;
    let summary = LimitSummary {
        t: a.t,
        draws: a.draws,
        var_z1: mean_sd(&z1).1.powi(2),
        share_z1_positive: sign.n_positive as f64 / a.draws as f64,
        mean_signed_root: sign.mean,
        mean_signed_root_se: sign.std_error,
        sd_rho_component: mean_sd(&rho).1,
        sd_sigma_component: mean_sd(&sig).1,
    };
    write_json(&summary, stdout)
}

fn dispatch(cli: &Cli, stdout: &mut Out) -> Result<()> {
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a, stdout),
        Command::Test(a) => cmd_test(a, stdout),
        Command::Experiment(a) => cmd_experiment(a, stdout),
        Command::Limitdist(a) => cmd_limitdist(a, stdout),
    }
}

/// Runs a parsed command, inside a pool of `threads` workers when given.
pub fn run(cli: &Cli, stdout: &mut Out) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::Usage("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Usage(e.to_string()))?;
            pool.install(|| dispatch(cli, stdout))
        }
        None => dispatch(cli, stdout),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut stdout = std::io::stdout();
    match run(&cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
