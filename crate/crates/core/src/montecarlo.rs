//! Simulation designs and replication harness.
//!
//! Each replication draws from its own random stream keyed by
//! `(seed, replication)`, per-replication outcomes are collected in order and
//! folded sequentially, so tables are identical for any thread count.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate, lancaster_existence, EstimatorKind, EstimatorOptions};
use crate::inference::{qlm_test, wald_unit_root, LinearHypothesis, QlmOptions, QlmVariant};
use crate::likelihood::Concentrated;
use crate::panel::{PanelDataset, QMoments};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Design {
    /// stationary initial deviation `y_0 - mu ~ N(0, sigma^2 / (1 - rho^2))`, zero at `rho = 1`
    S,
    /// `y_0 = mu`
    #[serde(rename = "NS")]
    Ns,
    /// as `S` with standardized chi-square(1) innovations and initial deviation
    #[serde(rename = "S_CHISQ")]
    SChisq,
}

impl Design {
    pub fn label(&self) -> &'static str {
        match self {
            Design::S => "S",
            Design::Ns => "NS",
            Design::SChisq => "S_CHISQ",
        }
    }
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub design: Design,
    pub n_periods: usize,
    pub n_units: usize,
    pub rho: f64,
    #[serde(default = "one")]
    pub sigma2: f64,
    #[serde(default = "one")]
    pub sigma_mu2: f64,
    #[serde(default)]
    pub time_effects: bool,
    /// also demean the initial observation when removing time effects
    #[serde(default = "yes")]
    pub demean_initial: bool,
    pub n_reps: usize,
    #[serde(default)]
    pub seed: u64,
    /// i.i.d. standard normal covariates with `beta = (1 - rho) beta_check`
    #[serde(default)]
    pub n_covariates: usize,
    #[serde(default = "one")]
    pub beta_check: f64,
}

impl DesignSpec {
    pub fn new(design: Design, n_periods: usize, n_units: usize, rho: f64, n_reps: usize, seed: u64) -> Self {
        Self {
            design,
            n_periods,
            n_units,
            rho,
            sigma2: 1.0,
            sigma_mu2: 1.0,
            time_effects: false,
            demean_initial: true,
            n_reps,
            seed,
            n_covariates: 0,
            beta_check: 1.0,
        }
    }

    /// Checks ranges; errors carry the offending field name.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.n_periods < 2 {
            return Err(("n_periods", "must be at least 2".into()));
        }
        let min_n = if self.time_effects { 2 } else { 1 };
        if self.n_units < min_n {
            return Err(("n_units", format!("must be at least {min_n}")));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(("rho", "must lie in [-1, 1]".into()));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(("sigma2", "must be positive".into()));
        }
        if !(self.sigma_mu2 >= 0.0 && self.sigma_mu2.is_finite()) {
            return Err(("sigma_mu2", "must be non-negative".into()));
        }
        if self.n_reps == 0 {
            return Err(("n_reps", "must be positive".into()));
        }
        Ok(())
    }
}

fn innovation<R: Rng>(rng: &mut R, design: Design) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    match design {
        Design::SChisq => (z * z - 1.0) / 2f64.sqrt(),
        _ => z,
    }
}

/// Draws replication `rep` of the design.
pub fn generate_panel(spec: &DesignSpec, rep: u64) -> Result<PanelDataset> {
    spec.validate().map_err(|(f, m)| Error::Usage(format!("{f}: {m}")))?;
    let (n, t, k) = (spec.n_units, spec.n_periods, spec.n_covariates);
    let rho = spec.rho;
    let sd = spec.sigma2.sqrt();
    let beta = (1.0 - rho) * spec.beta_check;
    let stationary = spec.design != Design::Ns && rho.abs() < 1.0;
    let mut rng = stream(spec.seed, rep);
    let mut y0 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n * t);
    let mut x = Vec::with_capacity(n * t * k);
    for _ in 0..n {
        let mu = spec.sigma_mu2.sqrt() * rng.sample::<f64, _>(StandardNormal);
        let dev = innovation(&mut rng, spec.design);
        let mut prev = mu + if stationary { sd * dev / (1.0 - rho * rho).sqrt() } else { 0.0 };
        y0.push(prev);
        for _ in 0..t {
            let mut xb = 0.0;
            for _ in 0..k {
                let v: f64 = rng.sample(StandardNormal);
                x.push(v);
                xb += v * beta;
            }
            prev = rho * prev + xb + (1.0 - rho) * mu + sd * innovation(&mut rng, spec.design);
            y.push(prev);
        }
    }
    let data = PanelDataset::new(n, t, k, y0, y, x)?;
    Ok(if spec.time_effects { data.demean_cross_section(spec.demean_initial) } else { data })
}

/// A test applied in every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestSpec {
    /// quasi-LM test of restrictions such as `["rho=0.8"]` or `["rho=1", "s2n=1"]`
    Qlm {
        h0: Vec<String>,
        #[serde(default = "auto")]
        variant: QlmVariant,
    },
    /// quasi-LM test of `rho` equal to the design value (empirical size)
    QlmTrueRho,
    /// one-sided unit-root test based on `sqrt(N) (rho_C - 1)^2`
    Wald,
}

fn auto() -> QlmVariant {
    QlmVariant::Auto
}

impl TestSpec {
    pub fn qlm_rho(a: f64) -> Self {
        TestSpec::Qlm { h0: vec![format!("rho={a}")], variant: QlmVariant::Auto }
    }

    pub fn label(&self) -> String {
        match self {
            TestSpec::Qlm { h0, .. } => format!("QLM({})", h0.join(";")),
            TestSpec::QlmTrueRho => "QLM(rho=true)".into(),
            TestSpec::Wald => "WALD(rho=1)".into(),
        }
    }
}

/// One aggregated row: either an estimator (bias, RMSE, NM) or a test
/// (rejection rate). Monte Carlo standard errors sit next to each value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub design: String,
    pub sigma_mu2: f64,
    pub rho: f64,
    pub n: usize,
    pub t: usize,
    pub time_effects: bool,
    pub column: String,
    pub reps: usize,
    pub failures: usize,
    pub nm: f64,
    pub nm_se: f64,
    pub bias: Option<f64>,
    pub bias_se: Option<f64>,
    pub rmse: Option<f64>,
    pub rmse_se: Option<f64>,
    pub rejection_rate: Option<f64>,
    pub rejection_se: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct McTable {
    pub rows: Vec<McRow>,
}

impl McTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd.deserialize().collect::<std::result::Result<Vec<McRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn find(&self, column: &str, rho: f64) -> Option<&McRow> {
        self.rows.iter().find(|r| r.column == column && r.rho == rho)
    }
}

/// Outcome of a single replication.
#[derive(Debug, Clone, Serialize)]
pub struct RepOutcome {
    pub lan_exists: Option<bool>,
    pub estimates: Vec<Option<f64>>,
    pub rejections: Vec<Option<bool>>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: DesignSpec,
    pub estimators: Vec<EstimatorKind>,
    pub tests: Vec<TestSpec>,
    pub alpha: f64,
    pub solver: EstimatorOptions,
}

impl Experiment {
    pub fn new(spec: DesignSpec) -> Self {
        Self { spec, estimators: vec![EstimatorKind::MmleC], tests: Vec::new(), alpha: 0.05, solver: EstimatorOptions::default() }
    }

    fn hypotheses(&self) -> Result<Vec<(LinearHypothesis, QlmVariant)>> {
        self.tests
            .iter()
            .filter_map(|t| match t {
                TestSpec::Qlm { h0, variant } => Some((h0, *variant)),
                _ => None,
            })
            .map(|(h0, v)| Ok((LinearHypothesis::parse(h0, self.spec.n_covariates)?, v)))
            .collect()
    }

    pub fn replicate(&self, rep: u64) -> RepOutcome {
        let data = match generate_panel(&self.spec, rep) {
            Ok(d) => d,
            Err(_) => {
                return RepOutcome {
                    lan_exists: None,
                    estimates: vec![None; self.estimators.len()],
                    rejections: vec![None; self.tests.len()],
                }
            }
        };
        self.evaluate(&data)
    }

    /// Estimators and tests on one panel; failures become `None`.
    pub fn evaluate(&self, data: &PanelDataset) -> RepOutcome {
        let lan_exists = QMoments::from_panel(data)
            .concentrated_stats()
            .ok()
            .map(|st| lancaster_existence(&Concentrated::new(st), &self.solver).local_max.is_some());
        let estimates = self
            .estimators
            .iter()
            .map(|k| estimate(data, *k, &self.solver).ok().map(|e| e.theta.rho))
            .collect();
        let hyps = self.hypotheses().unwrap_or_default();
        let qopts = QlmOptions { alpha: self.alpha, ..QlmOptions::default() };
        let mut hi = 0;
        let rejections = self
            .tests
            .iter()
            .map(|t| match t {
                TestSpec::Qlm { .. } => {
                    let (h, v) = hyps.get(hi)?;
                    hi += 1;
                    qlm_test(data, h, *v, &qopts).ok().map(|r| r.reject)
                }
                TestSpec::QlmTrueRho => {
                    let h = LinearHypothesis::rho(self.spec.rho, self.spec.n_covariates);
                    qlm_test(data, &h, QlmVariant::Standard, &qopts).ok().map(|r| r.reject)
                }
                TestSpec::Wald => wald_unit_root(data, self.alpha, &self.solver).ok().map(|r| r.reject),
            })
            .collect();
        RepOutcome { lan_exists, estimates, rejections }
    }

    /// All replications in order.
    pub fn outcomes(&self) -> Result<Vec<RepOutcome>> {
        self.spec
            .validate()
            .map_err(|(f, m)| Error::InvalidConfig { pointer: format!("/{f}"), message: m })?;
        self.hypotheses()?;
        Ok((0..self.spec.n_reps as u64).into_par_iter().map(|r| self.replicate(r)).collect())
    }

    pub fn run(&self) -> Result<McTable> {
        let out = self.outcomes()?;
        Ok(self.aggregate(&out))
    }

    pub fn aggregate(&self, out: &[RepOutcome]) -> McTable {
        let s = &self.spec;
        let flags: Vec<f64> =
            out.iter().filter_map(|o| o.lan_exists).map(|e| if e { 0.0 } else { 1.0 }).collect();
        let (nm, nm_se) = proportion(&flags);
        let base = |column: String, failures: usize| McRow {
            design: s.design.label().to_string(),
            sigma_mu2: s.sigma_mu2,
            rho: s.rho,
            n: s.n_units,
            t: s.n_periods,
            time_effects: s.time_effects,
            column,
            reps: out.len(),
            failures,
            nm,
            nm_se,
            bias: None,
            bias_se: None,
            rmse: None,
            rmse_se: None,
            rejection_rate: None,
            rejection_se: None,
        };
        let mut rows = Vec::new();
        for (j, k) in self.estimators.iter().enumerate() {
            let errs: Vec<f64> = out.iter().filter_map(|o| o.estimates[j]).map(|r| r - s.rho).collect();
            let mut row = base(k.label().to_string(), out.len() - errs.len());
            if !errs.is_empty() {
                let (b, bse, r, rse) = bias_rmse(&errs);
                row.bias = Some(b);
                row.bias_se = Some(bse);
                row.rmse = Some(r);
                row.rmse_se = Some(rse);
            }
            rows.push(row);
        }
        for (j, t) in self.tests.iter().enumerate() {
            let rej: Vec<f64> =
                out.iter().filter_map(|o| o.rejections[j]).map(|r| if r { 1.0 } else { 0.0 }).collect();
            let mut row = base(t.label(), out.len() - rej.len());
            if !rej.is_empty() {
                let (p, se) = proportion(&rej);
                row.rejection_rate = Some(p);
                row.rejection_se = Some(se);
            }
            rows.push(row);
        }
        McTable { rows }
    }
}

fn proportion(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let p = v.iter().sum::<f64>() / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

/// Bias and RMSE with their standard errors; the RMSE error uses the delta
/// method on the mean squared error.
fn bias_rmse(e: &[f64]) -> (f64, f64, f64, f64) {
    let n = e.len() as f64;
    let b = e.iter().sum::<f64>() / n;
    let vb = e.iter().map(|x| (x - b).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let m2 = e.iter().map(|x| x * x).sum::<f64>() / n;
    let v2 = e.iter().map(|x| (x * x - m2).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let rmse = m2.sqrt();
    let rse = if rmse > 0.0 { (v2 / n).sqrt() / (2.0 * rmse) } else { 0.0 };
    (b, (vb / n).sqrt(), rmse, rse)
}

/// Runs an experiment with replications spread over `threads` workers.
pub fn run_experiment_threads(exp: &Experiment, threads: usize) -> Result<McTable> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Usage(e.to_string()))?;
    pool.install(|| exp.run())
}

pub fn run_experiment(spec: DesignSpec, estimators: &[EstimatorKind], tests: &[TestSpec]) -> Result<McTable> {
    let mut exp = Experiment::new(spec);
    exp.estimators = estimators.to_vec();
    exp.tests = tests.to_vec();
    exp.run()
}

/// Rejection frequency of the quasi-LM test of `rho = h0_rho`.
pub fn run_qlm_study(spec: DesignSpec, h0_rho: f64, alpha: f64) -> Result<McRow> {
    let mut exp = Experiment::new(spec);
    exp.estimators.clear();
    exp.tests = vec![TestSpec::qlm_rho(h0_rho)];
    exp.alpha = alpha;
    Ok(exp.run()?.rows.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ns_starts_at_the_effect() {
        let mut s = DesignSpec::new(Design::Ns, 3, 50, 0.5, 1, 4);
        s.sigma_mu2 = 0.0;
        let d = generate_panel(&s, 0).unwrap();
        assert!(d.y0().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn stationary_unit_root_has_no_initial_deviation() {
        let mut s = DesignSpec::new(Design::S, 3, 20, 1.0, 1, 4);
        s.sigma_mu2 = 0.0;
        let d = generate_panel(&s, 2).unwrap();
        assert!(d.y0().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn chisq_innovations_are_standardized() {
        let mut s = DesignSpec::new(Design::SChisq, 50, 2000, 0.0, 1, 11);
        s.sigma_mu2 = 0.0;
        let d = generate_panel(&s, 0).unwrap();
        let e: Vec<f64> = (0..d.n_units()).flat_map(|i| d.y_unit(i).to_vec()).collect();
        let n = e.len() as f64;
        let m = e.iter().sum::<f64>() / n;
        let v = e.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let sk = e.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n / v.powf(1.5);
        assert!(m.abs() < 0.01 && (v - 1.0).abs() < 0.03);
        assert!((sk - 8f64.sqrt()).abs() < 0.25, "skew {sk}");
    }

    #[test]
    fn time_effects_remove_period_means() {
        let mut s = DesignSpec::new(Design::S, 4, 100, 0.5, 1, 1);
        s.time_effects = true;
        let d = generate_panel(&s, 0).unwrap();
        for t in 0..4 {
            let m: f64 = (0..100).map(|i| d.y_unit(i)[t]).sum::<f64>() / 100.0;
            assert!(m.abs() < 1e-12);
        }
        assert!(d.y0().iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn table_is_thread_independent() {
        let mut exp = Experiment::new(DesignSpec::new(Design::S, 4, 50, 0.8, 40, 9));
        exp.estimators = vec![EstimatorKind::Lsdv, EstimatorKind::MmleC];
        exp.tests = vec![TestSpec::qlm_rho(0.8), TestSpec::Wald];
        let a = run_experiment_threads(&exp, 1).unwrap().to_csv_string().unwrap();
        let b = run_experiment_threads(&exp, 4).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip() {
        let mut exp = Experiment::new(DesignSpec::new(Design::Ns, 3, 30, 0.5, 10, 2));
        exp.tests = vec![TestSpec::qlm_rho(0.5)];
        let t = exp.run().unwrap();
        let back = McTable::read_csv(t.to_csv_string().unwrap().as_bytes()).unwrap();
        assert_eq!(back.rows.len(), t.rows.len());
        assert_eq!(back.rows[0].column, "MMLE-C");
        assert!(back.rows[1].rejection_rate.is_some() && back.rows[1].bias.is_none());
        assert!((back.rows[0].bias.unwrap() - t.rows[0].bias.unwrap()).abs() < 1e-15);
    }

    #[test]
    fn bias_rmse_bookkeeping() {
        let (b, _, r, _) = bias_rmse(&[1.0, -1.0, 3.0]);
        assert!((b - 1.0).abs() < 1e-15 && (r - (11.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(r >= b.abs());
    }
}
