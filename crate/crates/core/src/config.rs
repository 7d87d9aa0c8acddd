//! JSON experiment configurations.
//!
//! A configuration holds one or more blocks; each block is a grid over
//! `sigma_mu2 x n_units x n_periods x rho` sharing a design, estimators and
//! tests. Cells are run in that order and cell `j` (counting across blocks)
//! uses master seed `seed + j`.
//!
//! ```json
//! {
//!   "name": "table1",
//!   "seed": 1,
//!   "blocks": [
//!     { "design": "S", "n_periods": [4], "n_units": [100], "sigma_mu2": [1, 0, 25],
//!       "rho": [0.5, 0.8, 1.0], "n_reps": 5000, "estimators": ["mmle_c"] }
//!   ]
//! }
//! ```
//!
//! Schema and range errors carry the JSON pointer of the offending field.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, EstimatorOptions};
use crate::montecarlo::{Design, DesignSpec, Experiment, McTable, TestSpec};

fn one() -> f64 {
    1.0
}

fn ones() -> Vec<f64> {
    vec![1.0]
}

fn yes() -> bool {
    true
}

fn alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub grid_step: Option<f64>,
    pub golden_tol: Option<f64>,
    pub soc_tol: Option<f64>,
    pub multistarts: Option<usize>,
    pub max_iter: Option<usize>,
    /// diagonal of the weight matrix for `W` and `F`
    pub weight_diag: Option<Vec<f64>>,
}

impl SolverConfig {
    pub fn options(&self) -> EstimatorOptions {
        let d = EstimatorOptions::default();
        EstimatorOptions {
            r_min: self.r_min.unwrap_or(d.r_min),
            r_max: self.r_max.unwrap_or(d.r_max),
            grid_step: self.grid_step.unwrap_or(d.grid_step),
            golden_tol: self.golden_tol.unwrap_or(d.golden_tol),
            soc_tol: self.soc_tol.unwrap_or(d.soc_tol),
            multistarts: self.multistarts.unwrap_or(d.multistarts),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            weight: self.weight_diag.as_ref().map(|w| DMatrix::from_diagonal(&w.clone().into())),
            f_epsilon: d.f_epsilon,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub design: Design,
    pub n_periods: Vec<usize>,
    pub n_units: Vec<usize>,
    pub rho: Vec<f64>,
    #[serde(default = "ones")]
    pub sigma_mu2: Vec<f64>,
    #[serde(default = "one")]
    pub sigma2: f64,
    #[serde(default)]
    pub time_effects: bool,
    #[serde(default = "yes")]
    pub demean_initial: bool,
    pub n_reps: usize,
    #[serde(default)]
    pub n_covariates: usize,
    #[serde(default = "one")]
    pub beta_check: f64,
    #[serde(default)]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub tests: Vec<TestSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    pub blocks: Vec<BlockConfig>,
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        s.push('/');
        match seg {
            Segment::Seq { index } => s.push_str(&index.to_string()),
            Segment::Map { key } => s.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => s.push_str(variant),
            Segment::Unknown => s.push('?'),
        }
    }
    if s.is_empty() {
        s.push('/');
    }
    s
}

fn bad(pointer: String, message: impl Into<String>) -> Error {
    Error::InvalidConfig { pointer, message: message.into() }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let message = e.inner().to_string();
            bad(pointer_of(e.path()), message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(bad("/alpha".into(), "must lie in (0, 1)"));
        }
        if let Some(w) = &self.solver.weight_diag {
            if let Some(i) = w.iter().position(|v| !(*v > 0.0)) {
                return Err(bad(format!("/solver/weight_diag/{i}"), "weights must be positive"));
            }
        }
        if self.blocks.is_empty() {
            return Err(bad("/blocks".into(), "at least one block is required"));
        }
        for (b, blk) in self.blocks.iter().enumerate() {
            let at = |f: &str| format!("/blocks/{b}/{f}");
            for (name, len) in [
                ("n_periods", blk.n_periods.len()),
                ("n_units", blk.n_units.len()),
                ("rho", blk.rho.len()),
                ("sigma_mu2", blk.sigma_mu2.len()),
            ] {
                if len == 0 {
                    return Err(bad(at(name), "must not be empty"));
                }
            }
            if blk.estimators.is_empty() && blk.tests.is_empty() {
                return Err(bad(at("estimators"), "a block needs at least one estimator or test"));
            }
            if let Some(w) = &self.solver.weight_diag {
                let p = 2 + blk.n_covariates;
                let weighted = blk.estimators.iter().any(|k| matches!(k, EstimatorKind::MmleW | EstimatorKind::MmleF));
                if weighted && w.len() != p {
                    return Err(bad("/solver/weight_diag".into(), format!("needs {p} entries for block {b}")));
                }
            }
            for (i, t) in blk.tests.iter().enumerate() {
                if let TestSpec::Qlm { h0, .. } = t {
                    crate::inference::LinearHypothesis::parse(h0, blk.n_covariates)
                        .map_err(|e| bad(format!("/blocks/{b}/tests/{i}/h0"), e.to_string()))?;
                }
            }
            for spec in block_specs(blk) {
                if let Err((field, message)) = spec.validate() {
                    let idx = match field {
                        "n_periods" => blk.n_periods.iter().position(|v| *v == spec.n_periods),
                        "n_units" => blk.n_units.iter().position(|v| *v == spec.n_units),
                        "rho" => blk.rho.iter().position(|v| *v == spec.rho),
                        "sigma_mu2" => blk.sigma_mu2.iter().position(|v| *v == spec.sigma_mu2),
                        _ => None,
                    };
                    let ptr = match idx {
                        Some(i) => format!("/blocks/{b}/{field}/{i}"),
                        None => at(field),
                    };
                    return Err(bad(ptr, message));
                }
            }
        }
        Ok(())
    }

    /// Every cell as a ready-to-run experiment, in table order.
    pub fn experiments(&self) -> Vec<Experiment> {
        let solver = self.solver.options();
        let mut out = Vec::new();
        for blk in &self.blocks {
            for mut spec in block_specs(blk) {
                spec.seed = self.seed.wrapping_add(out.len() as u64);
                out.push(Experiment {
                    spec,
                    estimators: blk.estimators.clone(),
                    tests: blk.tests.clone(),
                    alpha: self.alpha,
                    solver: solver.clone(),
                });
            }
        }
        out
    }

    /// Runs all cells; `progress` is called after each cell.
    pub fn run<F: FnMut(usize, usize, &Experiment)>(&self, mut progress: F) -> Result<McTable> {
        let cells = self.experiments();
        let mut table = McTable::default();
        for (i, exp) in cells.iter().enumerate() {
            table.rows.extend(exp.run()?.rows);
            progress(i + 1, cells.len(), exp);
        }
        Ok(table)
    }

    /// Overrides the replication count of every block.
    pub fn with_reps(mut self, reps: usize) -> Self {
        for b in &mut self.blocks {
            b.n_reps = reps;
        }
        self
    }
}

fn block_specs(blk: &BlockConfig) -> Vec<DesignSpec> {
    let mut out = Vec::new();
    for &sigma_mu2 in &blk.sigma_mu2 {
        for &n in &blk.n_units {
            for &t in &blk.n_periods {
                for &rho in &blk.rho {
                    out.push(DesignSpec {
                        design: blk.design,
                        n_periods: t,
                        n_units: n,
                        rho,
                        sigma2: blk.sigma2,
                        sigma_mu2,
                        time_effects: blk.time_effects,
                        demean_initial: blk.demean_initial,
                        n_reps: blk.n_reps,
                        seed: 0,
                        n_covariates: blk.n_covariates,
                        beta_check: blk.beta_check,
                    });
                }
            }
        }
    }
    out
}
