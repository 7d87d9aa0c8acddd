//! Simulation of the limiting law of the concentrated estimator at `rho = 1`.
//!
//! The law is driven by three jointly normal quadratic-form limits
//!
//! ```text
//! V1 = e'Qe / (T-1) - 1,   V2 = e'Phi'Q Phi e - tr(Phi'Q Phi),   V3 = e'Q Phi e - tr(Q Phi)
//! ```
//!
//! with `Phi` the lag operator at unity, from which
//! `V4 = (T-1) V1 / 2 + V3`, `V5 = (T-1)(T-5) V1 / 6 - V2 - 2 V3`,
//! `V0 = V5 + V4`, `Z1 = -2 V4 / d3` and `Z2 = sigma^2 V1`. The sign of the
//! root is `(-1)^B` with `B = 1(R > 0)`, where `R` is a cubic in `(V5, Z1)`
//! whose coefficients are the third to fifth derivatives of the limiting
//! concentrated likelihood at one.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{mmle_c, EstimatorOptions};
use crate::likelihood::ratio_deriv;
use crate::montecarlo::{generate_panel, Design, DesignSpec};
use crate::rng::stream;
use crate::xi::XiPoly;

const BLOCK: usize = 4096;

/// Limits of the third to fifth derivatives of the concentrated log-likelihood at `r = 1`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DerivLimits {
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
}

impl DerivLimits {
    /// Evaluated from the concentrated score with its limiting statistics at
    /// unity: `rho_ML - 1 -> -3/(T+1)` and `c -> 3(2T-1)/(T+1)^2`.
    pub fn new(t: usize) -> Self {
        let tf = t as f64;
        let xi = XiPoly::new(t);
        let u = 3.0 / (tf + 1.0);
        let c = 3.0 * (2.0 * tf - 1.0) / (tf + 1.0).powi(2);
        let d = |k: usize| (tf - 1.0) * (xi.eval(1.0, k) - ratio_deriv(u, c, k - 1));
        Self { d3: d(3), d4: d(4), d5: d(5) }
    }

    pub fn kappa(&self) -> f64 {
        -2.0 * self.d4 / self.d3
    }

    /// Coefficient of `V4^3` in `d3 * R`.
    pub fn kappa0(&self) -> f64 {
        let k = self.kappa();
        2.0 - 5.0 / 3.0 * k + 7.0 / 18.0 * k * k - k.powi(3) / 36.0 + self.d5 / (18.0 * self.d3) * (k - 6.0)
    }

    /// Coefficient of `V4 V0^2` in `d3 * R`.
    pub fn kappa2(&self) -> f64 {
        6.0 - 5.0 / 3.0 * self.kappa()
    }
}

/// Covariance matrix of `(V1, V2, V3)`.
pub fn v_covariance(t: usize) -> Matrix3<f64> {
    let tf = t as f64;
    let (m, p) = (tf - 1.0, tf + 1.0);
    let v11 = 2.0 / m;
    let v22 = 2.0 * (2.0 * tf.powi(4) + 5.0 * tf * tf - 7.0) / 180.0;
    let v33 = m * (tf + 7.0) / 12.0;
    let v12 = p / 6.0;
    let v13 = -1.0;
    let v23 = -m * p / 6.0;
    Matrix3::new(v11, v12, v13, v12, v22, v23, v13, v23, v33)
}

/// `Var(V4)`, `Var(V5)`, `Cov(V4, V5)` and `Var(V0)`.
pub fn v_moments(t: usize) -> [f64; 4] {
    let tf = t as f64;
    let mp = (tf - 1.0) * (tf + 1.0);
    [mp / 12.0, mp * (2.0 * tf * tf + 7.0) / 90.0, -mp / 12.0, mp * (4.0 * tf * tf - 1.0) / 180.0]
}

/// `K_+ = sigma^2 (T+1) / 6`.
pub fn k_plus(t: usize, sigma2: f64) -> f64 {
    sigma2 * (t as f64 + 1.0) / 6.0
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitDraw {
    pub z1: f64,
    pub z2: f64,
    pub z3: Vec<f64>,
    pub v0: f64,
    pub v4: f64,
    pub v5: f64,
    pub rc: f64,
    /// limit of `N^{1/4} (rho_C - 1)` with the sign `(-1)^B`
    pub rho_component: f64,
    /// `-Z1^{1/2} 1{Z1 > 0}`: the root picked by the concavity constraint to
    /// leading order, which is what finite-sample estimates follow
    pub rho_lower_root: f64,
    /// limit of `N^{1/2} (sigma2_C / rho_C - sigma^2)`
    pub sigma_component: f64,
}

/// `R = R2 + Z1^2 R5`.
pub fn r_functional(d: &DerivLimits, v5: f64, z1: f64) -> f64 {
    let r2 = (-2.0 * v5.powi(3)
        - 5.0 / 3.0 * d.d4 * v5 * v5 * z1
        - 7.0 / 18.0 * d.d4 * d.d4 * v5 * z1 * z1
        - d.d4.powi(3) * z1.powi(3) / 36.0)
        / d.d3;
    let r5 = d.d5 / 12.0 * (v5 + d.d4 * z1 / 6.0);
    r2 + z1 * z1 * r5
}

/// Samples the limit law in independent blocks; the output is identical for
/// any number of worker threads.
#[derive(Debug, Clone)]
pub struct LimitSimulator {
    t: usize,
    sigma2: f64,
    chol: Matrix3<f64>,
    z3_chol: DMatrix<f64>,
    deriv: DerivLimits,
}

impl LimitSimulator {
    /// `sigma_xqx` is the `K x K` limit of `N^{-1} sum X'QX`; pass a `0 x 0`
    /// matrix when there are no covariates.
    pub fn new(t: usize, sigma2: f64, sigma_xqx: &DMatrix<f64>) -> Result<Self> {
        if t < 2 {
            return Err(Error::TooFewPeriods(t));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::Usage("sigma2 must be positive".into()));
        }
        let chol = v_covariance(t).cholesky().expect("V covariance is positive definite").l();
        let k = sigma_xqx.nrows();
        let z3_chol = if k == 0 {
            DMatrix::zeros(0, 0)
        } else {
            let inv = sigma_xqx.clone().try_inverse().ok_or(Error::SingularCovariates)?;
            (inv * sigma2).cholesky().ok_or(Error::SingularCovariates)?.l()
        };
        Ok(Self { t, sigma2, chol, z3_chol, deriv: DerivLimits::new(t) })
    }

    pub fn deriv(&self) -> DerivLimits {
        self.deriv
    }

    fn one<R: Rng>(&self, rng: &mut R) -> LimitDraw {
        let tf = self.t as f64;
        let e = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let v = self.chol * e;
        let (v1, v2, v3) = (v[0], v[1], v[2]);
        let v4 = 0.5 * (tf - 1.0) * v1 + v3;
        let v5 = (tf - 1.0) * (tf - 5.0) * v1 / 6.0 - v2 - 2.0 * v3;
        let z1 = -2.0 * v4 / self.deriv.d3;
        let z2 = self.sigma2 * v1;
        let k = self.z3_chol.nrows();
        let z3 = if k == 0 {
            Vec::new()
        } else {
            let g = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            (&self.z3_chol * g).iter().copied().collect()
        };
        let rc = r_functional(&self.deriv, v5, z1);
        let (rho_component, sigma_component) = if z1 > 0.0 {
            let sign = if rc > 0.0 { -1.0 } else { 1.0 };
            (sign * z1.sqrt(), z2 + k_plus(self.t, self.sigma2) * z1)
        } else {
            (0.0, z2)
        };
        let rho_lower_root = if z1 > 0.0 { -z1.sqrt() } else { 0.0 };
        LimitDraw { z1, z2, z3, v0: v5 + v4, v4, v5, rc, rho_component, rho_lower_root, sigma_component }
    }

    pub fn draw(&self, n_draws: usize, seed: u64) -> Vec<LimitDraw> {
        let blocks = n_draws.div_ceil(BLOCK);
        (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream(seed, b as u64);
                let len = BLOCK.min(n_draws - b * BLOCK);
                (0..len).map(|_| self.one(&mut rng)).collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
            .concat()
    }
}

/// Draws from the limit law of `(N^{1/4}(rho_C - 1), N^{1/2}(sigma2_n,C - sigma^2), ...)`.
pub fn draw_limit_law(
    t: usize,
    sigma2: f64,
    sigma_xqx: &DMatrix<f64>,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<LimitDraw>> {
    Ok(LimitSimulator::new(t, sigma2, sigma_xqx)?.draw(n_draws, seed))
}

/// Limit of the mixed estimator `F` when the weight matrix is block diagonal
/// with a scalar leading block. The variance and slope components then
/// coincide with those of `C`; the sign of the root is taken from the same
/// functional `R`, which is the large-`W11` limit of the general case. The
/// general-weight sign variable is not pinned down in closed form, so this
/// is experimental.
pub fn draw_limit_law_block_weight(
    t: usize,
    sigma2: f64,
    sigma_xqx: &DMatrix<f64>,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<LimitDraw>> {
    draw_limit_law(t, sigma2, sigma_xqx, n_draws, seed)
}

/// The second-order remainder of the weighted objective for `F`:
/// `(Z1 d3 + 2 V4) (W11 - W12 W22^{-1} W21) (d4 Z1 / 6 + V5)`. `w_schur` is the
/// Schur complement of the weight matrix. The first factor vanishes for every
/// draw, which is the consistency check for the expansion.
pub fn weighted_remainder(d: &DerivLimits, draw: &LimitDraw, w_schur: f64) -> f64 {
    (draw.z1 * d.d3 + 2.0 * draw.v4) * w_schur * (d.d4 * draw.z1 / 6.0 + draw.v5)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SignSummary {
    pub t: usize,
    /// `E((-1)^B Z1^{1/2} | Z1 > 0)`
    pub mean: f64,
    pub std_error: f64,
    pub n_positive: usize,
}

/// Monte Carlo estimate of the conditional mean of the signed root.
pub fn signed_root_mean(t: usize, n_draws: usize, seed: u64) -> Result<SignSummary> {
    let draws = draw_limit_law(t, 1.0, &DMatrix::zeros(0, 0), n_draws, seed)?;
    let vals: Vec<f64> = draws.iter().filter(|d| d.z1 > 0.0).map(|d| d.rho_component).collect();
    let (mean, sd) = mean_sd(&vals);
    Ok(SignSummary { t, mean, std_error: sd / (vals.len() as f64).sqrt(), n_positive: vals.len() })
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Two-sample Kolmogorov-Smirnov distance. Ties are handled by stepping over
/// all equal values at once, so atoms are compared correctly.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Distance between finite-sample estimates at `rho = 1` and the limit law for one `N`.
#[derive(Debug, Clone, Serialize)]
pub struct LimitComparison {
    pub n: usize,
    pub reps: usize,
    pub mean_rho: f64,
    /// sample sd of `N^{1/4} (rho_C - 1)`
    pub sd_rho: f64,
    /// share of replications without an interior local maximum
    pub atom_frequency: f64,
    /// KS distance of `N^{1/4} (rho_C - 1)` to the signed limit component
    pub ks_rho: f64,
    /// KS distance of `N^{1/4} (rho_C - 1)` to the lower-root limit
    pub ks_rho_lower_root: f64,
    /// as `ks_rho_lower_root` with replications lacking an interior root set to zero
    pub ks_rho_atom_mapped: f64,
    /// KS distance of `N^{1/2} (sigma2_C / rho_C - sigma^2)` to its limit
    pub ks_sigma: f64,
}

/// Simulates design `NS` at `rho = 1` (identical to `S` there) for each `N`
/// and compares the scaled concentrated estimates with `n_limit` limit draws.
pub fn compare_finite_sample_to_limit(
    t: usize,
    sigma2: f64,
    n_list: &[usize],
    n_reps: usize,
    n_limit: usize,
    seed: u64,
) -> Result<Vec<LimitComparison>> {
    let lim = draw_limit_law(t, sigma2, &DMatrix::zeros(0, 0), n_limit, seed)?;
    let l_rho: Vec<f64> = lim.iter().map(|d| d.rho_component).collect();
    let l_low: Vec<f64> = lim.iter().map(|d| d.rho_lower_root).collect();
    let l_sig: Vec<f64> = lim.iter().map(|d| d.sigma_component).collect();
    let opts = EstimatorOptions::default();
    let mut out = Vec::new();
    for (j, &n) in n_list.iter().enumerate() {
        let mut spec = DesignSpec::new(Design::Ns, t, n, 1.0, n_reps, seed.wrapping_add(1 + j as u64));
        spec.sigma2 = sigma2;
        let nf = n as f64;
        let reps: Vec<(f64, f64, bool)> = (0..n_reps as u64)
            .into_par_iter()
            .map(|r| {
                let e = mmle_c(&generate_panel(&spec, r)?, &opts)?;
                let th = e.theta;
                Ok((nf.powf(0.25) * (th.rho - 1.0), nf.sqrt() * (th.sigma2 / th.rho - sigma2), e.lan_exists))
            })
            .collect::<Result<_>>()?;
        let f_rho: Vec<f64> = reps.iter().map(|r| r.0).collect();
        let f_map: Vec<f64> = reps.iter().map(|r| if r.2 { r.0 } else { 0.0 }).collect();
        let f_sig: Vec<f64> = reps.iter().map(|r| r.1).collect();
        let (mean_rho, sd_rho) = mean_sd(&f_rho);
        out.push(LimitComparison {
            n,
            reps: n_reps,
            mean_rho,
            sd_rho,
            atom_frequency: reps.iter().filter(|r| !r.2).count() as f64 / n_reps as f64,
            ks_rho: ks_distance(&f_rho, &l_rho),
            ks_rho_lower_root: ks_distance(&f_rho, &l_low),
            ks_rho_atom_mapped: ks_distance(&f_map, &l_low),
            ks_sigma: ks_distance(&f_sig, &l_sig),
        });
    }
    Ok(out)
}
