//! Asymptotic covariance of the modified ML estimators, Quasi-LM tests built
//! on the expected Hessian, and the unit-root Wald test.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::{mmle_c, EstimatorOptions};
use crate::likelihood::{score_contributions, score_contributions_reparam, second_r_contributions, ReparamTheta, ThetaCommon, UnitQ};
use crate::panel::{PanelDataset, QMoments};
use crate::xi::XiPoly;

/// `Phi(rho)`: `Phi[t][s] = rho^(t-s-1)` for `t > s`, zero otherwise, so that
/// `y_{-1} = phi y_0 + Phi (X beta + alpha + eps)`.
pub fn phi_matrix(t: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(t, t, |a, b| if a > b { rho.powi((a - b - 1) as i32) } else { 0.0 })
}

/// `phi(rho) = (1, rho, ..., rho^(T-1))'`.
pub fn phi_vector(t: usize, rho: f64) -> DVector<f64> {
    DVector::from_fn(t, |a, _| rho.powi(a as i32))
}

/// `psi(rho) = (phi(rho) - iota) / (rho - 1)`, entry `t` is `1 + rho + ... + rho^(t-1)`.
///
/// With `v_i = (rho - 1) y_i0 + alpha_i + xbar_i' beta` the within-transformed
/// lag satisfies `Q y_{i,-1} = Q psi v_i + Q Phi Q X_i beta + Q Phi eps_i`;
/// `psi` stays finite at `rho = 1` where `Q phi` vanishes.
pub fn psi_vector(t: usize, rho: f64) -> DVector<f64> {
    let mut out = DVector::zeros(t);
    for a in 1..t {
        out[a] = out[a - 1] * rho + 1.0;
    }
    out
}

pub fn q_matrix(t: usize) -> DMatrix<f64> {
    DMatrix::identity(t, t) - DMatrix::from_element(t, t, 1.0 / t as f64)
}

/// Traces that enter the expected Hessian and information matrix.
#[derive(Debug, Clone, Copy)]
pub struct PhiTraces {
    /// `tr(Phi' Q Phi)`
    pub phi_q_phi: f64,
    /// `tr(Q Phi Q Phi)`
    pub q_phi_q_phi: f64,
    /// `psi' Q psi`
    pub psi_q_psi: f64,
}

impl PhiTraces {
    pub fn new(t: usize, rho: f64) -> Self {
        let q = q_matrix(t);
        let p = phi_matrix(t, rho);
        let qp = &q * &p;
        let v = psi_vector(t, rho);
        let qv = &q * &v;
        Self {
            phi_q_phi: (p.transpose() * &qp).trace(),
            q_phi_q_phi: (&qp * &qp).trace(),
            psi_q_psi: v.dot(&qv),
        }
    }
}

/// Cross-sectional averages involving the covariates that, together with
/// `sigma_v^2` and `beta`, determine `Sigma_zqz` and `Sigma_xqz` for
/// `Z_i = psi v_i + Phi Q X_i beta`.
#[derive(Debug, Clone)]
pub struct DesignMoments {
    /// `E X'QX`
    pub xqx: DMatrix<f64>,
    /// `E v X'Q Phi' Q psi`
    pub v_x_phi_psi: DVector<f64>,
    /// `E X'Q Phi' Q Phi Q X`
    pub x_phi_phi_x: DMatrix<f64>,
    /// `E v X'Q psi`
    pub v_x_psi: DVector<f64>,
    /// `E X'Q Phi Q X`
    pub x_phi_x: DMatrix<f64>,
}

impl DesignMoments {
    pub fn none() -> Self {
        Self::zeros(0)
    }

    fn zeros(k: usize) -> Self {
        Self {
            xqx: DMatrix::zeros(k, k),
            v_x_phi_psi: DVector::zeros(k),
            x_phi_phi_x: DMatrix::zeros(k, k),
            v_x_psi: DVector::zeros(k),
            x_phi_x: DMatrix::zeros(k, k),
        }
    }

    /// Sample analogues at `rho` using the unit effects `v_hat`.
    pub fn from_panel(data: &PanelDataset, rho: f64, v_hat: &[f64]) -> Self {
        let (n, t, k) = (data.n_units(), data.n_periods(), data.n_covariates());
        let mut dm = Self::zeros(k);
        if k == 0 {
            return dm;
        }
        let q = q_matrix(t);
        let phi = phi_matrix(t, rho);
        let qpsi = &q * psi_vector(t, rho);
        for i in 0..n {
            let x = DMatrix::from_row_slice(t, k, data.x_unit(i));
            let xq = &q * x;
            let m1 = &q * &phi * &xq;
            dm.xqx += xq.transpose() * &xq;
            dm.x_phi_phi_x += m1.transpose() * &m1;
            dm.x_phi_x += xq.transpose() * &phi * &xq;
            dm.v_x_phi_psi += (m1.transpose() * &qpsi) * v_hat[i];
            dm.v_x_psi += (xq.transpose() * &qpsi) * v_hat[i];
        }
        let nf = n as f64;
        dm.xqx /= nf;
        dm.x_phi_phi_x /= nf;
        dm.x_phi_x /= nf;
        dm.v_x_phi_psi /= nf;
        dm.v_x_psi /= nf;
        dm
    }

    pub fn sigma_zqz(&self, tr: &PhiTraces, sigma_v2: f64, beta: &DVector<f64>) -> f64 {
        sigma_v2 * tr.psi_q_psi
            + 2.0 * self.v_x_phi_psi.dot(beta)
            + (beta.transpose() * &self.x_phi_phi_x * beta)[(0, 0)]
    }

    pub fn sigma_xqz(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.v_x_psi + &self.x_phi_x * beta
    }
}

/// Moment estimator of the unit effects `v_i = (rho - 1) y_i0 + alpha_i + xbar_i' beta`
/// at a given `rho = a`: `v_hat_i = ybar_i - a ybar_{i,-1} - (1 - a) y_i0` and
/// `sigma_v^2 = max(mean(v_hat^2) - sigma^2 / T, 0)`.
pub fn unit_effects(data: &PanelDataset, a: f64, sigma2: f64) -> (Vec<f64>, f64) {
    let t = data.n_periods() as f64;
    let v: Vec<f64> = (0..data.n_units())
        .map(|i| {
            let ybar = data.y_unit(i).iter().sum::<f64>() / t;
            let lbar = data.ylag_unit(i).iter().sum::<f64>() / t;
            ybar - a * lbar - (1.0 - a) * data.y0()[i]
        })
        .collect();
    let m2 = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    (v, (m2 - sigma2 / t).max(0.0))
}

/// Expected Hessian of the modified log-likelihood per unit, common
/// parametrization.
pub fn expected_hessian(t: usize, th: &ThetaCommon, sigma_v2: f64, dm: &DesignMoments) -> DMatrix<f64> {
    let xi = XiPoly::new(t);
    let tr = PhiTraces::new(t, th.rho);
    let tm1 = (t - 1) as f64;
    let s2 = th.sigma2;
    let k = th.beta.len();
    let zqz = dm.sigma_zqz(&tr, sigma_v2, &th.beta);
    let xqz = dm.sigma_xqz(&th.beta);
    let mut h = DMatrix::zeros(2 + k, 2 + k);
    h[(0, 0)] = tm1 * xi.eval(th.rho, 2) - tr.phi_q_phi - zqz / s2;
    h[(0, 1)] = tm1 * xi.eval(th.rho, 1) / s2;
    h[(1, 0)] = h[(0, 1)];
    h[(1, 1)] = -tm1 / (2.0 * s2 * s2);
    for a in 0..k {
        h[(0, 2 + a)] = -xqz[a] / s2;
        h[(2 + a, 0)] = -xqz[a] / s2;
        for b in 0..k {
            h[(2 + a, 2 + b)] = -dm.xqx[(a, b)] / s2;
        }
    }
    h
}

/// Variance of the per-unit modified score under normal errors.
pub fn information_matrix(t: usize, th: &ThetaCommon, sigma_v2: f64, dm: &DesignMoments) -> DMatrix<f64> {
    let xi = XiPoly::new(t);
    let tr = PhiTraces::new(t, th.rho);
    let tm1 = (t - 1) as f64;
    let s2 = th.sigma2;
    let k = th.beta.len();
    let zqz = dm.sigma_zqz(&tr, sigma_v2, &th.beta);
    let xqz = dm.sigma_xqz(&th.beta);
    let mut m = DMatrix::zeros(2 + k, 2 + k);
    m[(0, 0)] = tr.q_phi_q_phi + tr.phi_q_phi + zqz / s2;
    m[(0, 1)] = -tm1 * xi.eval(th.rho, 1) / s2;
    m[(1, 0)] = m[(0, 1)];
    m[(1, 1)] = tm1 / (2.0 * s2 * s2);
    for a in 0..k {
        m[(0, 2 + a)] = xqz[a] / s2;
        m[(2 + a, 0)] = xqz[a] / s2;
        for b in 0..k {
            m[(2 + a, 2 + b)] = dm.xqx[(a, b)] / s2;
        }
    }
    m
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticMoments {
    pub mh: DMatrix<f64>,
    pub mim: DMatrix<f64>,
    /// `MH^{-1} MIM MH^{-1}`, the covariance of `sqrt(N) (theta_hat - theta)`
    pub sandwich: DMatrix<f64>,
    /// `sandwich / N`
    pub covariance: DMatrix<f64>,
    pub sigma_v2: f64,
}

impl AsymptoticMoments {
    pub fn std_errors(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

pub const DELTA_SING: f64 = 0.02;

/// Sandwich covariance at an estimate away from the unit circle. Pass
/// `sigma_v2 = None` to use the moment estimator at `theta.rho`.
pub fn asymptotic_covariance(
    data: &PanelDataset,
    theta: &ThetaCommon,
    sigma_v2: Option<f64>,
    delta_sing: f64,
) -> Result<AsymptoticMoments> {
    if theta.rho.abs() >= 1.0 - delta_sing {
        return Err(Error::NearUnitCircle(theta.rho.abs()));
    }
    let (v_hat, sv2_hat) = unit_effects(data, theta.rho, theta.sigma2);
    let sigma_v2 = sigma_v2.unwrap_or(sv2_hat);
    let dm = DesignMoments::from_panel(data, theta.rho, &v_hat);
    let t = data.n_periods();
    let mh = expected_hessian(t, theta, sigma_v2, &dm);
    let mim = information_matrix(t, theta, sigma_v2, &dm);
    let inv = mh.clone().try_inverse().ok_or_else(|| Error::Numerical("expected Hessian is singular".into()))?;
    let sandwich = &inv * &mim * &inv;
    let covariance = &sandwich / data.n_units() as f64;
    Ok(AsymptoticMoments { mh, mim, sandwich, covariance, sigma_v2 })
}

/// `(theta_n, sigma_v^2 / sigma^2 - (1 - rho))`.
#[derive(Debug, Clone, Serialize)]
pub struct ThetaBar {
    pub theta_n: ReparamTheta,
    pub sigma_v2_bar: f64,
}

impl ThetaBar {
    pub fn sigma_v2(&self) -> f64 {
        let th = self.theta_n.to_common();
        th.sigma2 * (self.sigma_v2_bar + 1.0 - th.rho)
    }
}

/// Expected Hessian of the reparametrized log-likelihood, `J' MH J`.
pub fn expected_hessian_reparam(t: usize, tb: &ThetaBar, dm: &DesignMoments) -> DMatrix<f64> {
    let th = tb.theta_n.to_common();
    let j = tb.theta_n.jacobian();
    j.transpose() * expected_hessian(t, &th, tb.sigma_v2(), dm) * j
}

/// Adjugate via cofactors; exact enough for the small matrices used here and
/// well defined when the matrix is singular.
pub fn adjugate(m: &DMatrix<f64>) -> DMatrix<f64> {
    let p = m.nrows();
    if p == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    DMatrix::from_fn(p, p, |i, j| {
        let minor = m.clone().remove_row(j).remove_column(i);
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        sign * minor.determinant()
    })
}

/// Linear restrictions `A theta_n = a` on `(r_n, s^2_n, b_n)`.
#[derive(Debug, Clone, Serialize)]
pub struct LinearHypothesis {
    pub a_mat: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl LinearHypothesis {
    pub fn new(a_mat: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if a_mat.nrows() != rhs.len() || a_mat.nrows() == 0 {
            return Err(Error::InvalidHypothesis("A and a must have the same, positive, number of rows".into()));
        }
        if a_mat.nrows() > a_mat.ncols() || a_mat.clone().svd(false, false).rank(1e-10) < a_mat.nrows() {
            return Err(Error::InvalidHypothesis("restriction matrix is rank deficient".into()));
        }
        Ok(Self { a_mat, rhs })
    }

    /// `H0: rho = a` in a model with `k` covariates.
    pub fn rho(a: f64, k: usize) -> Self {
        let mut m = DMatrix::zeros(1, 2 + k);
        m[(0, 0)] = 1.0;
        Self { a_mat: m, rhs: DVector::from_element(1, a) }
    }

    /// Parses restrictions such as `rho=1`, `s2n=0.5`, `b1=0`.
    pub fn parse(items: &[String], k: usize) -> Result<Self> {
        let p = 2 + k;
        let mut a_mat = DMatrix::zeros(items.len(), p);
        let mut rhs = DVector::zeros(items.len());
        for (row, item) in items.iter().enumerate() {
            let (name, val) = item
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("restriction {item:?} must look like name=value")))?;
            let col = match name.trim() {
                "rho" | "r" => 0,
                "s2n" => 1,
                b if b.starts_with('b') => {
                    let j: usize = b[1..].parse().map_err(|_| Error::Usage(format!("unknown parameter {b:?}")))?;
                    if j == 0 || j > k {
                        return Err(Error::Usage(format!("{b} is out of range for K = {k}")));
                    }
                    1 + j
                }
                other => return Err(Error::Usage(format!("unknown parameter {other:?}"))),
            };
            a_mat[(row, col)] = 1.0;
            rhs[row] = val
                .trim()
                .parse()
                .map_err(|_| Error::Usage(format!("restriction value {val:?} is not a number")))?;
        }
        Self::new(a_mat, rhs)
    }

    /// Value of `rho` fixed by the hypothesis, if one row is exactly `e_1`
    /// and no other row involves `rho`.
    pub fn pinned_rho(&self) -> Option<f64> {
        let mut out = None;
        for i in 0..self.a_mat.nrows() {
            let row = self.a_mat.row(i);
            if row[0] == 0.0 {
                continue;
            }
            if out.is_some() || row.iter().skip(1).any(|v| *v != 0.0) {
                return None;
            }
            out = Some(self.rhs[i] / row[0]);
        }
        out
    }

    pub fn dof(&self) -> usize {
        self.a_mat.nrows()
    }
}

/// Restricted maximizer of the modified likelihood under a hypothesis that
/// fixes `rho`. Remaining rows may pin `s^2_n` or impose linear restrictions
/// on `b`.
pub fn restricted_estimate(m: &QMoments, h: &LinearHypothesis) -> Result<ThetaCommon> {
    let a = h
        .pinned_rho()
        .ok_or_else(|| Error::InvalidHypothesis("the hypothesis must fix rho through a row (1, 0, ..., 0)".into()))?;
    let k = m.k();
    let mut pinned_s2n = None;
    let mut rb: Vec<(DVector<f64>, f64)> = Vec::new();
    for i in 0..h.a_mat.nrows() {
        let row = h.a_mat.row(i);
        if row[0] != 0.0 {
            continue;
        }
        let bpart = row.columns(2, k).transpose();
        if row[1] != 0.0 {
            if bpart.iter().any(|v| *v != 0.0) {
                return Err(Error::InvalidHypothesis("restrictions may not mix s2n and b".into()));
            }
            pinned_s2n = Some(h.rhs[i] / row[1]);
        } else {
            rb.push((bpart, h.rhs[i]));
        }
    }
    let mut b = m.beta_hat(a)?;
    if !rb.is_empty() {
        let r = DMatrix::from_fn(rb.len(), k, |i, j| rb[i].0[j]);
        let q = DVector::from_iterator(rb.len(), rb.iter().map(|x| x.1));
        let sinv = m.sxx.clone().try_inverse().ok_or(Error::SingularCovariates)?;
        let mid = (&r * &sinv * r.transpose())
            .try_inverse()
            .ok_or_else(|| Error::InvalidHypothesis("covariate restrictions are rank deficient".into()))?;
        b = &b - &sinv * r.transpose() * mid * (&r * &b - q);
    }
    let sigma2 = match pinned_s2n {
        Some(v) => {
            if a == 0.0 {
                return Err(Error::ReparamSingular);
            }
            v * a
        }
        None => m.rss(a, &b) / ((m.t - 1) * m.n) as f64,
    };
    Ok(ThetaCommon::new(a, sigma2, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QlmVariant {
    Auto,
    Standard,
    Unity,
}

#[derive(Debug, Clone)]
pub struct QlmOptions {
    pub alpha: f64,
    /// center per-unit scores before forming their outer-product matrix
    pub center_scores: bool,
}

impl Default for QlmOptions {
    fn default() -> Self {
        Self { alpha: 0.05, center_scores: false }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QlmResult {
    pub statistic: f64,
    pub dof: usize,
    pub pvalue: f64,
    pub reject: bool,
    pub variant: QlmVariant,
    pub restricted_theta: ThetaCommon,
    pub sigma_v2_bar: f64,
}

fn outer_mean(s: &DMatrix<f64>, center: bool) -> (DVector<f64>, DMatrix<f64>) {
    let n = s.nrows() as f64;
    let mean = DVector::from_iterator(s.ncols(), s.column_iter().map(|c| c.sum() / n));
    let mut c = s.clone();
    if center {
        for mut row in c.row_iter_mut() {
            row -= mean.transpose();
        }
    }
    (mean, c.transpose() * &c / n)
}

/// `N g' B' (A B J B' A')^{-1} A B g` with `B` standing in for `H^{-1}`.
pub fn qlm_quadratic_form(
    n: usize,
    g: &DVector<f64>,
    b: &DMatrix<f64>,
    jmat: &DMatrix<f64>,
    a: &DMatrix<f64>,
) -> Result<f64> {
    let abg = a * b * g;
    let mid = a * b * jmat * b.transpose() * a.transpose();
    let inv = mid
        .try_inverse()
        .ok_or_else(|| Error::Numerical("QLM middle matrix is singular".into()))?;
    Ok((n as f64 * abg.dot(&(inv * &abg))).max(0.0))
}

fn finish(
    statistic: f64,
    dof: usize,
    variant: QlmVariant,
    theta: ThetaCommon,
    sigma_v2_bar: f64,
    opts: &QlmOptions,
) -> QlmResult {
    let pvalue = ChiSquared::new(dof as f64).unwrap().sf(statistic).clamp(0.0, 1.0);
    QlmResult { statistic, dof, pvalue, reject: pvalue < opts.alpha, variant, restricted_theta: theta, sigma_v2_bar }
}

/// Quasi-LM test with the expected Hessian at the restricted estimate.
pub fn qlm_standard(data: &PanelDataset, h: &LinearHypothesis, opts: &QlmOptions) -> Result<QlmResult> {
    let k = data.n_covariates();
    if h.a_mat.ncols() != 2 + k {
        return Err(Error::InvalidHypothesis(format!("restriction matrix needs {} columns", 2 + k)));
    }
    if h.pinned_rho() == Some(1.0) && h.dof() >= 2 {
        return Err(Error::InvalidHypothesis("rho = 1 jointly with other restrictions needs the unity variant".into()));
    }
    let m = QMoments::from_panel(data);
    let th = restricted_estimate(&m, h)?;
    let t = data.n_periods();
    let (v_hat, sv2) = unit_effects(data, th.rho, th.sigma2);
    let sv2_bar = sv2 / th.sigma2 - (1.0 - th.rho);
    let dm = DesignMoments::from_panel(data, th.rho, &v_hat);
    let xi = XiPoly::new(t);
    let units = UnitQ::all(data);

    // r = 0 makes the reparametrization singular; the statistic is invariant
    // to it away from r = 0, so the common parametrization is used there
    let (scores, hmat) = if th.rho == 0.0 {
        (score_contributions(&units, &xi, &th), expected_hessian(t, &th, sv2, &dm))
    } else {
        let thn = th.to_reparam()?;
        let tb = ThetaBar { theta_n: thn.clone(), sigma_v2_bar: sv2_bar };
        (score_contributions_reparam(&units, &xi, &thn)?, expected_hessian_reparam(t, &tb, &dm))
    };
    let (g, jmat) = outer_mean(&scores, opts.center_scores);
    let stat = qlm_quadratic_form(data.n_units(), &g, &adjugate(&hmat), &jmat, &h.a_mat)?;
    Ok(finish(stat, h.dof(), QlmVariant::Standard, th, sv2_bar, opts))
}

/// `d^n/dr^n [h(r - 1) / r]` at `r = 1` for quadratic `h`.
fn d_over_r(h: [f64; 3], n: usize) -> f64 {
    let fact = |j: usize| (1..=j).map(|x| x as f64).product::<f64>();
    let binom = |n: usize, j: usize| fact(n) / (fact(j) * fact(n - j));
    (0..=n.min(2))
        .map(|j| {
            let sign = if (n - j) % 2 == 0 { 1.0 } else { -1.0 };
            binom(n, j) * fact(j) * h[j] * sign * fact(n - j)
        })
        .sum()
}

/// Expected-Hessian blocks of the unity-reformulated test at
/// `theta = (1, sigma^2, b)`, ordered `((r - 1)^2, s^2_n, b)`.
pub fn unity_expected_hessian(t: usize, sigma2: f64, b: &DVector<f64>, dm: &DesignMoments) -> DMatrix<f64> {
    let xi = XiPoly::new(t);
    let tm1 = (t - 1) as f64;
    let tf = t as f64;
    let k = b.len();
    // expected RSS per unit as a quadratic in z = r - 1 at the true b
    let h = [
        sigma2 * tm1,
        sigma2 * tm1,
        sigma2 * tm1 * (tf + 1.0) / 6.0 + (b.transpose() * &dm.x_phi_phi_x * b)[(0, 0)],
    ];
    let c = &dm.x_phi_x * b;
    let e4 = tm1 * xi.eval(1.0, 4) + 3.0 * tm1 - d_over_r(h, 4) / (2.0 * sigma2);
    let e3_v = d_over_r(h, 2) / (2.0 * sigma2 * sigma2);
    let mut out = DMatrix::zeros(2 + k, 2 + k);
    out[(0, 0)] = 2.0 / 24.0 * e4;
    out[(0, 1)] = 0.5 * e3_v;
    out[(1, 0)] = out[(0, 1)];
    out[(1, 1)] = -tm1 / (2.0 * sigma2 * sigma2);
    for a in 0..k {
        out[(0, 2 + a)] = c[a] / sigma2;
        out[(2 + a, 0)] = c[a] / sigma2;
        for bb in 0..k {
            out[(2 + a, 2 + bb)] = -dm.xqx[(a, bb)] / sigma2;
        }
    }
    out
}

/// Quasi-LM test of hypotheses that include `rho = 1` jointly with further
/// restrictions, with `rho = 1` restated as `(rho - 1)^2 = 0`.
pub fn qlm_unity(data: &PanelDataset, h: &LinearHypothesis, opts: &QlmOptions) -> Result<QlmResult> {
    let k = data.n_covariates();
    if h.a_mat.ncols() != 2 + k {
        return Err(Error::InvalidHypothesis(format!("restriction matrix needs {} columns", 2 + k)));
    }
    if h.pinned_rho() != Some(1.0) || h.dof() < 2 {
        return Err(Error::InvalidHypothesis("the unity variant needs rho = 1 and at least one more restriction".into()));
    }
    let m = QMoments::from_panel(data);
    let th = restricted_estimate(&m, h)?;
    let t = data.n_periods();
    let xi = XiPoly::new(t);
    let units = UnitQ::all(data);
    let thn = th.to_reparam()?;
    let mut s = score_contributions_reparam(&units, &xi, &thn)?;
    let d2 = second_r_contributions(&units, &xi, &thn);
    s.column_mut(0).copy_from(&(d2 * 0.5));
    let (g, jmat) = outer_mean(&s, opts.center_scores);
    let (v_hat, sv2) = unit_effects(data, 1.0, th.sigma2);
    let dm = DesignMoments::from_panel(data, 1.0, &v_hat);
    let hmat = unity_expected_hessian(t, th.sigma2, &th.beta, &dm);
    // the rho row restricts (r - 1)^2 and is normalized to a unit row
    let mut a_tilde = h.a_mat.clone();
    for i in 0..a_tilde.nrows() {
        if a_tilde[(i, 0)] != 0.0 {
            a_tilde[(i, 0)] = 1.0;
        }
    }
    let stat = qlm_quadratic_form(data.n_units(), &g, &adjugate(&hmat), &jmat, &a_tilde)?;
    let sv2_bar = sv2 / th.sigma2;
    Ok(finish(stat, h.dof(), QlmVariant::Unity, th, sv2_bar, opts))
}

/// Dispatches on the variant; `Auto` uses the unity form exactly when the
/// hypothesis fixes `rho = 1` together with at least one more restriction.
pub fn qlm_test(data: &PanelDataset, h: &LinearHypothesis, variant: QlmVariant, opts: &QlmOptions) -> Result<QlmResult> {
    let unity = h.pinned_rho() == Some(1.0) && h.dof() >= 2;
    match variant {
        QlmVariant::Standard => qlm_standard(data, h, opts),
        QlmVariant::Unity => qlm_unity(data, h, opts),
        QlmVariant::Auto if unity => qlm_unity(data, h, opts),
        QlmVariant::Auto => qlm_standard(data, h, opts),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WaldResult {
    pub rho_hat: f64,
    pub statistic: f64,
    pub critical_value: f64,
    pub reject: bool,
}

/// `Var(Z_1) = 48 / (T^2 (T-1)(T+1))`.
pub fn z1_variance(t: usize) -> f64 {
    let tf = t as f64;
    48.0 / (tf * tf * (tf - 1.0) * (tf + 1.0))
}

/// One-sided test of `rho = 1` based on `sqrt(N) (rho_C - 1)^2`, whose null
/// limit is `Z_1 1{Z_1 > 0}`.
pub fn wald_unit_root(data: &PanelDataset, alpha: f64, opts: &EstimatorOptions) -> Result<WaldResult> {
    let est = mmle_c(data, opts)?;
    let rho = est.theta.rho;
    let statistic = (data.n_units() as f64).sqrt() * (rho - 1.0).powi(2);
    let critical_value = wald_critical_value(data.n_periods(), alpha);
    Ok(WaldResult { rho_hat: rho, statistic, critical_value, reject: statistic > critical_value })
}

pub fn wald_critical_value(t: usize, alpha: f64) -> f64 {
    z1_variance(t).sqrt() * Normal::standard().inverse_cdf(1.0 - alpha)
}

/// Values of `rho` on `grid` where the QLM test does not reject, merged into
/// closed intervals of consecutive grid points.
pub fn qlm_confidence_set(data: &PanelDataset, alpha: f64, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    let opts = QlmOptions { alpha, ..QlmOptions::default() };
    let k = data.n_covariates();
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for &a in grid {
        let keep = !qlm_standard(data, &LinearHypothesis::rho(a, k), &opts)?.reject;
        match (keep, open) {
            (true, Some((lo, _))) => open = Some((lo, a)),
            (true, None) => open = Some((a, a)),
            (false, Some(iv)) => {
                out.push(iv);
                open = None;
            }
            (false, None) => {}
        }
    }
    out.extend(open);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traces_at_unity() {
        for t in 2..=10usize {
            let tf = t as f64;
            let tr = PhiTraces::new(t, 1.0);
            assert!((tr.phi_q_phi - (tf - 1.0) * (tf + 1.0) / 6.0).abs() < 1e-12);
            assert!((tr.q_phi_q_phi + (tf - 1.0) * (tf - 5.0) / 12.0).abs() < 1e-12);
            assert!((tr.psi_q_psi - tf * (tf * tf - 1.0) / 12.0).abs() < 1e-10);
        }
    }

    #[test]
    fn trace_q_phi_is_minus_penalty_slope() {
        for t in [2usize, 4, 9] {
            let xi = XiPoly::new(t);
            for rho in [-0.5, 0.3, 0.9, 1.0] {
                let tr = (q_matrix(t) * phi_matrix(t, rho)).trace();
                assert!((tr + (t as f64 - 1.0) * xi.eval(rho, 1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reparam_hessian_singular_at_unity() {
        for t in [3usize, 4, 9] {
            let tb = ThetaBar {
                theta_n: ReparamTheta { r: 1.0, s2n: 1.7, b: DVector::zeros(0) },
                sigma_v2_bar: 0.0,
            };
            let h = expected_hessian_reparam(t, &tb, &DesignMoments::none());
            assert!(h[(0, 0)].abs() < 1e-10 && h[(0, 1)].abs() < 1e-10 && h[(1, 0)].abs() < 1e-10);
            let adj = adjugate(&h);
            assert!(adj[(0, 0)].abs() > 1e-3);
            assert!(adj[(1, 0)].abs() < 1e-10 && adj[(1, 1)].abs() < 1e-10);
        }
    }

    #[test]
    fn adjugate_matches_inverse_times_determinant() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.3, 1.5, 0.2, -0.1, 0.2, 0.9]);
        let adj = adjugate(&m);
        let expect = m.clone().try_inverse().unwrap() * m.determinant();
        assert!((adj - expect).abs().max() < 1e-12);
    }

    #[test]
    fn mh_and_mim_differ() {
        for t in [3usize, 4, 9] {
            for rho in [-0.5, 0.0, 0.5, 0.9] {
                let th = ThetaCommon::new(rho, 1.0, DVector::zeros(0));
                let mh = expected_hessian(t, &th, 0.3, &DesignMoments::none());
                let mim = information_matrix(t, &th, 0.3, &DesignMoments::none());
                assert!((mh[(0, 0)] + mim[(0, 0)]).abs() > 1e-6, "T={t} rho={rho}");
                assert!(mh.clone().symmetric_eigenvalues().max() < 0.0);
            }
        }
    }

    #[test]
    fn wald_critical_values() {
        assert!((z1_variance(4) - 0.2).abs() < 1e-15);
        assert_eq!(wald_critical_value(4, 0.5), 0.0);
        assert!((wald_critical_value(4, 0.05) - 0.2f64.sqrt() * 1.6448536269514722).abs() < 1e-9);
    }

    #[test]
    fn unity_blocks_match_closed_plims() {
        // with b = 0 the s^2 cross term is (T^2 - 1) / (12 sigma^2) after the 1/2 factor
        for t in [3usize, 4, 9] {
            let tf = t as f64;
            let s2 = 1.3;
            let h = unity_expected_hessian(t, s2, &DVector::zeros(0), &DesignMoments::none());
            assert!((h[(0, 1)] - (tf * tf - 1.0) / (12.0 * s2)).abs() < 1e-12);
            let xi = XiPoly::new(t);
            let e4 = (tf - 1.0) * (xi.eval(1.0, 4) + 1.0 - 2.0 * tf);
            assert!((h[(0, 0)] - e4 / 12.0).abs() < 1e-10);
        }
    }
}
