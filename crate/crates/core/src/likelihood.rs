//! Modified profile log-likelihood, its derivatives, per-unit contributions and
//! the concentrated (profiled) score in `r`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{within, ConcentratedStats, PanelDataset, QMoments};
use crate::xi::XiPoly;

/// Parameters in the common parametrization `(rho, sigma^2, beta)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaCommon {
    pub rho: f64,
    pub sigma2: f64,
    pub beta: DVector<f64>,
}

/// Parameters in the parametrization `(r_n, s^2_n, b_n) = (rho, sigma^2 / rho, beta)`
/// used for inference near `rho = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReparamTheta {
    pub r: f64,
    pub s2n: f64,
    pub b: DVector<f64>,
}

impl ThetaCommon {
    pub fn new(rho: f64, sigma2: f64, beta: DVector<f64>) -> Self {
        Self { rho, sigma2, beta }
    }

    pub fn dim(&self) -> usize {
        2 + self.beta.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v[0] = self.rho;
        v[1] = self.sigma2;
        v.rows_mut(2, self.beta.len()).copy_from(&self.beta);
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self { rho: v[0], sigma2: v[1], beta: v.rows(2, v.len() - 2).into_owned() }
    }

    pub fn to_reparam(&self) -> Result<ReparamTheta> {
        if self.rho == 0.0 {
            return Err(Error::ReparamSingular);
        }
        Ok(ReparamTheta { r: self.rho, s2n: self.sigma2 / self.rho, b: self.beta.clone() })
    }
}

impl ReparamTheta {
    pub fn to_common(&self) -> ThetaCommon {
        ThetaCommon { rho: self.r, sigma2: self.s2n * self.r, beta: self.b.clone() }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(2 + self.b.len());
        v[0] = self.r;
        v[1] = self.s2n;
        v.rows_mut(2, self.b.len()).copy_from(&self.b);
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self { r: v[0], s2n: v[1], b: v.rows(2, v.len() - 2).into_owned() }
    }

    /// Jacobian `d theta / d theta_n`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let p = 2 + self.b.len();
        let mut j = DMatrix::identity(p, p);
        j[(1, 0)] = self.s2n;
        j[(1, 1)] = self.r;
        j
    }
}

/// `l_N(theta) = (T-1) xi(r) - (T-1)/2 log s^2 - sum e'Qe / (2 s^2 N)`.
pub fn modified_loglik(m: &QMoments, xi: &XiPoly, th: &ThetaCommon) -> f64 {
    let tm1 = (m.t - 1) as f64;
    let n = m.n as f64;
    tm1 * xi.eval(th.rho, 0) - 0.5 * tm1 * th.sigma2.ln() - m.rss(th.rho, &th.beta) / (2.0 * th.sigma2 * n)
}

/// Gradient of [`modified_loglik`] in the common parametrization.
pub fn score_vector(m: &QMoments, xi: &XiPoly, th: &ThetaCommon) -> DVector<f64> {
    let tm1 = (m.t - 1) as f64;
    let n = m.n as f64;
    let s2 = th.sigma2;
    let k = th.beta.len();
    let mut g = DVector::zeros(2 + k);
    g[0] = tm1 * xi.eval(th.rho, 1) + m.resid_lag(th.rho, &th.beta) / (s2 * n);
    g[1] = -tm1 / (2.0 * s2) + m.rss(th.rho, &th.beta) / (2.0 * s2 * s2 * n);
    g.rows_mut(2, k).copy_from(&(m.resid_x(th.rho, &th.beta) / (s2 * n)));
    g
}

/// Hessian of [`modified_loglik`] in the common parametrization.
pub fn hessian(m: &QMoments, xi: &XiPoly, th: &ThetaCommon) -> DMatrix<f64> {
    let tm1 = (m.t - 1) as f64;
    let n = m.n as f64;
    let s2 = th.sigma2;
    let k = th.beta.len();
    let er = m.resid_lag(th.rho, &th.beta);
    let ex = m.resid_x(th.rho, &th.beta);
    let rss = m.rss(th.rho, &th.beta);
    let mut h = DMatrix::zeros(2 + k, 2 + k);
    h[(0, 0)] = tm1 * xi.eval(th.rho, 2) - m.sll / (s2 * n);
    h[(0, 1)] = -er / (s2 * s2 * n);
    h[(1, 1)] = tm1 / (2.0 * s2 * s2) - rss / (s2 * s2 * s2 * n);
    for a in 0..k {
        h[(0, 2 + a)] = -m.sxl[a] / (s2 * n);
        h[(1, 2 + a)] = -ex[a] / (s2 * s2 * n);
        for b in 0..k {
            h[(2 + a, 2 + b)] = -m.sxx[(a, b)] / (s2 * n);
        }
    }
    for a in 0..2 + k {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    h
}

/// Hessian of the reparametrized log-likelihood `l_N(theta(theta_n))`.
pub fn hessian_reparam(m: &QMoments, xi: &XiPoly, thn: &ReparamTheta) -> DMatrix<f64> {
    let th = thn.to_common();
    let j = thn.jacobian();
    let g = score_vector(m, xi, &th);
    let mut h = j.transpose() * hessian(m, xi, &th) * &j;
    h[(0, 1)] += g[1];
    h[(1, 0)] += g[1];
    h
}

/// Within-transformed data of one unit.
#[derive(Debug, Clone)]
pub struct UnitQ {
    pub qy: Vec<f64>,
    pub ql: Vec<f64>,
    /// demeaned covariate columns, one `Vec` of length `T` per covariate
    pub qx: Vec<Vec<f64>>,
}

impl UnitQ {
    pub fn all(data: &PanelDataset) -> Vec<UnitQ> {
        let (t, k) = (data.n_periods(), data.n_covariates());
        (0..data.n_units())
            .map(|i| {
                let xi = data.x_unit(i);
                UnitQ {
                    qy: within(data.y_unit(i)),
                    ql: within(&data.ylag_unit(i)),
                    qx: (0..k)
                        .map(|c| within(&(0..t).map(|s| xi[s * k + c]).collect::<Vec<_>>()))
                        .collect(),
                }
            })
            .collect()
    }

    /// `Q e` with `e = y - r y_{-1} - X b`.
    pub fn resid(&self, r: f64, b: &DVector<f64>) -> Vec<f64> {
        (0..self.qy.len())
            .map(|s| {
                let xb: f64 = self.qx.iter().zip(b.iter()).map(|(c, bb)| c[s] * bb).sum();
                self.qy[s] - r * self.ql[s] - xb
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-unit scores in the common parametrization, one row per unit. Each unit
/// carries the full penalty `(T-1) xi(r)`, so rows average to [`score_vector`].
pub fn score_contributions(units: &[UnitQ], xi: &XiPoly, th: &ThetaCommon) -> DMatrix<f64> {
    let tm1 = (xi.n_periods() - 1) as f64;
    let k = th.beta.len();
    let s2 = th.sigma2;
    let pen = tm1 * xi.eval(th.rho, 1);
    let mut out = DMatrix::zeros(units.len(), 2 + k);
    for (i, u) in units.iter().enumerate() {
        let e = u.resid(th.rho, &th.beta);
        out[(i, 0)] = pen + dot(&e, &u.ql) / s2;
        out[(i, 1)] = -tm1 / (2.0 * s2) + dot(&e, &e) / (2.0 * s2 * s2);
        for c in 0..k {
            out[(i, 2 + c)] = dot(&e, &u.qx[c]) / s2;
        }
    }
    out
}

/// Per-unit scores in the `(r_n, s^2_n, b_n)` parametrization.
pub fn score_contributions_reparam(
    units: &[UnitQ],
    xi: &XiPoly,
    thn: &ReparamTheta,
) -> Result<DMatrix<f64>> {
    if thn.r == 0.0 {
        return Err(Error::ReparamSingular);
    }
    Ok(score_contributions(units, xi, &thn.to_common()) * thn.jacobian())
}

/// Per-unit `d^2 l_i / d r_n^2` at `theta_n`, holding `(s^2_n, b_n)` fixed.
pub fn second_r_contributions(units: &[UnitQ], xi: &XiPoly, thn: &ReparamTheta) -> DVector<f64> {
    let tm1 = (xi.n_periods() - 1) as f64;
    let (r, v) = (thn.r, thn.s2n);
    let base = tm1 * xi.eval(r, 2) + tm1 / (2.0 * r * r);
    DVector::from_iterator(
        units.len(),
        units.iter().map(|u| {
            let w = u.resid(0.0, &thn.b);
            base - dot(&w, &w) / (v * r * r * r)
        }),
    )
}

/// Concentrated modified log-likelihood `l^c(r) = l_N(r, sigma2(r), beta(r))`
/// and its derivatives, all closed-form in the [`ConcentratedStats`].
#[derive(Debug, Clone)]
pub struct Concentrated {
    pub stats: ConcentratedStats,
    pub xi: XiPoly,
}

impl Concentrated {
    pub fn new(stats: ConcentratedStats) -> Self {
        let xi = XiPoly::new(stats.n_periods);
        Self { stats, xi }
    }

    fn tm1(&self) -> f64 {
        (self.stats.n_periods - 1) as f64
    }

    /// `l^c(r)` up to an additive constant.
    pub fn value(&self, r: f64) -> f64 {
        let tm1 = self.tm1();
        tm1 * self.xi.eval(r, 0) - 0.5 * tm1 * self.stats.sigma2_at(r).ln() - 0.5 * tm1
    }

    /// `order`-th derivative of `l^c`, `1 <= order <= 5`.
    pub fn deriv(&self, r: f64, order: usize) -> f64 {
        assert!((1..=5).contains(&order), "derivative order must be in 1..=5");
        let u = r - self.stats.rho_lsdv;
        let tm1 = self.tm1();
        tm1 * self.xi.eval(r, order) - tm1 * ratio_deriv(u, self.stats.c_ratio, order - 1)
    }

    /// First derivative.
    pub fn score(&self, r: f64) -> f64 {
        self.deriv(r, 1)
    }
}

/// `k`-th derivative in `u` of `u / (c + u^2)`, `k <= 4`.
pub fn ratio_deriv(u: f64, c: f64, k: usize) -> f64 {
    let d = c + u * u;
    let u2 = u * u;
    match k {
        0 => u / d,
        1 => (c - u2) / (d * d),
        2 => 2.0 * u * (u2 - 3.0 * c) / d.powi(3),
        3 => -6.0 * (u2 * u2 - 6.0 * c * u2 + c * c) / d.powi(4),
        4 => 24.0 * u * (u2 * u2 - 10.0 * c * u2 + 5.0 * c * c) / d.powi(5),
        _ => panic!("ratio derivative order {k} not available"),
    }
}

/// Concentrated score at `r = 1` computed directly from the data through
/// `beta(1)` and `sigma2(1, beta(1))`.
pub fn concentrated_score_at_unity(data: &PanelDataset) -> Result<f64> {
    let m = QMoments::from_panel(data);
    let b = m.beta_hat(1.0)?;
    let tm1 = (m.t - 1) as f64;
    let n = m.n as f64;
    let s2 = m.rss(1.0, &b) / (tm1 * n);
    Ok(0.5 * tm1 + m.resid_lag(1.0, &b) / (s2 * n))
}
