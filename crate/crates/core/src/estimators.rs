//! LSDV and the generalized modified ML estimators.
//!
//! All three modified estimators coincide with the smallest local maximizer of
//! the concentrated likelihood when the concentrated score has an interior
//! root. They differ only in how a point is chosen when it does not:
//!
//! * `C` minimizes the squared concentrated score subject to concavity in `r`;
//! * `W` minimizes `Psi' W Psi` over the full parameter vector subject to a
//!   negative semi-definite Hessian;
//! * `F` does the same with the first score element replaced by the
//!   concentrated score.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::Result;
use crate::likelihood::{hessian, score_vector, Concentrated, ThetaCommon};
use crate::panel::{ConcentratedStats, PanelDataset, QMoments};
use crate::poly::{poly_mul, real_roots};
use crate::xi::XiPoly;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Lsdv,
    LsdvBc,
    MmleC,
    MmleW,
    MmleF,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::Lsdv => "LSDV",
            EstimatorKind::LsdvBc => "LSDV-BC",
            EstimatorKind::MmleC => "MMLE-C",
            EstimatorKind::MmleW => "MMLE-W",
            EstimatorKind::MmleF => "MMLE-F",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "lsdv" => Ok(EstimatorKind::Lsdv),
            "lsdv_bc" | "lsdv-bc" => Ok(EstimatorKind::LsdvBc),
            "c" | "mmle_c" | "mmle-c" => Ok(EstimatorKind::MmleC),
            "w" | "mmle_w" | "mmle-w" => Ok(EstimatorKind::MmleW),
            "f" | "mmle_f" | "mmle-f" => Ok(EstimatorKind::MmleF),
            other => Err(format!("unknown estimator {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorOptions {
    pub r_min: f64,
    pub r_max: f64,
    pub grid_step: f64,
    pub golden_tol: f64,
    /// second-order tolerance: a point counts as concave when the relevant
    /// second derivative (or largest Hessian eigenvalue) is at most this
    pub soc_tol: f64,
    pub multistarts: usize,
    pub max_iter: usize,
    /// weight matrix for `W` and `F`; identity when `None`
    pub weight: Option<DMatrix<f64>>,
    /// stand-in for the zero block when `F` is given `diag(w11, 0)`
    pub f_epsilon: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            r_min: -1.0,
            r_max: 1.4,
            grid_step: 1e-3,
            golden_tol: 1e-8,
            soc_tol: 1e-10,
            multistarts: 8,
            max_iter: 500,
            weight: None,
            f_epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateResult {
    pub kind: EstimatorKind,
    pub theta: ThetaCommon,
    /// the concentrated score has a local maximum in the search region
    pub lan_exists: bool,
    /// no feasible point was found and the bias-corrected LSDV value was used
    pub fallback: bool,
    /// the estimate sits on the edge of the search region
    pub boundary: bool,
    /// real roots of the concentrated first-order condition in `[max(-1, rho_lsdv), inf)`
    pub roots: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub second_derivative: f64,
}

fn profiled(m: &QMoments, st: &ConcentratedStats, r: f64) -> Result<ThetaCommon> {
    Ok(ThetaCommon::new(r, st.sigma2_at(r), m.beta_hat(r)?))
}

fn bc_shift(t: usize) -> f64 {
    3.0 / (t as f64 + 1.0)
}

/// Least squares dummy variable (within) estimator.
pub fn lsdv(data: &PanelDataset) -> Result<EstimateResult> {
    let m = QMoments::from_panel(data);
    let st = m.concentrated_stats()?;
    let cs = Concentrated::new(st.clone());
    let r = st.rho_lsdv;
    Ok(simple_result(EstimatorKind::Lsdv, profiled(&m, &st, r)?, &cs))
}

/// LSDV shifted by its probability limit bias at the unit root, `3 / (T + 1)`.
pub fn lsdv_bias_corrected(data: &PanelDataset) -> Result<EstimateResult> {
    let m = QMoments::from_panel(data);
    let st = m.concentrated_stats()?;
    let cs = Concentrated::new(st.clone());
    let r = st.rho_lsdv + bc_shift(m.t);
    Ok(simple_result(EstimatorKind::LsdvBc, profiled(&m, &st, r)?, &cs))
}

fn simple_result(kind: EstimatorKind, theta: ThetaCommon, cs: &Concentrated) -> EstimateResult {
    let r = theta.rho;
    EstimateResult {
        kind,
        lan_exists: false,
        fallback: false,
        boundary: false,
        roots: Vec::new(),
        objective: cs.score(r).powi(2),
        iterations: 0,
        second_derivative: cs.deriv(r, 2),
        theta,
    }
}

/// Coefficients of `kappa(r) = xi'(r) (c + (r - rho)^2) - (r - rho)`, whose
/// roots are the stationary points of the concentrated likelihood.
pub fn kappa_coefficients(st: &ConcentratedStats, xi: &XiPoly) -> Vec<f64> {
    let p = st.rho_lsdv;
    let quad = [p * p + st.c_ratio, -2.0 * p, 1.0];
    let mut k = poly_mul(xi.coefficients(1), &quad);
    k[0] += p;
    k[1] -= 1.0;
    k
}

/// Outcome of the search for a local maximum of the concentrated likelihood.
#[derive(Debug, Clone, Serialize)]
pub struct LanExistence {
    /// roots of `kappa` in `[max(-1, rho_lsdv), inf)`, ascending
    pub roots: Vec<f64>,
    /// smallest root that is a local maximum inside `[r_min, r_max]`
    pub local_max: Option<f64>,
}

pub fn lancaster_existence(cs: &Concentrated, opts: &EstimatorOptions) -> LanExistence {
    let st = &cs.stats;
    let coeffs = kappa_coefficients(st, &cs.xi);
    let p = st.rho_lsdv;
    let c = st.c_ratio;
    let xi = &cs.xi;
    let f = |r: f64| {
        let u = r - p;
        let x1 = xi.eval(r, 1);
        (x1 * (c + u * u) - u, xi.eval(r, 2) * (c + u * u) + 2.0 * u * x1 - 1.0)
    };
    let lo = p.max(-1.0);
    let roots: Vec<f64> = real_roots(&coeffs, f).into_iter().filter(|&r| r >= lo).collect();
    // with c = 0 the fit is exact and l^c has a pole to +inf at rho_lsdv
    let pole = |r: f64| c == 0.0 && (r - p).abs() <= 1e-9 * (1.0 + p.abs());
    let local_max = roots
        .iter()
        .copied()
        .find(|&r| r >= opts.r_min && r <= opts.r_max && (pole(r) || cs.deriv(r, 2) <= opts.soc_tol));
    LanExistence { roots, local_max }
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, usize) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut it = 0;
    while (b - a).abs() > tol && it < 200 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        it += 1;
    }
    let x = if fc <= fd { c } else { d };
    (x, it)
}

/// Constrained grid search: minimizes the squared concentrated score over
/// `[r_min, r_max]` among points where the concentrated likelihood is
/// concave, then refines by golden section. `None` when no grid point is
/// feasible.
pub fn constrained_grid_search(cs: &Concentrated, opts: &EstimatorOptions) -> Option<(f64, usize)> {
    let lo = opts.r_min;
    let hi = opts.r_max;
    let n = ((hi - lo) / opts.grid_step).round() as usize;
    let feasible = |r: f64| cs.deriv(r, 2) <= opts.soc_tol;
    let mut best: Option<(f64, f64)> = None;
    for j in 0..=n {
        let r = (lo + j as f64 * opts.grid_step).min(hi);
        if !feasible(r) {
            continue;
        }
        let v = cs.score(r).powi(2);
        if best.is_none_or(|(_, bv)| v < bv) {
            best = Some((r, v));
        }
    }
    let (r0, v0) = best?;
    let a = (r0 - opts.grid_step).max(lo);
    let b = (r0 + opts.grid_step).min(hi);
    let obj = |r: f64| if feasible(r) { cs.score(r).powi(2) } else { f64::INFINITY };
    let (r1, it) = golden_section(obj, a, b, opts.golden_tol);
    if obj(r1) <= v0 {
        Some((r1, n + 1 + it))
    } else {
        Some((r0, n + 1 + it))
    }
}

fn fallback_result(kind: EstimatorKind, m: &QMoments, cs: &Concentrated, roots: Vec<f64>) -> Result<EstimateResult> {
    let r = cs.stats.rho_lsdv + bc_shift(m.t);
    let mut res = simple_result(kind, profiled(m, &cs.stats, r)?, cs);
    res.fallback = true;
    res.roots = roots;
    Ok(res)
}

fn on_boundary(r: f64, opts: &EstimatorOptions) -> bool {
    (r - opts.r_min).abs() < 1e-9 || (r - opts.r_max).abs() < 1e-9
}

/// Modified ML estimator `C` from precomputed moments.
pub fn mmle_c_from_moments(m: &QMoments, opts: &EstimatorOptions) -> Result<EstimateResult> {
    let cs = Concentrated::new(m.concentrated_stats()?);
    let lan = lancaster_existence(&cs, opts);
    let kind = EstimatorKind::MmleC;
    let (r, lan_exists, iterations) = match lan.local_max {
        Some(r) => (r, true, 0),
        None => match constrained_grid_search(&cs, opts) {
            Some((r, it)) => (r, false, it),
            None => return fallback_result(kind, m, &cs, lan.roots),
        },
    };
    Ok(EstimateResult {
        kind,
        theta: profiled(m, &cs.stats, r)?,
        lan_exists,
        fallback: false,
        boundary: on_boundary(r, opts),
        roots: lan.roots,
        objective: cs.score(r).powi(2),
        iterations,
        second_derivative: cs.deriv(r, 2),
    })
}

pub fn mmle_c(data: &PanelDataset, opts: &EstimatorOptions) -> Result<EstimateResult> {
    mmle_c_from_moments(&QMoments::from_panel(data), opts)
}

pub fn mmle_w(data: &PanelDataset, opts: &EstimatorOptions) -> Result<EstimateResult> {
    let m = QMoments::from_panel(data);
    mmle_weighted(&m, opts, EstimatorKind::MmleW)
}

pub fn mmle_f(data: &PanelDataset, opts: &EstimatorOptions) -> Result<EstimateResult> {
    let m = QMoments::from_panel(data);
    mmle_weighted(&m, opts, EstimatorKind::MmleF)
}

pub fn estimate(data: &PanelDataset, kind: EstimatorKind, opts: &EstimatorOptions) -> Result<EstimateResult> {
    match kind {
        EstimatorKind::Lsdv => lsdv(data),
        EstimatorKind::LsdvBc => lsdv_bias_corrected(data),
        EstimatorKind::MmleC => mmle_c(data, opts),
        EstimatorKind::MmleW => mmle_w(data, opts),
        EstimatorKind::MmleF => mmle_f(data, opts),
    }
}

/// Weight matrix actually used by `W` or `F`. For `F`, a weight whose block
/// beyond the first element is zero is replaced by `diag(w11, eps * w11 * I)`.
pub fn effective_weight(p: usize, kind: EstimatorKind, opts: &EstimatorOptions) -> DMatrix<f64> {
    let w = opts.weight.clone().unwrap_or_else(|| DMatrix::identity(p, p));
    assert_eq!(w.nrows(), p, "weight matrix must be {p} x {p}");
    if kind == EstimatorKind::MmleF {
        let rest = w.view((1, 1), (p - 1, p - 1)).iter().all(|v| *v == 0.0)
            && w.row(0).iter().skip(1).all(|v| *v == 0.0);
        if rest {
            let mut v = DMatrix::identity(p, p) * (opts.f_epsilon * w[(0, 0)]);
            v[(0, 0)] = w[(0, 0)];
            return v;
        }
    }
    w
}

/// Score-like vector minimized by `W` (`F` swaps in the concentrated score)
/// and its Jacobian in `theta`.
fn weighted_system(
    m: &QMoments,
    xi: &XiPoly,
    cs: &Concentrated,
    kind: EstimatorKind,
    th: &ThetaCommon,
) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let h = hessian(m, xi, th);
    let mut psi = score_vector(m, xi, th);
    let mut jac = h.clone();
    if kind == EstimatorKind::MmleF {
        psi[0] = cs.score(th.rho);
        jac.row_mut(0).fill(0.0);
        jac[(0, 0)] = cs.deriv(th.rho, 2);
    }
    (psi, jac, h)
}

fn max_eigenvalue(h: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(h.clone()).eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

struct Box {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl Box {
    fn clamp(&self, x: &DVector<f64>) -> DVector<f64> {
        x.zip_zip_map(&self.lo, &self.hi, |v, l, h| v.max(l).min(h))
    }
}

fn mmle_weighted(m: &QMoments, opts: &EstimatorOptions, kind: EstimatorKind) -> Result<EstimateResult> {
    let mut c = mmle_c_from_moments(m, opts)?;
    c.kind = kind;
    if c.lan_exists {
        return Ok(c);
    }
    let cs = Concentrated::new(m.concentrated_stats()?);
    let xi = XiPoly::new(m.t);
    let p = 2 + m.k();
    let w = effective_weight(p, kind, opts);
    let st = &cs.stats;

    // optimize over x = (r, log s^2, b)
    let to_theta = |x: &DVector<f64>| ThetaCommon::new(x[0], x[1].exp(), x.rows(2, p - 2).into_owned());
    let eval = |x: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
        let th = to_theta(x);
        let (psi, jac, h) = weighted_system(m, &xi, &cs, kind, &th);
        if max_eigenvalue(&h) > opts.soc_tol {
            return None;
        }
        let wpsi = &w * &psi;
        let obj = psi.dot(&wpsi);
        let mut g = jac.transpose() * wpsi * 2.0;
        g[1] *= th.sigma2;
        if !obj.is_finite() {
            return None;
        }
        Some((obj, g))
    };

    let b_ml = DVector::from_vec(st.beta_lsdv.clone());
    let mut lo = DVector::zeros(p);
    let mut hi = DVector::zeros(p);
    lo[0] = opts.r_min;
    hi[0] = opts.r_max;
    lo[1] = (st.sigma2_lsdv * 1e-3).ln();
    hi[1] = (st.sigma2_lsdv * 1e3).ln();
    for a in 0..p - 2 {
        let span = 1e3 * (1.0 + b_ml[a].abs());
        lo[2 + a] = b_ml[a] - span;
        hi[2 + a] = b_ml[a] + span;
    }
    let bx = Box { lo, hi };

    let mut starts: Vec<f64> = Vec::new();
    if !c.fallback {
        starts.push(c.theta.rho);
    }
    let shift = bc_shift(m.t);
    for r in [
        st.rho_lsdv + shift,
        1.0,
        st.rho_lsdv,
        st.rho_lsdv + 0.5 * shift,
        c.theta.rho - 0.05,
        c.theta.rho + 0.05,
        0.5 * (opts.r_max + st.rho_lsdv.max(opts.r_min)),
        opts.r_max - 0.1,
    ] {
        if starts.len() >= opts.multistarts {
            break;
        }
        starts.push(r.clamp(opts.r_min, opts.r_max));
    }

    let mut best: Option<(f64, DVector<f64>, usize)> = None;
    let mut total_iter = 0;
    for r0 in starts {
        let th0 = profiled(m, st, r0)?;
        let mut x0 = th0.to_vector();
        x0[1] = th0.sigma2.ln();
        let x0 = bx.clamp(&x0);
        let Some((f0, g0)) = eval(&x0) else { continue };
        let (x, f, it) = projected_bfgs(&eval, &bx, x0, f0, g0, opts.max_iter);
        total_iter += it;
        if best.as_ref().is_none_or(|(bf, _, _)| f < *bf) {
            best = Some((f, x, it));
        }
    }
    let Some((obj, x, _)) = best else {
        return fallback_result(kind, m, &cs, c.roots);
    };
    let theta = to_theta(&x);
    let r = theta.rho;
    Ok(EstimateResult {
        kind,
        lan_exists: false,
        fallback: false,
        boundary: on_boundary(r, opts),
        roots: c.roots,
        objective: obj,
        iterations: total_iter,
        second_derivative: max_eigenvalue(&hessian(m, &xi, &theta)),
        theta,
    })
}

/// Projected BFGS with backtracking; infeasible trial points are rejected.
fn projected_bfgs<E>(
    eval: &E,
    bx: &Box,
    mut x: DVector<f64>,
    mut f: f64,
    mut g: DVector<f64>,
    max_iter: usize,
) -> (DVector<f64>, f64, usize)
where
    E: Fn(&DVector<f64>) -> Option<(f64, DVector<f64>)>,
{
    let p = x.len();
    let mut hinv = DMatrix::identity(p, p);
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                hinv = DMatrix::identity(p, p);
            }
            let d = -(&hinv * &g);
            let mut step = 1.0;
            for _ in 0..60 {
                let xn = bx.clamp(&(&x + &d * step));
                let dx = &xn - &x;
                if dx.norm() <= 1e-15 * (1.0 + x.norm()) {
                    break;
                }
                if let Some((fnew, gnew)) = eval(&xn) {
                    if fnew <= f + 1e-4 * g.dot(&dx) && fnew < f {
                        accepted = Some((xn, fnew, gnew));
                        break;
                    }
                }
                step *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((xn, fnew, gnew)) = accepted else { break };
        let s = &xn - &x;
        let y = &gnew - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(p, p);
            let a = &i - &s * y.transpose() * rho;
            hinv = &a * &hinv * a.transpose() + &s * s.transpose() * rho;
        }
        let rel = (f - fnew).abs() / f.abs().max(1e-300);
        x = xn;
        f = fnew;
        g = gnew;
        if f <= 1e-30 || rel < 1e-14 {
            break;
        }
    }
    (x, f, it)
}
