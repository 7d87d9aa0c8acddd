//! Balanced panel storage, the within transform and the sufficient statistics
//! every estimator is built from.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Balanced panel with `n` units, `T` periods after the initial observation
/// and `K` strictly exogenous covariates.
///
/// Storage is unit-major: `y[i * T + (t - 1)]` holds `y_it` for `t = 1..T`
/// and `x[(i * T + (t - 1)) * K + k]` holds covariate `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    n: usize,
    t: usize,
    k: usize,
    y0: Vec<f64>,
    y: Vec<f64>,
    x: Vec<f64>,
}

impl PanelDataset {
    pub fn new(n: usize, t: usize, k: usize, y0: Vec<f64>, y: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        if t < 2 {
            return Err(Error::TooFewPeriods(t));
        }
        if n == 0 {
            return Err(Error::InvalidPanel("panel has no units".into()));
        }
        if y0.len() != n || y.len() != n * t || x.len() != n * t * k {
            return Err(Error::InvalidPanel(format!(
                "array sizes do not match N = {n}, T = {t}, K = {k}"
            )));
        }
        if let Some(pos) = y0.iter().chain(&y).chain(&x).position(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel(format!("non-finite value at flat position {pos}")));
        }
        Ok(Self { n, t, k, y0, y, x })
    }

    pub fn n_units(&self) -> usize {
        self.n
    }

    pub fn n_periods(&self) -> usize {
        self.t
    }

    pub fn n_covariates(&self) -> usize {
        self.k
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    /// `(y_i1, ..., y_iT)`.
    pub fn y_unit(&self, i: usize) -> &[f64] {
        &self.y[i * self.t..(i + 1) * self.t]
    }

    /// `(y_i0, ..., y_{i,T-1})`.
    pub fn ylag_unit(&self, i: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.t);
        v.push(self.y0[i]);
        v.extend_from_slice(&self.y_unit(i)[..self.t - 1]);
        v
    }

    /// Row-major `T x K` block of covariates for unit `i`.
    pub fn x_unit(&self, i: usize) -> &[f64] {
        let w = self.t * self.k;
        &self.x[i * w..(i + 1) * w]
    }

    pub fn x_at(&self, i: usize, t: usize, k: usize) -> f64 {
        self.x[(i * self.t + t - 1) * self.k + k]
    }

    /// Subtracts period-wise cross-sectional means from `y` and `x`, which
    /// removes common time effects. Period 0 is demeaned too unless
    /// `include_initial` is false.
    pub fn demean_cross_section(&self, include_initial: bool) -> PanelDataset {
        let (n, t, k) = (self.n, self.t, self.k);
        let nf = n as f64;
        let mut out = self.clone();
        if include_initial {
            let m = self.y0.iter().sum::<f64>() / nf;
            out.y0.iter_mut().for_each(|v| *v -= m);
        }
        for s in 0..t {
            let m = (0..n).map(|i| self.y[i * t + s]).sum::<f64>() / nf;
            (0..n).for_each(|i| out.y[i * t + s] -= m);
            for c in 0..k {
                let m = (0..n).map(|i| self.x[(i * t + s) * k + c]).sum::<f64>() / nf;
                (0..n).for_each(|i| out.x[(i * t + s) * k + c] -= m);
            }
        }
        out
    }

    /// Reads the long CSV format `unit,period,y,x1,..,xK`. Period 0 carries the
    /// initial observation; covariate cells on period-0 rows are ignored and
    /// may be empty.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 3
            || &headers[0] != "unit"
            || &headers[1] != "period"
            || &headers[2] != "y"
        {
            return Err(Error::InvalidPanel(
                "header must start with unit,period,y".into(),
            ));
        }
        let k = headers.len() - 3;
        for (j, h) in headers.iter().skip(3).enumerate() {
            if h != format!("x{}", j + 1) {
                return Err(Error::InvalidPanel(format!(
                    "covariate column {} must be named x{}, found {h:?}",
                    j + 4,
                    j + 1
                )));
            }
        }

        let mut units: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut cells: HashMap<(usize, usize), (f64, Vec<f64>)> = HashMap::new();
        let mut max_period = 0usize;
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != headers.len() {
                return Err(Error::InvalidPanel(format!(
                    "line {line}: expected {} fields, found {}",
                    headers.len(),
                    rec.len()
                )));
            }
            let unit = rec[0].to_string();
            let period: usize = rec[1].parse().map_err(|_| {
                Error::InvalidPanel(format!("line {line}: period {:?} is not a non-negative integer", &rec[1]))
            })?;
            let y = parse_num(&rec[2], line, "y")?;
            let mut xs = Vec::with_capacity(k);
            if period > 0 {
                for c in 0..k {
                    xs.push(parse_num(&rec[3 + c], line, &headers[3 + c])?);
                }
            }
            let next = units.len();
            let ui = *index.entry(unit.clone()).or_insert_with(|| {
                units.push(unit.clone());
                next
            });
            if cells.insert((ui, period), (y, xs)).is_some() {
                return Err(Error::InvalidPanel(format!(
                    "line {line}: duplicate row for unit {unit:?}, period {period}"
                )));
            }
            max_period = max_period.max(period);
        }

        let (n, t) = (units.len(), max_period);
        if n == 0 {
            return Err(Error::InvalidPanel("no data rows".into()));
        }
        if t < 2 {
            return Err(Error::TooFewPeriods(t));
        }
        let mut y0 = vec![0.0; n];
        let mut y = vec![0.0; n * t];
        let mut x = vec![0.0; n * t * k];
        for (i, name) in units.iter().enumerate() {
            for s in 0..=t {
                let (v, xs) = cells.remove(&(i, s)).ok_or_else(|| {
                    Error::InvalidPanel(format!("unit {name:?} is missing period {s}"))
                })?;
                if s == 0 {
                    y0[i] = v;
                } else {
                    y[i * t + s - 1] = v;
                    x[(i * t + s - 1) * k..(i * t + s) * k].copy_from_slice(&xs);
                }
            }
        }
        PanelDataset::new(n, t, k, y0, y, x)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["unit".to_string(), "period".into(), "y".into()];
        header.extend((1..=self.k).map(|c| format!("x{c}")));
        w.write_record(&header)?;
        for i in 0..self.n {
            let mut row = vec![i.to_string(), "0".into(), fmt_num(self.y0[i])];
            row.extend((0..self.k).map(|_| String::new()));
            w.write_record(&row)?;
            for s in 1..=self.t {
                let mut row = vec![i.to_string(), s.to_string(), fmt_num(self.y[i * self.t + s - 1])];
                row.extend((0..self.k).map(|c| fmt_num(self.x_at(i, s, c))));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_num(s: &str, line: u64, col: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::InvalidPanel(format!("line {line}: column {col} has invalid value {s:?}"))),
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

/// Subtracts the mean, i.e. applies `Q = I - ii'/T` without forming it.
pub fn within(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|a| a - m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pooled within-unit cross products, each summed over units (not averaged).
///
/// `l` denotes the lagged dependent variable, so `sll = sum_i y_{i,-1}' Q y_{i,-1}`.
#[derive(Debug, Clone)]
pub struct QMoments {
    pub n: usize,
    pub t: usize,
    pub syy: f64,
    pub sly: f64,
    pub sll: f64,
    pub sxx: DMatrix<f64>,
    pub sxl: DVector<f64>,
    pub sxy: DVector<f64>,
}

impl QMoments {
    pub fn from_panel(data: &PanelDataset) -> Self {
        let (n, t, k) = (data.n, data.t, data.k);
        let mut m = QMoments {
            n,
            t,
            syy: 0.0,
            sly: 0.0,
            sll: 0.0,
            sxx: DMatrix::zeros(k, k),
            sxl: DVector::zeros(k),
            sxy: DVector::zeros(k),
        };
        let mut xq = vec![vec![0.0; t]; k];
        for i in 0..n {
            let qy = within(data.y_unit(i));
            let ql = within(&data.ylag_unit(i));
            m.syy += dot(&qy, &qy);
            m.sly += dot(&ql, &qy);
            m.sll += dot(&ql, &ql);
            if k == 0 {
                continue;
            }
            let xi = data.x_unit(i);
            for (c, col) in xq.iter_mut().enumerate() {
                let raw: Vec<f64> = (0..t).map(|s| xi[s * k + c]).collect();
                *col = within(&raw);
            }
            for a in 0..k {
                m.sxl[a] += dot(&xq[a], &ql);
                m.sxy[a] += dot(&xq[a], &qy);
                for b in 0..=a {
                    let v = dot(&xq[a], &xq[b]);
                    m.sxx[(a, b)] += v;
                    if a != b {
                        m.sxx[(b, a)] += v;
                    }
                }
            }
        }
        m
    }

    pub fn k(&self) -> usize {
        self.sxl.len()
    }

    /// `sum_i e_i' Q e_i` with `e = y - r y_{-1} - X b`.
    pub fn rss(&self, r: f64, b: &DVector<f64>) -> f64 {
        self.syy - 2.0 * r * self.sly + r * r * self.sll - 2.0 * b.dot(&self.sxy)
            + 2.0 * r * b.dot(&self.sxl)
            + (b.transpose() * &self.sxx * b)[(0, 0)]
    }

    /// `sum_i e_i' Q y_{i,-1}`.
    pub fn resid_lag(&self, r: f64, b: &DVector<f64>) -> f64 {
        self.sly - r * self.sll - b.dot(&self.sxl)
    }

    /// `sum_i X_i' Q e_i`.
    pub fn resid_x(&self, r: f64, b: &DVector<f64>) -> DVector<f64> {
        &self.sxy - &self.sxl * r - &self.sxx * b
    }

    fn solve_xx(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if self.k() == 0 {
            return Ok(DVector::zeros(0));
        }
        let chol = self.sxx.clone().cholesky().ok_or(Error::SingularCovariates)?;
        Ok(chol.solve(v))
    }

    /// Profiled slope `(sum X'QX)^{-1} sum X'Q (y - r y_{-1})`.
    pub fn beta_hat(&self, r: f64) -> Result<DVector<f64>> {
        self.solve_xx(&(&self.sxy - &self.sxl * r))
    }

    /// Profiled variance `sum e'Qe / ((T-1) N)` at `(r, beta_hat(r))`.
    pub fn sigma2_hat(&self, r: f64) -> Result<f64> {
        let b = self.beta_hat(r)?;
        Ok(self.rss(r, &b) / ((self.t - 1) * self.n) as f64)
    }

    pub fn concentrated_stats(&self) -> Result<ConcentratedStats> {
        let xl = self.solve_xx(&self.sxl)?;
        let xy = self.solve_xx(&self.sxy)?;
        let proj_ll = self.sxl.dot(&xl);
        let sll_perp = self.sll - proj_ll;
        if !(sll_perp > 1e-12 * self.sll.max(f64::MIN_POSITIVE)) {
            return Err(Error::DegenerateLag);
        }
        let rho = (self.sly - self.sxl.dot(&xy)) / sll_perp;
        let beta = &xy - &xl * rho;
        let denom = ((self.t - 1) * self.n) as f64;
        // the moment form of the residual sum can dip below zero on exact fits
        let sigma2 = (self.rss(rho, &beta) / denom).max(0.0);
        let s_y2 = self.sll / denom;
        let r2_xy = proj_ll / self.sll;
        let c_ratio = sigma2 / (s_y2 * (1.0 - r2_xy));
        Ok(ConcentratedStats {
            n_periods: self.t,
            rho_lsdv: rho,
            beta_lsdv: beta.iter().copied().collect(),
            sigma2_lsdv: sigma2,
            s_y2,
            r2_xy,
            c_ratio,
        })
    }
}

/// Scalars that fully determine the concentrated modified log-likelihood.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentratedStats {
    pub n_periods: usize,
    pub rho_lsdv: f64,
    pub beta_lsdv: Vec<f64>,
    pub sigma2_lsdv: f64,
    pub s_y2: f64,
    pub r2_xy: f64,
    /// `sigma2_lsdv / (s_y2 (1 - r2_xy))`
    pub c_ratio: f64,
}

impl ConcentratedStats {
    pub fn from_panel(data: &PanelDataset) -> Result<Self> {
        QMoments::from_panel(data).concentrated_stats()
    }

    /// Profiled variance `sigma2(r, beta(r))` through the plug-in identity.
    pub fn sigma2_at(&self, r: f64) -> f64 {
        let d = r - self.rho_lsdv;
        self.sigma2_lsdv + d * d * self.s_y2 * (1.0 - self.r2_xy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> PanelDataset {
        // 3 units, T = 3, K = 1
        PanelDataset::new(
            3,
            3,
            1,
            vec![0.5, -1.0, 2.0],
            vec![1.0, 0.2, -0.3, 0.1, 0.7, 1.5, 2.2, 1.9, 2.8],
            vec![0.3, -0.2, 1.1, 0.0, 0.5, -0.7, 1.2, 0.4, 0.9],
        )
        .unwrap()
    }

    #[test]
    fn rejects_short_panels() {
        assert!(matches!(
            PanelDataset::new(1, 1, 0, vec![0.0], vec![1.0], vec![]),
            Err(Error::TooFewPeriods(1))
        ));
    }

    #[test]
    fn lsdv_solves_normal_equations() {
        let m = QMoments::from_panel(&toy());
        let st = m.concentrated_stats().unwrap();
        let b = DVector::from_vec(st.beta_lsdv.clone());
        assert!(m.resid_lag(st.rho_lsdv, &b).abs() < 1e-12);
        assert!(m.resid_x(st.rho_lsdv, &b).norm() < 1e-12);
    }

    #[test]
    fn plug_in_identity_matches_direct_profile() {
        let m = QMoments::from_panel(&toy());
        let st = m.concentrated_stats().unwrap();
        for r in [-0.7, 0.0, 0.4, 1.0, 1.3] {
            let direct = m.sigma2_hat(r).unwrap();
            assert!((direct - st.sigma2_at(r)).abs() < 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn csv_round_trip() {
        let p = toy();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = PanelDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn csv_reports_missing_period() {
        let text = "unit,period,y\na,0,1\na,1,2\na,2,3\nb,0,1\nb,2,2\n";
        let err = PanelDataset::read_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("\"b\"") && err.contains("period 1"), "{err}");
    }

    #[test]
    fn csv_reports_bad_number_with_line() {
        let text = "unit,period,y\na,0,1\na,1,oops\na,2,3\n";
        let err = PanelDataset::read_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn cross_section_demeaning_zeroes_period_means() {
        let d = toy().demean_cross_section(true);
        assert!(d.y0().iter().sum::<f64>().abs() < 1e-12);
        for s in 0..3 {
            let m: f64 = (0..3).map(|i| d.y_unit(i)[s]).sum();
            assert!(m.abs() < 1e-12);
        }
    }
}
