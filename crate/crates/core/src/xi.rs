//! The modified-likelihood penalty
//!
//! ```text
//! xi(r) = 1 / (T (T-1)) * sum_{t=1}^{T-1} (T - t) / t * r^t
//! ```
//!
//! Coefficients are held as exact rationals so that derivative polynomials
//! are exact; evaluation uses Horner's rule in `f64`.

use num_rational::Ratio;

pub const MAX_ORDER: usize = 5;

#[derive(Debug, Clone)]
pub struct XiPoly {
    t: usize,
    exact: Vec<Vec<Ratio<i128>>>,
    coeffs: Vec<Vec<f64>>,
}

impl XiPoly {
    pub fn new(t: usize) -> Self {
        assert!(t >= 2, "xi needs T >= 2");
        let ti = t as i128;
        let mut base = vec![Ratio::from_integer(0)];
        for s in 1..t as i128 {
            base.push(Ratio::new(ti - s, s * ti * (ti - 1)));
        }
        let mut exact = vec![base];
        for _ in 0..MAX_ORDER {
            let prev = exact.last().unwrap();
            let d: Vec<Ratio<i128>> = prev
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, c)| c * Ratio::from_integer(j as i128))
                .collect();
            exact.push(if d.is_empty() { vec![Ratio::from_integer(0)] } else { d });
        }
        let coeffs = exact
            .iter()
            .map(|p| p.iter().map(|c| *c.numer() as f64 / *c.denom() as f64).collect())
            .collect();
        Self { t, exact, coeffs }
    }

    pub fn n_periods(&self) -> usize {
        self.t
    }

    /// Exact coefficients of the `order`-th derivative, lowest degree first.
    pub fn exact_coefficients(&self, order: usize) -> &[Ratio<i128>] {
        &self.exact[order]
    }

    pub fn coefficients(&self, order: usize) -> &[f64] {
        &self.coeffs[order]
    }

    /// `order`-th derivative of `xi` at `r`, `order <= 5`.
    pub fn eval(&self, r: f64, order: usize) -> f64 {
        assert!(order <= MAX_ORDER, "xi derivatives are available up to order {MAX_ORDER}");
        horner(&self.coeffs[order], r)
    }
}

pub fn horner(c: &[f64], r: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, a| acc * r + a)
}

#[cfg(test)]
mod tests {
    use super::*;

    // xi'(r) = (T - 1 - T r + r^T) / (T (T-1) (1-r)^2)
    fn xi1_closed(t: usize, r: f64) -> f64 {
        let tf = t as f64;
        (tf - 1.0 - tf * r + r.powi(t as i32)) / (tf * (tf - 1.0) * (1.0 - r).powi(2))
    }

    #[test]
    fn first_derivative_matches_closed_form() {
        for t in 2..=12 {
            let xi = XiPoly::new(t);
            for r in [-0.9, -0.3, 0.0, 0.4, 0.8, 1.3] {
                let a = xi.eval(r, 1);
                let b = xi1_closed(t, r);
                assert!((a - b).abs() < 1e-11 * b.abs().max(1.0), "T={t} r={r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn exact_values_at_one() {
        for t in 2..=15usize {
            let xi = XiPoly::new(t);
            let tf = t as f64;
            let sum = |o: usize| xi.exact_coefficients(o).iter().sum::<Ratio<i128>>();
            assert_eq!(sum(1), Ratio::new(1, 2));
            assert_eq!(sum(2), Ratio::new(t as i128 - 2, 6));
            assert!((xi.eval(1.0, 3) - (tf - 2.0) * (tf - 3.0) / 12.0).abs() < 1e-12);
            assert!((xi.eval(1.0, 4) - (tf - 2.0) * (tf - 3.0) * (tf - 4.0) / 20.0).abs() < 1e-10);
            let d5 = (tf - 2.0) * (tf - 3.0) * (tf - 4.0) * (tf - 5.0) / 30.0;
            assert!((xi.eval(1.0, 5) - d5).abs() < 1e-9 * d5.abs().max(1.0));
        }
    }

    #[test]
    fn values_at_minus_one() {
        for t in 2..=15usize {
            let xi = XiPoly::new(t);
            let s: Ratio<i128> = xi
                .exact_coefficients(1)
                .iter()
                .enumerate()
                .map(|(j, c)| if j % 2 == 0 { *c } else { -*c })
                .sum();
            let expect = if t % 2 == 0 {
                Ratio::new(1, 2 * (t as i128 - 1))
            } else {
                Ratio::new(1, 2 * t as i128)
            };
            assert_eq!(s, expect, "T={t}");
        }
    }

    #[test]
    fn small_t_special_cases() {
        let x2 = XiPoly::new(2);
        assert_eq!(x2.eval(0.3, 1), 0.5);
        assert_eq!(x2.eval(-2.0, 2), 0.0);
        let x3 = XiPoly::new(3);
        assert!((x3.eval(0.7, 2) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn odd_t_third_derivative_at_minus_one() {
        for t in (5..=15usize).step_by(2) {
            let tf = t as f64;
            let v = XiPoly::new(t).eval(-1.0, 3);
            assert!((v + (tf - 3.0) / (4.0 * tf)).abs() < 1e-12, "T={t}");
        }
    }
}
