//! Real roots of low-degree polynomials via companion-matrix eigenvalues,
//! refined by Newton steps on a caller-supplied evaluation.

use nalgebra::DMatrix;

/// Product of two coefficient vectors, lowest degree first.
pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// All eigenvalues of the companion matrix as `(re, im)` pairs.
pub fn companion_roots(coeffs: &[f64]) -> Vec<(f64, f64)> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut deg = coeffs.len().saturating_sub(1);
    while deg > 0 && coeffs[deg].abs() <= 1e-14 * scale {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    let lead = coeffs[deg];
    let mut c = DMatrix::zeros(deg, deg);
    for i in 1..deg {
        c[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        c[(i, deg - 1)] = -coeffs[i] / lead;
    }
    c.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect()
}

/// Real roots of the polynomial with the given coefficients, ascending.
///
/// `f` returns `(p(x), p'(x))` and is used to polish candidates; it can be a
/// more accurate factored form of the same polynomial.
pub fn real_roots<F>(coeffs: &[f64], f: F) -> Vec<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    let mut roots: Vec<f64> = Vec::new();
    for (re, im) in companion_roots(coeffs) {
        if im.abs() > 1e-6 * (1.0 + re.abs()) {
            continue;
        }
        let x = newton_polish(re, &f);
        let mag: f64 = coeffs.iter().enumerate().map(|(i, c)| c.abs() * x.abs().powi(i as i32)).sum();
        if f(x).0.abs() > 1e-9 * mag.max(f64::MIN_POSITIVE) {
            continue;
        }
        if roots.iter().all(|r| (r - x).abs() > 1e-9 * (1.0 + x.abs())) {
            roots.push(x);
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots
}

fn newton_polish<F: Fn(f64) -> (f64, f64)>(x0: f64, f: &F) -> f64 {
    let mut x = x0;
    let mut best = (f(x).0.abs(), x);
    for _ in 0..50 {
        let (v, d) = f(x);
        if v == 0.0 || d == 0.0 {
            break;
        }
        let step = v / d;
        if !step.is_finite() || step.abs() > 0.1 * (1.0 + x.abs()) {
            break;
        }
        x -= step;
        let a = f(x).0.abs();
        if a < best.0 {
            best = (a, x);
        }
        if step.abs() <= 1e-15 * (1.0 + x.abs()) {
            break;
        }
    }
    best.1
}
