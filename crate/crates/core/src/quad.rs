//! Gauss–Legendre quadrature.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const ORDER: usize = 16;

/// Nodes and weights on [-1, 1] (Newton iteration on P_n).
pub(crate) fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(ORDER))
}

/// Fixed 16-point rule on [a, b].
pub(crate) fn fixed<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    h * rule().iter().map(|&(x, w)| w * f(c + h * x)).sum::<f64>()
}

/// Adaptive bisection on the 16-point rule until halves agree to `tol`.
pub(crate) fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn go<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> Result<f64> {
        let m = 0.5 * (a + b);
        let (l, r) = (fixed(f, a, m), fixed(f, m, b));
        let diff = (l + r - whole).abs();
        if diff <= tol || (b - a) <= 1e-12 * (1.0 + a.abs().max(b.abs())) {
            return Ok(l + r);
        }
        if depth >= 40 {
            return Err(Error::NumericalAccuracy(format!(
                "quadrature on [{a}, {b}] stalled at error {diff:e}"
            )));
        }
        Ok(go(f, a, m, l, 0.5 * tol, depth + 1)? + go(f, m, b, r, 0.5 * tol, depth + 1)?)
    }
    if b <= a {
        return Ok(0.0);
    }
    let whole = fixed(f, a, b);
    let v = go(f, a, b, whole, tol, 0)?;
    if !v.is_finite() {
        return Err(Error::NumericalAccuracy("non-finite integrand".into()));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two_and_integrate_polynomials() {
        let r = gauss_legendre(16);
        assert!((r.iter().map(|p| p.1).sum::<f64>() - 2.0).abs() < 1e-14);
        // x^30 is integrated exactly by a 16-point rule.
        let v: f64 = r.iter().map(|&(x, w)| w * x.powi(30)).sum();
        assert!((v - 2.0 / 31.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_sharp_integrand() {
        let v = adaptive(&|x: f64| (-200.0 * x * x).exp(), -1.0, 1.0, 1e-13).unwrap();
        let exact = (std::f64::consts::PI / 200.0).sqrt() * libm::erf(200f64.sqrt());
        assert!((v - exact).abs() < 1e-12);
    }
}
