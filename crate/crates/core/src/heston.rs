//! Time-dependent Heston prices from the small vol-of-vol expansion of
//! Benhamou, Gobet and Miri.
//!
//! `kappa` is constant; `theta`, `xi` and `rho` are piecewise constant on
//! the intervals `(t_{i-1}, t_end_i]`. Times past the last knot reuse the
//! last interval.

use serde::{Deserialize, Serialize};

use crate::bsm::{bsm_price, implied_vol, norm_pdf, BsmInputs, Contract, OptionKind};
use crate::error::{ensure_finite, Error, Result};
use crate::quad;

const QUAD_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonInterval {
    pub t_end: f64,
    pub theta: f64,
    pub xi: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub kappa: f64,
    pub nu0: f64,
    #[serde(default)]
    pub x0: f64,
    pub intervals: Vec<HestonInterval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BgmCoefficients {
    #[serde(rename = "varT")]
    pub var_t: f64,
    pub a1: f64,
    pub a2: f64,
    pub b0: f64,
    pub b2: f64,
}

/// `(1 - e^{-k tau}) / k`, equal to `tau` at `k = 0`.
fn phi(kappa: f64, tau: f64) -> f64 {
    if kappa == 0.0 {
        tau
    } else {
        -(-kappa * tau).exp_m1() / kappa
    }
}

impl HestonParams {
    /// Constant parameters on a single interval.
    pub fn constant(kappa: f64, theta: f64, xi: f64, rho: f64, nu0: f64) -> Self {
        Self {
            kappa,
            nu0,
            x0: 0.0,
            intervals: vec![HestonInterval {
                t_end: 1.0,
                theta,
                xi,
                rho,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("kappa", self.kappa)?;
        ensure_finite("nu0", self.nu0)?;
        ensure_finite("x0", self.x0)?;
        if self.kappa < 0.0 {
            return Err(Error::InputDomain(format!("kappa = {} must be >= 0", self.kappa)));
        }
        if self.nu0 <= 0.0 {
            return Err(Error::InputDomain(format!("nu0 = {} must be > 0", self.nu0)));
        }
        if self.intervals.is_empty() {
            return Err(Error::InputDomain("at least one interval is required".into()));
        }
        let mut prev = 0.0;
        for (i, iv) in self.intervals.iter().enumerate() {
            if !(iv.t_end > prev) || !iv.t_end.is_finite() {
                return Err(Error::InputDomain(format!(
                    "interval {i}: t_end {} not increasing",
                    iv.t_end
                )));
            }
            prev = iv.t_end;
            if !(iv.theta > 0.0) || !iv.theta.is_finite() {
                return Err(Error::InputDomain(format!("interval {i}: theta must be > 0")));
            }
            if !(iv.xi >= 0.0) || !iv.xi.is_finite() {
                return Err(Error::InputDomain(format!("interval {i}: xi must be >= 0")));
            }
            if !(iv.rho.abs() < 1.0) {
                return Err(Error::InputDomain(format!("interval {i}: |rho| must be < 1")));
            }
        }
        Ok(())
    }

    /// Whether `inf xi > 0` and `inf 2 kappa theta / xi^2 >= 1`, the regime in
    /// which the expansion error bound is proven.
    pub fn expansion_assumptions_hold(&self) -> bool {
        self.intervals
            .iter()
            .all(|iv| iv.xi > 0.0 && 2.0 * self.kappa * iv.theta / (iv.xi * iv.xi) >= 1.0)
    }

    /// `[a, b)` pieces of constant parameters covering `[0, t]`.
    fn segments(&self, t: f64) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::new();
        let mut a = 0.0;
        for (i, iv) in self.intervals.iter().enumerate() {
            let last = i + 1 == self.intervals.len();
            let b = if last { t } else { iv.t_end.min(t) };
            if b > a {
                out.push((a, b, i));
            }
            a = b;
            if a >= t {
                break;
            }
        }
        out
    }

    /// Deterministic variance path `E[nu(t)]`.
    pub fn nu0_at(&self, t: f64) -> f64 {
        let mut v = self.nu0;
        for (a, b, i) in self.segments(t) {
            let th = self.intervals[i].theta;
            v = th + (v - th) * (-self.kappa * (b - a)).exp();
        }
        v
    }

    /// `var(T)`: the integral of the variance path.
    pub fn effective_variance(&self, t: f64) -> Result<f64> {
        self.validate()?;
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InputDomain(format!("T = {t} must be > 0")));
        }
        let mut v = self.nu0;
        let mut total = 0.0;
        for (a, b, i) in self.segments(t) {
            let th = self.intervals[i].theta;
            total += th * (b - a) + (v - th) * phi(self.kappa, b - a);
            v = th + (v - th) * (-self.kappa * (b - a)).exp();
        }
        Ok(total)
    }
}

/// Expansion coefficients at maturity `t`.
pub fn bgm_coefficients(params: &HestonParams, t: f64) -> Result<BgmCoefficients> {
    let var_t = params.effective_variance(t)?;
    let k = params.kappa;
    let segs = params.segments(t);

    // e^{ks} * int_s^T rho xi(u) int_u^T e^{-kv} dv du
    let inner_a2 = |s: f64| -> f64 {
        segs.iter()
            .filter(|&&(_, b, _)| b > s)
            .map(|&(a, b, i)| {
                let iv = &params.intervals[i];
                let c = iv.rho * iv.xi;
                if c == 0.0 {
                    return 0.0;
                }
                let lo = a.max(s);
                c * quad::fixed(&|u: f64| (-k * (u - s)).exp() * phi(k, t - u), lo, b)
            })
            .sum()
    };

    let mut a1 = 0.0;
    let mut a2 = 0.0;
    let mut b0 = 0.0;
    for &(a, b, i) in &segs {
        let iv = &params.intervals[i];
        let c = iv.rho * iv.xi;
        if c != 0.0 {
            a1 += c * quad::adaptive(&|s| params.nu0_at(s) * phi(k, t - s), a, b, QUAD_TOL)?;
            a2 += c * quad::adaptive(&|s| params.nu0_at(s) * inner_a2(s), a, b, QUAD_TOL)?;
        }
        if iv.xi != 0.0 {
            let x2 = iv.xi * iv.xi;
            b0 += x2 * quad::adaptive(&|s| params.nu0_at(s) * 0.5 * phi(k, t - s).powi(2), a, b, QUAD_TOL)?;
        }
    }
    Ok(BgmCoefficients {
        var_t,
        a1,
        a2,
        b0,
        b2: 0.5 * a1 * a1,
    })
}

fn hermite(n: usize, d: f64) -> f64 {
    match n {
        0 => 1.0,
        1 => d,
        2 => d * d - 1.0,
        3 => d * (d * d - 3.0),
        4 => d * d * (d * d - 6.0) + 3.0,
        _ => unreachable!(),
    }
}

/// Expansion correction (identical for puts and calls).
fn correction(c: &BgmCoefficients, forward: f64, strike: f64, df: f64) -> f64 {
    let y = c.var_t;
    let sy = y.sqrt();
    let d2 = ((forward / strike).ln() - 0.5 * y) / sy;
    let base = df * strike * norm_pdf(d2);
    // m-th log-spot derivative of G = df K phi(d2) / sqrt(y), with dP/dy = G/2.
    let g = |m: usize| {
        let sign = if m.is_multiple_of(2) { 1.0 } else { -1.0 };
        sign * hermite(m, d2) * base * y.powf(-0.5 * (m as f64 + 1.0))
    };
    let pxy = 0.5 * g(1);
    let pxxy = 0.5 * g(2);
    let pyy = 0.25 * (g(2) - g(1));
    let pxxyy = 0.25 * (g(4) - g(3));
    c.a1 * pxy + c.a2 * pxxy + c.b0 * pyy + c.b2 * pxxyy
}

fn setup(params: &HestonParams, strike: f64, t: f64, r: f64, q: f64) -> Result<(BgmCoefficients, f64, f64)> {
    ensure_finite("strike", strike)?;
    ensure_finite("rate", r)?;
    ensure_finite("dividend", q)?;
    if !(strike > 0.0) {
        return Err(Error::InputDomain(format!("strike {strike} must be > 0")));
    }
    let c = bgm_coefficients(params, t)?;
    let forward = (params.x0 + (r - q) * t).exp();
    Ok((c, forward, (-r * t).exp()))
}

/// Put price with spot `exp(x0)` and flat equivalent rates `r`, `q`.
pub fn bgm_put_price(params: &HestonParams, strike: f64, t: f64, r: f64, q: f64) -> Result<f64> {
    let (c, f, df) = setup(params, strike, t, r, q)?;
    let lead = bsm_price(&BsmInputs::new(f, strike, t, (c.var_t / t).sqrt(), df), OptionKind::Put)?;
    Ok(lead + correction(&c, f, strike, df))
}

pub fn bgm_call_price(params: &HestonParams, strike: f64, t: f64, r: f64, q: f64) -> Result<f64> {
    let (c, f, df) = setup(params, strike, t, r, q)?;
    let lead = bsm_price(
        &BsmInputs::new(f, strike, t, (c.var_t / t).sqrt(), df),
        OptionKind::Call,
    )?;
    Ok(lead + correction(&c, f, strike, df))
}

/// Implied vols of the expansion prices; each strike fails independently
/// when its price leaves the no-arbitrage band.
pub fn bgm_smile(params: &HestonParams, strikes: &[f64], t: f64, r: f64, q: f64) -> Result<Vec<Result<f64>>> {
    let c = bgm_coefficients(params, t)?;
    let f = (params.x0 + (r - q) * t).exp();
    let df = (-r * t).exp();
    let vol = (c.var_t / t).sqrt();
    Ok(strikes
        .iter()
        .map(|&k| {
            if !(k > 0.0) || !k.is_finite() {
                return Err(Error::InputDomain(format!("strike {k} must be > 0")));
            }
            let kind = if k < f { OptionKind::Put } else { OptionKind::Call };
            let p = bsm_price(&BsmInputs::new(f, k, t, vol, df), kind)? + correction(&c, f, k, df);
            implied_vol(p, &Contract::new(f, k, t, df), kind)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_piece() -> HestonParams {
        HestonParams {
            kappa: 2.0,
            nu0: 0.05,
            x0: 0.0,
            intervals: vec![
                HestonInterval {
                    t_end: 0.5,
                    theta: 0.04,
                    xi: 0.3,
                    rho: -0.5,
                },
                HestonInterval {
                    t_end: 1.0,
                    theta: 0.09,
                    xi: 0.2,
                    rho: -0.3,
                },
            ],
        }
    }

    #[test]
    fn stationary_variance() {
        let p = HestonParams::constant(1.5, 0.04, 0.3, -0.5, 0.04);
        assert!((p.effective_variance(2.0).unwrap() - 0.08).abs() < 1e-15);
        assert!((p.nu0_at(0.7) - 0.04).abs() < 1e-16);
        let p0 = HestonParams::constant(0.0, 0.09, 0.3, -0.5, 0.04);
        assert_eq!(p0.nu0_at(3.0), 0.04);
        assert!((p0.effective_variance(2.0).unwrap() - 0.08).abs() < 1e-15);
    }

    #[test]
    fn variance_matches_trapezoid_of_definition() {
        let p = two_piece();
        let n = 1_000_000;
        let h = 1.0 / n as f64;
        // nu0(t) = e^{-kt} (nu0 + int_0^t k e^{ks} theta(s) ds), accumulated
        // with the trapezoid rule.
        // theta is taken at each step's midpoint so the jump at 0.5 does not
        // spoil the second-order accuracy.
        let theta = |s: f64| if s < 0.5 { 0.04 } else { 0.09 };
        let mut inner = 0.0;
        let mut prev_nu = p.nu0;
        let mut total = 0.0;
        for i in 1..=n {
            let s = i as f64 * h;
            let th = theta(s - 0.5 * h);
            inner += 0.5 * h * 2.0 * th * ((2.0 * s).exp() + (2.0 * (s - h)).exp());
            let nu = (-2.0 * s).exp() * (p.nu0 + inner);
            total += 0.5 * h * (nu + prev_nu);
            prev_nu = nu;
        }
        assert!((p.effective_variance(1.0).unwrap() - total).abs() < 1e-8);
    }

    #[test]
    fn variance_additive_over_split() {
        let p = two_piece();
        let whole = p.effective_variance(0.9).unwrap();
        // remainder integrated from nu0(0.3) as a fresh start
        let mut tail = two_piece();
        tail.nu0 = p.nu0_at(0.3);
        for iv in &mut tail.intervals {
            iv.t_end -= 0.3;
        }
        let split = p.effective_variance(0.3).unwrap() + tail.effective_variance(0.6).unwrap();
        assert!((whole - split).abs() < 1e-12);
    }

    #[test]
    fn degenerate_coefficients() {
        let c = bgm_coefficients(&HestonParams::constant(2.0, 0.04, 0.0, -0.5, 0.04), 1.0).unwrap();
        assert_eq!((c.a1, c.a2, c.b0, c.b2), (0.0, 0.0, 0.0, 0.0));
        let c = bgm_coefficients(&HestonParams::constant(2.0, 0.04, 0.3, 0.0, 0.04), 1.0).unwrap();
        assert_eq!((c.a1, c.a2), (0.0, 0.0));
        assert!(c.b0 > 0.0);
        let c = bgm_coefficients(&two_piece(), 1.0).unwrap();
        assert_eq!(c.b2, c.a1 * c.a1 / 2.0);
    }

    #[test]
    fn coefficients_match_nested_trapezoid() {
        let (k, th, xi, rho, nu0, t) = (2.0f64, 0.04, 0.3, -0.5, 0.04, 1.0);
        let c = bgm_coefficients(&HestonParams::constant(k, th, xi, rho, nu0), t).unwrap();
        let n = 100_000;
        let h = t / n as f64;
        let grid: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
        // Innermost integral int_u^T e^{-kv} dv, accumulated from the right.
        let mut gi = vec![0.0; n + 1];
        for i in (0..n).rev() {
            gi[i] = gi[i + 1] + 0.5 * h * ((-k * grid[i]).exp() + (-k * grid[i + 1]).exp());
        }
        let mut hi = vec![0.0; n + 1];
        let mut mi = vec![0.0; n + 1];
        for i in (0..n).rev() {
            hi[i] = hi[i + 1] + 0.5 * h * rho * xi * (gi[i] + gi[i + 1]);
            mi[i] = mi[i + 1] + 0.5 * h * ((-k * grid[i]).exp() * gi[i] + (-k * grid[i + 1]).exp() * gi[i + 1]);
        }
        let trap = |f: &dyn Fn(usize) -> f64| (0..n).map(|i| 0.5 * h * (f(i) + f(i + 1))).sum::<f64>();
        let a1 = trap(&|i| (k * grid[i]).exp() * rho * xi * nu0 * gi[i]);
        let a2 = trap(&|i| (k * grid[i]).exp() * rho * xi * nu0 * hi[i]);
        let b0 = trap(&|i| (2.0 * k * grid[i]).exp() * xi * xi * nu0 * mi[i]);
        assert!((c.a1 - a1).abs() < 1e-6, "{} {}", c.a1, a1);
        assert!((c.a2 - a2).abs() < 1e-6, "{} {}", c.a2, a2);
        assert!((c.b0 - b0).abs() < 1e-6, "{} {}", c.b0, b0);
    }

    #[test]
    fn zero_volvol_is_black_scholes() {
        let p = HestonParams {
            x0: 100f64.ln(),
            ..HestonParams::constant(2.0, 0.09, 0.0, -0.5, 0.04)
        };
        let var = p.effective_variance(1.5).unwrap();
        let want = bsm_price(
            &BsmInputs::new(100.0, 90.0, 1.5, (var / 1.5).sqrt(), 1.0),
            OptionKind::Put,
        )
        .unwrap();
        assert!((bgm_put_price(&p, 90.0, 1.5, 0.0, 0.0).unwrap() - want).abs() < 1e-12);
        let smile = bgm_smile(&p, &[70.0, 100.0, 140.0], 1.5, 0.0, 0.0).unwrap();
        for v in smile {
            assert!((v.unwrap() - (var / 1.5).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn corrected_prices_keep_parity() {
        let p = HestonParams {
            x0: 100f64.ln(),
            ..two_piece()
        };
        let (r, q, t) = (0.03, 0.01, 1.3);
        for k in [60.0, 90.0, 100.0, 125.0] {
            let c = bgm_call_price(&p, k, t, r, q).unwrap();
            let pp = bgm_put_price(&p, k, t, r, q).unwrap();
            let f = 100.0 * ((r - q) * t).exp();
            assert!((c - pp - (-r * t).exp() * (f - k)).abs() < 1e-10);
        }
    }

    #[test]
    fn negative_correlation_gives_downward_skew() {
        let p = HestonParams {
            x0: 100f64.ln(),
            ..HestonParams::constant(2.0, 0.04, 0.3, -0.5, 0.04)
        };
        let v = bgm_smile(&p, &[80.0, 120.0], 1.0, 0.0, 0.0).unwrap();
        assert!(v[0].as_ref().unwrap() > v[1].as_ref().unwrap());
    }
}
