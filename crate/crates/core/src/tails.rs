//! Wing extrapolation outside the quoted strikes and Lee's moment bound.
//!
//! Left wing: `P(K) = K^mu exp(a + b K + c K^2)`.
//! Right wing: `C(K) = K^-nu exp(a + b / K + c / K^2)`.
//! Coefficients are fitted to the price and its first two strike
//! derivatives at the anchor, which is linear in `(a, b, c)` on log-price.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svi::SviSurface;

pub const DEFAULT_MU: f64 = 2.5;
pub const DEFAULT_NU: f64 = 2.5;

/// Price, first and second strike derivative at an anchor strike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub strike: f64,
    pub value: f64,
    pub slope: f64,
    pub curvature: f64,
}

impl Anchor {
    /// Central differences with relative step `1e-5`.
    pub fn from_fn<F: Fn(f64) -> f64>(price: F, strike: f64) -> Self {
        let h = 1e-5 * strike;
        let (lo, mid, hi) = (price(strike - h), price(strike), price(strike + h));
        Self {
            strike,
            value: mid,
            slope: (hi - lo) / (2.0 * h),
            curvature: (hi - 2.0 * mid + lo) / (h * h),
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.strike > 0.0) || !self.strike.is_finite() {
            return Err(Error::InvalidAnchor(format!(
                "anchor strike {} must be > 0",
                self.strike
            )));
        }
        if !(self.value > 0.0) || !self.value.is_finite() {
            return Err(Error::InvalidAnchor(format!("anchor price {} must be > 0", self.value)));
        }
        if !self.slope.is_finite() || !(self.curvature >= 0.0) || !self.curvature.is_finite() {
            return Err(Error::InvalidAnchor(format!(
                "anchor derivatives ({}, {}) must be finite with curvature >= 0",
                self.slope, self.curvature
            )));
        }
        Ok(())
    }

    /// `(ln P, (ln P)', (ln P)'')`.
    fn log_derivatives(&self) -> (f64, f64, f64) {
        let g1 = self.slope / self.value;
        (self.value.ln(), g1, self.curvature / self.value - g1 * g1)
    }
}

/// Strikes bounding the quoted region with the put anchor at `K_-` and the
/// call anchor at `K_+`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreRegion {
    pub put: Anchor,
    pub call: Anchor,
}

impl CoreRegion {
    pub fn new(put: Anchor, call: Anchor) -> Result<Self> {
        put.check()?;
        call.check()?;
        if !(put.strike < call.strike) {
            return Err(Error::InvalidAnchor("K- must be below K+".into()));
        }
        Ok(Self { put, call })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeftTail {
    pub mu: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Anchor strike `K_-`; the tail covers `(0, K_-]`.
    pub k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RightTail {
    pub nu: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Anchor strike `K_+`; the tail covers `[K_+, inf)`.
    pub k: f64,
}

fn finite3(a: f64, b: f64, c: f64) -> Result<()> {
    if a.is_finite() && b.is_finite() && c.is_finite() {
        Ok(())
    } else {
        Err(Error::DegenerateAnchor("matching system has no finite solution".into()))
    }
}

pub fn fit_left_tail(anchor: &Anchor, mu: f64) -> Result<LeftTail> {
    anchor.check()?;
    if !(mu > 1.0) || !mu.is_finite() {
        return Err(Error::InputDomain(format!("mu = {mu} must be > 1")));
    }
    let k = anchor.strike;
    let (g0, g1, g2) = anchor.log_derivatives();
    let c = 0.5 * (g2 + mu / (k * k));
    let b = g1 - mu / k - 2.0 * c * k;
    let a = g0 - mu * k.ln() - b * k - c * k * k;
    finite3(a, b, c)?;
    Ok(LeftTail { mu, a, b, c, k })
}

pub fn fit_right_tail(anchor: &Anchor, nu: f64) -> Result<RightTail> {
    anchor.check()?;
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::InputDomain(format!("nu = {nu} must be > 0")));
    }
    let k = anchor.strike;
    let (g0, g1, g2) = anchor.log_derivatives();
    let c = 0.5 * k.powi(4) * (g2 + nu / (k * k) + 2.0 * g1 / k);
    let b = -k * k * g1 - nu * k - 2.0 * c / k;
    let a = g0 + nu * k.ln() - b / k - c / (k * k);
    finite3(a, b, c)?;
    Ok(RightTail { nu, a, b, c, k })
}

impl LeftTail {
    fn log_price(&self, k: f64) -> f64 {
        self.mu * k.ln() + self.a + self.b * k + self.c * k * k
    }

    pub fn price(&self, k: f64) -> Result<f64> {
        if !(k > 0.0 && k <= self.k * (1.0 + 1e-12)) {
            return Err(Error::OutOfRegion { strike: k });
        }
        Ok(self.log_price(k).exp())
    }

    /// `(P, P', P'')` in closed form.
    pub fn derivatives(&self, k: f64) -> Result<(f64, f64, f64)> {
        let p = self.price(k)?;
        let g1 = self.mu / k + self.b + 2.0 * self.c * k;
        let g2 = -self.mu / (k * k) + 2.0 * self.c;
        Ok((p, p * g1, p * (g2 + g1 * g1)))
    }
}

impl RightTail {
    fn log_price(&self, k: f64) -> f64 {
        -self.nu * k.ln() + self.a + self.b / k + self.c / (k * k)
    }

    pub fn price(&self, k: f64) -> Result<f64> {
        if !(k >= self.k * (1.0 - 1e-12)) || !k.is_finite() {
            return Err(Error::OutOfRegion { strike: k });
        }
        Ok(self.log_price(k).exp())
    }

    pub fn derivatives(&self, k: f64) -> Result<(f64, f64, f64)> {
        let p = self.price(k)?;
        let g1 = -self.nu / k - self.b / (k * k) - 2.0 * self.c / k.powi(3);
        let g2 = self.nu / (k * k) + 2.0 * self.b / k.powi(3) + 6.0 * self.c / k.powi(4);
        Ok((p, p * g1, p * (g2 + g1 * g1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tail<'a> {
    Left(&'a LeftTail),
    Right(&'a RightTail),
}

pub fn tail_price(tail: Tail<'_>, k: f64) -> Result<f64> {
    match tail {
        Tail::Left(t) => t.price(k),
        Tail::Right(t) => t.price(k),
    }
}

/// Strikes on a 200-point log grid where the second difference of the
/// extrapolated price drops below `-1e-10`.
pub fn convexity_violations(tail: Tail<'_>, span: f64) -> Vec<f64> {
    let (lo, hi) = match tail {
        Tail::Left(t) => (t.k / span, t.k),
        Tail::Right(t) => (t.k, t.k * span),
    };
    let n = 200;
    let ks: Vec<f64> = (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect();
    let p: Vec<f64> = ks.iter().map(|&k| tail_price(tail, k).unwrap_or(f64::NAN)).collect();
    let mut out = Vec::new();
    for j in 1..n - 1 {
        let (hl, hr) = (ks[j] - ks[j - 1], ks[j + 1] - ks[j]);
        let d = 2.0 * (p[j - 1] / (hl * (hl + hr)) - p[j] / (hl * hr) + p[j + 1] / (hr * (hl + hr)));
        if !(d >= -1e-10) {
            out.push(ks[j]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Moment {
    Finite,
    Infinite,
}

/// Finiteness of `E[S^m]` implied by the right wing (`m < nu - 1`) or of
/// `E[S^-m]` implied by the left wing (`m < mu - 1`).
pub fn moment_diagnostic(tail: Tail<'_>, m: f64) -> Moment {
    let critical = match tail {
        Tail::Left(t) => t.mu - 1.0,
        Tail::Right(t) => t.nu - 1.0,
    };
    if m < critical {
        Moment::Finite
    } else {
        Moment::Infinite
    }
}

/// `2 - 4 (sqrt(u^2 + u) - u)`.
pub fn lee_psi(u: f64) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(Error::InputDomain(format!("moment order {u} must be >= 0")));
    }
    if u.is_infinite() {
        return Ok(0.0);
    }
    // sqrt(u^2 + u) - u = u / (sqrt(u^2 + u) + u), which does not cancel.
    let gap = if u == 0.0 { 0.0 } else { u / ((u * u + u).sqrt() + u) };
    Ok(2.0 - 4.0 * gap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeCheck {
    pub t: f64,
    pub left_slope: f64,
    pub right_slope: f64,
    pub flagged: bool,
}

const SLOPE_BOUND: f64 = 2.0 + 1e-6;

/// `|V(x) / x|` at `x = -probe, +probe` for each `(t, V)` total-variance
/// curve; flagged when either side exceeds 2.
pub fn slope_bound_check(curves: &[(f64, &dyn Fn(f64) -> f64)], probe: f64) -> Vec<SlopeCheck> {
    curves
        .iter()
        .map(|&(t, v)| {
            let left_slope = (v(-probe) / probe).abs();
            let right_slope = (v(probe) / probe).abs();
            SlopeCheck {
                t,
                left_slope,
                right_slope,
                flagged: !(left_slope <= SLOPE_BOUND && right_slope <= SLOPE_BOUND),
            }
        })
        .collect()
}

/// Asymptotic SVI total-variance slopes `T b (1 -/+ rho)`; flagged when
/// `T b (1 + |rho|) > 2`.
pub fn svi_slope_check(surface: &SviSurface) -> Vec<SlopeCheck> {
    surface
        .slices
        .iter()
        .map(|s| {
            let p = &s.params;
            let left_slope = s.t * p.b * (1.0 - p.rho);
            let right_slope = s.t * p.b * (1.0 + p.rho);
            SlopeCheck {
                t: s.t,
                left_slope,
                right_slope,
                flagged: !(s.t * p.b * (1.0 + p.rho.abs()) <= SLOPE_BOUND),
            }
        })
        .collect()
}
