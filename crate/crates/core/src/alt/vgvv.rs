//! Carr–Wu square-root (SRV) and lognormal (LNV) implied variance surfaces.
//!
//! Both are defined implicitly by a quadratic: in `I` for SRV (with the
//! standardized moneyness depending on `I` itself, hence a fixed point), and
//! in `I^2` for LNV.

use serde::{Deserialize, Serialize};

use crate::calibration::{hybrid_optimize, EngineConfig, FitResult, WeightScheme};
use crate::error::{Error, Result};
use crate::market_data::QuoteSurface;

const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_MAX: usize = 100;
const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VgvvCoeffs {
    pub kappa: f64,
    pub theta: f64,
    pub w: f64,
    pub eta: f64,
    pub rho: f64,
    pub v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VgvvModel {
    Srv,
    Lnv,
}

impl VgvvCoeffs {
    pub fn validate(&self) -> Result<()> {
        let v = [self.kappa, self.theta, self.w, self.eta, self.rho, self.v];
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InputDomain(format!("non-finite VGVV coefficients {self:?}")));
        }
        if self.v <= 0.0 || self.theta <= 0.0 || self.rho.abs() >= 1.0 || self.w < 0.0 {
            return Err(Error::InputDomain(format!("invalid VGVV coefficients {self:?}")));
        }
        Ok(())
    }

    fn from_slice(p: &[f64]) -> Self {
        Self {
            kappa: p[0],
            theta: p[1],
            w: p[2],
            eta: p[3],
            rho: p[4],
            v: p[5],
        }
    }
}

/// SRV quadratic coefficients `(A, B, C)` of `A I^2 + B I - C = 0` at `z`.
fn srv_quadratic(c: &VgvvCoeffs, z: f64, tau: f64) -> (f64, f64, f64) {
    let e1 = (-c.eta * tau).exp();
    let w2e = c.w * c.w * e1 * e1;
    let a = 1.0 + c.kappa;
    let b = w2e * tau.powf(1.5) * z;
    let rhs = (c.kappa * c.theta - w2e) * tau
        + c.v
        + 2.0 * c.rho * c.v.sqrt() * c.w * e1 * tau.sqrt() * z
        + w2e * tau * z * z;
    (a, b, rhs)
}

/// Larger root of `a y^2 + b y - c = 0`, `a >= 0`.
fn larger_root(a: f64, b: f64, c: f64) -> Result<f64> {
    if a == 0.0 {
        if b == 0.0 {
            return Err(Error::NoRealRoot("degenerate equation".into()));
        }
        return Ok(c / b);
    }
    let disc = b * b + 4.0 * a * c;
    if !(disc >= 0.0) {
        return Err(Error::NoRealRoot(format!("discriminant {disc:e} < 0")));
    }
    let sq = disc.sqrt();
    Ok(if b > 0.0 {
        2.0 * c / (b + sq)
    } else {
        (sq - b) / (2.0 * a)
    })
}

/// Residual of the SRV quadratic at `i`, with `z` recomputed from `i`.
pub fn srv_residual(c: &VgvvCoeffs, strike: f64, spot: f64, tau: f64, i: f64) -> f64 {
    let z = ((strike / spot).ln() + 0.5 * i * i * tau) / (i * tau.sqrt());
    let (a, b, rhs) = srv_quadratic(c, z, tau);
    a * i * i + b * i - rhs
}

/// SRV implied vol by fixed-point iteration on `(I, z)`.
///
/// When the iteration oscillates (short maturities far from the money), the
/// same equation is solved as the quartic obtained by substituting `z(I)`,
/// taking its largest positive root.
pub fn srv_implied_vol(c: &VgvvCoeffs, strike: f64, spot: f64, tau: f64) -> Result<f64> {
    c.validate()?;
    if !(tau > 0.0) || !(strike > 0.0) || !(spot > 0.0) {
        return Err(Error::InputDomain(format!("tau={tau}, K={strike}, S={spot}")));
    }
    let k = (strike / spot).ln();
    let i = match srv_fixed_point(c, k, tau) {
        Some(i) => i,
        None => srv_quartic_root(c, k, tau).ok_or_else(|| Error::NoConvergence {
            iterations: FIXED_POINT_MAX,
            context: format!("SRV fixed point at K={strike}, tau={tau}"),
        })?,
    };
    let r = srv_residual(c, strike, spot, tau, i);
    if r.abs() > RESIDUAL_TOL {
        return Err(Error::NumericalBreakdown(format!("SRV residual {r:e}")));
    }
    Ok(i)
}

fn srv_fixed_point(c: &VgvvCoeffs, k: f64, tau: f64) -> Option<f64> {
    let mut i = ((c.v + c.kappa * c.theta * tau) / (1.0 + c.kappa)).sqrt();
    for _ in 0..FIXED_POINT_MAX {
        let z = (k + 0.5 * i * i * tau) / (i * tau.sqrt());
        let (a, b, rhs) = srv_quadratic(c, z, tau);
        let next = match larger_root(a, b, rhs) {
            Ok(v) if v > 0.0 => v,
            _ => return None,
        };
        let done = (next - i).abs() < FIXED_POINT_TOL;
        i = next;
        if done {
            return Some(i);
        }
    }
    None
}

/// Coefficients (degree 4 down to 0) of `I^2` times the SRV equation.
fn srv_quartic(c: &VgvvCoeffs, k: f64, tau: f64) -> [f64; 5] {
    let e1 = (-c.eta * tau).exp();
    let w2e = c.w * c.w * e1 * e1;
    let r = c.rho * c.v.sqrt() * c.w * e1;
    [
        1.0 + c.kappa + 0.25 * w2e * tau * tau,
        -r * tau,
        -((c.kappa * c.theta - w2e) * tau + c.v),
        -2.0 * r * k,
        -w2e * k * k,
    ]
}

fn srv_quartic_root(c: &VgvvCoeffs, k: f64, tau: f64) -> Option<f64> {
    let p = srv_quartic(c, k, tau);
    let eval = |x: f64| p.iter().fold(0.0, |acc, &a| acc * x + a);
    let bound = 1.0 + p[1..].iter().map(|a| (a / p[0]).abs()).fold(0.0, f64::max);
    // Scan down from the root bound for the first sign change.
    const STEPS: usize = 4000;
    let mut hi = bound;
    let mut f_hi = eval(hi);
    for j in (0..STEPS).rev() {
        let lo = bound * j as f64 / STEPS as f64;
        let f_lo = eval(lo);
        if lo > 0.0 && f_lo == 0.0 {
            return Some(lo);
        }
        if f_lo.signum() != f_hi.signum() {
            if lo <= 0.0 {
                return None;
            }
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                if eval(m).signum() == f_lo.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            return Some(0.5 * (a + b));
        }
        hi = lo;
        f_hi = f_lo;
    }
    None
}

/// LNV quadratic coefficients in `y = I^2`: `A y^2 + B y - C = 0`.
fn lnv_quadratic(c: &VgvvCoeffs, k: f64, tau: f64) -> (f64, f64, f64) {
    let e1 = (-c.eta * tau).exp();
    let w2e = c.w * c.w * e1 * e1;
    let sv = c.v.sqrt();
    let a = 0.25 * w2e * tau * tau;
    let b = 1.0 + c.kappa * tau + w2e * tau - c.rho * sv * c.w * e1;
    let rhs = c.v + c.kappa * c.theta * tau + 2.0 * c.rho * sv * c.w * e1 * k + w2e * k * k;
    (a, b, rhs)
}

pub fn lnv_residual(c: &VgvvCoeffs, k: f64, tau: f64, variance: f64) -> f64 {
    let (a, b, rhs) = lnv_quadratic(c, k, tau);
    a * variance * variance + b * variance - rhs
}

/// LNV implied variance at log relative strike `k`.
pub fn lnv_implied_variance(c: &VgvvCoeffs, k: f64, tau: f64) -> Result<f64> {
    c.validate()?;
    if !(tau > 0.0) || !k.is_finite() {
        return Err(Error::InputDomain(format!("tau={tau}, k={k}")));
    }
    let (a, b, rhs) = lnv_quadratic(c, k, tau);
    let y = larger_root(a, b, rhs)?;
    if !(y > 0.0) {
        return Err(Error::NoRealRoot(format!("no positive root at k={k}, tau={tau}")));
    }
    let r = lnv_residual(c, k, tau, y);
    if r.abs() > RESIDUAL_TOL {
        return Err(Error::NumericalBreakdown(format!("LNV residual {r:e}")));
    }
    Ok(y)
}

/// A fitted VGVV surface in forward log-moneyness (`S` taken as the forward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VgvvSurface {
    pub model: VgvvModel,
    pub coeffs: VgvvCoeffs,
}

impl VgvvSurface {
    pub fn vol(&self, t: f64, x: f64) -> Result<f64> {
        match self.model {
            VgvvModel::Srv => srv_implied_vol(&self.coeffs, x.exp(), 1.0, t),
            VgvvModel::Lnv => lnv_implied_variance(&self.coeffs, x, t).map(f64::sqrt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VgvvFitConfig {
    pub model: VgvvModel,
    #[serde(default)]
    pub weights: WeightScheme,
    #[serde(default)]
    pub engine: EngineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VgvvFit {
    pub surface: VgvvSurface,
    pub fit: FitResult,
    /// Per-expiry vol RMSE.
    pub rmse_vol: Vec<f64>,
    /// Quotes at which the fitted model has no admissible root.
    pub failed_quotes: usize,
}

pub const VGVV_BOUNDS: [(f64, f64); 6] = [
    (0.0, 20.0),
    (1e-4, 1.0),
    (0.0, 5.0),
    (0.0, 10.0),
    (-0.999, 0.999),
    (1e-4, 1.0),
];

/// Static snapshot fit of the six coefficients to mid vols.
pub fn fit_vgvv(surface: &QuoteSurface, config: &VgvvFitConfig) -> Result<VgvvFit> {
    let n_exp = surface.expiries.len();
    if surface.len() < 6 || n_exp < 2 {
        return Err(Error::InsufficientStrikes {
            needed: 6,
            got: surface.len(),
        });
    }
    let weights = super::unit_mean_weights(surface, &config.weights)?;
    let points: Vec<(f64, f64, f64, f64)> = surface
        .expiries
        .iter()
        .zip(&weights)
        .flat_map(|(s, w)| {
            s.quotes
                .iter()
                .zip(w)
                .map(move |(q, &wi)| (s.expiry, (q.strike / s.forward).ln(), q.mid(), wi))
        })
        .collect();
    let model = config.model;
    let objective = |p: &[f64]| -> f64 {
        let surf = VgvvSurface {
            model,
            coeffs: VgvvCoeffs::from_slice(p),
        };
        let mut acc = 0.0;
        for &(t, x, vol, w) in &points {
            match surf.vol(t, x) {
                Ok(m) => acc += w * (m - vol).powi(2),
                Err(_) => return f64::INFINITY,
            }
        }
        acc
    };
    let mut de = config.engine.de(VGVV_BOUNDS.to_vec());
    de.target = Some(1e-24);
    let fit = hybrid_optimize(objective, &de, &config.engine.nm())?;
    let surf = VgvvSurface {
        model,
        coeffs: VgvvCoeffs::from_slice(&fit.params),
    };
    let mut failed = 0;
    let mut rmse_vol = Vec::with_capacity(n_exp);
    for s in &surface.expiries {
        let mut se = 0.0;
        let mut n = 0usize;
        for q in &s.quotes {
            match surf.vol(s.expiry, (q.strike / s.forward).ln()) {
                Ok(m) => {
                    se += (m - q.mid()).powi(2);
                    n += 1;
                }
                Err(_) => failed += 1,
            }
        }
        rmse_vol.push(if n > 0 { (se / n as f64).sqrt() } else { f64::NAN });
    }
    Ok(VgvvFit {
        surface: surf,
        fit,
        rmse_vol,
        failed_quotes: failed,
    })
}
