//! Weighted sum of shifted-lognormal call prices.

use serde::{Deserialize, Serialize};

use crate::bsm::{bsm_price, implied_vol, BsmInputs, Contract, OptionKind};
use crate::calibration::{hybrid_optimize, EngineConfig, FitResult, WeightScheme};
use crate::error::{Error, Result};
use crate::market_data::QuoteSurface;

/// Smallest time at which the time functions are evaluated; `f(0, beta) = 0`.
pub const T_MIN: f64 = 1e-6;

/// `1 - 2 / (1 + (1 + t/beta)^2)`.
pub fn time_shape(t: f64, beta: f64) -> f64 {
    let u = 1.0 + t / beta;
    1.0 - 2.0 / (1.0 + u * u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub a0: f64,
    pub mu0: f64,
    pub beta: f64,
    pub gamma: f64,
    pub c: f64,
    pub d: f64,
    pub b: f64,
}

impl MixtureComponent {
    pub fn mu(&self, t: f64) -> f64 {
        self.mu0 * time_shape(t.max(T_MIN), self.beta)
    }

    pub fn sigma(&self, t: f64) -> f64 {
        self.gamma * (-self.c * t).exp() + self.d * time_shape(t.max(T_MIN), self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub components: Vec<MixtureComponent>,
    /// Discrete dividends `(time, compounded amount)`; `D(0, t)` sums those
    /// paid up to `t`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dividends: Vec<(f64, f64)>,
}

impl MixtureParams {
    /// Every failed no-free-lunch or domain condition, by name.
    pub fn constraint_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.components.is_empty() {
            out.push("at least one component".to_string());
            return out;
        }
        for (i, c) in self.components.iter().enumerate() {
            if !(c.a0 >= 0.0) {
                out.push(format!("a_{i} >= 0"));
            }
            if !(1.0 + c.mu0 > 0.0) {
                out.push(format!("1 + mu_{i} > 0"));
            }
            if !(c.beta > 0.0) || !(c.b > 0.0) {
                out.push(format!("beta_{i}, b_{i} > 0"));
            }
            if !(c.gamma > 0.0) || !(c.d >= 0.0) || !(c.c >= 0.0) || !c.c.is_finite() {
                out.push(format!("sigma_{i}(t) > 0"));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.a0).sum();
        if !((total - 1.0).abs() <= 1e-12) {
            out.push(format!("sum a0 = 1 (got {total})"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.constraint_violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::ConstraintViolation(v))
        }
    }

    /// Time-`t` weights; they sum to one by construction.
    pub fn weights(&self, t: f64) -> Vec<f64> {
        let t = t.max(T_MIN);
        let raw: Vec<f64> = self.components.iter().map(|c| c.a0 / time_shape(t, c.beta)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|r| r / total).collect()
    }

    /// `sum a_i(t) mu_i(t)`, reported but not enforced.
    pub fn martingale_gap(&self, t: f64) -> f64 {
        self.weights(t)
            .iter()
            .zip(&self.components)
            .map(|(a, c)| a * c.mu(t))
            .sum()
    }

    pub fn dividend_offset(&self, t: f64) -> f64 {
        self.dividends.iter().filter(|d| d.0 <= t).map(|d| d.1).sum()
    }

    /// Call price for spot `s0` and zero-coupon bond `discount` to `t`.
    pub fn price(&self, s0: f64, strike: f64, t: f64, discount: f64) -> Result<f64> {
        self.validate()?;
        if !(t > 0.0) || !(s0 > 0.0) || !(discount > 0.0) || !(strike >= 0.0) {
            return Err(Error::InputDomain(format!("s0={s0}, K={strike}, T={t}, P={discount}")));
        }
        let k_hat = strike + self.dividend_offset(t);
        let forward = s0 / discount;
        let mut acc = 0.0;
        for (a, c) in self.weights(t).iter().zip(&self.components) {
            let inputs = BsmInputs::new(forward, k_hat * (1.0 + c.mu(t)), t, c.sigma(t), discount);
            acc += a * bsm_price(&inputs, OptionKind::Call)?;
        }
        Ok(acc)
    }

    pub fn implied_vol(&self, s0: f64, strike: f64, t: f64, discount: f64) -> Result<f64> {
        let p = self.price(s0, strike, t, discount)?;
        implied_vol(p, &Contract::new(s0 / discount, strike, t, discount), OptionKind::Call)
    }

    fn from_raw(p: &[f64]) -> Option<Self> {
        let total: f64 = p.chunks(7).map(|c| c[0]).sum();
        if !(total > 0.0) {
            return None;
        }
        Some(Self {
            components: p
                .chunks(7)
                .map(|c| MixtureComponent {
                    a0: c[0] / total,
                    mu0: c[1],
                    beta: c[2],
                    gamma: c[3],
                    c: c[4],
                    d: c[5],
                    b: c[6],
                })
                .collect(),
            dividends: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFitConfig {
    pub components: usize,
    #[serde(default)]
    pub weights: WeightScheme,
    #[serde(default)]
    pub engine: EngineConfig,
}

impl Default for MixtureFitConfig {
    fn default() -> Self {
        Self {
            components: 2,
            weights: WeightScheme::default(),
            engine: EngineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub params: MixtureParams,
    pub fit: FitResult,
    /// Per-expiry vol RMSE (quotes whose implied vol cannot be read back
    /// are skipped).
    pub rmse_vol: Vec<f64>,
    /// `sum a_i mu_i` at each expiry.
    pub martingale_gap: Vec<f64>,
}

/// Per-component search box: a0 (before normalization), mu0, beta, gamma, c, d, b.
const COMPONENT_BOUNDS: [(f64, f64); 7] = [
    (0.0, 1.0),
    (-0.5, 0.5),
    (0.01, 10.0),
    (0.01, 1.5),
    (0.0, 5.0),
    (0.0, 1.0),
    (0.01, 10.0),
];

/// Fits the mixture to discounted call prices in forward units.
pub fn fit_mixture(surface: &QuoteSurface, config: &MixtureFitConfig) -> Result<MixtureFit> {
    if config.components == 0 {
        return Err(Error::InputDomain("mixture needs at least one component".into()));
    }
    if surface.is_empty() {
        return Err(Error::EmptyInput);
    }
    let weights = super::unit_mean_weights(surface, &config.weights)?;
    // (s0, K, T, P, normalized market price, weight)
    let mut points = Vec::with_capacity(surface.len());
    for (s, w) in surface.expiries.iter().zip(&weights) {
        let scale = s.forward * s.discount;
        for (q, &wi) in s.quotes.iter().zip(w) {
            let p = bsm_price(&s.inputs(q.strike, q.mid()), OptionKind::Call)?;
            points.push((scale, q.strike, s.expiry, s.discount, p / scale, wi));
        }
    }
    let objective = |p: &[f64]| -> f64 {
        let Some(m) = MixtureParams::from_raw(p) else {
            return f64::INFINITY;
        };
        let mut acc = 0.0;
        for &(s0, k, t, df, target, w) in &points {
            match m.price(s0, k, t, df) {
                Ok(v) => acc += w * (v / s0 - target).powi(2),
                Err(_) => return f64::INFINITY,
            }
        }
        acc
    };
    let bounds: Vec<(f64, f64)> = (0..config.components).flat_map(|_| COMPONENT_BOUNDS).collect();
    let fit = hybrid_optimize(objective, &config.engine.de(bounds), &config.engine.nm())?;
    let params = MixtureParams::from_raw(&fit.params)
        .ok_or_else(|| Error::NoFeasibleFit("all mixture weights vanished".into()))?;
    let mut rmse_vol = Vec::new();
    let mut gap = Vec::new();
    for s in &surface.expiries {
        let (mut se, mut n) = (0.0, 0usize);
        for q in &s.quotes {
            if let Ok(v) = params.implied_vol(s.forward * s.discount, q.strike, s.expiry, s.discount) {
                se += (v - q.mid()).powi(2);
                n += 1;
            }
        }
        rmse_vol.push(if n > 0 { (se / n as f64).sqrt() } else { f64::NAN });
        gap.push(params.martingale_gap(s.expiry));
    }
    Ok(MixtureFit {
        params,
        fit,
        rmse_vol,
        martingale_gap: gap,
    })
}
