//! Black–Scholes–Merton kernel in forward/discount coordinates.
//!
//! Prices are `discount * E[payoff]` under a lognormal forward with total
//! standard deviation `vol * sqrt(expiry)`. Rates and dividends only enter
//! through `forward` and `discount`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF through the complementary error function, accurate
/// in both tails.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

/// A European contract without a volatility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contract {
    pub forward: f64,
    pub strike: f64,
    pub expiry: f64,
    pub discount: f64,
}

impl Contract {
    pub fn new(forward: f64, strike: f64, expiry: f64, discount: f64) -> Self {
        Self {
            forward,
            strike,
            expiry,
            discount,
        }
    }

    pub fn with_vol(self, vol: f64) -> BsmInputs {
        BsmInputs {
            forward: self.forward,
            strike: self.strike,
            expiry: self.expiry,
            vol,
            discount: self.discount,
        }
    }

    fn validate(&self) -> Result<()> {
        ensure_finite("forward", self.forward)?;
        ensure_finite("strike", self.strike)?;
        ensure_finite("expiry", self.expiry)?;
        ensure_finite("discount", self.discount)?;
        if self.forward <= 0.0 {
            return Err(Error::InputDomain(format!("forward must be > 0, got {}", self.forward)));
        }
        if self.strike < 0.0 {
            return Err(Error::InputDomain(format!("strike must be >= 0, got {}", self.strike)));
        }
        if self.expiry < 0.0 {
            return Err(Error::InputDomain(format!("expiry must be >= 0, got {}", self.expiry)));
        }
        if self.discount <= 0.0 {
            return Err(Error::InputDomain(format!(
                "discount must be > 0, got {}",
                self.discount
            )));
        }
        Ok(())
    }

    /// Discounted intrinsic value, the lower edge of the no-arbitrage band.
    pub fn intrinsic(&self, kind: OptionKind) -> f64 {
        match kind {
            OptionKind::Call => self.discount * (self.forward - self.strike).max(0.0),
            OptionKind::Put => self.discount * (self.strike - self.forward).max(0.0),
        }
    }

    /// Upper edge of the no-arbitrage band.
    pub fn upper_bound(&self, kind: OptionKind) -> f64 {
        match kind {
            OptionKind::Call => self.discount * self.forward,
            OptionKind::Put => self.discount * self.strike,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsmInputs {
    pub forward: f64,
    pub strike: f64,
    pub expiry: f64,
    pub vol: f64,
    pub discount: f64,
}

impl BsmInputs {
    pub fn new(forward: f64, strike: f64, expiry: f64, vol: f64, discount: f64) -> Self {
        Self {
            forward,
            strike,
            expiry,
            vol,
            discount,
        }
    }

    pub fn contract(&self) -> Contract {
        Contract::new(self.forward, self.strike, self.expiry, self.discount)
    }

    fn validate(&self) -> Result<()> {
        self.contract().validate()?;
        ensure_finite("vol", self.vol)?;
        if self.vol < 0.0 {
            return Err(Error::InputDomain(format!("vol must be >= 0, got {}", self.vol)));
        }
        Ok(())
    }
}

/// Undiscounted Black price for total standard deviation `sd`.
fn black_undiscounted(forward: f64, strike: f64, sd: f64, kind: OptionKind) -> f64 {
    let intrinsic = match kind {
        OptionKind::Call => (forward - strike).max(0.0),
        OptionKind::Put => (strike - forward).max(0.0),
    };
    if sd <= 0.0 || strike == 0.0 {
        return intrinsic;
    }
    let d1 = (forward / strike).ln() / sd + 0.5 * sd;
    let d2 = d1 - sd;
    let v = match kind {
        OptionKind::Call => forward * norm_cdf(d1) - strike * norm_cdf(d2),
        OptionKind::Put => strike * norm_cdf(-d2) - forward * norm_cdf(-d1),
    };
    v.max(intrinsic)
}

pub fn bsm_price(inputs: &BsmInputs, kind: OptionKind) -> Result<f64> {
    inputs.validate()?;
    let sd = inputs.vol * inputs.expiry.sqrt();
    Ok(inputs.discount * black_undiscounted(inputs.forward, inputs.strike, sd, kind))
}

/// Derivative of the price with respect to `vol`. Zero when expiry or vol is
/// zero.
pub fn bsm_vega(inputs: &BsmInputs) -> Result<f64> {
    inputs.validate()?;
    if inputs.expiry == 0.0 || inputs.vol == 0.0 || inputs.strike == 0.0 {
        return Ok(0.0);
    }
    let sqrt_t = inputs.expiry.sqrt();
    let sd = inputs.vol * sqrt_t;
    let d1 = (inputs.forward / inputs.strike).ln() / sd + 0.5 * sd;
    Ok(inputs.discount * inputs.forward * norm_pdf(d1) * sqrt_t)
}

const IV_LOWER: f64 = 1e-6;
const IV_UPPER: f64 = 5.0;
const IV_MAX_ITER: usize = 100;
const IV_PRICE_TOL: f64 = 4.0 * f64::EPSILON;
const IV_ACCEPT_TOL: f64 = 1e-12;

/// Inverts [`bsm_price`] for the volatility.
///
/// The price is first mapped to the out-of-the-money side through parity and
/// the root is found on the log of the undiscounted OTM price, which keeps
/// deep-OTM quotes well conditioned. Newton steps are taken inside a
/// bisection bracket and replaced by bisection whenever they leave it.
pub fn implied_vol(price: f64, contract: &Contract, kind: OptionKind) -> Result<f64> {
    contract.validate()?;
    ensure_finite("price", price)?;
    let lower = contract.intrinsic(kind);
    let upper = contract.upper_bound(kind);
    if !(price > lower && price < upper) || contract.expiry == 0.0 {
        return Err(Error::PriceOutOfBounds { price, lower, upper });
    }

    let Contract {
        forward: f,
        strike: k,
        expiry: t,
        discount: df,
    } = *contract;
    let undiscounted = price / df;
    // Parity: call - put = F - K.
    let (otm_kind, target) = if k >= f {
        match kind {
            OptionKind::Call => (OptionKind::Call, undiscounted),
            OptionKind::Put => (OptionKind::Call, undiscounted - (k - f)),
        }
    } else {
        match kind {
            OptionKind::Put => (OptionKind::Put, undiscounted),
            OptionKind::Call => (OptionKind::Put, undiscounted - (f - k)),
        }
    };
    if !(target > 0.0) {
        return Err(Error::PriceOutOfBounds { price, lower, upper });
    }
    let sqrt_t = t.sqrt();
    let model = |sigma: f64| black_undiscounted(f, k, sigma * sqrt_t, otm_kind);
    let ln_target = target.ln();

    let mut lo = IV_LOWER;
    let mut hi = IV_UPPER;
    while model(lo) > target && lo > 1e-300 {
        hi = lo;
        lo *= 1e-3;
    }
    while model(hi) < target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::PriceOutOfBounds { price, lower, upper });
        }
    }

    let x = (k / f).ln();
    let mut sigma = if x.abs() > 1e-12 {
        (2.0 * x.abs() / t).sqrt()
    } else {
        target / (INV_SQRT_2PI * f * sqrt_t)
    };
    if !(sigma > lo && sigma < hi) {
        sigma = 0.5 * (lo + hi);
    }

    for _ in 0..IV_MAX_ITER {
        let p = model(sigma);
        if (p - target).abs() <= IV_PRICE_TOL * target {
            return Ok(sigma);
        }
        if p < target {
            lo = sigma;
        } else {
            hi = sigma;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(0.5 * (lo + hi));
        }
        let sd = sigma * sqrt_t;
        let d1 = x.mul_add(-1.0 / sd, 0.5 * sd);
        let vega = f * norm_pdf(d1) * sqrt_t;
        let next = if p > 0.0 && vega > 0.0 {
            // Newton on ln(price): step = (ln p - ln target) * p / vega.
            sigma - (p.ln() - ln_target) * p / vega
        } else {
            f64::NAN
        };
        sigma = if next.is_finite() && next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    // Rounding noise in the model price can keep it a few ulps off target.
    if (model(sigma) - target).abs() <= IV_ACCEPT_TOL * target {
        return Ok(sigma);
    }
    Err(Error::NoConvergence {
        iterations: IV_MAX_ITER,
        context: format!("implied vol for price {price} strike {k} expiry {t}"),
    })
}

/// ln(K/F).
pub fn log_moneyness(strike: f64, forward: f64) -> f64 {
    (strike / forward).ln()
}

/// (ln(K/S) + I^2 tau / 2) / (I sqrt(tau)).
pub fn standardized_moneyness(strike: f64, spot: f64, vol: f64, tau: f64) -> f64 {
    ((strike / spot).ln() + 0.5 * vol * vol * tau) / (vol * tau.sqrt())
}

/// ln(F/K)/sqrt(T), the moneyness of the polynomial surface.
pub fn dumas_moneyness(forward: f64, strike: f64, expiry: f64) -> f64 {
    (forward / strike).ln() / expiry.sqrt()
}

/// Total variance `sigma^2 T`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct TotalVariance(pub f64);

impl TotalVariance {
    pub fn from_vol(vol: f64, expiry: f64) -> Self {
        Self(vol * vol * expiry)
    }

    pub fn vol(self, expiry: f64) -> f64 {
        (self.0 / expiry).sqrt()
    }
}

/// Linear interpolation of total variance in time at fixed log-moneyness.
///
/// `slices` must be sorted by expiry. Times outside the expiry span are an
/// error; extrapolating in time is a separate decision for the caller.
pub fn total_variance_interp<V>(slices: &[(f64, V)], t: f64, x: f64) -> Result<f64>
where
    V: Fn(f64) -> f64,
{
    let (first, last) = match (slices.first(), slices.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(Error::EmptyInput),
    };
    if !(t >= first && t <= last) {
        return Err(Error::ExtrapolationNotAllowed { t, first, last });
    }
    let idx = slices.partition_point(|(ti, _)| *ti < t);
    let (t1, v1) = &slices[idx];
    if *t1 == t || idx == 0 {
        return Ok(v1(x));
    }
    let (t0, v0) = &slices[idx - 1];
    let w = (t - t0) / (t1 - t0);
    Ok((1.0 - w) * v0(x) + w * v1(x))
}

/// b1 + b2 M + b3 M^2 + b4 T + b5 M T. No positivity guarantee.
pub fn dumas_vol(moneyness: f64, expiry: f64, b: &[f64; 5]) -> f64 {
    let m = moneyness;
    b[0] + b[1] * m + b[2] * m * m + b[3] * expiry + b[4] * m * expiry
}
