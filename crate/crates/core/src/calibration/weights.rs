//! Bid-ask and vega weights.

use serde::{Deserialize, Serialize};

use crate::bsm::{bsm_price, bsm_vega, OptionKind};
use crate::error::{Error, Result};
use crate::market_data::QuoteSurface;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightVariant {
    /// `1 / |bid - ask|` in price units.
    BidAsk,
    /// `1 / vega^2`.
    Vega,
    /// Product of the two.
    #[default]
    Combined,
    /// All ones.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum WeightCap {
    Absolute(f64),
    /// Multiple of the median uncapped (finite) weight.
    MedianMultiple(f64),
}

impl Default for WeightCap {
    fn default() -> Self {
        WeightCap::MedianMultiple(100.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightScheme {
    #[serde(default)]
    pub variant: WeightVariant,
    #[serde(default)]
    pub cap: WeightCap,
}

impl WeightScheme {
    pub fn new(variant: WeightVariant) -> Self {
        Self {
            variant,
            cap: WeightCap::default(),
        }
    }
}

/// Uncapped combined weight; `inf` when either factor degenerates.
pub fn combined_weight(spread: f64, vega: f64) -> f64 {
    1.0 / spread.abs() * (1.0 / (vega * vega))
}

fn raw_weight(variant: WeightVariant, spread: f64, vega: f64) -> f64 {
    match variant {
        WeightVariant::BidAsk => 1.0 / spread.abs(),
        WeightVariant::Vega => 1.0 / (vega * vega),
        WeightVariant::Combined => combined_weight(spread, vega),
        WeightVariant::Uniform => 1.0,
    }
}

/// Weights per expiry, in surface order. Spreads are discounted call price
/// spreads; vegas are taken at the mid vol.
pub fn build_weights(surface: &QuoteSurface, scheme: &WeightScheme) -> Result<Vec<Vec<f64>>> {
    let mut raw = Vec::with_capacity(surface.expiries.len());
    for s in &surface.expiries {
        let mut row = Vec::with_capacity(s.quotes.len());
        for q in &s.quotes {
            let (spread, vega) = match scheme.variant {
                WeightVariant::Uniform => (1.0, 1.0),
                _ => {
                    let bid = bsm_price(&s.inputs(q.strike, q.bid_iv), OptionKind::Call)?;
                    let ask = bsm_price(&s.inputs(q.strike, q.ask_iv), OptionKind::Call)?;
                    (ask - bid, bsm_vega(&s.inputs(q.strike, q.mid()))?)
                }
            };
            let w = raw_weight(scheme.variant, spread, vega);
            row.push(if w.is_nan() { f64::INFINITY } else { w });
        }
        raw.push(row);
    }
    let cap = match scheme.cap {
        WeightCap::Absolute(c) => c,
        WeightCap::MedianMultiple(m) => {
            let mut finite: Vec<f64> = raw.iter().flatten().copied().filter(|w| w.is_finite()).collect();
            if finite.is_empty() {
                return Err(Error::InputDomain(
                    "every weight is degenerate (zero spread or vega)".into(),
                ));
            }
            finite.sort_by(f64::total_cmp);
            let n = finite.len();
            let median = if n % 2 == 1 {
                finite[n / 2]
            } else {
                0.5 * (finite[n / 2 - 1] + finite[n / 2])
            };
            m * median
        }
    };
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(Error::InputDomain(format!(
            "weight cap {cap} must be positive and finite"
        )));
    }
    Ok(raw
        .into_iter()
        .map(|row| row.into_iter().map(|w| w.min(cap)).collect())
        .collect())
}
