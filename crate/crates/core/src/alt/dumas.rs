//! Quadratic-in-moneyness polynomial surface, fitted by weighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bsm::{dumas_moneyness, dumas_vol};
use crate::calibration::WeightScheme;
use crate::error::{Error, Result};
use crate::market_data::QuoteSurface;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DumasSurface {
    pub b: [f64; 5],
}

impl DumasSurface {
    /// Vol at forward log-moneyness `x = ln(K/F)`.
    pub fn vol(&self, t: f64, x: f64) -> f64 {
        dumas_vol(-x / t.sqrt(), t, &self.b)
    }

    pub fn vol_at_strike(&self, forward: f64, strike: f64, t: f64) -> f64 {
        dumas_vol(dumas_moneyness(forward, strike, t), t, &self.b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumasFit {
    pub surface: DumasSurface,
    pub objective: f64,
    pub rmse_vol: Vec<f64>,
    /// Smallest fitted vol at a quote; the form has no positivity guarantee.
    pub min_vol: f64,
}

pub fn fit_dumas(surface: &QuoteSurface, weights: &WeightScheme) -> Result<DumasFit> {
    let w = super::unit_mean_weights(surface, weights)?;
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut wt = Vec::new();
    for (s, ws) in surface.expiries.iter().zip(&w) {
        for (q, &wi) in s.quotes.iter().zip(ws) {
            let m = dumas_moneyness(s.forward, q.strike, s.expiry);
            rows.push([1.0, m, m * m, s.expiry, m * s.expiry]);
            y.push(q.mid());
            wt.push(wi);
        }
    }
    if rows.len() < 5 {
        return Err(Error::InsufficientStrikes {
            needed: 5,
            got: rows.len(),
        });
    }
    let a = DMatrix::from_fn(rows.len(), 5, |i, j| wt[i].sqrt() * rows[i][j]);
    let rhs = DVector::from_iterator(y.len(), y.iter().zip(&wt).map(|(v, w)| w.sqrt() * v));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.rank(1e-12 * smax);
    if rank < 5 {
        return Err(Error::RankDeficient(format!(
            "polynomial design has rank {rank} (need two expiries and three strikes)"
        )));
    }
    let sol = svd
        .solve(&rhs, 1e-12 * smax)
        .map_err(|e| Error::NumericalBreakdown(e.to_string()))?;
    let surf = DumasSurface {
        b: [sol[0], sol[1], sol[2], sol[3], sol[4]],
    };
    let mut objective = 0.0;
    let mut min_vol = f64::INFINITY;
    let mut rmse_vol = Vec::new();
    for (s, ws) in surface.expiries.iter().zip(&w) {
        let mut se = 0.0;
        for (q, &wi) in s.quotes.iter().zip(ws) {
            let v = surf.vol_at_strike(s.forward, q.strike, s.expiry);
            min_vol = min_vol.min(v);
            se += (v - q.mid()).powi(2);
            objective += wi * (v - q.mid()).powi(2);
        }
        rmse_vol.push((se / s.quotes.len() as f64).sqrt());
    }
    Ok(DumasFit {
        surface: surf,
        objective,
        rmse_vol,
        min_vol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{ExpirySlice, Quote};

    #[test]
    fn recovers_exact_polynomial() {
        let b = [0.22, -0.05, 0.03, 0.01, -0.02];
        let truth = DumasSurface { b };
        let expiries = [0.25, 1.0, 2.0]
            .iter()
            .map(|&t| ExpirySlice {
                expiry: t,
                forward: 100.0,
                discount: 1.0,
                quotes: [80.0, 90.0, 100.0, 115.0]
                    .iter()
                    .map(|&k| {
                        let v = truth.vol_at_strike(100.0, k, t);
                        Quote::new(k, v - 0.001, v + 0.001)
                    })
                    .collect(),
            })
            .collect();
        let fit = fit_dumas(&QuoteSurface { expiries }, &WeightScheme::default()).unwrap();
        for (a, e) in fit.surface.b.iter().zip(&b) {
            assert!((a - e).abs() < 1e-10);
        }
        assert!(fit.objective < 1e-20);
        // x = ln(K/F) and M = ln(F/K)/sqrt(T) agree.
        let x = (90.0f64 / 100.0).ln();
        assert!((fit.surface.vol(1.0, x) - truth.vol_at_strike(100.0, 90.0, 1.0)).abs() < 1e-10);
    }

    #[test]
    fn single_expiry_is_rank_deficient() {
        let expiries = vec![ExpirySlice {
            expiry: 1.0,
            forward: 100.0,
            discount: 1.0,
            quotes: (0..6).map(|i| Quote::new(80.0 + 8.0 * i as f64, 0.19, 0.21)).collect(),
        }];
        assert!(matches!(
            fit_dumas(&QuoteSurface { expiries }, &WeightScheme::default()),
            Err(Error::RankDeficient(_))
        ));
    }
}
