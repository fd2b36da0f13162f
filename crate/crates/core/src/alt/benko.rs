//! Local quadratic smoothing of implied vols with an Epanechnikov kernel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Local fit at one query point. `alpha` has three entries (level, slope,
/// curvature) for a slice and five (level, x-slope, T-slope, x-curvature,
/// cross term) for a surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenkoFit {
    pub x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub alpha: Vec<f64>,
    pub h_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_t: Option<f64>,
    /// The curvature bound was active.
    #[serde(default)]
    pub constrained: bool,
}

impl BenkoFit {
    pub fn vol(&self) -> f64 {
        self.alpha[0]
    }
}

/// Weighted least squares via SVD; singular directions get the minimum-norm
/// solution.
fn weighted_lstsq(rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let p = rows[0].len();
    let a = DMatrix::from_fn(rows.len(), p, |i, j| w[i].sqrt() * rows[i][j]);
    let b = DVector::from_iterator(y.len(), y.iter().zip(w).map(|(v, wi)| wi.sqrt() * v));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let sol = svd
        .solve(&b, 1e-12 * smax)
        .map_err(|e| Error::NumericalBreakdown(e.to_string()))?;
    Ok(sol.iter().copied().collect())
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InputDomain(format!("bandwidth {h} must be positive")))
    }
}

/// Constrained local quadratic at `x` for one expiry; `alpha[2] >= 0`.
pub fn benko_smooth_slice(xs: &[f64], vols: &[f64], x: f64, h: f64) -> Result<BenkoFit> {
    check_bandwidth(h)?;
    if xs.len() != vols.len() {
        return Err(Error::InputDomain("strike and vol lengths differ".into()));
    }
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for (&xi, &vi) in xs.iter().zip(vols) {
        let k = epanechnikov((xi - x) / h) / h;
        if k > 0.0 {
            let d = xi - x;
            rows.push(vec![1.0, d, d * d]);
            y.push(vi);
            w.push(k);
        }
    }
    if rows.len() < 3 {
        return Err(Error::BandwidthTooSmall {
            got: rows.len(),
            needed: 3,
        });
    }
    let mut alpha = weighted_lstsq(&rows, &y, &w)?;
    let mut constrained = false;
    if alpha[2] < 0.0 {
        // Only one inequality: its active-set solution is the linear fit.
        let lin: Vec<Vec<f64>> = rows.iter().map(|r| r[..2].to_vec()).collect();
        let a = weighted_lstsq(&lin, &y, &w)?;
        alpha = vec![a[0], a[1], 0.0];
        constrained = true;
    }
    Ok(BenkoFit {
        x,
        t: None,
        alpha,
        h_x: h,
        h_t: None,
        constrained,
    })
}

/// Local fit in `(x, T)` with product kernels over all expiries.
pub fn benko_smooth_surface(data: &[(f64, f64, f64)], x: f64, t: f64, h_x: f64, h_t: f64) -> Result<BenkoFit> {
    check_bandwidth(h_x)?;
    check_bandwidth(h_t)?;
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut w = Vec::new();
    for &(xi, ti, vi) in data {
        let k = epanechnikov((xi - x) / h_x) / h_x * epanechnikov((ti - t) / h_t) / h_t;
        if k > 0.0 {
            let (dx, dt) = (xi - x, ti - t);
            rows.push(vec![1.0, dx, dt, dx * dx, dx * dt]);
            y.push(vi);
            w.push(k);
        }
    }
    if rows.len() < 5 {
        return Err(Error::BandwidthTooSmall {
            got: rows.len(),
            needed: 5,
        });
    }
    let alpha = weighted_lstsq(&rows, &y, &w)?;
    Ok(BenkoFit {
        x,
        t: Some(t),
        alpha,
        h_x,
        h_t: Some(h_t),
        constrained: false,
    })
}
