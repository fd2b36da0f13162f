//! Alternative surface representations: Carr–Wu quadratic surfaces, the
//! shifted-lognormal mixture, local quadratic smoothing and the polynomial
//! surface.

pub mod benko;
pub mod dumas;
pub mod mixture;
pub mod vgvv;

pub use benko::{benko_smooth_slice, benko_smooth_surface, epanechnikov, BenkoFit};
pub use dumas::{fit_dumas, DumasFit, DumasSurface};
pub use mixture::{fit_mixture, MixtureComponent, MixtureFit, MixtureFitConfig, MixtureParams};
pub use vgvv::{
    fit_vgvv, lnv_implied_variance, srv_implied_vol, VgvvCoeffs, VgvvFit, VgvvFitConfig, VgvvModel, VgvvSurface,
};

use crate::calibration::{build_weights, WeightScheme};
use crate::error::Result;
use crate::market_data::QuoteSurface;

/// Calibration weights rescaled to unit mean over the whole surface.
pub(crate) fn unit_mean_weights(surface: &QuoteSurface, scheme: &WeightScheme) -> Result<Vec<Vec<f64>>> {
    let w = build_weights(surface, scheme)?;
    let n: usize = w.iter().map(Vec::len).sum();
    let mean = w.iter().flatten().sum::<f64>() / n.max(1) as f64;
    Ok(w.into_iter()
        .map(|row| row.into_iter().map(|v| v / mean).collect())
        .collect())
}
