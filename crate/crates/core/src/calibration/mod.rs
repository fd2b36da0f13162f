//! Calibration functionals, weighting schemes and the global/local
//! optimizer shared by every fitting routine.

mod de;
mod nelder_mead;
mod weights;

pub use de::{differential_evolution, DeConfig};
pub use nelder_mead::{nelder_mead, NmConfig};
pub use weights::{build_weights, combined_weight, WeightCap, WeightScheme, WeightVariant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<f64>,
    pub objective: f64,
    /// Generations (global stage) plus iterations (local stage).
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best objective after each generation / iteration.
    pub trace: Vec<f64>,
}

/// Engine settings as read from JSON run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// 0 selects `10 * dim`.
    pub np: usize,
    pub f: f64,
    pub cr: f64,
    pub max_gen: usize,
    pub seed: u64,
    pub local_max_iter: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            np: 0,
            f: 0.7,
            cr: 0.9,
            max_gen: 40,
            seed: 0,
            local_max_iter: 2000,
        }
    }
}

impl EngineConfig {
    pub fn de(&self, bounds: Vec<(f64, f64)>) -> DeConfig {
        DeConfig {
            np: self.np,
            f: self.f,
            cr: self.cr,
            max_gen: self.max_gen,
            seed: self.seed,
            ..DeConfig::new(bounds)
        }
    }

    pub fn nm(&self) -> NmConfig {
        NmConfig {
            max_iter: self.local_max_iter,
            ftol: 1e-14,
            xtol: 1e-10,
            ..NmConfig::default()
        }
    }
}

/// Short global search followed by a bounded Nelder–Mead polish from the
/// best member.
pub fn hybrid_optimize<F>(objective: F, de: &DeConfig, nm: &NmConfig) -> Result<FitResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let global = differential_evolution(&objective, de)?;
    if de.target.is_some_and(|t| global.objective <= t) {
        return Ok(global);
    }
    let nm = NmConfig {
        target: nm.target.or(de.target),
        ..nm.clone()
    };
    let local = nelder_mead(&objective, &global.params, &de.bounds, &nm);
    let mut trace = global.trace.clone();
    trace.extend(local.trace.iter().map(|v| v.min(global.objective)));
    let (params, objective_value) = if local.objective <= global.objective {
        (local.params, local.objective)
    } else {
        (global.params, global.objective)
    };
    if !objective_value.is_finite() {
        return Err(Error::Optimizer("no finite objective value found".into()));
    }
    Ok(FitResult {
        params,
        objective: objective_value,
        iterations: global.iterations + local.iterations,
        evaluations: global.evaluations + local.evaluations,
        converged: local.converged,
        trace,
    })
}

/// How calibration residuals are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    #[default]
    AllAtOnce,
    SequentialPerExpiry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSpace {
    Price,
    #[default]
    Vol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub mode: CalibrationMode,
    pub residual: ResidualSpace,
}

/// Weighted sum of squared residuals. Any non-finite model value makes the
/// whole objective `+inf` so optimizers can keep iterating.
pub fn objective(model: &[f64], market: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(model.len(), market.len());
    debug_assert_eq!(model.len(), weights.len());
    let mut acc = 0.0;
    for ((m, d), w) in model.iter().zip(market).zip(weights) {
        if !m.is_finite() {
            return f64::INFINITY;
        }
        let r = m - d;
        acc += w * r * r;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_arithmetic() {
        assert_eq!(objective(&[1.0, 2.0], &[1.0, 2.0], &[3.0, 4.0]), 0.0);
        assert_eq!(objective(&[1.5], &[1.0], &[2.0]), 0.5);
        assert_eq!(objective(&[f64::NAN], &[1.0], &[2.0]), f64::INFINITY);
    }

    #[test]
    fn hybrid_polishes_de_result() {
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + (x[1] + 0.7).powi(2);
        let mut de = DeConfig::new(vec![(-2.0, 2.0); 2]);
        de.max_gen = 5;
        let r = hybrid_optimize(
            f,
            &de,
            &NmConfig {
                ftol: 1e-18,
                xtol: 1e-10,
                max_iter: 2000,
                ..NmConfig::default()
            },
        )
        .unwrap();
        assert!(r.objective < 1e-14);
        let g = differential_evolution(f, &de).unwrap();
        assert!(r.objective <= g.objective);
    }
}
