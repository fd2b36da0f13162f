//! Box-constrained Nelder–Mead. Trial points are projected onto the box.

use serde::{Deserialize, Serialize};

use super::de::{clip, sanitize};
use super::FitResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmConfig {
    pub max_iter: usize,
    /// Absolute spread of simplex values below which the search stops.
    pub ftol: f64,
    /// Simplex diameter (relative to the bound widths) below which the
    /// search stops.
    pub xtol: f64,
    /// Initial simplex edge as a fraction of each bound width.
    pub initial_step: f64,
    /// Objective value accepted as solved.
    pub target: Option<f64>,
}

impl Default for NmConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            ftol: 1e-10,
            xtol: 1e-10,
            initial_step: 0.05,
            target: None,
        }
    }
}

pub fn nelder_mead<F>(objective: F, start: &[f64], bounds: &[(f64, f64)], config: &NmConfig) -> FitResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = start.len();
    let f = |x: &[f64]| sanitize(objective(x));
    let mut x0 = start.to_vec();
    clip(&mut x0, bounds);
    let f0 = f(&x0);
    let mut evaluations = 1;
    if config.target.is_some_and(|t| f0 <= t) {
        return FitResult {
            params: x0,
            objective: f0,
            iterations: 0,
            evaluations,
            converged: true,
            trace: vec![f0],
        };
    }

    let width: Vec<f64> = bounds.iter().map(|(lo, hi)| (hi - lo).max(f64::MIN_POSITIVE)).collect();
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.clone(), f0)];
    for i in 0..n {
        let mut v = x0.clone();
        let step = config.initial_step * width[i];
        // Step away from the nearer bound so the vertex stays distinct.
        v[i] = if v[i] + step <= bounds[i].1 {
            v[i] + step
        } else {
            v[i] - step
        };
        clip(&mut v, bounds);
        let fv = f(&v);
        evaluations += 1;
        simplex.push((v, fv));
    }

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        trace.push(simplex[0].1);
        let spread = simplex[n].1 - simplex[0].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| {
                v.iter()
                    .zip(&simplex[0].0)
                    .zip(&width)
                    .map(|((a, b), w)| ((a - b) / w).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if config.target.is_some_and(|t| simplex[0].1 <= t) || (spread <= config.ftol && diameter <= config.xtol) {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            clip(&mut p, bounds);
            p
        };
        let xr = along(1.0);
        let fr = f(&xr);
        evaluations += 1;
        if fr < simplex[0].1 {
            let xe = along(2.0);
            let fe = f(&xe);
            evaluations += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(0.5);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = along(-0.5);
            let fc = f(&xc);
            (xc, fc)
        };
        evaluations += 1;
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for (v, fv) in simplex.iter_mut().skip(1) {
            for (x, b) in v.iter_mut().zip(&best) {
                *x = b + 0.5 * (*x - b);
            }
            *fv = f(v);
            evaluations += 1;
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    trace.push(simplex[0].1);
    let (params, objective) = simplex.swap_remove(0);
    FitResult {
        params,
        objective,
        iterations,
        evaluations,
        converged,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let r = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 0.5).powi(2),
            &[0.0, 0.0],
            &[(-3.0, 3.0), (-3.0, 3.0)],
            &NmConfig {
                ftol: 1e-16,
                xtol: 1e-9,
                max_iter: 2000,
                ..NmConfig::default()
            },
        );
        assert!(r.converged);
        assert!((r.params[0] - 1.0).abs() < 1e-6 && (r.params[1] + 0.5).abs() < 1e-6);
    }

    #[test]
    fn respects_bounds() {
        let r = nelder_mead(|x| (x[0] - 5.0).powi(2), &[0.0], &[(-1.0, 1.0)], &NmConfig::default());
        assert!((r.params[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn start_at_target_returns_immediately() {
        let r = nelder_mead(
            |x| x[0] * x[0],
            &[0.0],
            &[(-1.0, 1.0)],
            &NmConfig {
                target: Some(0.0),
                ..NmConfig::default()
            },
        );
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.evaluations, 1);
    }
}
