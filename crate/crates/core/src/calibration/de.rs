//! Differential evolution, classic `rand/1/bin`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FitResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeConfig {
    /// Population size; 0 selects `10 * dim`.
    #[serde(default)]
    pub np: usize,
    #[serde(default = "default_f")]
    pub f: f64,
    #[serde(default = "default_cr")]
    pub cr: f64,
    #[serde(default = "default_max_gen")]
    pub max_gen: usize,
    #[serde(default)]
    pub seed: u64,
    pub bounds: Vec<(f64, f64)>,
    /// Stop once the best objective is at or below this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    /// Stop when the population objective spread falls below this value.
    #[serde(default = "default_spread_tol")]
    pub spread_tol: f64,
    /// Seeded into the initial population (clipped to bounds).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
}

fn default_f() -> f64 {
    0.7
}
fn default_cr() -> f64 {
    0.9
}
fn default_max_gen() -> usize {
    200
}
fn default_spread_tol() -> f64 {
    0.0
}

impl DeConfig {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        Self {
            np: 0,
            f: default_f(),
            cr: default_cr(),
            max_gen: default_max_gen(),
            seed: 0,
            bounds,
            target: None,
            spread_tol: default_spread_tol(),
            initial: None,
        }
    }

    pub fn population_size(&self) -> usize {
        if self.np == 0 {
            (10 * self.bounds.len()).max(4)
        } else {
            self.np
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::Optimizer("no parameters".into()));
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Optimizer(format!("bad bounds for parameter {i}: [{lo}, {hi}]")));
            }
        }
        if self.population_size() < 4 {
            return Err(Error::Optimizer("population size must be >= 4".into()));
        }
        if !(self.f > 0.0 && self.f < 2.0) {
            return Err(Error::Optimizer(format!("F = {} outside (0, 2)", self.f)));
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return Err(Error::Optimizer(format!("CR = {} outside [0, 1]", self.cr)));
        }
        Ok(())
    }
}

pub(crate) fn clip(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Objective values that are not finite become `+inf`.
pub(crate) fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes `objective` over the box in `config.bounds`.
///
/// Trial vectors for a generation are drawn serially from the seeded RNG and
/// then evaluated in parallel, so results depend only on the seed.
pub fn differential_evolution<F>(objective: F, config: &DeConfig) -> Result<FitResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    let dim = config.bounds.len();
    let np = config.population_size();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| {
            config
                .bounds
                .iter()
                .map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
                .collect()
        })
        .collect();
    if let Some(init) = &config.initial {
        if init.len() != dim {
            return Err(Error::Optimizer(format!(
                "initial guess has {} entries, expected {dim}",
                init.len()
            )));
        }
        pop[0] = init.clone();
        clip(&mut pop[0], &config.bounds);
    }
    let mut fit: Vec<f64> = pop.par_iter().map(|x| sanitize(objective(x))).collect();
    let mut evaluations = np;

    let best_of = |fit: &[f64]| {
        let mut b = 0;
        for i in 1..fit.len() {
            if fit[i] < fit[b] {
                b = i;
            }
        }
        b
    };
    let mut best = best_of(&fit);
    let mut trace = vec![fit[best]];
    let mut converged = false;
    let mut generations = 0;

    let done = |fit: &[f64], best: usize| -> bool {
        if config.target.is_some_and(|t| fit[best] <= t) {
            return true;
        }
        if config.spread_tol > 0.0 {
            let worst = fit.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            return worst.is_finite() && worst - fit[best] <= config.spread_tol;
        }
        false
    };

    if done(&fit, best) {
        converged = true;
    }
    while !converged && generations < config.max_gen {
        generations += 1;
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let picks = sample(&mut rng, np - 1, 3);
                let r: Vec<usize> = picks.iter().map(|p| if p >= i { p + 1 } else { p }).collect();
                let jrand = rng.gen_range(0..dim);
                let mut u = pop[i].clone();
                for j in 0..dim {
                    if j == jrand || rng.gen::<f64>() < config.cr {
                        u[j] = pop[r[0]][j] + config.f * (pop[r[1]][j] - pop[r[2]][j]);
                    }
                }
                clip(&mut u, &config.bounds);
                u
            })
            .collect();
        let trial_fit: Vec<f64> = trials.par_iter().map(|x| sanitize(objective(x))).collect();
        evaluations += np;
        for (i, (u, fu)) in trials.into_iter().zip(trial_fit).enumerate() {
            if fu <= fit[i] {
                pop[i] = u;
                fit[i] = fu;
            }
        }
        best = best_of(&fit);
        trace.push(fit[best]);
        if done(&fit, best) {
            converged = true;
        }
    }

    Ok(FitResult {
        params: pop[best].clone(),
        objective: fit[best],
        iterations: generations,
        evaluations,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn sphere_five_dims() {
        let mut c = DeConfig::new(vec![(-5.0, 5.0); 5]);
        c.np = 40;
        c.max_gen = 200;
        c.seed = 7;
        let r = differential_evolution(sphere, &c).unwrap();
        assert!(r.objective < 1e-8, "{}", r.objective);
    }

    #[test]
    fn deterministic_and_monotone() {
        let mut c = DeConfig::new(vec![(-2.0, 2.0); 3]);
        c.max_gen = 30;
        c.seed = 99;
        let a = differential_evolution(sphere, &c).unwrap();
        let b = differential_evolution(sphere, &c).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.params, b.params);
        assert!(a.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn failed_evaluations_do_not_abort() {
        let mut c = DeConfig::new(vec![(-1.0, 1.0); 2]);
        c.max_gen = 20;
        let r = differential_evolution(|x| if x[0] < 0.0 { f64::NAN } else { sphere(x) }, &c).unwrap();
        assert!(r.objective.is_finite());
        assert!(r.params[0] >= 0.0);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = DeConfig::new(vec![(1.0, -1.0)]);
        assert!(differential_evolution(sphere, &c).is_err());
        c.bounds = vec![(0.0, 1.0)];
        c.f = 2.5;
        assert!(differential_evolution(sphere, &c).is_err());
    }
}
