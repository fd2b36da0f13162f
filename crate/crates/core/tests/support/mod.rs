//! Shared test oracles.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use volforge::bsm::{bsm_price, BsmInputs, OptionKind};

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

/// Constant-parameter Heston for the Monte Carlo oracle.
#[derive(Debug, Clone, Copy)]
pub struct McHeston {
    pub spot: f64,
    pub kappa: f64,
    pub theta: f64,
    pub xi: f64,
    pub rho: f64,
    pub nu0: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub price: f64,
    pub std_err: f64,
}

const CHUNK: usize = 2048;
const NC: usize = 2;

/// Running sums for a price with `NC` zero-mean control variates.
#[derive(Clone)]
struct Acc {
    p: f64,
    pp: f64,
    c: [f64; NC],
    cc: [[f64; NC]; NC],
    pc: [f64; NC],
}

impl Acc {
    fn new() -> Self {
        Acc {
            p: 0.0,
            pp: 0.0,
            c: [0.0; NC],
            cc: [[0.0; NC]; NC],
            pc: [0.0; NC],
        }
    }

    fn add(&mut self, p: f64, c: &[f64; NC]) {
        self.p += p;
        self.pp += p * p;
        for i in 0..NC {
            self.c[i] += c[i];
            self.pc[i] += p * c[i];
            for j in 0..NC {
                self.cc[i][j] += c[i] * c[j];
            }
        }
    }

    fn merge(&mut self, o: &Acc) {
        self.p += o.p;
        self.pp += o.pp;
        for i in 0..NC {
            self.c[i] += o.c[i];
            self.pc[i] += o.pc[i];
            for j in 0..NC {
                self.cc[i][j] += o.cc[i][j];
            }
        }
    }

    /// Regression-adjusted estimate.
    fn estimate(&self, n: f64) -> McEstimate {
        let mp = self.p / n;
        let mc: Vec<f64> = self.c.iter().map(|c| c / n).collect();
        let cov = nalgebra::DMatrix::from_fn(NC, NC, |i, j| self.cc[i][j] / n - mc[i] * mc[j]);
        let cpv = nalgebra::DVector::from_fn(NC, |i, _| self.pc[i] / n - mp * mc[i]);
        let beta = cov
            .clone()
            .lu()
            .solve(&cpv)
            .unwrap_or_else(|| nalgebra::DVector::zeros(NC));
        let price = mp - (0..NC).map(|i| beta[i] * mc[i]).sum::<f64>();
        let var_p = self.pp / n - mp * mp;
        let var = (var_p - 2.0 * beta.dot(&cpv) + (beta.transpose() * &cov * &beta)[(0, 0)]).max(0.0);
        McEstimate {
            price,
            std_err: (var / n).sqrt(),
        }
    }
}

/// European put prices by full-truncation Euler on the variance with
/// `steps_per_year` steps, antithetic pairs and conditional Monte Carlo:
/// given the variance path, the log-spot is Gaussian, so each path
/// contributes a Black-Scholes price. The stochastic integral of the vol and
/// the conditional forward (both exact martingales of the scheme) serve as
/// control variates. Every model in `models` is driven by the same normals
/// (common random numbers); `paths` counts antithetic pairs twice.
/// Returns `[model][strike]`.
pub fn heston_put_mc(
    models: &[McHeston],
    strikes: &[f64],
    t: f64,
    rate: f64,
    steps_per_year: usize,
    paths: usize,
    seed: u64,
) -> Vec<Vec<McEstimate>> {
    let steps = ((steps_per_year as f64 * t).round() as usize).max(1);
    let dt = t / steps as f64;
    let sdt = dt.sqrt();
    let df = (-rate * t).exp();
    let pairs = paths / 2;
    let chunks = pairs.div_ceil(CHUNK);
    let n = models.len() * strikes.len();
    let acc = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut z = vec![0.0; steps];
            let mut acc = vec![Acc::new(); n];
            for _ in 0..CHUNK.min(pairs - c * CHUNK) {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rng);
                }
                for (mi, m) in models.iter().enumerate() {
                    let mut pair = vec![0.0; strikes.len()];
                    let mut ctl = [0.0; NC];
                    for sign in [1.0, -1.0] {
                        let (mut nu, mut int_nu, mut int_dw) = (m.nu0, 0.0, 0.0);
                        for &zi in &z {
                            let vp = nu.max(0.0);
                            let dw = sign * zi * sdt;
                            int_nu += vp * dt;
                            int_dw += vp.sqrt() * dw;
                            nu += m.kappa * (m.theta - vp) * dt + m.xi * vp.sqrt() * dw;
                        }
                        let growth = (m.rho * int_dw - 0.5 * m.rho * m.rho * int_nu).exp();
                        let fwd = m.spot * (rate * t).exp() * growth;
                        ctl[0] += 0.5 * int_dw;
                        ctl[1] += 0.5 * (growth - 1.0);
                        let var = (1.0 - m.rho * m.rho) * int_nu;
                        for (ki, &k) in strikes.iter().enumerate() {
                            let p = if var > 0.0 {
                                let vol = (var / t).sqrt();
                                bsm_price(&BsmInputs::new(fwd, k, t, vol, df), OptionKind::Put).unwrap()
                            } else {
                                df * (k - fwd).max(0.0)
                            };
                            pair[ki] += 0.5 * p;
                        }
                    }
                    for (ki, p) in pair.into_iter().enumerate() {
                        acc[mi * strikes.len() + ki].add(p, &ctl);
                    }
                }
            }
            acc
        })
        .reduce(
            || vec![Acc::new(); n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    x.merge(y);
                }
                a
            },
        );
    let np = pairs as f64;
    (0..models.len())
        .map(|mi| {
            (0..strikes.len())
                .map(|ki| acc[mi * strikes.len() + ki].estimate(np))
                .collect()
        })
        .collect()
}
