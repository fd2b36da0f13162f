//! SVI slices and the quasi-explicit "2+3" calibration.
//!
//! For fixed `(m, s)` the total variance is linear in the reduced
//! parameters `(alpha, delta, beta)`, so the inner problem is a small
//! convex QP which is solved exactly. The outer `(m, s)` search is a
//! Nelder–Mead multistart.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsm::total_variance_interp;
use crate::calibration::{build_weights, nelder_mead, FitResult, NmConfig, WeightScheme};
use crate::error::{Error, Result};
use crate::market_data::QuoteSurface;

pub const BETA_MIN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SviParams {
    pub a: f64,
    pub b: f64,
    pub rho: f64,
    pub m: f64,
    pub s: f64,
}

impl SviParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("rho", self.rho),
            ("m", self.m),
            ("s", self.s),
        ] {
            crate::error::ensure_finite(name, v)?;
        }
        if self.b < 0.0 || self.rho.abs() >= 1.0 || self.s <= 0.0 {
            return Err(Error::InputDomain(format!("invalid SVI parameters {self:?}")));
        }
        if self.min_variance() < -1e-14 {
            return Err(Error::InputDomain(format!(
                "SVI minimum variance {} is negative",
                self.min_variance()
            )));
        }
        Ok(())
    }

    /// `a + b s sqrt(1 - rho^2)`.
    pub fn min_variance(&self) -> f64 {
        self.a + self.b * self.s * (1.0 - self.rho * self.rho).sqrt()
    }

    /// Implied variance at log-moneyness `x`.
    pub fn variance(&self, x: f64) -> f64 {
        svi_variance(self, x)
    }

    pub fn reduced(&self, t: f64) -> ReducedParams {
        ReducedParams {
            alpha: self.a * t,
            delta: self.rho * self.b * self.s * t,
            beta: self.b * self.s * t,
        }
    }
}

pub fn svi_variance(p: &SviParams, x: f64) -> f64 {
    let d = x - p.m;
    p.a + p.b * (p.rho * d + (d * d + p.s * p.s).sqrt())
}

/// Total-variance parameters of `alpha + delta y + beta sqrt(y^2 + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedParams {
    pub alpha: f64,
    pub delta: f64,
    pub beta: f64,
}

impl ReducedParams {
    pub fn to_svi(&self, m: f64, s: f64, t: f64) -> SviParams {
        SviParams {
            a: self.alpha / t,
            b: self.beta / (s * t),
            rho: if self.beta > 0.0 { self.delta / self.beta } else { 0.0 },
            m,
            s,
        }
    }

    pub fn total_variance(&self, y: f64) -> f64 {
        self.alpha + self.delta * y + self.beta * (y * y + 1.0).sqrt()
    }
}

/// Box for the inner problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerBounds {
    pub s: f64,
    pub beta_min: f64,
    pub alpha_min: f64,
    pub vbar_max: f64,
}

impl InnerBounds {
    /// `alpha` in `[-10 max V, 10 max V]`, `beta >= 1e-8`.
    pub fn defaults(s: f64, vbar: &[f64]) -> Self {
        let vmax = vbar.iter().cloned().fold(0.0, f64::max);
        Self {
            s,
            beta_min: BETA_MIN,
            alpha_min: -10.0 * vmax,
            vbar_max: 10.0 * vmax,
        }
    }

    /// Rows `(g, h)` of `g . (alpha, delta, beta) >= h`.
    fn constraints(&self) -> [([f64; 3], f64); 8] {
        let s4 = 4.0 * self.s;
        [
            ([0.0, 0.0, 1.0], self.beta_min),
            ([0.0, 0.0, -1.0], -s4),
            ([0.0, 1.0, 1.0], 0.0),
            ([0.0, -1.0, 1.0], 0.0),
            ([0.0, 1.0, -1.0], -s4),
            ([0.0, -1.0, -1.0], -s4),
            ([1.0, 0.0, 0.0], self.alpha_min),
            ([-1.0, 0.0, 0.0], -self.vbar_max),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerFit {
    pub params: ReducedParams,
    pub objective: f64,
    /// Indices of the active domain constraints.
    pub active: Vec<usize>,
    /// Max of stationarity, primal and dual infeasibility and
    /// complementarity at the returned point.
    pub kkt_residual: f64,
}

/// Weighted least squares in `(alpha, delta, beta)` over the SVI domain.
pub fn inner_fit(y: &[f64], vbar: &[f64], w: &[f64], bounds: &InnerBounds) -> Result<InnerFit> {
    if y.len() != vbar.len() || y.len() != w.len() {
        return Err(Error::InputDomain("inner_fit: length mismatch".into()));
    }
    if y.len() < 3 {
        return Err(Error::InsufficientStrikes {
            needed: 3,
            got: y.len(),
        });
    }
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(ymax - ymin > 1e-14 * (1.0 + ymax.abs())) {
        return Err(Error::RankDeficient("all abscissas coincide".into()));
    }
    if bounds.beta_min > 4.0 * bounds.s || bounds.alpha_min > bounds.vbar_max {
        return Err(Error::NoFeasibleFit(format!("empty inner domain for s = {}", bounds.s)));
    }

    // Normal equations: objective = p'Hp - 2 g'p + const.
    let mut h = [[0.0; 3]; 3];
    let mut g = [0.0; 3];
    for ((&yi, &vi), &wi) in y.iter().zip(vbar).zip(w) {
        let row = [1.0, yi, (yi * yi + 1.0).sqrt()];
        for r in 0..3 {
            for k in 0..3 {
                h[r][k] += wi * row[r] * row[k];
            }
            g[r] += wi * row[r] * vi;
        }
    }
    let objective = |p: &[f64; 3]| -> f64 {
        y.iter()
            .zip(vbar)
            .zip(w)
            .map(|((&yi, &vi), &wi)| {
                let r = p[0] + p[1] * yi + p[2] * (yi * yi + 1.0).sqrt() - vi;
                wi * r * r
            })
            .sum()
    };
    let cons = bounds.constraints();
    let scale = 1.0 + bounds.vbar_max.abs() + 4.0 * bounds.s;
    let feas_tol = 1e-12 * scale;

    // Equality-constrained minimizer for an active set; KKT system
    // [2H -A'; A 0] (p, lambda) = (2g, h).
    let solve = |set: &[usize]| -> Option<([f64; 3], Vec<f64>)> {
        let n = 3 + set.len();
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for r in 0..3 {
            for k in 0..3 {
                m[(r, k)] = 2.0 * h[r][k];
            }
            rhs[r] = 2.0 * g[r];
        }
        for (j, &ci) in set.iter().enumerate() {
            for k in 0..3 {
                m[(3 + j, k)] = cons[ci].0[k];
                m[(k, 3 + j)] = -cons[ci].0[k];
            }
            rhs[3 + j] = cons[ci].1;
        }
        let sol = m.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(([sol[0], sol[1], sol[2]], sol.iter().skip(3).cloned().collect()))
    };
    let feasible = |p: &[f64; 3]| {
        cons.iter()
            .all(|(a, b)| a[0] * p[0] + a[1] * p[1] + a[2] * p[2] - b >= -feas_tol)
    };

    let mut sets: Vec<Vec<usize>> = vec![vec![]];
    for i in 0..8 {
        sets.push(vec![i]);
        for j in i + 1..8 {
            sets.push(vec![i, j]);
            for k in j + 1..8 {
                sets.push(vec![i, j, k]);
            }
        }
    }
    let mut best: Option<(f64, [f64; 3], Vec<usize>, bool)> = None;
    for set in sets {
        let Some((p, lambda)) = solve(&set) else { continue };
        if !feasible(&p) {
            continue;
        }
        let dual_ok = lambda.iter().all(|&l| l >= -1e-12 * (1.0 + scale));
        let f = objective(&p);
        let better = match &best {
            None => true,
            Some((bf, _, _, bdual)) => (dual_ok && !bdual) || ((dual_ok == *bdual) && f < *bf),
        };
        if better {
            best = Some((f, p, set, dual_ok));
        }
        // An unconstrained feasible minimizer is the global optimum.
        if best.as_ref().is_some_and(|b| b.2.is_empty()) {
            break;
        }
    }
    let (_, mut p, set, _) = best.ok_or_else(|| Error::NoFeasibleFit("no feasible inner solution".into()))?;
    // Active simple bounds hold exactly.
    for &i in &set {
        match i {
            0 => p[2] = bounds.beta_min,
            1 => p[2] = 4.0 * bounds.s,
            6 => p[0] = bounds.alpha_min,
            7 => p[0] = bounds.vbar_max,
            _ => {}
        }
    }
    let f = objective(&p);
    let kkt_residual = kkt_residual(&h, &g, &cons, &p, feas_tol);
    Ok(InnerFit {
        params: ReducedParams {
            alpha: p[0],
            delta: p[1],
            beta: p[2],
        },
        objective: f,
        active: set,
        kkt_residual,
    })
}

/// Best multipliers over the nearly active constraints, by enumeration of
/// nonnegative least-squares supports.
fn kkt_residual(h: &[[f64; 3]; 3], g: &[f64; 3], cons: &[([f64; 3], f64); 8], p: &[f64; 3], tol: f64) -> f64 {
    let grad: Vec<f64> = (0..3)
        .map(|r| 2.0 * (h[r][0] * p[0] + h[r][1] * p[1] + h[r][2] * p[2] - g[r]))
        .collect();
    let slack: Vec<f64> = cons
        .iter()
        .map(|(a, b)| a[0] * p[0] + a[1] * p[1] + a[2] * p[2] - b)
        .collect();
    let primal = slack.iter().map(|s| (-s).max(0.0)).fold(0.0, f64::max);
    let near: Vec<usize> = (0..8).filter(|&i| slack[i].abs() <= 1e3 * tol).collect();
    let mut best = grad.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for mask in 1u32..(1 << near.len()) {
        let idx: Vec<usize> = near
            .iter()
            .enumerate()
            .filter(|(j, _)| mask & (1 << j) != 0)
            .map(|(_, &i)| i)
            .collect();
        if idx.len() > 3 {
            continue;
        }
        let a = DMatrix::from_fn(3, idx.len(), |r, k| cons[idx[k]].0[r]);
        let b = DVector::from_column_slice(&grad);
        let Ok(lam) = a.clone().svd(true, true).solve(&b, 1e-14) else {
            continue;
        };
        if lam.iter().any(|&l| l < 0.0) {
            continue;
        }
        let stat = (&a * &lam - &b).amax();
        let comp = idx
            .iter()
            .zip(lam.iter())
            .map(|(&i, l)| (l * slack[i]).abs())
            .fold(0.0, f64::max);
        best = best.min(stat.max(comp));
    }
    best.max(primal)
}

/// Multistart grid and local search settings for the `(m, s)` problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SviSearch {
    pub grid: usize,
    /// Start range for `m`; defaults to the span of the data.
    pub m_range: Option<(f64, f64)>,
    pub s_range: (f64, f64),
    pub nm: NmConfig,
}

impl Default for SviSearch {
    fn default() -> Self {
        Self {
            grid: 8,
            m_range: None,
            s_range: (0.01, 2.0),
            nm: NmConfig {
                max_iter: 500,
                ftol: 1e-10,
                xtol: 1e-10,
                ..NmConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceFit {
    pub params: SviParams,
    pub fit: FitResult,
    /// Fewer strikes than parameters.
    pub underdetermined: bool,
}

/// Fits one slice to market vols at log-moneyness `x`.
pub fn outer_fit(x: &[f64], vols: &[f64], t: f64, weights: &[f64], search: &SviSearch) -> Result<SliceFit> {
    if x.len() != vols.len() || x.len() != weights.len() {
        return Err(Error::InputDomain("outer_fit: length mismatch".into()));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientStrikes {
            needed: 3,
            got: x.len(),
        });
    }
    if !(t > 0.0) {
        return Err(Error::InputDomain(format!("expiry {t} must be > 0")));
    }
    let (s_lo, s_hi) = search.s_range;
    if !(s_lo > 0.0 && s_hi >= s_lo) {
        return Err(Error::InputDomain("s search range must be strictly positive".into()));
    }
    let vmkt: Vec<f64> = vols.iter().map(|v| v * v).collect();
    let vbar: Vec<f64> = vmkt.iter().map(|v| v * t).collect();
    let xmin = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (m_lo, m_hi) = search.m_range.unwrap_or((xmin, xmax));
    let width = (m_hi - m_lo).max(0.1);
    let bounds = [(m_lo - 0.5 * width, m_hi + 0.5 * width), (0.5 * s_lo, 2.0 * s_hi)];

    let solve_inner = |m: f64, s: f64| -> Option<SviParams> {
        let y: Vec<f64> = x.iter().map(|xi| (xi - m) / s).collect();
        let fit = inner_fit(&y, &vbar, weights, &InnerBounds::defaults(s, &vbar)).ok()?;
        Some(fit.params.to_svi(m, s, t))
    };
    let outer = |ms: &[f64]| -> f64 {
        match solve_inner(ms[0], ms[1]) {
            Some(p) => x
                .iter()
                .zip(&vmkt)
                .zip(weights)
                .map(|((&xi, &vi), &wi)| {
                    let r = svi_variance(&p, xi) - vi;
                    wi * r * r
                })
                .sum(),
            None => f64::INFINITY,
        }
    };

    let n = search.grid.max(1);
    let at = |lo: f64, hi: f64, i: usize| {
        if n == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    let starts: Vec<[f64; 2]> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| [at(m_lo, m_hi, i), at(s_lo, s_hi, j)])
        .collect();
    let runs: Vec<FitResult> = starts
        .par_iter()
        .map(|st| nelder_mead(outer, st, &bounds, &search.nm))
        .collect();
    let mut evaluations = 0;
    let mut iterations = 0;
    let mut best: Option<FitResult> = None;
    for r in runs {
        evaluations += r.evaluations;
        iterations += r.iterations;
        if best.as_ref().is_none_or(|b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    let mut best = best.expect("at least one start");
    if !best.objective.is_finite() {
        return Err(Error::NoFeasibleFit("every (m, s) candidate was infeasible".into()));
    }
    let params = solve_inner(best.params[0], best.params[1])
        .ok_or_else(|| Error::NoFeasibleFit("inner problem failed at the optimum".into()))?;
    best.evaluations = evaluations;
    best.iterations = iterations;
    Ok(SliceFit {
        params,
        fit: best,
        underdetermined: x.len() < 5,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SviSlice {
    pub t: f64,
    #[serde(flatten)]
    pub params: SviParams,
}

/// Slices sorted by expiry; total variance is linear in time between them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SviSurface {
    pub slices: Vec<SviSlice>,
}

impl SviSurface {
    pub fn total_variance(&self, t: f64, x: f64) -> Result<f64> {
        let fs: Vec<(f64, _)> = self
            .slices
            .iter()
            .map(|s| (s.t, move |x: f64| s.t * svi_variance(&s.params, x)))
            .collect();
        total_variance_interp(&fs, t, x)
    }

    pub fn vol(&self, t: f64, x: f64) -> Result<f64> {
        Ok((self.total_variance(t, x)? / t).max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SviFitConfig {
    #[serde(default)]
    pub weights: WeightScheme,
    #[serde(default)]
    pub search: SviSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub t: f64,
    pub rmse_vol: f64,
    pub objective: f64,
    pub underdetermined: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SviFit {
    pub surface: SviSurface,
    pub slices: Vec<SliceReport>,
    pub calendar_violations: Vec<(f64, f64)>,
}

/// Sequential fit, one expiry at a time. Failing slices are reported and
/// skipped; the fit fails only when none succeeds.
pub fn fit_surface(surface: &QuoteSurface, config: &SviFitConfig) -> Result<SviFit> {
    if surface.expiries.is_empty() {
        return Err(Error::EmptyInput);
    }
    let weights = build_weights(surface, &config.weights)?;
    let mut slices = Vec::new();
    let mut reports = Vec::new();
    for (s, w) in surface.expiries.iter().zip(&weights) {
        // Weights are rescaled to unit mean; only relative sizes matter.
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let w: Vec<f64> = w.iter().map(|v| v / mean).collect();
        let x = s.log_moneyness();
        let vols = s.mid_vols();
        match outer_fit(&x, &vols, s.expiry, &w, &config.search) {
            Ok(f) => {
                let se: f64 = x
                    .iter()
                    .zip(&vols)
                    .map(|(&xi, &v)| (svi_variance(&f.params, xi).max(0.0).sqrt() - v).powi(2))
                    .sum();
                reports.push(SliceReport {
                    t: s.expiry,
                    rmse_vol: (se / x.len() as f64).sqrt(),
                    objective: f.fit.objective,
                    underdetermined: f.underdetermined,
                    error: None,
                });
                slices.push(SviSlice {
                    t: s.expiry,
                    params: f.params,
                });
            }
            Err(e) => reports.push(SliceReport {
                t: s.expiry,
                rmse_vol: f64::NAN,
                objective: f64::NAN,
                underdetermined: x.len() < 5,
                error: Some(e.to_string()),
            }),
        }
    }
    if slices.is_empty() {
        return Err(Error::NoFeasibleFit("every slice failed".into()));
    }
    let surface = SviSurface { slices };
    let grid: Vec<f64> = (0..=80).map(|i| -4.0 + 0.1 * i as f64).collect();
    let calendar_violations = svi_calendar_check(&surface, &grid);
    Ok(SviFit {
        surface,
        slices: reports,
        calendar_violations,
    })
}

/// `(x, T_j)` where total variance decreases from slice `j` to `j + 1`.
pub fn svi_calendar_check(surface: &SviSurface, xs: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for pair in surface.slices.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        for &x in xs {
            if b.t * svi_variance(&b.params, x) < a.t * svi_variance(&a.params, x) - 1e-12 {
                out.push((x, a.t));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const P: SviParams = SviParams {
        a: 0.04,
        b: 0.4,
        rho: -0.4,
        m: 0.0,
        s: 0.1,
    };

    #[test]
    fn variance_arithmetic() {
        assert!((svi_variance(&P, 0.0) - 0.08).abs() < 1e-15);
        let flat = SviParams { b: 0.0, ..P };
        assert_eq!(svi_variance(&flat, 1.7), 0.04);
        let p = SviParams { m: 0.3, ..P };
        assert!((svi_variance(&p, 0.3) - (p.a + p.b * p.s)).abs() < 1e-15);
    }

    #[test]
    fn asymptotic_slopes() {
        for x in [50.0f64, -50.0] {
            let want = P.b * (1.0 + P.rho * x.signum());
            let h = 1e-4;
            let slope = (svi_variance(&P, x + h) - svi_variance(&P, x - h)) / (2.0 * h) * x.signum();
            // The derivative approaches its limit as b s^2 / (2 x^2).
            let gap = P.b * P.s * P.s / (2.0 * x * x);
            assert!((slope - want).abs() <= gap * 1.01 + 1e-9);
            assert!((slope - want).abs() / want < 1e-5);
        }
    }

    #[test]
    fn inner_recovers_interior_truth() {
        let y: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
        let truth = ReducedParams {
            alpha: 0.02,
            delta: -0.01,
            beta: 0.03,
        };
        let v: Vec<f64> = y.iter().map(|&yi| truth.total_variance(yi)).collect();
        let r = inner_fit(&y, &v, &[1.0; 9], &InnerBounds::defaults(0.2, &v)).unwrap();
        assert!((r.params.alpha - truth.alpha).abs() < 1e-10);
        assert!((r.params.delta - truth.delta).abs() < 1e-10);
        assert!((r.params.beta - truth.beta).abs() < 1e-10);
        assert!(r.kkt_residual <= 1e-10);
        assert!(r.active.is_empty());
    }

    #[test]
    fn inner_clamps_beta_at_lower_bound() {
        // Concave data pushes the unconstrained beta negative.
        let y: Vec<f64> = (0..9).map(|i| -2.0 + 0.5 * i as f64).collect();
        let v: Vec<f64> = y.iter().map(|&yi| 0.1 - 0.01 * (yi * yi + 1.0).sqrt()).collect();
        let r = inner_fit(&y, &v, &[1.0; 9], &InnerBounds::defaults(0.2, &v)).unwrap();
        assert_eq!(r.params.beta, BETA_MIN);
        assert!(r.kkt_residual <= 1e-10);
    }

    #[test]
    fn inner_rejects_degenerate_design() {
        let e = inner_fit(&[0.5; 4], &[0.1; 4], &[1.0; 4], &InnerBounds::defaults(0.2, &[0.1; 4]));
        assert!(matches!(e, Err(Error::RankDeficient(_))));
    }

    #[test]
    fn outer_recovers_noise_free_slice() {
        let truth = SviParams {
            a: 0.03,
            b: 0.3,
            rho: -0.5,
            m: 0.05,
            s: 0.2,
        };
        let t = 0.75;
        let x: Vec<f64> = (0..11).map(|i| -0.6 + 0.12 * i as f64).collect();
        let vols: Vec<f64> = x.iter().map(|&xi| svi_variance(&truth, xi).sqrt()).collect();
        let f = outer_fit(&x, &vols, t, &[1.0; 11], &SviSearch::default()).unwrap();
        assert!(f.fit.objective < 1e-12, "{}", f.fit.objective);
        assert!((f.params.m - truth.m).abs() < 1e-4);
        assert!((f.params.s - truth.s).abs() < 1e-4);
        assert!(!f.underdetermined);
    }

    #[test]
    fn three_strikes_flags_underdetermination() {
        let x = [-0.1, 0.0, 0.1];
        let vols = [0.22, 0.2, 0.21];
        let f = outer_fit(
            &x,
            &vols,
            1.0,
            &[1.0; 3],
            &SviSearch {
                grid: 3,
                ..SviSearch::default()
            },
        )
        .unwrap();
        assert!(f.underdetermined);
    }

    #[test]
    fn calendar_check_cases() {
        let s = SviSurface {
            slices: vec![SviSlice { t: 0.5, params: P }, SviSlice { t: 1.0, params: P }],
        };
        let xs: Vec<f64> = (-10..=10).map(|i| 0.1 * i as f64).collect();
        assert!(svi_calendar_check(&s, &xs).is_empty());
        let half = SviParams {
            a: P.a / 2.0,
            b: P.b / 2.0,
            ..P
        };
        let s = SviSurface {
            slices: vec![
                SviSlice { t: 0.5, params: P },
                SviSlice {
                    t: 0.5 + 1e-6,
                    params: half,
                },
            ],
        };
        assert_eq!(svi_calendar_check(&s, &xs).len(), xs.len());
    }

    #[test]
    fn json_shape() {
        let s = SviSurface {
            slices: vec![SviSlice { t: 0.5, params: P }],
        };
        let v: serde_json::Value = serde_json::to_value(&s).unwrap();
        assert_eq!(v["slices"][0]["t"], 0.5);
        assert_eq!(v["slices"][0]["rho"], -0.4);
        let back: SviSurface = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn convex_in_x(a in -0.05f64..0.1, b in 0.0f64..2.0, rho in -0.99f64..0.99, m in -0.5f64..0.5, s in 0.01f64..1.0) {
            let p = SviParams { a, b, rho, m, s };
            let h = 1e-3;
            for i in 0..=80 {
                let x = -4.0 + 0.1 * i as f64;
                let d2 = svi_variance(&p, x + h) - 2.0 * svi_variance(&p, x) + svi_variance(&p, x - h);
                prop_assert!(d2 >= -1e-10);
            }
        }

        #[test]
        fn outer_objective_ignores_strike_order(seed in 0u64..1000) {
            let truth = SviParams { a: 0.02, b: 0.2, rho: -0.3, m: 0.0, s: 0.15 };
            let mut x: Vec<f64> = (0..7).map(|i| -0.3 + 0.1 * i as f64).collect();
            let vols: Vec<f64> = x.iter().enumerate().map(|(i, &xi)| svi_variance(&truth, xi).sqrt() + 1e-3 * ((i * 7 + seed as usize) % 5) as f64).collect();
            let search = SviSearch { grid: 3, ..SviSearch::default() };
            let a = outer_fit(&x, &vols, 1.0, &[1.0; 7], &search).unwrap();
            let mut pairs: Vec<(f64, f64)> = x.iter().cloned().zip(vols.iter().cloned()).collect();
            pairs.reverse();
            x = pairs.iter().map(|p| p.0).collect();
            let v2: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let b = outer_fit(&x, &v2, 1.0, &[1.0; 7], &search).unwrap();
            prop_assert!((a.fit.objective - b.fit.objective).abs() <= 1e-9 * (1.0 + a.fit.objective));
        }
    }
}
