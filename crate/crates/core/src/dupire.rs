//! Andreasen–Huge: one fully implicit step of the forward equation
//! `dc/dt = 1/2 nu(k)^2 d2c/dk2` per expiry interval.
//!
//! Everything is in forward-normalized units: strike `k = K / F(t)`, price
//! `c = C / (D(t) F(t))`, so `S(0) = 1` and `c(0, k) = (1 - k)^+`.

use serde::{Deserialize, Serialize};

use crate::bsm::{bsm_price, implied_vol, BsmInputs, Contract, OptionKind};
use crate::calibration::{hybrid_optimize, EngineConfig, FitResult};
use crate::error::{Error, Result};
use crate::market_data::QuoteSurface;

pub const VOL_MIN: f64 = 1e-4;
pub const VOL_MAX: f64 = 5.0;
const ARB_TOL: f64 = 1e-10;
/// Relative distance below which two strikes map to the same grid node.
pub const NODE_TOL: f64 = 1e-8;

/// Solves a tridiagonal system. `lower[i]` multiplies `x[i]` in row `i+1`,
/// `upper[i]` multiplies `x[i+1]` in row `i`.
pub fn thomas_solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if rhs.len() != n || lower.len() + 1 != n.max(1) || upper.len() + 1 != n.max(1) {
        return Err(Error::InputDomain("thomas_solve: band lengths do not match".into()));
    }
    if n == 0 {
        return Ok(vec![]);
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 {
        return Err(Error::NumericalBreakdown("zero pivot in row 0".into()));
    }
    c[0] = if n > 1 { upper[0] / pivot } else { 0.0 };
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i - 1] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::NumericalBreakdown(format!("zero pivot in row {i}")));
        }
        if i + 1 < n {
            c[i] = upper[i] / pivot;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrikeGrid {
    pub nodes: Vec<f64>,
    pub spot: f64,
}

impl StrikeGrid {
    pub fn new(nodes: Vec<f64>, spot: f64) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::InsufficientStrikes {
                needed: 3,
                got: nodes.len(),
            });
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|k| !k.is_finite()) {
            return Err(Error::InputDomain("grid nodes must be strictly increasing".into()));
        }
        if !(spot > nodes[0] && spot < nodes[nodes.len() - 1]) {
            return Err(Error::InputDomain(format!("spot {spot} not inside the grid")));
        }
        Ok(Self { nodes, spot })
    }

    /// `n` log-uniform nodes on `[lo, hi]`, with every `required` point
    /// (and the spot) made an exact node by moving the nearest free node or
    /// inserting one. Points within [`NODE_TOL`] of each other share a node;
    /// strikes printed to a few decimals would otherwise produce
    /// near-zero spacings.
    pub fn log_uniform(lo: f64, hi: f64, n: usize, spot: f64, required: &[f64]) -> Result<Self> {
        if !(lo > 0.0 && hi > lo) || n < 3 {
            return Err(Error::InputDomain(format!("bad grid spec [{lo}, {hi}] x {n}")));
        }
        for &r in required.iter().chain([&spot]) {
            if !(r > lo && r < hi) {
                return Err(Error::StrikeOutsideGrid {
                    strike: r,
                    min: lo,
                    max: hi,
                });
            }
        }
        let (a, b) = (lo.ln(), hi.ln());
        let h = (b - a) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|j| (a + h * j as f64).exp()).collect();
        nodes[0] = lo;
        nodes[n - 1] = hi;
        let mut pinned = vec![false; n];
        let mut extra = Vec::new();
        let mut req: Vec<f64> = required.iter().copied().chain([spot]).collect();
        req.sort_by(f64::total_cmp);
        req.dedup_by(|x, y| (*x - *y).abs() <= NODE_TOL * y.abs());
        for r in req {
            let j = ((r.ln() - a) / h).round() as usize;
            if j >= 1 && j < n - 1 && !pinned[j] {
                nodes[j] = r;
                pinned[j] = true;
            } else {
                extra.push(r);
            }
        }
        nodes.extend(extra);
        nodes.sort_by(f64::total_cmp);
        nodes.dedup_by(|x, y| (*x - *y).abs() <= NODE_TOL * y.abs());
        Self::new(nodes, spot)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn payoff(&self) -> Vec<f64> {
        self.nodes.iter().map(|k| (self.spot - k).max(0.0)).collect()
    }

    /// `delta_kk` of the payoff at every node, zero at the ends. Only the
    /// nodes whose stencil straddles the spot are nonzero.
    pub fn payoff_curvature(&self) -> Vec<f64> {
        let k = &self.nodes;
        let g = self.payoff();
        let mut out = vec![0.0; k.len()];
        for j in 1..k.len().saturating_sub(1) {
            if k[j - 1] < self.spot && k[j + 1] > self.spot {
                out[j] = self.second_difference(&g, j);
            }
        }
        out
    }

    /// Index of the node equal to `k` up to [`NODE_TOL`].
    pub fn find(&self, k: f64) -> Option<usize> {
        let i = self.nodes.partition_point(|&n| n < k * (1.0 - NODE_TOL));
        (i < self.nodes.len() && (self.nodes[i] - k).abs() <= NODE_TOL * k.abs()).then_some(i)
    }

    /// Linear interpolation between adjacent nodes.
    pub fn interpolate(&self, values: &[f64], k: f64) -> Result<f64> {
        let (lo, hi) = (self.nodes[0], self.nodes[self.nodes.len() - 1]);
        if !(k >= lo && k <= hi) {
            return Err(Error::StrikeOutsideGrid {
                strike: k,
                min: lo,
                max: hi,
            });
        }
        let i = self.nodes.partition_point(|&n| n <= k).clamp(1, self.nodes.len() - 1);
        let (k0, k1) = (self.nodes[i - 1], self.nodes[i]);
        let w = (k - k0) / (k1 - k0);
        Ok((1.0 - w) * values[i - 1] + w * values[i])
    }

    /// Central second difference at interior node `j`.
    pub fn second_difference(&self, f: &[f64], j: usize) -> f64 {
        let k = &self.nodes;
        let (hl, hr) = (k[j] - k[j - 1], k[j + 1] - k[j]);
        2.0 * (f[j - 1] / (hl * (hl + hr)) - f[j] / (hl * hr) + f[j + 1] / (hr * (hl + hr)))
    }
}

/// `nu(k) = levels[p]` on `[breakpoints[p], breakpoints[p+1])`, flat
/// outside the breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseVol {
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
}

impl PiecewiseVol {
    pub fn new(breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != levels.len() {
            return Err(Error::InputDomain("need one level per breakpoint".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InputDomain("breakpoints must increase".into()));
        }
        if levels.iter().any(|&v| !(0.0..=VOL_MAX).contains(&v)) {
            return Err(Error::InputDomain(format!("levels must lie in [0, {VOL_MAX}]")));
        }
        Ok(Self { breakpoints, levels })
    }

    pub fn flat(level: f64) -> Self {
        Self {
            breakpoints: vec![1.0],
            levels: vec![level],
        }
    }

    pub fn region(&self, k: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= k).saturating_sub(1)
    }

    pub fn at(&self, k: f64) -> f64 {
        self.levels[self.region(k)]
    }
}

struct Operator {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

/// Assembles `1 - 1/2 dt nu^2 delta_kk` with Dirichlet rows at both ends.
fn assemble(grid: &StrikeGrid, nu: &[f64], dt: f64) -> Operator {
    let k = &grid.nodes;
    let n = k.len();
    let mut lower = vec![0.0; n - 1];
    let mut diag = vec![1.0; n];
    let mut upper = vec![0.0; n - 1];
    for j in 1..n - 1 {
        let (hl, hr) = (k[j] - k[j - 1], k[j + 1] - k[j]);
        let a = 0.5 * dt * nu[j] * nu[j];
        let l = a * 2.0 / (hl * (hl + hr));
        let u = a * 2.0 / (hr * (hl + hr));
        lower[j - 1] = -l;
        upper[j] = -u;
        diag[j] = 1.0 + l + u;
        debug_assert!(diag[j] - l - u > 0.0);
    }
    Operator { lower, diag, upper }
}

fn check_step(v: &[f64], dt: f64, grid: &StrikeGrid) -> Result<()> {
    if v.len() != grid.len() {
        return Err(Error::InputDomain("price vector does not match the grid".into()));
    }
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InputDomain(format!("dt = {dt} must be >= 0")));
    }
    Ok(())
}

/// One implicit step of length `dt` on call prices.
pub fn ah_step(c_prev: &[f64], nu: &PiecewiseVol, dt: f64, grid: &StrikeGrid) -> Result<Vec<f64>> {
    check_step(c_prev, dt, grid)?;
    let g = grid.payoff();
    let u_prev: Vec<f64> = c_prev.iter().zip(&g).map(|(c, g)| c - g).collect();
    let u = ah_step_time_value(&u_prev, nu, dt, grid)?;
    Ok(g.iter().zip(&u).map(|(g, u)| g + u).collect())
}

/// The same step on time values `c - (spot - k)^+`. Deep in the money the
/// time value is tiny, so its second differences carry no payoff rounding.
pub fn ah_step_time_value(u_prev: &[f64], nu: &PiecewiseVol, dt: f64, grid: &StrikeGrid) -> Result<Vec<f64>> {
    check_step(u_prev, dt, grid)?;
    let levels: Vec<f64> = grid.nodes.iter().map(|&k| nu.at(k)).collect();
    step_with(u_prev, &levels, dt, grid)
}

// (1 - A) u = u_prev + A g, zero at both ends.
fn step_with(u_prev: &[f64], node_vols: &[f64], dt: f64, grid: &StrikeGrid) -> Result<Vec<f64>> {
    let op = assemble(grid, node_vols, dt);
    let curv = grid.payoff_curvature();
    let n = grid.len();
    let mut rhs = u_prev.to_vec();
    for j in 1..n - 1 {
        if curv[j] != 0.0 {
            rhs[j] += 0.5 * dt * node_vols[j] * node_vols[j] * curv[j];
        }
    }
    rhs[0] = 0.0;
    rhs[n - 1] = 0.0;
    thomas_solve(&op.lower, &op.diag, &op.upper, &rhs)
}

/// Monotone time map on each interval, `T(t_i) = t_i`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeChange {
    /// `T(t) = t`.
    #[default]
    Plain,
    /// `T(t) = t_i + dt ((t - t_i) / dt)^exponent`.
    Power { exponent: f64 },
}

impl TimeChange {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TimeChange::Plain => Ok(()),
            TimeChange::Power { exponent } if exponent > 0.0 && exponent.is_finite() => Ok(()),
            TimeChange::Power { exponent } => Err(Error::InputDomain(format!(
                "time-change exponent {exponent} must be > 0"
            ))),
        }
    }

    /// Elapsed model time `T(t) - t_i` inside `[t_i, t_{i+1}]`.
    pub fn elapsed(&self, t: f64, t0: f64, t1: f64) -> f64 {
        match *self {
            TimeChange::Plain => t - t0,
            TimeChange::Power { exponent } => {
                let dt = t1 - t0;
                dt * ((t - t0) / dt).clamp(0.0, 1.0).powf(exponent)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AhSurface {
    pub grid: StrikeGrid,
    /// `0 = t_0 < t_1 < ... < t_N`.
    pub knots: Vec<f64>,
    /// Forwards and discount factors at the knots (`t_0` included).
    pub forwards: Vec<f64>,
    pub discounts: Vec<f64>,
    /// Normalized time values `c - (1 - k)^+` per knot.
    pub time_values: Vec<Vec<f64>>,
    /// `vols[i]` drives `(t_i, t_{i+1}]`.
    pub vols: Vec<PiecewiseVol>,
    #[serde(default)]
    pub variant: TimeChange,
}

impl AhSurface {
    pub fn with_variant(mut self, variant: TimeChange) -> Result<Self> {
        variant.validate()?;
        self.variant = variant;
        Ok(self)
    }

    /// Normalized price vector on the grid at time `t`.
    pub fn price_vector(&self, t: f64, variant: TimeChange) -> Result<Vec<f64>> {
        let u = self.time_value_vector(t, variant)?;
        Ok(self.grid.payoff().iter().zip(&u).map(|(g, u)| g + u).collect())
    }

    /// `delta_kk c` at the interior nodes (`out[j - 1]` for node `j`).
    pub fn second_differences(&self, t: f64, variant: TimeChange) -> Result<Vec<f64>> {
        let u = self.time_value_vector(t, variant)?;
        let curv = self.grid.payoff_curvature();
        Ok((1..u.len() - 1)
            .map(|j| self.grid.second_difference(&u, j) + curv[j])
            .collect())
    }

    pub fn time_value_vector(&self, t: f64, variant: TimeChange) -> Result<Vec<f64>> {
        let last = *self.knots.last().expect("knots");
        if !(t >= 0.0 && t <= last) {
            return Err(Error::OutOfRange {
                what: "t",
                value: t,
                min: 0.0,
                max: last,
            });
        }
        let i = self.knots.partition_point(|&k| k < t);
        if self.knots[i] == t {
            return Ok(self.time_values[i].clone());
        }
        let (t0, t1) = (self.knots[i - 1], self.knots[i]);
        ah_step_time_value(
            &self.time_values[i - 1],
            &self.vols[i - 1],
            variant.elapsed(t, t0, t1),
            &self.grid,
        )
    }

    /// Normalized call price at normalized strike `k`.
    pub fn price_at(&self, t: f64, k: f64) -> Result<f64> {
        self.price_at_variant(t, k, self.variant)
    }

    pub fn price_at_variant(&self, t: f64, k: f64, variant: TimeChange) -> Result<f64> {
        let v = self.price_vector(t, variant)?;
        self.grid.interpolate(&v, k)
    }

    fn interp_curve(&self, t: f64, values: &[f64]) -> f64 {
        let i = self.knots.partition_point(|&k| k < t).clamp(1, self.knots.len() - 1);
        let (t0, t1) = (self.knots[i - 1], self.knots[i]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        // log-linear, like the quote surface
        ((1.0 - w) * values[i - 1].ln() + w * values[i].ln()).exp()
    }

    pub fn forward_at(&self, t: f64) -> f64 {
        self.interp_curve(t, &self.forwards)
    }

    pub fn discount_at(&self, t: f64) -> f64 {
        self.interp_curve(t, &self.discounts)
    }

    /// Discounted call price at absolute strike `strike`.
    pub fn call_price(&self, t: f64, strike: f64) -> Result<f64> {
        let f = self.forward_at(t);
        Ok(self.discount_at(t) * f * self.price_at(t, strike / f)?)
    }

    /// Implied vol at log-moneyness `x = ln(K/F)`.
    pub fn vol(&self, t: f64, x: f64) -> Result<f64> {
        let k = x.exp();
        let c = self.price_at(t, k)?;
        implied_vol(c, &Contract::new(1.0, k, t, 1.0), OptionKind::Call)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AhConfig {
    pub nodes: usize,
    /// Grid half-width in standard deviations at the last expiry.
    pub width_sd: f64,
    /// Reference vol for the grid width; defaults to the largest mid vol.
    pub sigma_ref: Option<f64>,
    pub engine: EngineConfig,
    /// Gauss–Newton polish after the global/local search.
    pub polish: bool,
    pub variant: TimeChange,
}

impl Default for AhConfig {
    fn default() -> Self {
        Self {
            nodes: 400,
            width_sd: 6.0,
            sigma_ref: None,
            engine: EngineConfig {
                max_gen: 15,
                local_max_iter: 400,
                ..EngineConfig::default()
            },
            polish: true,
            variant: TimeChange::Plain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub t: f64,
    pub rmse: f64,
    pub fit: FitResult,
}

/// Market quotes of one expiry in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedQuotes {
    pub strikes: Vec<f64>,
    pub prices: Vec<f64>,
}

/// Calibrates the levels on `(t_prev, t]` so that one step from the time
/// values `u_prev` matches the quoted prices; the quote strikes are the
/// breakpoints.
pub fn bootstrap_expiry(
    u_prev: &[f64],
    quotes: &NormalizedQuotes,
    dt: f64,
    grid: &StrikeGrid,
    initial: &[f64],
    engine: &EngineConfig,
    polish: bool,
) -> Result<(PiecewiseVol, FitResult)> {
    let n = quotes.strikes.len();
    if n == 0 || quotes.prices.len() != n || initial.len() != n {
        return Err(Error::InputDomain("bootstrap: quotes/initial size mismatch".into()));
    }
    check_step(u_prev, dt, grid)?;
    let idx: Vec<usize> = quotes
        .strikes
        .iter()
        .map(|&k| {
            grid.find(k).ok_or(Error::StrikeOutsideGrid {
                strike: k,
                min: grid.nodes[0],
                max: grid.nodes[grid.len() - 1],
            })
        })
        .collect::<Result<_>>()?;
    for &i in &idx {
        if i == 0 || i + 1 == grid.len() {
            return Err(Error::StrikeOutsideGrid {
                strike: grid.nodes[i],
                min: grid.nodes[0],
                max: grid.nodes[grid.len() - 1],
            });
        }
    }
    let g = grid.payoff();
    let target: Vec<f64> = idx.iter().zip(&quotes.prices).map(|(&i, p)| p - g[i]).collect();
    let shape = PiecewiseVol::new(quotes.strikes.clone(), vec![1.0; n])?;
    let region: Vec<usize> = grid.nodes.iter().map(|&k| shape.region(k)).collect();
    let node_vols = |levels: &[f64]| -> Vec<f64> { region.iter().map(|&p| levels[p]).collect() };
    let residuals = |levels: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let u = step_with(u_prev, &node_vols(levels), dt, grid)?;
        let r = idx.iter().zip(&target).map(|(&i, p)| u[i] - p).collect();
        Ok((u, r))
    };
    let objective = |levels: &[f64]| -> f64 {
        match residuals(levels) {
            Ok((_, r)) => r.iter().map(|v| v * v).sum(),
            Err(_) => f64::INFINITY,
        }
    };

    let bounds = vec![(VOL_MIN, VOL_MAX); n];
    let mut de = engine.de(bounds.clone());
    de.initial = Some(initial.to_vec());
    de.target = Some(1e-26);
    let mut fit = hybrid_optimize(objective, &de, &engine.nm())?;
    if polish {
        let (levels, obj, iters) = gauss_newton(&fit.params, &residuals, &region, &idx, dt, grid, &bounds)?;
        if obj < fit.objective {
            fit.params = levels;
            fit.objective = obj;
            fit.iterations += iters;
            fit.trace.push(obj);
        }
    }
    let vol = PiecewiseVol::new(quotes.strikes.clone(), fit.params.clone())?;
    fit.converged = fit.objective.is_finite();
    Ok((vol, fit))
}

/// Levenberg–Marquardt on the quote residuals. The Jacobian is exact:
/// `A du/dsigma_p = dt sigma_p 1_p delta_kk c`.
#[allow(clippy::type_complexity)]
fn gauss_newton(
    start: &[f64],
    residuals: &dyn Fn(&[f64]) -> Result<(Vec<f64>, Vec<f64>)>,
    region: &[usize],
    idx: &[usize],
    dt: f64,
    grid: &StrikeGrid,
    bounds: &[(f64, f64)],
) -> Result<(Vec<f64>, f64, usize)> {
    use nalgebra::{DMatrix, DVector};
    let n = start.len();
    let mut x = start.to_vec();
    let curv = grid.payoff_curvature();
    let (mut u, mut r) = residuals(&x)?;
    let mut obj: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-6;
    let mut iters = 0;
    for _ in 0..100 {
        if obj < 1e-28 {
            break;
        }
        iters += 1;
        let node_vols: Vec<f64> = region.iter().map(|&p| x[p]).collect();
        let op = assemble(grid, &node_vols, dt);
        let mut jac = DMatrix::<f64>::zeros(idx.len(), n);
        for p in 0..n {
            let mut rhs = vec![0.0; grid.len()];
            for j in 1..grid.len() - 1 {
                if region[j] == p {
                    rhs[j] = dt * x[p] * (grid.second_difference(&u, j) + curv[j]);
                }
            }
            let d = thomas_solve(&op.lower, &op.diag, &op.upper, &rhs)?;
            for (q, &i) in idx.iter().enumerate() {
                jac[(q, p)] = d[i];
            }
        }
        let rv = DVector::from_vec(r.clone());
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * &rv;
        let mut improved = false;
        for _ in 0..20 {
            let mut m = jtj.clone();
            for d in 0..n {
                m[(d, d)] += lambda * (1.0 + jtj[(d, d)]);
            }
            let Some(step) = m.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x
                .iter()
                .zip(step.iter())
                .zip(bounds)
                .map(|((v, s), &(lo, hi))| (v + s).clamp(lo, hi))
                .collect();
            if let Ok((u2, r2)) = residuals(&trial) {
                let o2: f64 = r2.iter().map(|v| v * v).sum();
                if o2 < obj {
                    x = trial;
                    u = u2;
                    r = r2;
                    obj = o2;
                    lambda = (lambda * 0.1).max(1e-15);
                    improved = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok((x, obj, iters))
}

/// Bootstraps every expiry in order, starting from the call payoff.
pub fn build_surface(surface: &QuoteSurface, config: &AhConfig) -> Result<(AhSurface, Vec<BootstrapReport>)> {
    if surface.expiries.is_empty() {
        return Err(Error::EmptyInput);
    }
    config.variant.validate()?;
    let t_last = surface.expiries.last().map(|s| s.expiry).unwrap();
    let sigma_ref = match config.sigma_ref {
        Some(s) => s,
        None => surface.expiries.iter().flat_map(|s| s.mid_vols()).fold(0.0, f64::max),
    };
    if !(sigma_ref > 0.0) {
        return Err(Error::InputDomain("reference vol must be > 0".into()));
    }
    let half = config.width_sd * sigma_ref * t_last.sqrt();
    let mut quotes = Vec::new();
    for s in &surface.expiries {
        let mut strikes = Vec::new();
        let mut prices = Vec::new();
        for q in &s.quotes {
            let k = q.strike / s.forward;
            let c = bsm_price(&BsmInputs::new(1.0, k, s.expiry, q.mid(), 1.0), OptionKind::Call)?;
            strikes.push(k);
            prices.push(c);
        }
        quotes.push(NormalizedQuotes { strikes, prices });
    }
    let required: Vec<f64> = quotes.iter().flat_map(|q| q.strikes.iter().copied()).collect();
    let grid = StrikeGrid::log_uniform((-half).exp(), half.exp(), config.nodes, 1.0, &required)?;

    let mut knots = vec![0.0];
    let mut forwards = vec![surface.expiries[0].forward];
    let mut discounts = vec![1.0];
    let mut time_values = vec![vec![0.0; grid.len()]];
    let mut vols: Vec<PiecewiseVol> = Vec::new();
    let mut reports = Vec::new();
    for (s, q) in surface.expiries.iter().zip(&quotes) {
        let dt = s.expiry - knots.last().unwrap();
        let initial: Vec<f64> = match vols.last() {
            Some(prev) => q.strikes.iter().map(|&k| prev.at(k).clamp(VOL_MIN, VOL_MAX)).collect(),
            None => {
                let atm = s
                    .quotes
                    .iter()
                    .min_by(|a, b| {
                        (a.strike / s.forward)
                            .ln()
                            .abs()
                            .total_cmp(&(b.strike / s.forward).ln().abs())
                    })
                    .map(|q| q.mid())
                    .unwrap();
                vec![atm.clamp(VOL_MIN, VOL_MAX); q.strikes.len()]
            }
        };
        let u_prev = time_values.last().unwrap();
        let (vol, fit) = bootstrap_expiry(u_prev, q, dt, &grid, &initial, &config.engine, config.polish)?;
        let u = ah_step_time_value(u_prev, &vol, dt, &grid)?;
        reports.push(BootstrapReport {
            t: s.expiry,
            rmse: (fit.objective / q.strikes.len() as f64).sqrt(),
            fit,
        });
        knots.push(s.expiry);
        forwards.push(s.forward);
        discounts.push(s.discount);
        time_values.push(u);
        vols.push(vol);
    }
    Ok((
        AhSurface {
            grid,
            knots,
            forwards,
            discounts,
            time_values,
            vols,
            variant: config.variant,
        },
        reports,
    ))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AhArbReport {
    pub pass: bool,
    /// `(t, k, delta_kk c)` below tolerance.
    pub butterfly: Vec<(f64, f64, f64)>,
    /// `(t_earlier, t_later, k, decrease)`.
    pub calendar: Vec<(f64, f64, f64, f64)>,
}

/// Convexity at every interior node and monotonicity in time at the knots
/// plus four interior times per interval.
pub fn no_arb_check(surf: &AhSurface, variant: TimeChange) -> Result<AhArbReport> {
    let mut times = Vec::new();
    for w in surf.knots.windows(2) {
        times.push(w[0]);
        for j in 1..=4 {
            times.push(w[0] + (w[1] - w[0]) * j as f64 / 5.0);
        }
    }
    times.push(*surf.knots.last().unwrap());
    let mut report = AhArbReport::default();
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for &t in &times {
        let c = surf.time_value_vector(t, variant)?;
        for (j, d) in surf.second_differences(t, variant)?.into_iter().enumerate() {
            if d < -ARB_TOL {
                report.butterfly.push((t, surf.grid.nodes[j + 1], d));
            }
        }
        if let Some((tp, cp)) = &prev {
            for j in 0..c.len() {
                if c[j] < cp[j] - ARB_TOL {
                    report.calendar.push((*tp, t, surf.grid.nodes[j], cp[j] - c[j]));
                }
            }
        }
        prev = Some((t, c));
    }
    report.pass = report.butterfly.is_empty() && report.calendar.is_empty();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn thomas_identity_and_two_by_two() {
        assert_eq!(
            thomas_solve(&[0.0; 2], &[1.0; 3], &[0.0; 2], &[4.0, 5.0, 6.0]).unwrap(),
            vec![4.0, 5.0, 6.0]
        );
        let x = thomas_solve(&[1.0], &[2.0, 2.0], &[1.0], &[3.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn thomas_random_dominant_residual() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let lower: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let upper: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let diag: Vec<f64> = (0..n).map(|_| 2.0 + rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let x = thomas_solve(&lower, &diag, &upper, &b).unwrap();
        let bmax = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            let mut ax = diag[i] * x[i];
            if i > 0 {
                ax += lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                ax += upper[i] * x[i + 1];
            }
            assert!((ax - b[i]).abs() <= 1e-10 * bmax);
        }
    }

    #[test]
    fn thomas_zero_pivot() {
        assert!(matches!(
            thomas_solve(&[1.0], &[0.0, 1.0], &[1.0], &[1.0, 1.0]),
            Err(Error::NumericalBreakdown(_))
        ));
    }

    fn grid() -> StrikeGrid {
        StrikeGrid::log_uniform((-1.2f64).exp(), 1.2f64.exp(), 400, 1.0, &[0.9, 1.1]).unwrap()
    }

    #[test]
    fn grid_pins_required_points() {
        let g = grid();
        assert!(g.find(1.0).is_some() && g.find(0.9).is_some() && g.find(1.1).is_some());
        assert!(g.nodes.windows(2).all(|w| w[1] > w[0]));
        assert!(matches!(
            StrikeGrid::log_uniform(0.5, 2.0, 50, 1.0, &[3.0]),
            Err(Error::StrikeOutsideGrid { .. })
        ));
    }

    #[test]
    fn near_duplicate_strikes_share_a_node() {
        let g = StrikeGrid::log_uniform(0.5, 2.0, 100, 1.0, &[1.0 + 2.4e-9, 1.2]).unwrap();
        assert!(g.find(1.0).is_some() && g.find(1.0 + 2.4e-9).is_some());
        let min_gap = g
            .nodes
            .windows(2)
            .map(|w| w[1] / w[0] - 1.0)
            .fold(f64::INFINITY, f64::min);
        assert!(min_gap > 1e-3, "{min_gap}");
    }

    #[test]
    fn zero_vol_and_short_step_are_identity_like() {
        let g = grid();
        let c0 = g.payoff();
        assert_eq!(ah_step(&c0, &PiecewiseVol::flat(0.0), 1.0, &g).unwrap(), c0);
        let c1 = ah_step(&c0, &PiecewiseVol::flat(0.2), 1.0, &g).unwrap();
        let c2 = ah_step(&c1, &PiecewiseVol::flat(0.2), 1e-9, &g).unwrap();
        let d = c1.iter().zip(&c2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn single_step_matches_laplace_kernel() {
        // With constant nu the exact semi-discrete solution of
        // c - dt nu^2 c'' / 2 = (1 - k)^+ is E[(1 + X - k)^+], X ~ Laplace(0, b),
        // b = nu sqrt(dt / 2).
        let g = StrikeGrid::log_uniform(0.1, 3.0, 2000, 1.0, &[]).unwrap();
        let (nu, dt) = (0.2, 1.0);
        let c = ah_step(&g.payoff(), &PiecewiseVol::flat(nu), dt, &g).unwrap();
        let b = nu * (dt / 2.0f64).sqrt();
        for k in [0.8, 0.95, 1.0, 1.05, 1.3] {
            let d = 1.0 - k;
            let exact = if d >= 0.0 {
                d + 0.5 * b * (-d / b).exp()
            } else {
                0.5 * b * (d / b).exp()
            };
            assert!((g.interpolate(&c, k).unwrap() - exact).abs() < 5e-5);
        }
    }

    #[test]
    fn many_small_steps_approach_flat_vol() {
        let g = grid();
        let mut c = g.payoff();
        for _ in 0..200 {
            c = ah_step(&c, &PiecewiseVol::flat(0.2), 1.0 / 200.0, &g).unwrap();
        }
        let v = implied_vol(
            g.interpolate(&c, 1.0).unwrap(),
            &Contract::new(1.0, 1.0, 1.0, 1.0),
            OptionKind::Call,
        )
        .unwrap();
        assert!((v - 0.2).abs() < 0.003, "{v}");
        // Without a k^2 factor the limit is the Bachelier price.
        for k in [0.8, 0.95, 1.05, 1.2] {
            let d = (1.0 - k) / 0.2;
            let bachelier = (1.0 - k) * crate::bsm::norm_cdf(d) + 0.2 * crate::bsm::norm_pdf(d);
            assert!((g.interpolate(&c, k).unwrap() - bachelier).abs() < 5e-4, "{k}");
        }
    }

    #[test]
    fn step_preserves_bounds_and_convexity() {
        let g = grid();
        let nu = PiecewiseVol::new(vec![0.8, 1.0, 1.2], vec![0.5, 0.1, 0.9]).unwrap();
        let c = ah_step(&g.payoff(), &nu, 0.7, &g).unwrap();
        for j in 1..g.len() - 1 {
            assert!(g.second_difference(&c, j) >= -1e-10);
        }
        assert!(c.iter().all(|&v| (-1e-15..=1.0 + 1e-15).contains(&v)));
    }

    #[test]
    fn time_value_step_matches_price_step_and_stays_convex_deep_itm() {
        let g = grid();
        let nu = PiecewiseVol::new(vec![0.8, 1.0, 1.2], vec![0.5, 0.1, 0.9]).unwrap();
        let c = ah_step(&g.payoff(), &nu, 0.05, &g).unwrap();
        let u = ah_step_time_value(&vec![0.0; g.len()], &nu, 0.05, &g).unwrap();
        let curv = g.payoff_curvature();
        assert_eq!(curv.iter().filter(|&&v| v != 0.0).count(), 1);
        for j in 1..g.len() - 1 {
            assert!((c[j] - g.payoff()[j] - u[j]).abs() < 1e-15);
            assert!(g.second_difference(&u, j) + curv[j] >= 0.0, "{j}");
        }
    }

    #[test]
    fn inverse_crime_recovers_levels() {
        let g = grid();
        let strikes = vec![0.9, 1.0, 1.1];
        let truth = PiecewiseVol::new(strikes.clone(), vec![0.3, 0.22, 0.18]).unwrap();
        let c = ah_step(&g.payoff(), &truth, 0.5, &g).unwrap();
        let prices: Vec<f64> = strikes.iter().map(|&k| c[g.find(k).unwrap()]).collect();
        let q = NormalizedQuotes { strikes, prices };
        let (vol, fit) = bootstrap_expiry(
            &vec![0.0; g.len()],
            &q,
            0.5,
            &g,
            &[0.2; 3],
            &AhConfig::default().engine,
            true,
        )
        .unwrap();
        for (a, b) in vol.levels.iter().zip(&truth.levels) {
            assert!((a - b).abs() < 1e-4, "{a} {b}");
        }
        assert!(fit.objective.sqrt() < 1e-10);
    }

    #[test]
    fn single_quote_single_level() {
        let g = grid();
        let c = ah_step(&g.payoff(), &PiecewiseVol::flat(0.25), 1.0, &g).unwrap();
        let q = NormalizedQuotes {
            strikes: vec![1.0],
            prices: vec![c[g.find(1.0).unwrap()]],
        };
        let (vol, _) = bootstrap_expiry(
            &vec![0.0; g.len()],
            &q,
            1.0,
            &g,
            &[0.1],
            &AhConfig::default().engine,
            true,
        )
        .unwrap();
        assert!((vol.levels[0] - 0.25).abs() < 1e-8);
    }

    #[test]
    fn knot_reproduction_and_corruption() {
        let g = grid();
        let c1 = ah_step(&g.payoff(), &PiecewiseVol::flat(0.2), 0.5, &g).unwrap();
        let c2 = ah_step(&c1, &PiecewiseVol::flat(0.2), 0.5, &g).unwrap();
        let mut s = AhSurface {
            grid: g.clone(),
            knots: vec![0.0, 0.5, 1.0],
            forwards: vec![1.0; 3],
            discounts: vec![1.0; 3],
            time_values: [g.payoff(), c1.clone(), c2]
                .iter()
                .map(|c| c.iter().zip(g.payoff()).map(|(c, p)| c - p).collect())
                .collect(),
            vols: vec![PiecewiseVol::flat(0.2); 2],
            variant: TimeChange::Plain,
        };
        let j = g.find(1.0).unwrap();
        assert_eq!(s.price_at(0.5, 1.0).unwrap(), c1[j]);
        assert!((s.price_at(0.5 + 1e-9, 1.0).unwrap() - c1[j]).abs() < 1e-7);
        assert!(no_arb_check(&s, TimeChange::Plain).unwrap().pass);
        assert!(no_arb_check(&s, TimeChange::Power { exponent: 2.0 }).unwrap().pass);
        s.time_values[1][j] += 0.01;
        let r = no_arb_check(&s, TimeChange::Plain).unwrap();
        assert!(!r.pass && !r.butterfly.is_empty());
        assert!(matches!(s.price_at(1.5, 1.0), Err(Error::OutOfRange { .. })));
    }
}
