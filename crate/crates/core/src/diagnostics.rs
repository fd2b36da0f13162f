//! Uniform access to fitted surfaces, dense-grid arbitrage scans, fit
//! reports and plot-ready grid export.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alt::{DumasSurface, MixtureParams, VgvvCoeffs, VgvvModel, VgvvSurface};
use crate::bsm::{bsm_price, implied_vol, BsmInputs, Contract, OptionKind};
use crate::dupire::AhSurface;
use crate::error::{Error, Result};
use crate::heston::{bgm_smile, HestonParams};
use crate::market_data::{Format, QuoteSurface};
use crate::svi::SviSurface;
use crate::tails::{
    fit_left_tail, fit_right_tail, slope_bound_check, svi_slope_check, Anchor, LeftTail, RightTail, SlopeCheck,
};

pub const SCAN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SurfaceModel {
    Svi {
        surface: SviSurface,
    },
    Ah {
        surface: AhSurface,
    },
    Srv {
        coeffs: VgvvCoeffs,
    },
    Lnv {
        coeffs: VgvvCoeffs,
    },
    Mixture {
        params: MixtureParams,
    },
    Dumas {
        surface: DumasSurface,
    },
    Bgm {
        params: HestonParams,
        rate: f64,
        dividend: f64,
    },
}

impl SurfaceModel {
    pub fn method(&self) -> &'static str {
        match self {
            SurfaceModel::Svi { .. } => "svi",
            SurfaceModel::Ah { .. } => "ah",
            SurfaceModel::Srv { .. } => "srv",
            SurfaceModel::Lnv { .. } => "lnv",
            SurfaceModel::Mixture { .. } => "mixture",
            SurfaceModel::Dumas { .. } => "dumas",
            SurfaceModel::Bgm { .. } => "bgm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermPoint {
    pub t: f64,
    pub forward: f64,
    pub discount: f64,
}

/// Wing extrapolation settings. The core region is `|x| <= core_sd` ATM
/// standard deviations at each expiry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailSettings {
    pub mu: f64,
    pub nu: f64,
    pub core_sd: f64,
}

impl Default for TailSettings {
    fn default() -> Self {
        Self {
            mu: crate::tails::DEFAULT_MU,
            nu: crate::tails::DEFAULT_NU,
            core_sd: 2.5,
        }
    }
}

/// A fitted surface together with the forward/discount curve it lives on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceHandle {
    #[serde(flatten)]
    pub model: SurfaceModel,
    pub term: Vec<TermPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tails: Option<TailSettings>,
}

/// Tails fitted at one time, in forward-normalized units.
#[derive(Debug, Clone, Copy)]
struct AttachedTails {
    left: LeftTail,
    right: RightTail,
}

fn term_of(surface: &QuoteSurface) -> Vec<TermPoint> {
    surface
        .expiries
        .iter()
        .map(|s| TermPoint {
            t: s.expiry,
            forward: s.forward,
            discount: s.discount,
        })
        .collect()
}

impl SurfaceHandle {
    /// Handle on the forward/discount curve of `quotes`.
    pub fn new(model: SurfaceModel, quotes: &QuoteSurface) -> Self {
        Self {
            model,
            term: term_of(quotes),
            tails: None,
        }
    }

    /// Handle for the expansion itself at the given expiries.
    pub fn bgm(params: HestonParams, rate: f64, dividend: f64, expiries: &[f64]) -> Self {
        let term = expiries
            .iter()
            .map(|&t| TermPoint {
                t,
                forward: (params.x0 + (rate - dividend) * t).exp(),
                discount: (-rate * t).exp(),
            })
            .collect();
        Self {
            model: SurfaceModel::Bgm { params, rate, dividend },
            term,
            tails: None,
        }
    }

    pub fn with_tails(mut self, tails: TailSettings) -> Self {
        self.tails = Some(tails);
        self
    }

    pub fn method(&self) -> &'static str {
        self.model.method()
    }

    pub fn expiries(&self) -> Vec<f64> {
        self.term.iter().map(|p| p.t).collect()
    }

    fn curve(&self, t: f64, f: impl Fn(&TermPoint) -> f64) -> Result<f64> {
        let (first, last) = match (self.term.first(), self.term.last()) {
            (Some(a), Some(b)) => (a.t, b.t),
            _ => return Err(Error::EmptyInput),
        };
        if !(t >= first * (1.0 - 1e-12) && t <= last * (1.0 + 1e-12)) {
            return Err(Error::ExtrapolationNotAllowed { t, first, last });
        }
        let i = self.term.partition_point(|p| p.t < t).min(self.term.len() - 1);
        if i == 0 || self.term[i].t == t {
            return Ok(f(&self.term[i]));
        }
        let (a, b) = (&self.term[i - 1], &self.term[i]);
        let w = (t - a.t) / (b.t - a.t);
        Ok(((1.0 - w) * f(a).ln() + w * f(b).ln()).exp())
    }

    pub fn forward_at(&self, t: f64) -> Result<f64> {
        self.curve(t, |p| p.forward)
    }

    pub fn discount_at(&self, t: f64) -> Result<f64> {
        self.curve(t, |p| p.discount)
    }

    fn vol_native(&self) -> bool {
        !matches!(self.model, SurfaceModel::Ah { .. } | SurfaceModel::Mixture { .. })
    }

    fn core_vols(&self, t: f64, xs: &[f64]) -> Vec<Result<f64>> {
        match &self.model {
            SurfaceModel::Svi { surface } => xs.iter().map(|&x| surface.vol(t, x)).collect(),
            SurfaceModel::Srv { coeffs } => {
                let s = VgvvSurface {
                    model: VgvvModel::Srv,
                    coeffs: *coeffs,
                };
                xs.iter().map(|&x| s.vol(t, x)).collect()
            }
            SurfaceModel::Lnv { coeffs } => {
                let s = VgvvSurface {
                    model: VgvvModel::Lnv,
                    coeffs: *coeffs,
                };
                xs.iter().map(|&x| s.vol(t, x)).collect()
            }
            SurfaceModel::Dumas { surface } => xs
                .iter()
                .map(|&x| {
                    let v = surface.vol(t, x);
                    if v > 0.0 {
                        Ok(v)
                    } else {
                        Err(Error::InputDomain(format!("polynomial vol {v} at x={x}, t={t}")))
                    }
                })
                .collect(),
            SurfaceModel::Bgm { params, rate, dividend } => {
                let f = (params.x0 + (rate - dividend) * t).exp();
                let strikes: Vec<f64> = xs.iter().map(|&x| f * x.exp()).collect();
                match bgm_smile(params, &strikes, t, *rate, *dividend) {
                    Ok(v) => v,
                    Err(e) => xs.iter().map(|_| Err(e.clone())).collect(),
                }
            }
            SurfaceModel::Ah { .. } | SurfaceModel::Mixture { .. } => self
                .core_prices(t, xs)
                .into_iter()
                .zip(xs)
                .map(|(p, &x)| p.and_then(|p| normalized_vol(p, x, t)))
                .collect(),
        }
    }

    /// Undiscounted call prices in forward units (`F = 1`).
    fn core_prices(&self, t: f64, xs: &[f64]) -> Vec<Result<f64>> {
        match &self.model {
            SurfaceModel::Ah { surface } => match surface.price_vector(t, surface.variant) {
                Ok(v) => xs.iter().map(|&x| surface.grid.interpolate(&v, x.exp())).collect(),
                Err(e) => xs.iter().map(|_| Err(e.clone())).collect(),
            },
            SurfaceModel::Mixture { params } => {
                let (f, df) = match (self.forward_at(t), self.discount_at(t)) {
                    (Ok(f), Ok(df)) => (f, df),
                    (Err(e), _) | (_, Err(e)) => return xs.iter().map(|_| Err(e.clone())).collect(),
                };
                xs.iter()
                    .map(|&x| Ok(params.price(f * df, f * x.exp(), t, df)? / (f * df)))
                    .collect()
            }
            _ => self
                .core_vols(t, xs)
                .into_iter()
                .zip(xs)
                .map(|(v, &x)| v.and_then(|v| normalized_price(v, x, t)))
                .collect(),
        }
    }

    /// ATM standard deviation `sigma_atm sqrt(t)`.
    pub fn atm_sd(&self, t: f64) -> Result<f64> {
        let v = self.core_vols(t, &[0.0]).pop().expect("one value")?;
        Ok(v * t.sqrt())
    }

    fn attach(&self, t: f64, s: &TailSettings) -> Result<(f64, f64, AttachedTails)> {
        let sd = self.atm_sd(t)?;
        let (k_lo, k_hi) = ((-s.core_sd * sd).exp(), (s.core_sd * sd).exp());
        let price = |k: f64| {
            self.core_prices(t, &[k.ln()])
                .pop()
                .and_then(|r| r.ok())
                .unwrap_or(f64::NAN)
        };
        let put = Anchor::from_fn(|k| price(k) - 1.0 + k, k_lo);
        let call = Anchor::from_fn(price, k_hi);
        Ok((
            k_lo,
            k_hi,
            AttachedTails {
                left: fit_left_tail(&put, s.mu)?,
                right: fit_right_tail(&call, s.nu)?,
            },
        ))
    }

    /// Forward-normalized call prices at log-moneyness `xs`, with tails
    /// outside the core region when attached.
    pub fn prices(&self, t: f64, xs: &[f64]) -> Vec<Result<f64>> {
        let mut out = self.core_prices(t, xs);
        if let Some(s) = &self.tails {
            match self.attach(t, s) {
                Ok((k_lo, k_hi, tails)) => {
                    for (o, &x) in out.iter_mut().zip(xs) {
                        let k = x.exp();
                        if k < k_lo {
                            *o = tails.left.price(k).map(|p| p + 1.0 - k);
                        } else if k > k_hi {
                            *o = tails.right.price(k);
                        }
                    }
                }
                Err(e) => out.iter_mut().for_each(|o| *o = Err(e.clone())),
            }
        }
        out
    }

    pub fn vols(&self, t: f64, xs: &[f64]) -> Vec<Result<f64>> {
        if self.tails.is_none() && self.vol_native() {
            return self.core_vols(t, xs);
        }
        self.prices(t, xs)
            .into_iter()
            .zip(xs)
            .map(|(p, &x)| p.and_then(|p| normalized_vol(p, x, t)))
            .collect()
    }

    pub fn vol(&self, t: f64, x: f64) -> Result<f64> {
        self.vols(t, &[x]).pop().expect("one value")
    }

    /// Relative mismatch (value, slope, curvature) between each attached
    /// tail and its anchor, per expiry.
    pub fn tail_continuity(&self) -> Vec<TailContinuity> {
        let Some(s) = &self.tails else { return Vec::new() };
        self.term
            .iter()
            .map(|p| match self.attach(p.t, s) {
                Ok((k_lo, k_hi, tails)) => {
                    let price = |k: f64| {
                        self.core_prices(p.t, &[k.ln()])
                            .pop()
                            .and_then(|r| r.ok())
                            .unwrap_or(f64::NAN)
                    };
                    let put = Anchor::from_fn(|k| price(k) - 1.0 + k, k_lo);
                    let call = Anchor::from_fn(price, k_hi);
                    let rel = |a: &Anchor, d: (f64, f64, f64)| {
                        let r = |x: f64, y: f64| (x - y).abs() / y.abs().max(1e-300);
                        r(d.0, a.value).max(r(d.1, a.slope)).max(r(d.2, a.curvature))
                    };
                    TailContinuity {
                        t: p.t,
                        left: tails.left.derivatives(k_lo).map(|d| rel(&put, d)).unwrap_or(f64::NAN),
                        right: tails.right.derivatives(k_hi).map(|d| rel(&call, d)).unwrap_or(f64::NAN),
                        error: None,
                    }
                }
                Err(e) => TailContinuity {
                    t: p.t,
                    left: f64::NAN,
                    right: f64::NAN,
                    error: Some(e.to_string()),
                },
            })
            .collect()
    }

    pub fn slope_checks(&self) -> Vec<SlopeCheck> {
        if let (SurfaceModel::Svi { surface }, None) = (&self.model, &self.tails) {
            return svi_slope_check(surface);
        }
        let mut out = Vec::new();
        for p in &self.term {
            let Ok(sd) = self.atm_sd(p.t) else { continue };
            let probe = 4.0 * sd;
            let vols = self.vols(p.t, &[-probe, probe]);
            if let [Ok(l), Ok(r)] = vols.as_slice() {
                let (l, r) = (p.t * l * l, p.t * r * r);
                let curve = move |x: f64| if x < 0.0 { l } else { r };
                out.extend(slope_bound_check(&[(p.t, &curve)], probe));
            }
        }
        out
    }
}

fn normalized_price(vol: f64, x: f64, t: f64) -> Result<f64> {
    bsm_price(&BsmInputs::new(1.0, x.exp(), t, vol, 1.0), OptionKind::Call)
}

fn normalized_vol(price: f64, x: f64, t: f64) -> Result<f64> {
    let k = x.exp();
    if k < 1.0 {
        // The put is the out-of-the-money side and keeps precision.
        implied_vol(price - 1.0 + k, &Contract::new(1.0, k, t, 1.0), OptionKind::Put)
    } else {
        implied_vol(price, &Contract::new(1.0, k, t, 1.0), OptionKind::Call)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailContinuity {
    pub t: f64,
    pub left: f64,
    pub right: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Dense grid: `n_times` expiries spanning the handle's term, `n_strikes`
/// log-moneyness points across `±width_sd` ATM standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub n_strikes: usize,
    pub n_times: usize,
    pub width_sd: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_strikes: 200,
            n_times: 40,
            width_sd: 4.0,
        }
    }
}

impl GridSpec {
    /// Scan times: evenly spaced over the term with every term point added.
    pub fn times(&self, handle: &SurfaceHandle) -> Vec<f64> {
        let ex = handle.expiries();
        let (Some(&a), Some(&b)) = (ex.first(), ex.last()) else {
            return Vec::new();
        };
        let mut ts: Vec<f64> = if self.n_times <= 1 || a == b {
            vec![a]
        } else {
            (0..self.n_times)
                .map(|i| a + (b - a) * i as f64 / (self.n_times - 1) as f64)
                .collect()
        };
        ts.extend(&ex);
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * y.abs().max(1.0));
        ts
    }

    pub fn strikes(&self, sd: f64) -> Vec<f64> {
        let n = self.n_strikes.max(2);
        let h = self.width_sd * sd;
        (0..n).map(|i| -h + 2.0 * h * i as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedNode {
    pub t: f64,
    pub x: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsBundle {
    pub method: String,
    pub nodes: usize,
    pub vertical_violations: usize,
    pub butterfly_violations: usize,
    pub calendar_violations: usize,
    /// Most negative butterfly / calendar value seen (0 when none negative).
    pub worst_butterfly: f64,
    pub worst_calendar: f64,
    pub failed_nodes: usize,
    /// First few failures, for inspection.
    pub failures: Vec<FailedNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitReport>,
    pub slope_checks: Vec<SlopeCheck>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tail_continuity: Vec<TailContinuity>,
}

impl DiagnosticsBundle {
    pub fn arbitrage_free(&self) -> bool {
        self.vertical_violations == 0 && self.butterfly_violations == 0 && self.calendar_violations == 0
    }
}

struct Row {
    xs: Vec<f64>,
    prices: Vec<Option<f64>>,
    /// The next scan time's prices at the same strikes.
    later: Vec<Option<f64>>,
    failures: Vec<FailedNode>,
}

/// Prices the handle on the dense grid and runs the vertical, butterfly and
/// calendar tests in forward-normalized units at tolerance [`SCAN_TOL`].
pub fn dense_scan(handle: &SurfaceHandle, spec: &GridSpec) -> DiagnosticsBundle {
    let times = spec.times(handle);
    let rows: Vec<Row> = times
        .par_iter()
        .enumerate()
        .map(|(j, &t)| {
            let mut failures = Vec::new();
            let xs = match handle.atm_sd(t) {
                Ok(sd) if sd > 0.0 => spec.strikes(sd),
                Ok(sd) => {
                    failures.push(FailedNode {
                        t,
                        x: 0.0,
                        error: format!("ATM sd {sd}"),
                    });
                    Vec::new()
                }
                Err(e) => {
                    failures.push(FailedNode {
                        t,
                        x: 0.0,
                        error: e.to_string(),
                    });
                    Vec::new()
                }
            };
            let mut collect = |t: f64, record: bool| -> Vec<Option<f64>> {
                handle
                    .prices(t, &xs)
                    .into_iter()
                    .zip(&xs)
                    .map(|(p, &x)| match p {
                        Ok(v) if v.is_finite() => Some(v),
                        Ok(v) => {
                            if record {
                                failures.push(FailedNode {
                                    t,
                                    x,
                                    error: format!("non-finite price {v}"),
                                });
                            }
                            None
                        }
                        Err(e) => {
                            if record {
                                failures.push(FailedNode {
                                    t,
                                    x,
                                    error: e.to_string(),
                                });
                            }
                            None
                        }
                    })
                    .collect()
            };
            let prices = collect(t, true);
            let later = match times.get(j + 1) {
                Some(&tn) => collect(tn, false),
                None => Vec::new(),
            };
            Row {
                xs,
                prices,
                later,
                failures,
            }
        })
        .collect();

    let mut b = DiagnosticsBundle {
        method: handle.method().to_string(),
        nodes: 0,
        vertical_violations: 0,
        butterfly_violations: 0,
        calendar_violations: 0,
        worst_butterfly: 0.0,
        worst_calendar: 0.0,
        failed_nodes: 0,
        failures: Vec::new(),
        fit: None,
        slope_checks: handle.slope_checks(),
        tail_continuity: handle.tail_continuity(),
    };
    for row in &rows {
        b.nodes += row.xs.len();
        b.failed_nodes += row.failures.len();
        for f in &row.failures {
            if b.failures.len() < 10 {
                b.failures.push(f.clone());
            }
        }
        let k: Vec<f64> = row.xs.iter().map(|x| x.exp()).collect();
        let c = &row.prices;
        for i in 1..k.len() {
            if let (Some(a), Some(z)) = (c[i - 1], c[i]) {
                let q = (a - z) / (k[i] - k[i - 1]);
                if !(-SCAN_TOL..=1.0 + SCAN_TOL).contains(&q) {
                    b.vertical_violations += 1;
                }
            }
        }
        for i in 1..k.len().saturating_sub(1) {
            if let (Some(l), Some(m), Some(r)) = (c[i - 1], c[i], c[i + 1]) {
                let w1 = (k[i + 1] - k[i - 1]) / (k[i + 1] - k[i]);
                let w2 = (k[i] - k[i - 1]) / (k[i + 1] - k[i]);
                let v = l - w1 * m + w2 * r;
                b.worst_butterfly = b.worst_butterfly.min(v);
                if v < -SCAN_TOL {
                    b.butterfly_violations += 1;
                }
            }
        }
        for (now, next) in c.iter().zip(&row.later) {
            if let (Some(a), Some(z)) = (now, next) {
                let d = z - a;
                b.worst_calendar = b.worst_calendar.min(d);
                if d < -SCAN_TOL {
                    b.calendar_violations += 1;
                }
            }
        }
    }
    b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub t: f64,
    pub quotes: usize,
    pub rmse_vol: f64,
    pub max_abs_error_vol: f64,
    /// Quotes the surface could not evaluate.
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub rows: Vec<FitRow>,
}

impl FitReport {
    pub fn max_rmse(&self) -> f64 {
        self.rows.iter().map(|r| r.rmse_vol).fold(0.0, f64::max)
    }
}

/// Vol-space residuals against mid quotes, one row per expiry.
pub fn fit_report(handle: &SurfaceHandle, quotes: &QuoteSurface) -> FitReport {
    let rows = quotes
        .expiries
        .iter()
        .map(|s| {
            let xs = s.log_moneyness();
            let mids = s.mid_vols();
            let (mut se, mut worst, mut n, mut failed) = (0.0, 0.0f64, 0usize, 0usize);
            for (v, m) in handle.vols(s.expiry, &xs).into_iter().zip(&mids) {
                match v {
                    Ok(v) => {
                        se += (v - m).powi(2);
                        worst = worst.max((v - m).abs());
                        n += 1;
                    }
                    Err(_) => failed += 1,
                }
            }
            FitRow {
                t: s.expiry,
                quotes: xs.len(),
                rmse_vol: if n > 0 { (se / n as f64).sqrt() } else { f64::NAN },
                max_abs_error_vol: if n > 0 { worst } else { f64::NAN },
                failed,
            }
        })
        .collect();
    FitReport { rows }
}

/// Runs the dense scan and attaches the fit report.
pub fn diagnose(handle: &SurfaceHandle, quotes: &QuoteSurface, spec: &GridSpec) -> DiagnosticsBundle {
    let mut b = dense_scan(handle, spec);
    b.fit = Some(fit_report(handle, quotes));
    b
}

/// One exported grid point. `k` is the absolute strike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub t: f64,
    pub k: f64,
    pub x: f64,
    pub vol: f64,
    pub total_var: f64,
    pub call_price: f64,
}

pub const EXPORT_COLUMNS: [&str; 6] = ["t", "k", "x", "vol", "total_var", "call_price"];

/// Evaluated rows; unevaluable nodes carry NaN vol and price.
pub fn grid_rows(handle: &SurfaceHandle, times: &[f64], xs: &[f64]) -> Result<Vec<GridRow>> {
    let mut out = Vec::with_capacity(times.len() * xs.len());
    for &t in times {
        let f = handle.forward_at(t)?;
        let df = handle.discount_at(t)?;
        let prices = handle.prices(t, xs);
        let vols = handle.vols(t, xs);
        for ((&x, p), v) in xs.iter().zip(prices).zip(vols) {
            let vol = v.unwrap_or(f64::NAN);
            out.push(GridRow {
                t,
                k: f * x.exp(),
                x,
                vol,
                total_var: vol * vol * t,
                call_price: p.map(|p| p * f * df).unwrap_or(f64::NAN),
            });
        }
    }
    Ok(out)
}

/// `v` rounded to 12 significant digits, printed in shortest form.
pub fn fmt12(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("float formatting round-trips");
    rounded.to_string()
}

/// Writes rows as CSV (`t,k,x,vol,total_var,call_price`) or a JSON array.
pub fn export_grid<W: Write>(rows: &[GridRow], format: Format, mut w: W) -> Result<()> {
    match format {
        Format::Csv => {
            let mut wr = csv::Writer::from_writer(w);
            wr.write_record(EXPORT_COLUMNS).map_err(|e| Error::Io(e.to_string()))?;
            for r in rows {
                wr.write_record([r.t, r.k, r.x, r.vol, r.total_var, r.call_price].map(fmt12))
                    .map_err(|e| Error::Io(e.to_string()))?;
            }
            wr.flush()?;
        }
        Format::Json => {
            let rounded: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    let vals = [r.t, r.k, r.x, r.vol, r.total_var, r.call_price];
                    let obj: serde_json::Map<String, serde_json::Value> = EXPORT_COLUMNS
                        .iter()
                        .zip(vals)
                        .map(|(c, v)| {
                            let v = fmt12(v).parse::<f64>().ok().and_then(serde_json::Number::from_f64);
                            (
                                c.to_string(),
                                v.map_or(serde_json::Value::Null, serde_json::Value::Number),
                            )
                        })
                        .collect();
                    serde_json::Value::Object(obj)
                })
                .collect();
            serde_json::to_writer_pretty(&mut w, &rounded)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Reads back a CSV export.
pub fn read_grid_csv<R: std::io::Read>(r: R) -> Result<Vec<GridRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if headers.iter().ne(EXPORT_COLUMNS) {
        return Err(Error::Schema(format!("expected columns {}", EXPORT_COLUMNS.join(","))));
    }
    rd.deserialize()
        .map(|r| r.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}
