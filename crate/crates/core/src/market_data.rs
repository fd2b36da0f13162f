//! Quote ingestion, validation and the price-grid view used by the
//! arbitrage tests.
//!
//! Quotes are canonically held as implied volatilities. Prices are derived
//! on demand through [`crate::bsm`].

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::bsm::{bsm_price, BsmInputs, OptionKind};
use crate::error::{Error, Result};
use crate::heston::{bgm_smile, HestonParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    #[serde(rename = "k")]
    pub strike: f64,
    #[serde(rename = "bid")]
    pub bid_iv: f64,
    #[serde(rename = "ask")]
    pub ask_iv: f64,
    /// Overrides the bid/ask midpoint, set by quote repair.
    #[serde(rename = "mid", default, skip_serializing_if = "Option::is_none")]
    pub mid_iv: Option<f64>,
}

impl Quote {
    pub fn new(strike: f64, bid_iv: f64, ask_iv: f64) -> Self {
        Self {
            strike,
            bid_iv,
            ask_iv,
            mid_iv: None,
        }
    }

    pub fn mid(&self) -> f64 {
        self.mid_iv.unwrap_or(0.5 * (self.bid_iv + self.ask_iv))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpirySlice {
    #[serde(rename = "t")]
    pub expiry: f64,
    pub forward: f64,
    pub discount: f64,
    pub quotes: Vec<Quote>,
}

impl ExpirySlice {
    pub fn strikes(&self) -> Vec<f64> {
        self.quotes.iter().map(|q| q.strike).collect()
    }

    pub fn log_moneyness(&self) -> Vec<f64> {
        self.quotes.iter().map(|q| (q.strike / self.forward).ln()).collect()
    }

    pub fn mid_vols(&self) -> Vec<f64> {
        self.quotes.iter().map(Quote::mid).collect()
    }

    pub fn inputs(&self, strike: f64, vol: f64) -> BsmInputs {
        BsmInputs::new(self.forward, strike, self.expiry, vol, self.discount)
    }
}

/// One flattened quote row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuoteRecord {
    pub expiry: f64,
    pub strike: f64,
    pub bid_iv: f64,
    pub ask_iv: f64,
    pub forward: f64,
    pub discount: f64,
}

impl QuoteRecord {
    fn check(&self, row: usize) -> Result<()> {
        let fail = |reason: String| Err(Error::Validation { row, reason });
        let all = [
            self.expiry,
            self.strike,
            self.bid_iv,
            self.ask_iv,
            self.forward,
            self.discount,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return fail("non-finite field".into());
        }
        if self.expiry <= 0.0 {
            return fail(format!("expiry {} must be > 0", self.expiry));
        }
        if self.strike <= 0.0 {
            return fail(format!("strike {} must be > 0", self.strike));
        }
        if self.bid_iv <= 0.0 {
            return fail(format!("bid_iv {} must be > 0", self.bid_iv));
        }
        if self.bid_iv > self.ask_iv {
            return fail(format!("bid_iv {} exceeds ask_iv {}", self.bid_iv, self.ask_iv));
        }
        if self.forward <= 0.0 {
            return fail(format!("forward {} must be > 0", self.forward));
        }
        if self.discount <= 0.0 {
            return fail(format!("discount {} must be > 0", self.discount));
        }
        Ok(())
    }
}

/// A validated quote surface: strictly increasing expiries, strictly
/// increasing strikes within each expiry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteSurface {
    pub expiries: Vec<ExpirySlice>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Parse(format!("unknown format `{other}`"))),
        }
    }
}

const CSV_COLUMNS: [&str; 6] = ["expiry_years", "strike", "forward", "discount", "bid_iv", "ask_iv"];

impl QuoteSurface {
    /// Builds a surface from flat records, sorting and validating them.
    pub fn from_records(records: &[QuoteRecord]) -> Result<Self> {
        Self::from_rows(records.iter().map(|r| (*r, None)).collect())
    }

    fn from_rows(mut rows: Vec<(QuoteRecord, Option<f64>)>) -> Result<Self> {
        for (i, (r, mid)) in rows.iter().enumerate() {
            r.check(i + 1)?;
            if let Some(m) = mid {
                if !(m.is_finite() && *m > 0.0) {
                    return Err(Error::Validation {
                        row: i + 1,
                        reason: format!("mid_iv {m} must be finite and > 0"),
                    });
                }
            }
        }
        let mut indexed: Vec<(usize, (QuoteRecord, Option<f64>))> = rows.drain(..).enumerate().collect();
        indexed.sort_by(|a, b| {
            (a.1 .0.expiry, a.1 .0.strike)
                .partial_cmp(&(b.1 .0.expiry, b.1 .0.strike))
                .expect("finite")
        });
        let mut expiries: Vec<ExpirySlice> = Vec::new();
        for (row, (r, mid)) in indexed {
            match expiries.last_mut() {
                Some(slice) if slice.expiry == r.expiry => {
                    if slice.forward != r.forward || slice.discount != r.discount {
                        return Err(Error::Validation {
                            row: row + 1,
                            reason: format!("forward/discount disagree with other rows at expiry {}", r.expiry),
                        });
                    }
                    if slice.quotes.last().map(|q| q.strike) == Some(r.strike) {
                        return Err(Error::DuplicateQuote {
                            expiry: r.expiry,
                            strike: r.strike,
                        });
                    }
                    slice.quotes.push(Quote {
                        strike: r.strike,
                        bid_iv: r.bid_iv,
                        ask_iv: r.ask_iv,
                        mid_iv: mid,
                    });
                }
                _ => expiries.push(ExpirySlice {
                    expiry: r.expiry,
                    forward: r.forward,
                    discount: r.discount,
                    quotes: vec![Quote {
                        strike: r.strike,
                        bid_iv: r.bid_iv,
                        ask_iv: r.ask_iv,
                        mid_iv: mid,
                    }],
                }),
            }
        }
        Ok(Self { expiries })
    }

    pub fn records(&self) -> impl Iterator<Item = QuoteRecord> + '_ {
        self.expiries.iter().flat_map(|s| {
            s.quotes.iter().map(move |q| QuoteRecord {
                expiry: s.expiry,
                strike: q.strike,
                bid_iv: q.bid_iv,
                ask_iv: q.ask_iv,
                forward: s.forward,
                discount: s.discount,
            })
        })
    }

    pub fn len(&self) -> usize {
        self.expiries.iter().map(|s| s.quotes.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn expiry_times(&self) -> Vec<f64> {
        self.expiries.iter().map(|s| s.expiry).collect()
    }

    /// Forward at `t`, log-linear between expiries and flat outside.
    pub fn forward_at(&self, t: f64) -> f64 {
        curve_at(&self.expiries, t, |s| s.forward)
    }

    pub fn discount_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        curve_at(&self.expiries, t, |s| s.discount)
    }

    /// Re-checks the ordering and record invariants of an already built
    /// surface (used after JSON deserialization).
    pub fn validate(&self) -> Result<()> {
        let mut row = 0usize;
        let mut prev_t = f64::NEG_INFINITY;
        for s in &self.expiries {
            if s.expiry <= prev_t {
                return Err(Error::Validation {
                    row: row + 1,
                    reason: format!("expiry {} not strictly increasing", s.expiry),
                });
            }
            prev_t = s.expiry;
            let mut prev_k = f64::NEG_INFINITY;
            for q in &s.quotes {
                if q.strike == prev_k {
                    return Err(Error::DuplicateQuote {
                        expiry: s.expiry,
                        strike: q.strike,
                    });
                }
                if q.strike < prev_k {
                    return Err(Error::Validation {
                        row: row + 1,
                        reason: format!("strike {} not increasing", q.strike),
                    });
                }
                prev_k = q.strike;
                row += 1;
            }
        }
        for (i, r) in self.records().enumerate() {
            r.check(i + 1)?;
        }
        Ok(())
    }

    pub fn to_csv<W: Write>(&self, w: W) -> Result<()> {
        let with_mid = self
            .expiries
            .iter()
            .any(|s| s.quotes.iter().any(|q| q.mid_iv.is_some()));
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
        if with_mid {
            header.push("mid_iv");
        }
        wr.write_record(&header).map_err(csv_err)?;
        for s in &self.expiries {
            for q in &s.quotes {
                let mut row = vec![
                    fmt_num(s.expiry),
                    fmt_num(q.strike),
                    fmt_num(s.forward),
                    fmt_num(s.discount),
                    fmt_num(q.bid_iv),
                    fmt_num(q.ask_iv),
                ];
                if with_mid {
                    row.push(q.mid_iv.map(fmt_num).unwrap_or_default());
                }
                wr.write_record(&row).map_err(csv_err)?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn write<W: Write>(&self, w: W, format: Format) -> Result<()> {
        match format {
            Format::Csv => self.to_csv(w),
            Format::Json => self.to_json(w),
        }
    }
}

fn curve_at(slices: &[ExpirySlice], t: f64, f: impl Fn(&ExpirySlice) -> f64) -> f64 {
    let idx = slices.partition_point(|s| s.expiry < t);
    if idx == 0 {
        return f(&slices[0]);
    }
    if idx == slices.len() {
        return f(&slices[idx - 1]);
    }
    let (a, b) = (&slices[idx - 1], &slices[idx]);
    let w = (t - a.expiry) / (b.expiry - a.expiry);
    ((1.0 - w) * f(a).ln() + w * f(b).ln()).exp()
}

/// Shortest decimal representation that round-trips.
fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Parses CSV or JSON quotes into a validated surface. Unsorted input is
/// sorted; duplicate `(expiry, strike)` pairs are rejected.
pub fn parse_quotes<R: Read>(source: R, format: Format) -> Result<QuoteSurface> {
    match format {
        Format::Csv => parse_csv(source),
        Format::Json => parse_json(source),
    }
}

fn parse_csv<R: Read>(source: R) -> Result<QuoteSurface> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = rd.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(name.to_string()))
    };
    let idx: Vec<usize> = CSV_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mid_col = headers.iter().position(|h| h == "mid_iv");
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 1;
        let num = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::Validation {
                row,
                reason: format!("cannot parse `{raw}` as a number"),
            })
        };
        let r = QuoteRecord {
            expiry: num(idx[0])?,
            strike: num(idx[1])?,
            forward: num(idx[2])?,
            discount: num(idx[3])?,
            bid_iv: num(idx[4])?,
            ask_iv: num(idx[5])?,
        };
        let mid = match mid_col {
            Some(c) if !rec.get(c).unwrap_or("").is_empty() => Some(num(c)?),
            _ => None,
        };
        rows.push((r, mid));
    }
    QuoteSurface::from_rows(rows)
}

fn parse_json<R: Read>(source: R) -> Result<QuoteSurface> {
    let value: serde_json::Value = serde_json::from_reader(source)?;
    let expiries = value
        .get("expiries")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::Schema("expiries".into()))?;
    let mut rows = Vec::new();
    for e in expiries {
        let field = |v: &serde_json::Value, name: &str| -> Result<f64> {
            v.get(name)
                .ok_or_else(|| Error::Schema(name.to_string()))?
                .as_f64()
                .ok_or_else(|| Error::Parse(format!("`{name}` is not a number")))
        };
        let t = field(e, "t")?;
        let forward = field(e, "forward")?;
        let discount = field(e, "discount")?;
        let quotes = e
            .get("quotes")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Schema("quotes".into()))?;
        for q in quotes {
            let mid = match q.get("mid") {
                Some(v) if !v.is_null() => {
                    Some(v.as_f64().ok_or_else(|| Error::Parse("`mid` is not a number".into()))?)
                }
                _ => None,
            };
            rows.push((
                QuoteRecord {
                    expiry: t,
                    strike: field(q, "k")?,
                    bid_iv: field(q, "bid")?,
                    ask_iv: field(q, "ask")?,
                    forward,
                    discount,
                },
                mid,
            ));
        }
    }
    QuoteSurface::from_rows(rows)
}

/// How strikes from different expiries are arranged in a [`PriceGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StrikeUnion {
    /// Each expiry keeps its own strikes.
    #[default]
    PerExpiry,
    /// All expiries must quote the same strikes.
    Common,
}

/// Call prices for one maturity on its augmented strike axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSlice {
    pub maturity: f64,
    /// `strikes[0] == 0`.
    pub strikes: Vec<f64>,
    /// `prices[0] == spot`.
    pub prices: Vec<f64>,
}

/// Augmented call-price matrix under the zero-rate convention.
///
/// Strikes and prices of expiry `j` are rescaled by `spot / F_j` and
/// undiscounted, so every expiry shares the spot `S0` and the strike-0 call
/// is worth `S0`. The maturity-0 row is `(S0 - K)^+` and is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceGrid {
    pub spot: f64,
    pub slices: Vec<GridSlice>,
}

impl PriceGrid {
    pub fn intrinsic(&self, strike: f64) -> f64 {
        (self.spot - strike).max(0.0)
    }

    pub fn maturities(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.maturity).collect()
    }

    /// Builds a grid directly from normalized prices (no augmentation is
    /// added; `strikes[0]` must already be 0).
    pub fn from_slices(spot: f64, slices: Vec<GridSlice>) -> Self {
        Self { spot, slices }
    }
}

/// Scale that maps expiry `j` quantities into the common-spot frame.
pub(crate) fn grid_scale(surface: &QuoteSurface, j: usize) -> f64 {
    surface.expiries[0].forward / surface.expiries[j].forward
}

/// Prices the mid vols and augments with the strike-0 column.
pub fn to_price_grid(surface: &QuoteSurface, policy: StrikeUnion) -> Result<PriceGrid> {
    if surface.is_empty() {
        return Err(Error::EmptyInput);
    }
    if policy == StrikeUnion::Common {
        let first = surface.expiries[0].strikes();
        if surface.expiries.iter().any(|s| s.strikes() != first) {
            return Err(Error::Validation {
                row: 0,
                reason: "strike sets differ across expiries".into(),
            });
        }
    }
    let spot = surface.expiries[0].forward;
    let mut slices = Vec::with_capacity(surface.expiries.len());
    for (j, s) in surface.expiries.iter().enumerate() {
        let scale = grid_scale(surface, j);
        let mut strikes = vec![0.0];
        let mut prices = vec![spot];
        for q in &s.quotes {
            let undiscounted = bsm_price(
                &BsmInputs::new(s.forward, q.strike, s.expiry, q.mid(), 1.0),
                OptionKind::Call,
            )?;
            strikes.push(q.strike * scale);
            prices.push(undiscounted * scale);
        }
        slices.push(GridSlice {
            maturity: s.expiry,
            strikes,
            prices,
        });
    }
    Ok(PriceGrid { spot, slices })
}

/// Discounted call prices at the bid and ask vols of every record, in
/// surface order.
pub fn band_prices(surface: &QuoteSurface) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(surface.len());
    for s in &surface.expiries {
        for q in &s.quotes {
            let bid = bsm_price(&s.inputs(q.strike, q.bid_iv), OptionKind::Call)?;
            let ask = bsm_price(&s.inputs(q.strike, q.ask_iv), OptionKind::Call)?;
            out.push((bid, ask));
        }
    }
    Ok(out)
}

/// Strike layout for generated fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrikeSpec {
    /// The same absolute strikes at every expiry.
    Absolute { strikes: Vec<f64> },
    /// `count` strikes evenly spaced in log-moneyness across
    /// `±width · ref_vol · sqrt(T)` around each forward.
    StdDevs { count: usize, width: f64, ref_vol: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub spot: f64,
    #[serde(default)]
    pub rate: f64,
    #[serde(default)]
    pub dividend: f64,
    pub expiries: Vec<f64>,
    pub strikes: StrikeSpec,
    /// Full bid-ask width in vol units, centred on the model vol.
    #[serde(default)]
    pub spread: f64,
}

impl SyntheticSpec {
    fn strikes_for(&self, forward: f64, t: f64) -> Vec<f64> {
        match &self.strikes {
            StrikeSpec::Absolute { strikes } => strikes.clone(),
            StrikeSpec::StdDevs { count, width, ref_vol } => {
                let half = width * ref_vol * t.sqrt();
                (0..*count)
                    .map(|i| {
                        let u = if *count == 1 {
                            0.0
                        } else {
                            -half + 2.0 * half * i as f64 / (*count - 1) as f64
                        };
                        // Rounded to 1e-6 so fixtures stay readable.
                        ((forward * u.exp()) * 1e6).round() / 1e6
                    })
                    .collect()
            }
        }
    }
}

/// Generates quotes from the time-dependent Heston expansion.
pub fn synthetic_surface(params: &HestonParams, spec: &SyntheticSpec) -> Result<QuoteSurface> {
    if spec.spread < 0.0 || !spec.spread.is_finite() {
        return Err(Error::InputDomain(format!("spread {} must be >= 0", spec.spread)));
    }
    let model = HestonParams {
        x0: spec.spot.ln(),
        ..params.clone()
    };
    let mut records = Vec::new();
    for &t in &spec.expiries {
        let forward = spec.spot * ((spec.rate - spec.dividend) * t).exp();
        let discount = (-spec.rate * t).exp();
        let strikes = spec.strikes_for(forward, t);
        let vols = bgm_smile(&model, &strikes, t, spec.rate, spec.dividend)?;
        for (k, v) in strikes.iter().zip(vols) {
            let v = v?;
            let half = 0.5 * spec.spread;
            records.push(QuoteRecord {
                expiry: t,
                strike: *k,
                bid_iv: (v - half).max(1e-4),
                ask_iv: v + half,
                forward,
                discount,
            });
        }
    }
    let mut surface = QuoteSurface::from_records(&records)?;
    // Keep the exact model vol as the mid when the floor clipped the bid.
    for s in &mut surface.expiries {
        for q in &mut s.quotes {
            let centre = q.ask_iv - 0.5 * spec.spread;
            if (q.mid() - centre).abs() > 1e-15 {
                q.mid_iv = Some(centre);
            }
        }
    }
    Ok(surface)
}
