//! Python bindings. Structured results cross the boundary as JSON strings.

use pyo3::create_exception;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use volforge::arbitrage::{arbitrage_report, repair_quotes};
use volforge::bsm::{self, BsmInputs, Contract, OptionKind};
use volforge::cli::{fit_model, ModelTag, RunConfig};
use volforge::diagnostics::{diagnose, GridSpec, SurfaceHandle};
use volforge::heston::{self, HestonParams};
use volforge::market_data::{
    parse_quotes, synthetic_surface, to_price_grid, Format, QuoteSurface, StrikeUnion, SyntheticSpec,
};
use volforge::Error;

create_exception!(volforge, VolforgeError, PyValueError);

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => VolforgeError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    VolforgeError::new_err(e.to_string())
}

fn kind(s: &str) -> PyResult<OptionKind> {
    match s.to_ascii_lowercase().as_str() {
        "call" | "c" => Ok(OptionKind::Call),
        "put" | "p" => Ok(OptionKind::Put),
        _ => Err(PyValueError::new_err(format!(
            "option kind must be 'call' or 'put', got {s:?}"
        ))),
    }
}

fn model_tag(s: &str) -> PyResult<ModelTag> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|_| {
        PyValueError::new_err(format!(
            "unknown model {s:?}; expected svi, ah, srv, lnv, mixture or dumas"
        ))
    })
}

/// A validated option quote surface (implied-vol bid/ask per strike and expiry).
#[pyclass(module = "volforge", name = "Quotes", skip_from_py_object)]
#[derive(Clone)]
struct PyQuotes {
    inner: QuoteSurface,
}

#[pymethods]
impl PyQuotes {
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        parse_quotes(text.as_bytes(), Format::Csv)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        parse_quotes(text.as_bytes(), Format::Json)
            .map(|inner| Self { inner })
            .map_err(err)
    }

    /// Reads a `.csv` or `.json` file.
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        if path.to_ascii_lowercase().ends_with(".json") {
            Self::from_json(&text)
        } else {
            Self::from_csv(&text)
        }
    }

    /// Quotes generated from the Heston expansion; both arguments are JSON.
    #[staticmethod]
    fn synthetic(params: &str, spec: &str) -> PyResult<Self> {
        let p: HestonParams = serde_json::from_str(params).map_err(json_err)?;
        let s: SyntheticSpec = serde_json::from_str(spec).map_err(json_err)?;
        synthetic_surface(&p, &s).map(|inner| Self { inner }).map_err(err)
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.to_csv(&mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(|e| VolforgeError::new_err(e.to_string()))
    }

    fn to_json(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.to_json(&mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(|e| VolforgeError::new_err(e.to_string()))
    }

    #[getter]
    fn expiries(&self) -> Vec<f64> {
        self.inner.expiry_times()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Quotes({} quotes, {} expiries)",
            self.inner.len(),
            self.inner.expiries.len()
        )
    }

    /// Static-arbitrage report (vertical, butterfly, calendar) as JSON.
    fn arbitrage(&self) -> PyResult<String> {
        let grid = to_price_grid(&self.inner, StrikeUnion::PerExpiry).map_err(err)?;
        serde_json::to_string(&arbitrage_report(&grid).map_err(err)?).map_err(json_err)
    }

    /// Returns `(repaired_quotes, report_json)`.
    fn repair(&self) -> PyResult<(PyQuotes, String)> {
        let out = repair_quotes(&self.inner).map_err(err)?;
        let report = serde_json::json!({
            "repaired": out.repaired,
            "max_adjustment": out.max_adjustment,
            "before": out.before,
            "after": out.after,
        });
        Ok((PyQuotes { inner: out.surface }, report.to_string()))
    }
}

/// A fitted or parametric volatility surface.
#[pyclass(module = "volforge", name = "Surface", skip_from_py_object)]
#[derive(Clone)]
struct PySurface {
    inner: SurfaceHandle,
}

#[pymethods]
impl PySurface {
    /// Fits `model` to `quotes`. `config` is a JSON run configuration; returns
    /// `(surface, details_json)`.
    #[staticmethod]
    #[pyo3(signature = (quotes, model, config=None, seed=None))]
    fn fit(quotes: &PyQuotes, model: &str, config: Option<&str>, seed: Option<u64>) -> PyResult<(PySurface, String)> {
        let tag = model_tag(model)?;
        let cfg: RunConfig = match config {
            Some(c) => serde_json::from_str(c).map_err(json_err)?,
            None => RunConfig::default(),
        };
        let mut engine = cfg.engine.clone();
        if let Some(s) = seed.or(cfg.seed) {
            engine.seed = s;
        }
        let (inner, details) = fit_model(&quotes.inner, tag, &cfg, &engine).map_err(err)?;
        Ok((PySurface { inner }, details.to_string()))
    }

    /// The Heston expansion itself as a surface.
    #[staticmethod]
    fn heston(params: &str, rate: f64, dividend: f64, expiries: Vec<f64>) -> PyResult<Self> {
        let p: HestonParams = serde_json::from_str(params).map_err(json_err)?;
        Ok(Self {
            inner: SurfaceHandle::bgm(p, rate, dividend, &expiries),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(|inner| Self { inner }).map_err(json_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(json_err)
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method()
    }

    #[getter]
    fn expiries(&self) -> Vec<f64> {
        self.inner.expiries()
    }

    /// Implied vol at log-moneyness `x = ln(K/F)`.
    fn vol(&self, t: f64, x: f64) -> PyResult<f64> {
        self.inner.vol(t, x).map_err(err)
    }

    /// Implied vols at each `x`; `None` where the model fails.
    fn vols(&self, t: f64, xs: Vec<f64>) -> Vec<Option<f64>> {
        self.inner.vols(t, &xs).into_iter().map(|v| v.ok()).collect()
    }

    /// Undiscounted call prices in forward units at each `x`.
    fn prices(&self, t: f64, xs: Vec<f64>) -> Vec<Option<f64>> {
        self.inner.prices(t, &xs).into_iter().map(|v| v.ok()).collect()
    }

    /// Attaches power-law tails; `settings` is JSON, defaults if omitted.
    #[pyo3(signature = (settings=None))]
    fn with_tails(&self, settings: Option<&str>) -> PyResult<Self> {
        let s = match settings {
            Some(s) => serde_json::from_str(s).map_err(json_err)?,
            None => Default::default(),
        };
        Ok(Self {
            inner: self.inner.clone().with_tails(s),
        })
    }

    /// Fit errors, dense arbitrage scan and tail checks as JSON.
    #[pyo3(signature = (quotes, grid=None))]
    fn diagnose(&self, quotes: &PyQuotes, grid: Option<&str>) -> PyResult<String> {
        let spec: GridSpec = match grid {
            Some(g) => serde_json::from_str(g).map_err(json_err)?,
            None => GridSpec::default(),
        };
        serde_json::to_string(&diagnose(&self.inner, &quotes.inner, &spec)).map_err(json_err)
    }

    fn __repr__(&self) -> String {
        format!("Surface({}, expiries={:?})", self.inner.method(), self.inner.expiries())
    }
}

/// Discounted Black price on a forward.
#[pyfunction]
#[pyo3(signature = (forward, strike, expiry, vol, discount=1.0, kind="call"))]
fn bsm_price(forward: f64, strike: f64, expiry: f64, vol: f64, discount: f64, kind: &str) -> PyResult<f64> {
    bsm::bsm_price(
        &BsmInputs::new(forward, strike, expiry, vol, discount),
        self::kind(kind)?,
    )
    .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (forward, strike, expiry, vol, discount=1.0))]
fn bsm_vega(forward: f64, strike: f64, expiry: f64, vol: f64, discount: f64) -> PyResult<f64> {
    bsm::bsm_vega(&BsmInputs::new(forward, strike, expiry, vol, discount)).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (price, forward, strike, expiry, discount=1.0, kind="call"))]
fn implied_vol(price: f64, forward: f64, strike: f64, expiry: f64, discount: f64, kind: &str) -> PyResult<f64> {
    bsm::implied_vol(
        price,
        &Contract::new(forward, strike, expiry, discount),
        self::kind(kind)?,
    )
    .map_err(err)
}

/// Second-order Heston price expansion; `params` is JSON.
#[pyfunction]
#[pyo3(signature = (params, strike, expiry, rate=0.0, dividend=0.0, kind="put"))]
fn heston_price(params: &str, strike: f64, expiry: f64, rate: f64, dividend: f64, kind: &str) -> PyResult<f64> {
    let p: HestonParams = serde_json::from_str(params).map_err(json_err)?;
    match self::kind(kind)? {
        OptionKind::Call => heston::bgm_call_price(&p, strike, expiry, rate, dividend),
        OptionKind::Put => heston::bgm_put_price(&p, strike, expiry, rate, dividend),
    }
    .map_err(err)
}

#[pymodule]
#[pyo3(name = "volforge")]
fn volforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("VolforgeError", m.py().get_type::<VolforgeError>())?;
    m.add_class::<PyQuotes>()?;
    m.add_class::<PySurface>()?;
    m.add_function(wrap_pyfunction!(bsm_price, m)?)?;
    m.add_function(wrap_pyfunction!(bsm_vega, m)?)?;
    m.add_function(wrap_pyfunction!(implied_vol, m)?)?;
    m.add_function(wrap_pyfunction!(heston_price, m)?)?;
    Ok(())
}
