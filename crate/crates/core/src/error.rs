//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("input outside domain: {0}")]
    InputDomain(String),

    #[error("price {price} outside no-arbitrage band [{lower}, {upper}]")]
    PriceOutOfBounds { price: f64, lower: f64, upper: f64 },

    #[error("no convergence after {iterations} iterations: {context}")]
    NoConvergence { iterations: usize, context: String },

    #[error("time {t} outside expiry span [{first}, {last}]")]
    ExtrapolationNotAllowed { t: f64, first: f64, last: f64 },

    #[error("missing column `{0}`")]
    Schema(String),

    #[error("invalid quote at row {row}: {reason}")]
    Validation { row: usize, reason: String },

    #[error("duplicate quote at expiry {expiry}, strike {strike}")]
    DuplicateQuote { expiry: f64, strike: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("empty input")]
    EmptyInput,

    #[error("repeated strike {strike} at expiry index {expiry}")]
    DegenerateStrikeSpacing { expiry: usize, strike: f64 },

    #[error("need at least {needed} strikes, got {got}")]
    InsufficientStrikes { needed: usize, got: usize },

    #[error("static arbitrage present at expiry index {expiry}")]
    ArbitragePresent { expiry: usize },

    #[error("no price inside the bid-ask band at expiry {expiry} satisfies: {constraints:?}")]
    InfeasibleWithinSpread { expiry: f64, constraints: Vec<String> },

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("no feasible fit: {0}")]
    NoFeasibleFit(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("strike {strike} outside grid [{min}, {max}]")]
    StrikeOutsideGrid { strike: f64, min: f64, max: f64 },

    #[error("{what} = {value} outside range [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("invalid tail anchor: {0}")]
    InvalidAnchor(String),

    #[error("degenerate tail anchor: {0}")]
    DegenerateAnchor(String),

    #[error("strike {strike} outside tail region")]
    OutOfRegion { strike: f64 },

    #[error("no admissible real root: {0}")]
    NoRealRoot(String),

    #[error("constraint violation: {0:?}")]
    ConstraintViolation(Vec<String>),

    #[error("too few points inside the kernel window: {got} < {needed}")]
    BandwidthTooSmall { got: usize, needed: usize },

    #[error("quadrature did not reach tolerance: {0}")]
    NumericalAccuracy(String),

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub(crate) fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InputDomain(format!("{name} is not finite ({v})")))
    }
}
