//! Arbitrage-free implied volatility surfaces.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod alt;
pub mod arbitrage;
pub mod bsm;
pub mod calibration;
pub mod cli;
pub mod diagnostics;
pub mod dupire;
pub mod error;
pub mod heston;
pub mod market_data;
pub mod qp;
mod quad;
pub mod svi;
pub mod tails;

pub use error::{Error, Result};
