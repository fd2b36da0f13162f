//! Static-arbitrage tests on augmented call-price grids, implied marginal
//! densities, and quote repair inside the bid-ask band.

use serde::{Deserialize, Serialize};

use crate::bsm::{bsm_price, implied_vol, BsmInputs, Contract, OptionKind};
use crate::error::{Error, Result};
use crate::market_data::{grid_scale, to_price_grid, PriceGrid, QuoteSurface, StrikeUnion};
use crate::qp::{project, Constraint};

/// Absolute tolerance on price combinations.
pub const ARB_TOL: f64 = 1e-12;

/// `(i, j, value)`: strike index within maturity `j`, maturity index with
/// `j = 0` the time-0 row.
pub type Violation = (usize, usize, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArbitrageReport {
    pub pass: bool,
    pub vertical: Vec<Violation>,
    pub butterfly: Vec<Violation>,
    pub calendar: Vec<Violation>,
}

impl ArbitrageReport {
    fn new(vertical: Vec<Violation>, butterfly: Vec<Violation>, calendar: Vec<Violation>) -> Self {
        let pass = vertical.is_empty() && butterfly.is_empty() && calendar.is_empty();
        Self {
            pass,
            vertical,
            butterfly,
            calendar,
        }
    }
}

fn check_spacing(strikes: &[f64], j: usize) -> Result<()> {
    for w in strikes.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::DegenerateStrikeSpacing {
                expiry: j,
                strike: w[1],
            });
        }
    }
    Ok(())
}

/// Vertical-spread costs `Q[j][i]` (with `Q[j][0] = 0`) and the entries
/// outside `[0, 1]`.
pub fn vertical_spread_test(grid: &PriceGrid) -> Result<(Vec<Vec<f64>>, Vec<Violation>)> {
    let mut all = Vec::with_capacity(grid.slices.len());
    let mut bad = Vec::new();
    for (jj, s) in grid.slices.iter().enumerate() {
        let j = jj + 1;
        check_spacing(&s.strikes, j)?;
        let mut q = vec![0.0; s.strikes.len()];
        for i in 1..s.strikes.len() {
            q[i] = (s.prices[i - 1] - s.prices[i]) / (s.strikes[i] - s.strikes[i - 1]);
            if q[i] < -ARB_TOL || q[i] > 1.0 + ARB_TOL {
                bad.push((i, j, q[i]));
            }
        }
        all.push(q);
    }
    Ok((all, bad))
}

fn butterfly_value(k: &[f64], c: &[f64], i: usize) -> f64 {
    let w1 = (k[i + 1] - k[i - 1]) / (k[i + 1] - k[i]);
    let w2 = (k[i] - k[i - 1]) / (k[i + 1] - k[i]);
    c[i - 1] - w1 * c[i] + w2 * c[i + 1]
}

/// Butterfly costs `BSpr[j][i]` for interior strikes `i = 1..N-1`
/// (index 0 of each row is unused and zero).
pub fn butterfly_test(grid: &PriceGrid) -> Result<(Vec<Vec<f64>>, Vec<Violation>)> {
    let mut all = Vec::with_capacity(grid.slices.len());
    let mut bad = Vec::new();
    for (jj, s) in grid.slices.iter().enumerate() {
        let j = jj + 1;
        if s.strikes.len() < 3 {
            return Err(Error::InsufficientStrikes {
                needed: 3,
                got: s.strikes.len(),
            });
        }
        check_spacing(&s.strikes, j)?;
        let mut b = vec![0.0; s.strikes.len() - 1];
        for i in 1..s.strikes.len() - 1 {
            b[i] = butterfly_value(&s.strikes, &s.prices, i);
            if b[i] < -ARB_TOL {
                bad.push((i, j, b[i]));
            }
        }
        all.push(b);
    }
    Ok((all, bad))
}

fn same_strike(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Calendar spreads between adjacent maturities at shared strikes,
/// including the step from the time-0 intrinsic row. Violations are
/// reported against the later maturity.
pub fn calendar_test(grid: &PriceGrid) -> Vec<Violation> {
    let mut bad = Vec::new();
    for (jj, s) in grid.slices.iter().enumerate() {
        let j = jj + 1;
        for (i, (&k, &c)) in s.strikes.iter().zip(&s.prices).enumerate() {
            let earlier = if jj == 0 {
                Some(grid.intrinsic(k))
            } else {
                let p = &grid.slices[jj - 1];
                p.strikes.iter().position(|&kp| same_strike(kp, k)).map(|m| p.prices[m])
            };
            if let Some(e) = earlier {
                let d = c - e;
                if d < -ARB_TOL {
                    bad.push((i, j, d));
                }
            }
        }
    }
    bad
}

pub fn arbitrage_report(grid: &PriceGrid) -> Result<ArbitrageReport> {
    let (_, vertical) = vertical_spread_test(grid)?;
    let butterfly = if grid.slices.iter().all(|s| s.strikes.len() >= 3) {
        butterfly_test(grid)?.1
    } else {
        Vec::new()
    };
    Ok(ArbitrageReport::new(vertical, butterfly, calendar_test(grid)))
}

/// Discrete risk-neutral marginal at one maturity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalDensity {
    /// Strikes `K_1..K_N` carrying the atoms.
    pub strikes: Vec<f64>,
    /// `q_i = Q_i - Q_{i+1}` with `Q_{N+1} = 0`.
    pub atoms: Vec<f64>,
    /// Running sums of the atoms.
    pub cumulative: Vec<f64>,
}

impl MarginalDensity {
    /// Mass at strikes `<= k`.
    pub fn cdf(&self, k: f64) -> f64 {
        let n = self.strikes.partition_point(|&s| s <= k);
        if n == 0 {
            0.0
        } else {
            self.cumulative[n - 1]
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Atoms implied by maturity `j` (1-based, as in the reports).
pub fn marginal_density(grid: &PriceGrid, j: usize) -> Result<MarginalDensity> {
    if j == 0 || j > grid.slices.len() {
        return Err(Error::OutOfRange {
            what: "maturity index",
            value: j as f64,
            min: 1.0,
            max: grid.slices.len() as f64,
        });
    }
    let single = PriceGrid::from_slices(grid.spot, vec![grid.slices[j - 1].clone()]);
    let (q, vertical) = vertical_spread_test(&single)?;
    let butterfly = if single.slices[0].strikes.len() >= 3 {
        butterfly_test(&single)?.1
    } else {
        Vec::new()
    };
    if !vertical.is_empty() || !butterfly.is_empty() {
        return Err(Error::ArbitragePresent { expiry: j });
    }
    let q = &q[0];
    let n = q.len() - 1;
    let s = &grid.slices[j - 1];
    let mut atoms = Vec::with_capacity(n);
    for i in 1..=n {
        let next = if i < n { q[i + 1] } else { 0.0 };
        atoms.push((q[i] - next).max(0.0));
    }
    let cumulative = atoms
        .iter()
        .scan(0.0, |acc, a| {
            *acc += a;
            Some(*acc)
        })
        .collect();
    Ok(MarginalDensity {
        strikes: s.strikes[1..].to_vec(),
        atoms,
        cumulative,
    })
}

/// Repair result: the adjusted surface and reports before and after.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub surface: QuoteSurface,
    pub repaired: bool,
    /// Largest absolute change of a discounted mid price.
    pub max_adjustment: f64,
    pub before: ArbitrageReport,
    pub after: ArbitrageReport,
}

/// Projects mid prices, expiry by expiry, onto the set satisfying the
/// vertical, butterfly and calendar constraints inside the bid-ask band.
///
/// Each expiry solves `min Σ (C_i - mid_i)^2` subject to `0 <= Q <= 1`,
/// `BSpr >= 0`, `C_i >= C_i(previous repaired expiry)` at shared strikes
/// (the intrinsic row for the first expiry), and `bid_i <= C_i <= ask_i`.
pub fn repair_quotes(surface: &QuoteSurface) -> Result<RepairOutcome> {
    if surface.is_empty() {
        return Err(Error::EmptyInput);
    }
    let before_grid = to_price_grid(surface, StrikeUnion::PerExpiry)?;
    let before = arbitrage_report(&before_grid)?;
    let spot = before_grid.spot;

    let mut out = surface.clone();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut max_adjustment: f64 = 0.0;

    for (j, slice) in surface.expiries.iter().enumerate() {
        let scale = grid_scale(surface, j);
        let strikes: Vec<f64> = slice.quotes.iter().map(|q| q.strike * scale).collect();
        let mid: Vec<f64> = before_grid.slices[j].prices[1..].to_vec();
        let mut bid = Vec::with_capacity(mid.len());
        let mut ask = Vec::with_capacity(mid.len());
        for q in &slice.quotes {
            let b = bsm_price(
                &BsmInputs::new(slice.forward, q.strike, slice.expiry, q.bid_iv, 1.0),
                OptionKind::Call,
            )?;
            let a = bsm_price(
                &BsmInputs::new(slice.forward, q.strike, slice.expiry, q.ask_iv, 1.0),
                OptionKind::Call,
            )?;
            bid.push(b * scale);
            ask.push(a * scale);
        }
        let cons = expiry_constraints(spot, &strikes, &bid, &ask, prev.as_ref());
        let sol = project(&mid, &cons, ARB_TOL).map_err(|e| Error::InfeasibleWithinSpread {
            expiry: slice.expiry,
            constraints: e.conflicting,
        })?;

        for (i, q) in out.expiries[j].quotes.iter_mut().enumerate() {
            let x = sol.x[i];
            if x == mid[i] {
                continue;
            }
            max_adjustment = max_adjustment.max((x - mid[i]).abs() / scale * slice.discount);
            let contract = Contract::new(slice.forward, q.strike, slice.expiry, 1.0);
            let iv = match implied_vol(x / scale, &contract, OptionKind::Call) {
                Ok(v) => v.clamp(q.bid_iv, q.ask_iv),
                Err(_) if x <= bid[i] => q.bid_iv,
                Err(_) => q.ask_iv,
            };
            q.mid_iv = Some(iv);
        }
        prev = Some((strikes, sol.x));
    }

    let after = arbitrage_report(&to_price_grid(&out, StrikeUnion::PerExpiry)?)?;
    Ok(RepairOutcome {
        repaired: max_adjustment > 0.0,
        surface: out,
        max_adjustment,
        before,
        after,
    })
}

fn expiry_constraints(
    spot: f64,
    strikes: &[f64],
    bid: &[f64],
    ask: &[f64],
    prev: Option<&(Vec<f64>, Vec<f64>)>,
) -> Vec<Constraint> {
    let n = strikes.len();
    let k = |i: usize| if i == 0 { 0.0 } else { strikes[i - 1] };
    // Variable v = i - 1 holds the price at augmented strike index i >= 1.
    let mut cons = Vec::new();
    for v in 0..n {
        let i = v + 1;
        cons.push(Constraint::new(vec![(v, 1.0)], bid[v], format!("bid[{i}]")));
        cons.push(Constraint::new(vec![(v, -1.0)], -ask[v], format!("ask[{i}]")));
        let dk = k(i) - k(i - 1);
        if i == 1 {
            cons.push(Constraint::new(vec![(v, -1.0)], -spot, "vertical>=0[1]"));
            cons.push(Constraint::new(vec![(v, 1.0)], spot - dk, "vertical<=1[1]"));
        } else {
            cons.push(Constraint::new(
                vec![(v - 1, 1.0), (v, -1.0)],
                0.0,
                format!("vertical>=0[{i}]"),
            ));
            cons.push(Constraint::new(
                vec![(v, 1.0), (v - 1, -1.0)],
                -dk,
                format!("vertical<=1[{i}]"),
            ));
        }
    }
    for i in 1..n {
        // BSpr at augmented index i uses prices at i-1, i, i+1.
        let w1 = (k(i + 1) - k(i - 1)) / (k(i + 1) - k(i));
        let w2 = (k(i) - k(i - 1)) / (k(i + 1) - k(i));
        let label = format!("butterfly[{i}]");
        if i == 1 {
            cons.push(Constraint::new(vec![(0, -w1), (1, w2)], -spot, label));
        } else {
            cons.push(Constraint::new(vec![(i - 2, 1.0), (i - 1, -w1), (i, w2)], 0.0, label));
        }
    }
    for v in 0..n {
        let floor = match prev {
            None => Some((spot - strikes[v]).max(0.0)),
            Some((pk, pc)) => pk.iter().position(|&x| same_strike(x, strikes[v])).map(|m| pc[m]),
        };
        if let Some(f) = floor {
            cons.push(Constraint::new(vec![(v, 1.0)], f, format!("calendar[{}]", v + 1)));
        }
    }
    cons
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{ExpirySlice, GridSlice, Quote};

    fn grid(spot: f64, rows: &[(f64, &[f64], &[f64])]) -> PriceGrid {
        PriceGrid::from_slices(
            spot,
            rows.iter()
                .map(|(t, k, c)| GridSlice {
                    maturity: *t,
                    strikes: k.to_vec(),
                    prices: c.to_vec(),
                })
                .collect(),
        )
    }

    #[test]
    fn vertical_arithmetic() {
        let g = grid(100.0, &[(1.0, &[0.0, 100.0, 105.0], &[100.0, 10.0, 8.0])]);
        let (q, bad) = vertical_spread_test(&g).unwrap();
        assert!((q[0][2] - 0.4).abs() < 1e-15);
        assert!(bad.is_empty());
        let g = grid(100.0, &[(1.0, &[0.0, 100.0, 105.0], &[100.0, 8.0, 10.0])]);
        let (_, bad) = vertical_spread_test(&g).unwrap();
        assert_eq!(bad.len(), 1);
        assert!(bad[0].2 < 0.0);
        let g = grid(100.0, &[(1.0, &[0.0, 100.0, 100.0], &[100.0, 8.0, 8.0])]);
        assert!(matches!(
            vertical_spread_test(&g),
            Err(Error::DegenerateStrikeSpacing { .. })
        ));
    }

    #[test]
    fn butterfly_arithmetic() {
        let g = grid(100.0, &[(1.0, &[0.0, 95.0, 100.0, 105.0], &[100.0, 10.0, 8.0, 6.5])]);
        let (b, bad) = butterfly_test(&g).unwrap();
        assert!((b[0][2] - 0.5).abs() < 1e-12);
        assert!(bad.is_empty());
        let g = grid(100.0, &[(1.0, &[0.0, 95.0, 100.0, 105.0], &[100.0, 10.0, 8.0, 5.5])]);
        let (b, bad) = butterfly_test(&g).unwrap();
        assert!((b[0][2] + 0.5).abs() < 1e-12);
        assert_eq!(bad, vec![(2, 1, b[0][2])]);
        let g = grid(100.0, &[(1.0, &[0.0, 95.0], &[100.0, 10.0])]);
        assert!(matches!(butterfly_test(&g), Err(Error::InsufficientStrikes { .. })));
    }

    #[test]
    fn calendar_arithmetic() {
        let k: &[f64] = &[0.0, 100.0];
        let ok = grid(100.0, &[(1.0, k, &[100.0, 8.0]), (2.0, k, &[100.0, 8.2])]);
        assert!(calendar_test(&ok).is_empty());
        let bad = grid(100.0, &[(1.0, k, &[100.0, 8.0]), (2.0, k, &[100.0, 7.9])]);
        let v = calendar_test(&bad);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].0, v[0].1), (1, 2));
    }

    #[test]
    fn degenerate_density() {
        let g = grid(100.0, &[(1.0, &[0.0, 100.0, 110.0], &[100.0, 0.0, 0.0])]);
        let d = marginal_density(&g, 1).unwrap();
        assert_eq!(d.atoms, vec![1.0, 0.0]);
        assert_eq!(d.total_mass(), 1.0);
        assert_eq!(d.cdf(99.0), 0.0);
        assert_eq!(d.cdf(100.0), 1.0);
        let arb = grid(100.0, &[(1.0, &[0.0, 95.0, 100.0, 105.0], &[100.0, 10.0, 8.0, 5.5])]);
        assert!(matches!(
            marginal_density(&arb, 1),
            Err(Error::ArbitragePresent { expiry: 1 })
        ));
    }

    fn surface(quotes: &[(f64, f64, f64)]) -> QuoteSurface {
        QuoteSurface {
            expiries: vec![ExpirySlice {
                expiry: 1.0,
                forward: 100.0,
                discount: 1.0,
                quotes: quotes.iter().map(|&(k, b, a)| Quote::new(k, b, a)).collect(),
            }],
        }
    }

    #[test]
    fn clean_surface_unchanged() {
        let s = surface(&[(90.0, 0.21, 0.23), (100.0, 0.19, 0.21), (110.0, 0.18, 0.2)]);
        let out = repair_quotes(&s).unwrap();
        assert!(!out.repaired);
        assert_eq!(out.surface, s);
        assert!(out.after.pass);
    }

    #[test]
    fn infeasible_band_reported() {
        // A put-side vol spike far larger than its band allows.
        let s = surface(&[(90.0, 0.2, 0.2001), (100.0, 0.60, 0.6001), (110.0, 0.2, 0.2001)]);
        match repair_quotes(&s) {
            Err(Error::InfeasibleWithinSpread { expiry, constraints }) => {
                assert_eq!(expiry, 1.0);
                assert!(!constraints.is_empty());
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }
}
