mod support;

use support::{heston_put_mc, McHeston};
use volforge::bsm::{bsm_price, BsmInputs, OptionKind};
use volforge::heston::{bgm_call_price, bgm_put_price, HestonParams};

fn params(xi: f64, rho: f64) -> HestonParams {
    let mut p = HestonParams::constant(1.5, 0.04, xi, rho, 0.05);
    p.x0 = 100f64.ln();
    p
}

#[test]
fn expansion_tracks_monte_carlo_at_small_vol_of_vol() {
    // The remaining gap is the third-order term (about 1.5e-3 here) plus
    // Euler bias; both sit well inside 3e-3.
    let strikes = [85.0, 100.0, 115.0];
    for (seed, rho) in [(1u64, -0.7), (2, 0.3)] {
        let m = McHeston {
            spot: 100.0,
            kappa: 1.5,
            theta: 0.04,
            xi: 0.1,
            rho,
            nu0: 0.05,
        };
        let mc = heston_put_mc(&[m], &strikes, 1.0, 0.0, 250, 100_000, seed);
        for (k, est) in strikes.iter().zip(&mc[0]) {
            let bgm = bgm_put_price(&params(0.1, rho), *k, 1.0, 0.0, 0.0).unwrap();
            let gap = (bgm - est.price).abs();
            assert!(
                gap <= 4.0 * est.std_err + 3e-3,
                "rho {rho} K {k}: bgm {bgm} mc {} se {}",
                est.price,
                est.std_err
            );
        }
    }
}

#[test]
fn zero_vol_of_vol_is_black_scholes_with_integrated_variance() {
    let p = params(0.0, -0.5);
    let (kappa, theta, nu0, t) = (1.5f64, 0.04, 0.05, 2.0);
    let var = theta * t + (nu0 - theta) * (1.0 - (-kappa * t).exp()) / kappa;
    for k in [70.0, 100.0, 140.0] {
        let want = bsm_price(&BsmInputs::new(100.0, k, t, (var / t).sqrt(), 1.0), OptionKind::Put).unwrap();
        assert!((bgm_put_price(&p, k, t, 0.0, 0.0).unwrap() - want).abs() < 1e-10);
    }
}

#[test]
fn calls_and_puts_satisfy_parity() {
    let (r, q, t) = (0.03f64, 0.01, 1.5);
    let p = params(0.4, -0.6);
    let (f, df) = (100.0 * ((r - q) * t).exp(), (-r * t).exp());
    for k in [60.0, 95.0, 100.0, 130.0] {
        let c = bgm_call_price(&p, k, t, r, q).unwrap();
        let put = bgm_put_price(&p, k, t, r, q).unwrap();
        assert!((c - put - df * (f - k)).abs() < 1e-10, "{k}");
    }
}
