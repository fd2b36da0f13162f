"""Smoke test for the volforge Python bindings.

Build and install first, e.g.
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/volforge-*.whl
then run
    python python/smoke_test.py
"""

import json
import math
from pathlib import Path

import volforge

FIXTURES = Path(__file__).resolve().parent.parent / "crates" / "core" / "fixtures"


def check(cond, msg):
    if not cond:
        raise AssertionError(msg)


def bsm_round_trip():
    p = volforge.bsm_price(100.0, 110.0, 0.75, 0.23, discount=0.98, kind="put")
    v = volforge.implied_vol(p, 100.0, 110.0, 0.75, discount=0.98, kind="put")
    check(abs(v - 0.23) < 1e-10, f"implied vol {v}")
    c = volforge.bsm_price(100.0, 110.0, 0.75, 0.23, discount=0.98)
    check(abs(c - p - 0.98 * (100.0 - 110.0)) < 1e-10, "put-call parity")
    check(volforge.bsm_vega(100.0, 100.0, 1.0, 0.2) > 0.0, "vega")
    try:
        volforge.bsm_price(100.0, -1.0, 1.0, 0.2)
    except volforge.VolforgeError:
        pass
    else:
        raise AssertionError("negative strike accepted")


def heston():
    params = (FIXTURES / "bgm_params.json").read_text()
    put = volforge.heston_price(params, 95.0, 1.0, kind="put")
    call = volforge.heston_price(params, 95.0, 1.0, kind="call")
    check(put > 0.0 and abs(call - put - (1.0 - 95.0)) < 1e-10, "expansion parity in forward units")
    spec = (FIXTURES / "synth_spec.json").read_text()
    quotes = volforge.Quotes.synthetic(params, spec)
    check(quotes.expiries == [0.25, 0.5, 1.0], f"synthetic expiries {quotes.expiries}")
    surf = volforge.Surface.heston(params, 0.02, 0.01, quotes.expiries)
    check(0.1 < surf.vol(0.5, 0.0) < 0.3, "Heston surface ATM vol")


def repair():
    quotes = volforge.Quotes.read(str(FIXTURES / "violating_quotes.csv"))
    before = json.loads(quotes.arbitrage())
    check(not before["pass"], "fixture should violate static arbitrage")
    fixed, report = quotes.repair()
    report = json.loads(report)
    check(report["repaired"] and report["after"]["pass"], "repair")
    check(json.loads(fixed.arbitrage())["pass"], "repaired quotes clean")
    again = volforge.Quotes.from_json(fixed.to_json())
    check(len(again) == len(fixed), "JSON round trip")


def fit_and_diagnose():
    quotes = volforge.Quotes.read(str(FIXTURES / "sample_quotes.csv"))
    check(len(quotes) == 27, repr(quotes))
    surf, details = volforge.Surface.fit(quotes, "svi", seed=7)
    check(surf.method == "svi", surf.method)
    check(len(json.loads(details)["slices"]) == 3, "SVI slices")
    vols = surf.vols(0.5, [-0.2, 0.0, 0.2])
    check(all(v is not None and 0.05 < v < 0.5 for v in vols), f"vols {vols}")
    prices = surf.prices(1.0, [0.0])
    check(prices[0] is not None and 0.0 < prices[0] < 1.0, "normalized ATM price")

    bundle = json.loads(surf.diagnose(quotes))
    rmse = max(r["rmse_vol"] for r in bundle["fit"]["rows"])
    check(rmse < 25e-4, f"fit RMSE {rmse}")
    check(bundle["butterfly_violations"] == 0 and bundle["calendar_violations"] == 0, "dense scan")

    restored = volforge.Surface.from_json(surf.to_json())
    check(math.isclose(restored.vol(0.75, 0.1), surf.vol(0.75, 0.1), rel_tol=0, abs_tol=1e-15), "handle round trip")
    tailed = surf.with_tails()
    check(tailed.vol(1.0, 0.0) > 0.0, "tails attached")

    ah, _ = volforge.Surface.fit(quotes, "ah")
    check(abs(ah.vol(1.0, 0.0) - surf.vol(1.0, 0.0)) < 5e-3, "AH and SVI agree at the money")

    try:
        volforge.Surface.fit(quotes, "sabr")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown model accepted")


def main():
    bsm_round_trip()
    heston()
    repair()
    fit_and_diagnose()
    print("volforge python smoke test: ok")


if __name__ == "__main__":
    main()
