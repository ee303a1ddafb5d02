import math

import pytest

from recproj.models import (
    BSModel,
    CashDividends,
    DividendYield,
    HestonModel,
    MarketEnv,
    MertonModel,
    ModelError,
)
from recproj.oracles import (
    McSpec,
    TreeSpec,
    bs_call,
    bs_put,
    bs_vega,
    european_closed_form,
    heston_call,
    lsm_price,
    merton_call,
    tree_price,
)

ENV = MarketEnv(r=0.05)


def test_bs_call_reference_value():
    assert bs_call(100.0, 100.0, 1.0, 0.05, 0.2) == pytest.approx(
        10.4506, abs=1e-4)


def test_put_call_parity():
    c = bs_call(105.0, 100.0, 0.7, 0.03, 0.25, q=0.01)
    p = bs_put(105.0, 100.0, 0.7, 0.03, 0.25, q=0.01)
    want = 105.0 * math.exp(-0.01 * 0.7) - 100.0 * math.exp(-0.03 * 0.7)
    assert c - p == pytest.approx(want, abs=1e-12)


def test_vega_matches_bump():
    eps = 1e-5
    bump = (bs_call(100.0, 100.0, 1.0, 0.05, 0.2 + eps)
            - bs_call(100.0, 100.0, 1.0, 0.05, 0.2 - eps)) / (2 * eps)
    assert bs_vega(100.0, 100.0, 1.0, 0.05, 0.2) == pytest.approx(
        bump, abs=1e-6)


def test_merton_zero_intensity_reduces_to_bs():
    model = MertonModel(sigma_m=0.2, gamma=0.0, mu_psi=0.0, sigma_psi=0.1)
    got = merton_call(100.0, 95.0, 1.0, 0.05, model)
    want = bs_call(100.0, 95.0, 1.0, 0.05, 0.2)
    assert got == pytest.approx(want, abs=1e-12)


def test_merton_series_converges():
    model = MertonModel(sigma_m=0.15, gamma=3.0, mu_psi=-0.1, sigma_psi=0.2)
    loose = merton_call(100.0, 100.0, 1.0, 0.05, model, tail=1e-8)
    tight = merton_call(100.0, 100.0, 1.0, 0.05, model, tail=1e-14)
    assert loose == pytest.approx(tight, abs=1e-7)
    assert tight > bs_call(100.0, 100.0, 1.0, 0.05, 0.15)


def test_heston_degenerate_vol_of_vol_approaches_bs():
    model = HestonModel(v0=0.04, beta=2.0, sigma_lt=0.2, omega=1e-6, rho=0.0)
    got = heston_call(100.0, 100.0, 1.0, 0.05, model)
    want = bs_call(100.0, 100.0, 1.0, 0.05, 0.2)
    assert got == pytest.approx(want, abs=1e-4)


def test_closed_form_supports_yield_dividends():
    env = MarketEnv(r=0.05, dividend=DividendYield(rate=0.02))
    got = european_closed_form(BSModel(sigma=0.2), "call", 100.0, 100.0,
                               1.0, env)
    assert got == pytest.approx(bs_call(100.0, 100.0, 1.0, 0.05, 0.2, q=0.02),
                                abs=1e-12)


def test_closed_form_rejects_cash_dividends():
    env = MarketEnv(r=0.05, dividend=CashDividends(schedule=((0.5, 2.0),)))
    with pytest.raises(ModelError):
        european_closed_form(BSModel(sigma=0.2), "call", 100.0, 100.0,
                             1.0, env)


# ---------------------------------------------------------------------------
# binomial tree
# ---------------------------------------------------------------------------

def test_tree_converges_to_closed_form_european():
    model = BSModel(sigma=0.2)
    res = tree_price(model, ENV, "call", 100.0, 100.0, 1.0,
                     TreeSpec(steps=2000), american=False)
    assert res.price == pytest.approx(bs_call(100.0, 100.0, 1.0, 0.05, 0.2),
                                      abs=2e-3)


def test_tree_american_put_exceeds_european():
    model = BSModel(sigma=0.2)
    am = tree_price(model, ENV, "put", 100.0, 100.0, 1.0,
                    TreeSpec(steps=1000), american=True)
    eu = bs_put(100.0, 100.0, 1.0, 0.05, 0.2)
    assert am.price > eu + 0.1


def test_tree_records_dividend_snap_offsets():
    env = MarketEnv(r=0.05, dividend=CashDividends(schedule=((0.4321, 2.0),)))
    res = tree_price(BSModel(sigma=0.2), env, "call", 100.0, 100.0, 1.0,
                     TreeSpec(steps=250), american=True)
    assert len(res.dividend_snap_offsets) == 1
    assert abs(res.dividend_snap_offsets[0]) <= 0.5 / 250 + 1e-12


def test_tree_variants_agree_with_dividend():
    env = MarketEnv(r=0.05, dividend=CashDividends(schedule=((0.5, 2.0),)))
    model = BSModel(sigma=0.2)
    a = tree_price(model, env, "call", 100.0, 100.0, 1.0,
                   TreeSpec(steps=500, variant="interpolated"))
    b = tree_price(model, env, "call", 100.0, 100.0, 1.0,
                   TreeSpec(steps=16, variant="non_recombining"))
    assert a.price == pytest.approx(b.price, abs=0.15)
    assert b.node_evaluations > 0


# ---------------------------------------------------------------------------
# least-squares Monte Carlo
# ---------------------------------------------------------------------------

def test_lsm_is_seed_deterministic():
    spec = McSpec(paths=20_000, seed=7)
    a = lsm_price(BSModel(sigma=0.2), ENV, "put", 100.0, 100.0, 1.0,
                  (0.25, 0.5, 0.75, 1.0), spec)
    b = lsm_price(BSModel(sigma=0.2), ENV, "put", 100.0, 100.0, 1.0,
                  (0.25, 0.5, 0.75, 1.0), spec)
    assert a.price == b.price
    assert a.std_error == b.std_error


def test_lsm_european_within_three_standard_errors():
    spec = McSpec(paths=100_000, seed=3)
    res = lsm_price(BSModel(sigma=0.2), ENV, "call", 100.0, 100.0, 1.0,
                    (1.0,), spec)
    want = bs_call(100.0, 100.0, 1.0, 0.05, 0.2)
    assert abs(res.price - want) < 3 * res.std_error
    assert res.std_error < 0.2


def test_lsm_heston_european_within_three_standard_errors():
    model = HestonModel(v0=0.04, beta=2.0, sigma_lt=0.2, omega=0.2, rho=-0.3)
    spec = McSpec(paths=100_000, seed=11)
    res = lsm_price(model, ENV, "call", 100.0, 100.0, 1.0, (1.0,), spec)
    want = heston_call(100.0, 100.0, 1.0, 0.05, model)
    assert abs(res.price - want) < 3 * res.std_error


def test_lsm_bermudan_put_between_european_and_tree_american():
    spec = McSpec(paths=80_000, seed=5)
    dates = tuple(i / 12 for i in range(1, 13))
    res = lsm_price(BSModel(sigma=0.2), ENV, "put", 100.0, 100.0, 1.0,
                    dates, spec)
    eu = bs_put(100.0, 100.0, 1.0, 0.05, 0.2)
    am = tree_price(BSModel(sigma=0.2), ENV, "put", 100.0, 100.0, 1.0,
                    TreeSpec(steps=2000), american=True).price
    assert eu - 3 * res.std_error < res.price < am + 3 * res.std_error
