import csv
import dataclasses
import math

import numpy as np
import pytest

from recproj.boundary import (
    boundary_to_csv,
    exercise_boundary_discrete,
    exercise_boundary_yield,
    premium_decomposition,
)
from recproj.models import BSModel, DividendYield, MarketEnv, matched_bs
from recproj.pricer import (
    AmericanCallOnDivDates,
    Bermudan,
    Call,
    Contract,
    price_contract,
)


def by_ttm(points):
    return {round(p.ttm, 6): p for p in points}


# ---------------------------------------------------------------------------
# discrete-dividend boundaries (stochastic variance)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def heston_discrete_boundary(heston_boundary_setup):
    model, env, contract = heston_boundary_setup
    return exercise_boundary_discrete(contract, model, env, J=10, J_w=5)


def test_heston_discrete_boundary_levels(heston_discrete_boundary):
    pts = by_ttm(heston_discrete_boundary)
    assert pts[0.25].s_star == pytest.approx(127.29, abs=0.5)
    assert pts[0.5].s_star == pytest.approx(145.68, abs=0.5)


def test_heston_boundary_above_matched_bs(heston_boundary_setup):
    model, env, contract = heston_boundary_setup
    heston_pts = by_ttm(
        exercise_boundary_discrete(contract, model, env, J=10, J_w=5))
    for ttm in (0.25, 0.5):
        bs_pts = by_ttm(exercise_boundary_discrete(
            contract, matched_bs(model, ttm), env, J=10))
        assert heston_pts[ttm].s_star > bs_pts[ttm].s_star


def test_bs_matched_boundary_levels(heston_boundary_setup):
    model, env, contract = heston_boundary_setup
    for ttm, target in ((0.25, 126.2), (0.5, 144.8)):
        pts = by_ttm(exercise_boundary_discrete(
            contract, matched_bs(model, ttm), env, J=10))
        assert pts[ttm].s_star == pytest.approx(target, abs=0.5)


# ---------------------------------------------------------------------------
# discrete-dividend boundaries (jumps)
# ---------------------------------------------------------------------------

def test_merton_discrete_boundary_levels(merton_boundary_setup):
    model, env, contract = merton_boundary_setup
    pts = by_ttm(exercise_boundary_discrete(contract, model, env, J=10))
    assert pts[0.25].s_star == pytest.approx(63.56, abs=0.25)
    assert pts[0.5].s_star == pytest.approx(74.59, abs=0.25)


def test_merton_boundary_above_matched_bs(merton_boundary_setup):
    model, env, contract = merton_boundary_setup
    merton_pts = by_ttm(
        exercise_boundary_discrete(contract, model, env, J=10))
    for ttm, target in ((0.25, 61.34), (0.5, 73.97)):
        bs_pts = by_ttm(exercise_boundary_discrete(
            contract, matched_bs(model, ttm), env, J=10))
        assert bs_pts[ttm].s_star == pytest.approx(target, abs=0.25)
        assert merton_pts[ttm].s_star > bs_pts[ttm].s_star


# ---------------------------------------------------------------------------
# structural properties
# ---------------------------------------------------------------------------

def test_no_dividends_means_no_boundary():
    contract = Contract(payoff=Call(100.0), maturity=1.0,
                        style=AmericanCallOnDivDates())
    env = MarketEnv(r=0.05)
    assert exercise_boundary_discrete(contract, BSModel(sigma=0.2), env,
                                      J=8) == []


def test_bracket_is_one_node_wide(merton_boundary_setup):
    model, env, contract = merton_boundary_setup
    points = exercise_boundary_discrete(contract, model, env, J=9)
    for p in points:
        lo, hi = p.bracket
        assert lo < p.s_star < hi
        # adjacent grid nodes: log-spacing equals one grid cell
        assert math.log(hi / lo) < 0.05


def test_boundary_monotone_in_ttm(merton_boundary_setup):
    model, env, contract = merton_boundary_setup
    points = sorted(exercise_boundary_discrete(contract, model, env, J=9),
                    key=lambda p: p.ttm)
    stars = [p.s_star for p in points if p.s_star is not None]
    assert all(a < b for a, b in zip(stars, stars[1:]))


def test_boundary_regime_label(heston_discrete_boundary):
    assert all(p.regime == "discrete-dividend"
               for p in heston_discrete_boundary)


# ---------------------------------------------------------------------------
# dividend-yield boundary
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def yield_setup(heston_boundary_setup):
    model, _, _ = heston_boundary_setup
    env = MarketEnv(r=0.05, dividend=DividendYield(rate=0.03))
    contract = Contract(payoff=Call(100.0), maturity=0.5,
                        style=AmericanCallOnDivDates())
    return model, env, contract


WEEK_RATE = 365.0 / 7.0


def test_yield_boundary_bs_endpoint(yield_setup):
    model, env, contract = yield_setup
    ttm_far = 26 * 7.0 / 365.0
    bs = matched_bs(model, ttm_far)
    points = exercise_boundary_yield(contract, bs, env, dates=(0.0,),
                                     steps_per_year=WEEK_RATE, J=11)
    endpoint = max(points, key=lambda p: p.ttm)
    assert endpoint.ttm == pytest.approx(ttm_far, abs=1e-9)
    assert endpoint.s_star == pytest.approx(183.76, abs=1.0)


def test_yield_boundary_decreasing_to_expiry(yield_setup):
    model, env, contract = yield_setup
    bs = matched_bs(model, 0.5)
    dates = tuple(k * 7.0 / 365.0 for k in range(27))
    points = sorted(
        exercise_boundary_yield(contract, bs, env, dates=dates,
                                steps_per_year=WEEK_RATE, J=10),
        key=lambda p: p.ttm)
    stars = [p.s_star for p in points if p.s_star is not None]
    assert stars == sorted(stars)
    # near expiry the boundary approaches K * max(1, r / q)
    assert stars[0] == pytest.approx(100.0 * 0.05 / 0.03, rel=0.02)


def test_yield_regime_label(yield_setup):
    model, env, contract = yield_setup
    bs = matched_bs(model, 0.5)
    points = exercise_boundary_yield(contract, bs, env, dates=(0.25,), J=9)
    assert all(p.regime == "yield" for p in points)


# ---------------------------------------------------------------------------
# premium decomposition
# ---------------------------------------------------------------------------

def test_premium_decomposition_matches_direct_price(yield_setup):
    _, env, contract = yield_setup
    bs = BSModel(sigma=0.3)
    # dense boundary curve and a matching densely monitored Bermudan
    h = 1.0 / 250.0
    dates = tuple(np.arange(h, 0.5, h))
    boundary = exercise_boundary_yield(contract, bs, env, dates=dates, J=11)
    mesh = tuple(np.arange(1, 126) * h)
    dense = dataclasses.replace(contract, style=Bermudan(dates=mesh))
    for spot in (100.0, 130.0, 160.0):
        euro, premium = premium_decomposition(contract, bs, env, boundary,
                                              spot)
        direct = price_contract(dense, bs, env, spot, J=11).price
        assert premium >= 0.0
        assert euro + premium == pytest.approx(direct, abs=1e-3 * direct)


def test_premium_zero_without_dividends():
    contract = Contract(payoff=Call(100.0), maturity=0.5,
                        style=AmericanCallOnDivDates())
    env = MarketEnv(r=0.05)
    bs = BSModel(sigma=0.3)
    euro, premium = premium_decomposition(contract, bs, env, [], 120.0)
    assert premium == 0.0
    direct = price_contract(contract, bs, env, 120.0, J=11).price
    assert euro == pytest.approx(direct, abs=2e-3)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_boundary_csv_round_trip(tmp_path, merton_boundary_setup):
    model, env, contract = merton_boundary_setup
    points = exercise_boundary_discrete(contract, model, env, J=9)
    path = tmp_path / "boundary.csv"
    boundary_to_csv(points, "merton", path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(points)
    assert rows[0]["model"] == "merton"
    ttms = [float(r["ttm"]) for r in rows]
    assert ttms == sorted(ttms)
    for row, point in zip(rows, sorted(points, key=lambda p: p.ttm)):
        assert float(row["s_star"]) == pytest.approx(point.s_star)
        assert row["regime"] == "discrete-dividend"
