"""Early-exercise boundaries and the early-exercise-premium decomposition.

Two regimes are supported:

* discrete cash dividends — exercise can only be optimal immediately before
  an ex-dividend date, so the boundary is one critical price per such date;
* continuous dividend yield — exercise can be optimal at any time, so the
  boundary is a curve extracted from a densely monitored Bermudan contract.

In both regimes the critical price at a date is the lowest spot at which
intrinsic value is at least the (dividend-shifted) continuation value.  The
crossing is located on the grid and refined by one linear interpolation
between the bracketing nodes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .models import (
    BSModel,
    BatesModel,
    DividendYield,
    HestonModel,
    MarketEnv,
    ModelError,
)
from .lattice import build_fourier_grid
from .pricer import (
    AmericanCallOnDivDates,
    Bermudan,
    Call,
    Contract,
    PricingError,
    default_grid,
    RING_TOL_DEFAULT,
    run_recursion_1d,
    run_recursion_2d,
)

__all__ = [
    "BoundaryPoint",
    "exercise_boundary_discrete",
    "exercise_boundary_yield",
    "premium_decomposition",
    "boundary_to_csv",
]


@dataclass(frozen=True)
class BoundaryPoint:
    """Critical spot at one decision date.

    ``s_star`` is None when no node on the grid satisfies the exercise
    condition (the exercise region, if any, lies above the grid)."""
    t: float                     # calendar time of the decision date
    ttm: float                   # time to maturity at that date
    s_star: float | None
    regime: str                  # "discrete-dividend" | "yield"
    bracket: tuple[float, float] | None = None


# ---------------------------------------------------------------------------
# crossing search
# ---------------------------------------------------------------------------

def _find_crossing(spots: np.ndarray, intrinsic: np.ndarray,
                   continuation: np.ndarray, strike: float):
    """Lowest spot where intrinsic >= continuation, restricted to the region
    where intrinsic is positive (a call is never exercised at or below the
    strike).  Returns (s_star, bracket) or (None, None)."""
    diff = intrinsic - continuation
    region = spots > strike
    if not np.any(region):
        return None, None
    idx = np.nonzero(region)[0]
    neg = idx[diff[idx] < 0]
    if neg.size == 0:
        # exercise optimal at every in-the-money node: boundary at the
        # lowest such node (cannot be bracketed from below on this grid)
        i = idx[0]
        return float(spots[i]), (float(spots[i]), float(spots[i]))
    i = int(neg[-1])
    if i + 1 >= spots.size or diff[i + 1] < 0:
        return None, None            # continuation wins all the way up
    s_lo, s_hi = float(spots[i]), float(spots[i + 1])
    f_lo, f_hi = float(diff[i]), float(diff[i + 1])
    s_star = s_lo + (s_hi - s_lo) * (-f_lo) / (f_hi - f_lo)
    return s_star, (s_lo, s_hi)


def _variance_slice(grid, values: np.ndarray, v0: float) -> np.ndarray:
    """Surface restricted to variance v0: exact column when v0 is a node,
    otherwise a local cubic fit across the four nearest variance nodes."""
    exact = np.nonzero(np.abs(grid.w - v0) < 1e-12)[0]
    if exact.size:
        return values[:, exact[0]]
    if not (grid.w[0] <= v0 <= grid.w[-1]):
        raise PricingError(f"v0={v0} outside variance grid")
    take = min(4, grid.n_w)
    idx = np.sort(np.argsort(np.abs(grid.w - v0))[:take])
    wk = grid.w[idx]
    weights = np.array([
        np.prod([(v0 - wk[m]) / (wk[k] - wk[m]) for m in range(take) if m != k])
        for k in range(take)
    ])
    return values[:, idx] @ weights


def _is_2d(model) -> bool:
    return isinstance(model, (HestonModel, BatesModel))


def _run(contract: Contract, model, env: MarketEnv, J: int, J_w: int,
         width_mult, kappa_mult: int, ring_tol: float):
    grid = default_grid(contract, model, env, J, J_w=J_w,
                        width_mult=width_mult)
    if _is_2d(model):
        fgrid = build_fourier_grid(grid, kappa_mult=kappa_mult)
        _, history, _ = run_recursion_2d(contract, model, env, grid, fgrid,
                                         keep_steps=True, ring_tol=ring_tol)
    else:
        _, history, _ = run_recursion_1d(contract, model, env, grid,
                                         keep_steps=True)
    return grid, history


def _boundary_from_record(grid, record, strike: float, v0: float | None,
                          regime: str, maturity: float) -> BoundaryPoint:
    spots = np.exp(grid.y)
    intrinsic = np.maximum(spots - strike, 0.0)
    cont = record.continuation
    if cont.ndim == 2:
        cont = _variance_slice(grid, cont, v0)
    s_star, bracket = _find_crossing(spots, intrinsic, cont, strike)
    return BoundaryPoint(t=record.t, ttm=maturity - record.t, s_star=s_star,
                         regime=regime, bracket=bracket)


# ---------------------------------------------------------------------------
# discrete-dividend regime
# ---------------------------------------------------------------------------

def exercise_boundary_discrete(contract: Contract, model, env: MarketEnv,
                               J: int = 10, J_w: int = 4,
                               width_mult: float | None = None,
                               kappa_mult: int = 4,
                               ring_tol: float = RING_TOL_DEFAULT,
                               ) -> list[BoundaryPoint]:
    """One critical price per ex-dividend date before maturity.

    The decision at an ex-dividend date compares the cum-dividend intrinsic
    value against the continuation value of the post-dividend position, which
    is exactly the comparison stored during backward induction."""
    if not isinstance(contract.payoff, Call):
        raise PricingError("boundary extraction implemented for calls")
    if not env.cash_dividends(contract.maturity):
        return []
    if not isinstance(contract.style, AmericanCallOnDivDates):
        contract = replace(contract, style=AmericanCallOnDivDates())
    grid, history = _run(contract, model, env, J, J_w, width_mult,
                         kappa_mult, ring_tol)
    v0 = model.v0 if isinstance(model, HestonModel) else (
        model.heston.v0 if isinstance(model, BatesModel) else None)
    points = []
    for rec in history:
        if rec.monitor and rec.dividend > 0 and rec.continuation is not None:
            points.append(_boundary_from_record(
                grid, rec, contract.payoff.strike, v0,
                "discrete-dividend", contract.maturity))
    return points


# ---------------------------------------------------------------------------
# yield regime
# ---------------------------------------------------------------------------

def exercise_boundary_yield(contract: Contract, model, env: MarketEnv,
                            dates, steps_per_year: int = 250,
                            J: int = 10, J_w: int = 4,
                            width_mult: float | None = None,
                            kappa_mult: int = 4,
                            ring_tol: float = RING_TOL_DEFAULT,
                            ) -> list[BoundaryPoint]:
    """Boundary curve at the requested calendar dates under a dividend
    yield, via a densely monitored Bermudan contract.  Each requested date
    is snapped to the nearest monitored date."""
    if not isinstance(contract.payoff, Call):
        raise PricingError("boundary extraction implemented for calls")
    if not isinstance(env.dividend, DividendYield) or env.dividend.rate <= 0:
        raise PricingError("yield-regime boundary needs a positive "
                           "dividend yield")
    T = contract.maturity
    h = 1.0 / steps_per_year
    # decision dates anchored at expiry: uniform spacing in time-to-maturity
    k = np.arange(0, int(math.floor(T / h)) + 1)
    mesh = T - k * h
    if _is_2d(model):
        # a sub-step-sized first interval cannot be resolved on the variance
        # axis, and no decision follows it, so drop near-zero dates
        mesh = mesh[mesh >= 0.5 * h]
    else:
        mesh = mesh[mesh > 1e-9]
    mesh = np.unique(np.concatenate([mesh, [T]]))
    dense = replace(contract, style=Bermudan(dates=tuple(mesh)))
    grid, history = _run(dense, model, env, J, J_w, width_mult,
                         kappa_mult, ring_tol)
    v0 = model.v0 if isinstance(model, HestonModel) else (
        model.heston.v0 if isinstance(model, BatesModel) else None)
    monitored = [rec for rec in history
                 if rec.monitor and rec.continuation is not None]
    times = np.array([rec.t for rec in monitored])
    points = []
    for t in dates:
        rec = monitored[int(np.argmin(np.abs(times - t)))]
        points.append(_boundary_from_record(
            grid, rec, contract.payoff.strike, v0, "yield", T))
    return points


# ---------------------------------------------------------------------------
# early-exercise-premium decomposition (lognormal dynamics, yield dividends)
# ---------------------------------------------------------------------------

def premium_decomposition(contract: Contract, model: BSModel, env: MarketEnv,
                          boundary: list[BoundaryPoint], spot: float,
                          ) -> tuple[float, float]:
    """Split the American call value into its European part and the
    early-exercise premium.

    The premium is the discounted expected net carry collected while the
    spot is above the boundary,

        integral over s in [0, T] of
            exp(-r s) * E[(q S_s - r K) * 1{S_s > S*_s}],

    evaluated in closed form per date under lognormal dynamics and
    integrated by the trapezoid rule on the boundary mesh."""
    if not isinstance(model, BSModel):
        raise ModelError("premium decomposition implemented for "
                         "lognormal dynamics")
    if not isinstance(contract.payoff, Call):
        raise PricingError("premium decomposition implemented for calls")
    K = contract.payoff.strike
    T = contract.maturity
    r = env.r
    q = env.carry_rate
    sigma = model.sigma

    from .oracles import bs_call
    european = bs_call(spot, K, T, r, sigma, q=q)
    if q <= 0:
        return european, 0.0

    def integrand(s: float, b_star: float | None) -> float:
        if b_star is None or not math.isfinite(b_star):
            return 0.0
        if s < 1e-10:
            return (q * spot - r * K) if spot > b_star else 0.0
        sq = sigma * math.sqrt(s)
        d1 = (math.log(spot / b_star) + (r - q + 0.5 * sigma**2) * s) / sq
        d2 = d1 - sq
        return math.exp(-r * s) * (
            q * spot * math.exp((r - q) * s) * norm.cdf(d1)
            - r * K * norm.cdf(d2))

    mesh = sorted((p.t, p.s_star) for p in boundary if 0.0 < p.t <= T)
    if not mesh:
        raise PricingError("premium decomposition needs boundary points "
                           "inside (0, T]")
    # extend to the interval endpoints: flat boundary below the first
    # point, analytic limit K*max(1, r/q) at expiry
    pts = [(0.0, mesh[0][1])] + mesh
    if T - pts[-1][0] > 1e-10:
        pts.append((T, K * max(1.0, r / q)))
    times = np.array([t for t, _ in pts])
    vals = np.array([integrand(t, b) for t, b in pts])
    premium = float(np.trapezoid(vals, times))
    return european, premium


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def boundary_to_csv(points: list[BoundaryPoint], model_label: str,
                    path) -> None:
    """Write (ttm, s_star, regime, model) rows; an unbounded exercise
    region is written as an empty s_star field."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ttm", "s_star", "regime", "model"])
        for p in sorted(points, key=lambda p: p.ttm):
            writer.writerow([
                f"{p.ttm:.10g}",
                "" if p.s_star is None else f"{p.s_star:.10g}",
                p.regime,
                model_label,
            ])
