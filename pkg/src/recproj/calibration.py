"""Quote ingestion, implied volatility, and model calibration.

Calibration minimizes the mean squared error between market and model
implied volatilities.  Model prices are computed with the full engine —
American exercise at ex-dividend dates and discrete cash dividends — so the
fitted parameters are consistent with how the contracts actually trade.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm

from .models import (
    BSModel,
    BatesModel,
    HestonModel,
    MarketEnv,
    MertonModel,
    ModelError,
    ModelSpec,
    model_from_dict,
    model_to_dict,
)
from .lattice import build_fourier_grid, build_grid
from .pricer import (
    AmericanCallOnDivDates,
    Call,
    Contract,
    European,
    PricingError,
    VARIANCE_BOUNDS,
    WIDTH_MULT_1D,
    WIDTH_MULT_2D,
    RING_TOL_DEFAULT,
    reference_sigma,
    run_recursion_1d,
    run_recursion_2d,
    read_surface_2d,
)

__all__ = [
    "QuoteRecord",
    "CalibrationError",
    "ImpliedVolError",
    "CalibrationResult",
    "implied_vol",
    "calibrate",
    "QuotePricer",
    "quotes_from_csv",
    "quotes_to_csv",
    "default_bounds",
]


class CalibrationError(Exception):
    pass


class ImpliedVolError(CalibrationError):
    """Price outside the no-arbitrage band: no volatility reproduces it."""


# ---------------------------------------------------------------------------
# quotes
# ---------------------------------------------------------------------------

QUOTE_FIELDS = ["date", "underlying", "spot", "strike", "maturity",
                "mid", "bid", "ask", "open_interest", "delta", "dividends"]


@dataclass(frozen=True)
class QuoteRecord:
    """A single observed call quote."""
    date: str
    underlying: str
    spot: float
    strike: float
    maturity: float
    mid: float
    bid: float
    ask: float
    open_interest: float = 0.0
    delta: float | None = None
    dividends: str = ""          # reference key into a dividend table

    def __post_init__(self):
        if self.maturity <= 0:
            raise CalibrationError(f"maturity must be > 0, got {self.maturity}")
        if not (self.bid <= self.mid <= self.ask):
            raise CalibrationError(
                f"quote violates bid <= mid <= ask: "
                f"{self.bid} / {self.mid} / {self.ask}")

    def moneyness_bucket(self, low: float = 0.375, high: float = 0.625) -> str:
        """OTM / ATM / ITM by delta thresholds."""
        if self.delta is None:
            raise CalibrationError("bucket classification needs a delta")
        if self.delta < low:
            return "otm"
        if self.delta > high:
            return "itm"
        return "atm"


def quotes_from_csv(path) -> list[QuoteRecord]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(QUOTE_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise CalibrationError(f"quote CSV missing columns: {sorted(missing)}")
        for row in reader:
            out.append(QuoteRecord(
                date=row["date"], underlying=row["underlying"],
                spot=float(row["spot"]), strike=float(row["strike"]),
                maturity=float(row["maturity"]), mid=float(row["mid"]),
                bid=float(row["bid"]), ask=float(row["ask"]),
                open_interest=float(row["open_interest"] or 0),
                delta=float(row["delta"]) if row["delta"] else None,
                dividends=row["dividends"] or ""))
    return out


def quotes_to_csv(quotes: list[QuoteRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(QUOTE_FIELDS)
        for q in quotes:
            writer.writerow([
                q.date, q.underlying, f"{q.spot:.10g}", f"{q.strike:.10g}",
                f"{q.maturity:.10g}", f"{q.mid:.10g}", f"{q.bid:.10g}",
                f"{q.ask:.10g}", f"{q.open_interest:.10g}",
                "" if q.delta is None else f"{q.delta:.10g}", q.dividends])


# ---------------------------------------------------------------------------
# implied volatility
# ---------------------------------------------------------------------------

def _bs_call_fwd(spot, strike, tau, r, q, sigma):
    sq = sigma * math.sqrt(tau)
    d1 = (math.log(spot / strike) + (r - q + 0.5 * sigma**2) * tau) / sq
    d2 = d1 - sq
    return (spot * math.exp(-q * tau) * norm.cdf(d1)
            - strike * math.exp(-r * tau) * norm.cdf(d2))


def implied_vol(price: float, spot: float, strike: float, maturity: float,
                env: MarketEnv, tol: float = 1e-12) -> float:
    """Lognormal volatility reproducing a call price; bracketing plus a
    safeguarded Newton iteration (bisection step whenever Newton leaves the
    bracket or the vega degenerates)."""
    r, q = env.r, env.carry_rate
    lower = max(0.0, spot * math.exp(-q * maturity)
                - strike * math.exp(-r * maturity))
    upper = spot * math.exp(-q * maturity)
    if not (lower < price < upper):
        raise ImpliedVolError(
            f"price {price} outside the no-arbitrage band "
            f"({lower:.6g}, {upper:.6g})")
    lo, hi = 1e-9, 1.0
    while _bs_call_fwd(spot, strike, maturity, r, q, hi) < price:
        hi *= 2.0
        if hi > 64.0:
            raise ImpliedVolError("no volatility below 64 matches the price")
    sigma = 0.5 * (lo + hi)
    for _ in range(100):
        val = _bs_call_fwd(spot, strike, maturity, r, q, sigma)
        diff = val - price
        if abs(diff) <= tol * spot:
            return sigma
        if diff > 0:
            hi = sigma
        else:
            lo = sigma
        sq = math.sqrt(maturity)
        d1 = (math.log(spot / strike)
              + (r - q + 0.5 * sigma**2) * maturity) / (sigma * sq)
        vega = spot * math.exp(-q * maturity) * norm.pdf(d1) * sq
        step = sigma - diff / vega if vega > 1e-14 else None
        sigma = step if step is not None and lo < step < hi else 0.5 * (lo + hi)
    raise ImpliedVolError("implied volatility iteration did not converge")


# ---------------------------------------------------------------------------
# engine-backed quote pricing
# ---------------------------------------------------------------------------

class QuotePricer:
    """Prices a fixed set of quotes under varying model parameters.

    Quotes are grouped by maturity; each group shares one grid (anchored at
    the median strike) and one set of transition operators per parameter
    vector, so the per-parameter cost is dominated by a handful of operator
    builds rather than one per quote."""

    def __init__(self, quotes: list[QuoteRecord], env: MarketEnv,
                 J: int = 8, J_w: int = 4,
                 variance_bounds: tuple[float, float] = VARIANCE_BOUNDS,
                 width_mult: float | None = None,
                 kappa_mult: int = 4,
                 ring_tol: float = RING_TOL_DEFAULT):
        if not quotes:
            raise CalibrationError("no quotes to price")
        self.quotes = list(quotes)
        self.env = env
        self.J, self.J_w = J, J_w
        self.variance_bounds = variance_bounds
        self.width_mult = width_mult
        self.kappa_mult = kappa_mult
        self.ring_tol = ring_tol
        self.groups: dict[float, list[int]] = {}
        for i, q in enumerate(self.quotes):
            self.groups.setdefault(round(q.maturity, 12), []).append(i)

    def _contract(self, q: QuoteRecord) -> Contract:
        if self.env.cash_dividends(q.maturity):
            style = AmericanCallOnDivDates()
        else:
            style = European()
        return Contract(payoff=Call(q.strike), maturity=q.maturity, style=style)

    def prices(self, model: ModelSpec) -> np.ndarray:
        two_d = isinstance(model, (HestonModel, BatesModel))
        wm = self.width_mult or (WIDTH_MULT_2D if two_d else WIDTH_MULT_1D)
        out = np.empty(len(self.quotes))
        for T, idx in self.groups.items():
            anchor = float(np.median([self.quotes[i].strike for i in idx]))
            max_div = max((d for _, d in self.env.cash_dividends(T)),
                          default=0.0)
            grid = build_grid(anchor, reference_sigma(model, self.env, T), T,
                              self.J, width_mult=wm,
                              variance_bounds=self.variance_bounds if two_d
                              else None,
                              J_w=self.J_w, max_dividend=max_div)
            fgrid = (build_fourier_grid(grid, kappa_mult=self.kappa_mult)
                     if two_d else None)
            ops: dict = {}
            for i in idx:
                q = self.quotes[i]
                contract = self._contract(q)
                if two_d:
                    surface, _, ops = run_recursion_2d(
                        contract, model, self.env, grid, fgrid,
                        operators=ops, ring_tol=self.ring_tol)
                    v0 = (model.v0 if isinstance(model, HestonModel)
                          else model.heston.v0)
                    out[i] = read_surface_2d(grid, surface.values,
                                             q.spot, v0)
                else:
                    surface, _, ops = run_recursion_1d(
                        contract, model, self.env, grid, operators=ops)
                    out[i] = float(np.interp(math.log(q.spot), grid.y,
                                             surface.values))
        return out

    def implied_vols(self, model: ModelSpec) -> np.ndarray:
        prices = self.prices(model)
        return np.array([
            implied_vol(p, q.spot, q.strike, q.maturity, self.env)
            for p, q in zip(prices, self.quotes)])


# ---------------------------------------------------------------------------
# parameter packing and box constraints
# ---------------------------------------------------------------------------

_PARAMS = {
    "bs": ["sigma"],
    "merton": ["sigma_m", "gamma", "mu_psi", "sigma_psi"],
    "heston": ["v0", "beta", "sigma_lt", "omega", "rho"],
    "bates": ["v0", "beta", "sigma_lt", "omega", "rho",
              "gamma", "mu_psi", "sigma_psi"],
}

_BOUNDS = {
    "sigma": (1e-3, 3.0),
    "sigma_m": (1e-3, 3.0),
    "gamma": (0.0, 20.0),
    "mu_psi": (-1.5, 1.5),
    "sigma_psi": (1e-4, 1.5),
    "v0": (1e-4, 0.4),
    "beta": (0.05, 20.0),
    "sigma_lt": (0.01, 1.5),
    "omega": (1e-3, 3.0),
    "rho": (-0.999, 0.999),
}


def default_bounds(model_kind: str) -> dict[str, tuple[float, float]]:
    return {name: _BOUNDS[name] for name in _PARAMS[model_kind]}


def _pack(model: ModelSpec) -> np.ndarray:
    d = model_to_dict(model)
    return np.array([d[name] for name in _PARAMS[model.kind]])


def _unpack(kind: str, x: np.ndarray) -> ModelSpec:
    d = {"kind": kind}
    d.update({name: float(v) for name, v in zip(_PARAMS[kind], x)})
    return model_from_dict(d)


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Fold an unconstrained point into the box by triangular reflection
    (keeps the objective continuous across the boundary)."""
    span = hi - lo
    y = np.mod(x - lo, 2.0 * span)
    y = np.where(y > span, 2.0 * span - y, y)
    return lo + y


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

@dataclass
class CalibrationResult:
    model: ModelSpec
    objective: float
    iterations: int
    converged: bool
    market_vols: np.ndarray = field(repr=False, default=None)
    model_vols: np.ndarray = field(repr=False, default=None)


def calibrate(model_kind: str, quotes: list[QuoteRecord], env: MarketEnv,
              init: ModelSpec, pricer: QuotePricer | None = None,
              bounds: dict[str, tuple[float, float]] | None = None,
              max_iter: int = 4000, f_tol: float = 1e-12,
              restarts: int = 1) -> CalibrationResult:
    """Fit the free parameters of ``model_kind`` to the quotes' implied
    volatilities (mean squared error objective, derivative-free simplex
    search, box constraints enforced by reflection)."""
    names = _PARAMS[model_kind]
    if init.kind != model_kind:
        raise CalibrationError(
            f"init model kind {init.kind!r} != requested {model_kind!r}")
    if len(quotes) < len(names):
        raise CalibrationError(
            f"{len(quotes)} quotes cannot identify {len(names)} parameters")
    if len({q.strike for q in quotes}) < 3:
        raise CalibrationError("need quotes spanning at least 3 strikes")
    box = dict(default_bounds(model_kind))
    if bounds:
        box.update(bounds)
    lo = np.array([box[n][0] for n in names])
    hi = np.array([box[n][1] for n in names])

    if pricer is None:
        pricer = QuotePricer(quotes, env)
    market = np.array([
        implied_vol(q.mid, q.spot, q.strike, q.maturity, env)
        for q in quotes])

    best = {"x": np.clip(_pack(init), lo, hi), "f": np.inf}
    evals = 0

    def objective(x: np.ndarray) -> float:
        nonlocal evals
        evals += 1
        params = _reflect(x, lo, hi)
        try:
            vols = pricer.implied_vols(_unpack(model_kind, params))
        except (PricingError, ImpliedVolError, ModelError):
            return 1e6
        f = float(np.mean((vols - market) ** 2))
        if f < best["f"]:
            best["f"], best["x"] = f, params.copy()
        return f

    x0 = best["x"].copy()
    converged = False
    for _ in range(restarts + 1):
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"adaptive": True, "maxfev": max_iter,
                                "fatol": f_tol, "xatol": 1e-8})
        converged = bool(res.success)
        x0 = best["x"].copy()
        if converged:
            break

    model = _unpack(model_kind, best["x"])
    model_vols = pricer.implied_vols(model)
    return CalibrationResult(model=model, objective=best["f"],
                             iterations=evals, converged=converged,
                             market_vols=market, model_vols=model_vols)
