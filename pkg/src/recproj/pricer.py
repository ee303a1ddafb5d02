"""Backward-induction pricing engine.

Projects the payoff onto the grid and recursively applies transition
operators between event dates (exercise monitors and ex-dividend dates),
taking the exercise maximum where the contract allows it and shifting the
conditioning point across dividends.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import lagrange

from .lattice import (Dense1D, FourierGrid, GridError, Kernel2D, LatticeGrid,
                      build_fourier_grid, build_gamma2, build_grid,
                      build_transition_1d, cash_dividend_shift)
from .models import (BatesModel, BSModel, HestonModel, MarketEnv, MertonModel,
                     ModelError, effective_bs_variance)


class ContractError(ValueError):
    """Invalid contract specification."""


class PricingError(ValueError):
    """Requested price cannot be produced on the given grid."""


# default grid-width policy: 1-D densities are cheap to resolve, so a wide
# grid costs nothing; 2-D kernels trade price-axis span against resolution
# at fixed N, and truncation beyond ~5 reference std devs is far below the
# collocation error they buy back
WIDTH_MULT_1D = 10.0
WIDTH_MULT_2D = 5.0
VARIANCE_BOUNDS = (0.0, 0.3)
RING_TOL_DEFAULT = 1e-2


# ---------------------------------------------------------------------------
# contracts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Call:
    strike: float

    def value(self, s):
        return np.maximum(s - self.strike, 0.0)


@dataclass(frozen=True)
class Put:
    strike: float

    def value(self, s):
        return np.maximum(self.strike - s, 0.0)


@dataclass(frozen=True)
class DigitalCall:
    strike: float

    def value(self, s):
        return np.where(s > self.strike, 1.0, 0.0)


@dataclass(frozen=True)
class DownAndOutDigitalCall:
    strike: float
    barrier: float

    def value(self, s):
        return np.where((s > self.strike) & (s > self.barrier), 1.0, 0.0)


@dataclass(frozen=True)
class European:
    kind = "european"


@dataclass(frozen=True)
class Bermudan:
    dates: tuple[float, ...]
    kind = "bermudan"

    def __post_init__(self):
        if not self.dates:
            raise ContractError("Bermudan style needs at least one date")
        if any(b - a <= 0 for a, b in zip(self.dates, self.dates[1:])):
            raise ContractError("exercise dates must be strictly increasing")


@dataclass(frozen=True)
class AmericanCallOnDivDates:
    """American call on a discrete-dividend stock: early exercise can only be
    optimal immediately before an ex-dividend date, so the monitoring set is
    the ex-dividend dates before expiry plus expiry itself."""
    kind = "american_call"


@dataclass(frozen=True)
class Contract:
    payoff: Call | Put | DigitalCall | DownAndOutDigitalCall
    maturity: float
    style: European | Bermudan | AmericanCallOnDivDates

    def __post_init__(self):
        if self.maturity <= 0:
            raise ContractError(f"maturity must be positive, got {self.maturity}")
        if self.payoff.strike <= 0:
            raise ContractError("strike must be positive")
        if isinstance(self.style, Bermudan):
            last = self.style.dates[-1]
            if abs(last - self.maturity) > 1e-12:
                raise ContractError(
                    f"last exercise date {last} must equal maturity {self.maturity}")
            if self.style.dates[0] <= 0:
                raise ContractError("exercise dates must be positive")
        if isinstance(self.style, AmericanCallOnDivDates) and \
                not isinstance(self.payoff, Call):
            raise ContractError("dividend-date American style applies to calls")


_PAYOFF_KINDS = {"call": Call, "put": Put, "digital_call": DigitalCall,
                 "down_and_out_digital_call": DownAndOutDigitalCall}


def contract_from_dict(d: dict) -> Contract:
    p = d["payoff"]
    cls = _PAYOFF_KINDS.get(p.get("kind"))
    if cls is None:
        raise ContractError(f"unknown payoff kind {p.get('kind')!r}")
    kwargs = {"strike": p["strike"]}
    if cls is DownAndOutDigitalCall:
        kwargs["barrier"] = p["barrier"]
    payoff = cls(**kwargs)
    s = d["style"]
    kind = s.get("kind")
    if kind == "european":
        style = European()
    elif kind == "bermudan":
        style = Bermudan(dates=tuple(float(t) for t in s["dates"]))
    elif kind == "american_call":
        style = AmericanCallOnDivDates()
    else:
        raise ContractError(f"unknown style kind {kind!r}")
    return Contract(payoff=payoff, maturity=float(d["maturity"]), style=style)


def contract_to_dict(contract: Contract) -> dict:
    p = contract.payoff
    payoff = {"kind": next(k for k, v in _PAYOFF_KINDS.items()
                           if isinstance(p, v)), "strike": p.strike}
    if isinstance(p, DownAndOutDigitalCall):
        payoff["barrier"] = p.barrier
    style: dict = {"kind": contract.style.kind}
    if isinstance(contract.style, Bermudan):
        style["dates"] = list(contract.style.dates)
    return {"payoff": payoff, "maturity": contract.maturity, "style": style}


@dataclass
class ValueSurface:
    """Option values on the grid at one instant, with the exercise decision
    that produced them."""
    values: np.ndarray            # (N,) in 1-D, (N, W) in 2-D
    t: float
    exercise_mask: np.ndarray | None = None


def monitoring_dates(contract: Contract, env: MarketEnv) -> list[float]:
    """Exercise-monitoring dates implied by the contract style."""
    T = contract.maturity
    if isinstance(contract.style, European):
        return [T]
    if isinstance(contract.style, Bermudan):
        return list(contract.style.dates)
    div_times = [t for t, _ in env.cash_dividends(T)]
    return sorted(set(div_times) | {T})


def project_payoff(contract: Contract, grid: LatticeGrid,
                   t: float | None = None) -> ValueSurface:
    """Sample the payoff at the grid nodes.

    The strike (and barrier) must not fall on a node: discontinuities are
    only harmless when they sit strictly between two nodes (the grid places
    the strike mid-cell, i.e. on a cell boundary).
    """
    levels = [contract.payoff.strike]
    if isinstance(contract.payoff, DownAndOutDigitalCall):
        levels.append(contract.payoff.barrier)
    for lvl in levels:
        if np.min(np.abs(math.log(lvl) - grid.y)) < 1e-9 * grid.dy:
            raise ContractError(
                f"payoff discontinuity at {lvl} falls on a grid node; "
                f"shift the grid so it lies between nodes")
    h = contract.payoff.value(np.exp(grid.y))
    if grid.w is not None:
        h = np.repeat(h[:, None], grid.n_w, axis=1)
    return ValueSurface(values=h, t=contract.maturity if t is None else t)


# ---------------------------------------------------------------------------
# event schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Event:
    t: float
    dividend: float       # cash amount going ex at t (0 for none)
    monitor: bool         # exercise comparison happens at t


def _build_schedule(contract: Contract, env: MarketEnv) -> list[_Event]:
    """Ordered event times in (0, T]: every monitoring date and every
    ex-dividend date, with expiry last."""
    T = contract.maturity
    divs = dict(env.cash_dividends(T))
    monitors = set(monitoring_dates(contract, env))
    times = sorted(set(divs) | monitors)
    if abs(times[-1] - T) > 1e-12:
        times.append(T)
    events = []
    for t in times:
        if t <= 0 or t > T + 1e-12:
            raise ContractError(f"event time {t} outside (0, {T}]")
        events.append(_Event(t=t, dividend=divs.get(t, 0.0),
                             monitor=t in monitors))
    return events


@dataclass
class StepRecord:
    """State captured at one event date during backward induction."""
    t: float
    dividend: float
    monitor: bool
    continuation: np.ndarray | None   # None at expiry
    values: np.ndarray                # after the exercise comparison
    exercise_mask: np.ndarray | None


# ---------------------------------------------------------------------------
# 1-D recursion
# ---------------------------------------------------------------------------

def _check_spot_interior(grid: LatticeGrid, spot: float, margin: int = 5):
    x = math.log(spot)
    if not (grid.y[margin] <= x <= grid.y[-1 - margin]):
        raise PricingError(
            f"spot {spot} not at least {margin} cells inside the grid "
            f"[{math.exp(grid.y[0]):.4g}, {math.exp(grid.y[-1]):.4g}]")


def _knockout(contract: Contract, grid: LatticeGrid, v: np.ndarray) -> np.ndarray:
    if isinstance(contract.payoff, DownAndOutDigitalCall):
        dead = np.exp(grid.y) <= contract.payoff.barrier
        v = v.copy()
        v[dead] = 0.0
    return v


def run_recursion_1d(contract: Contract, model, env: MarketEnv,
                     grid: LatticeGrid, keep_steps: bool = False,
                     operators: dict | None = None):
    """Backward induction on the 1-D grid; returns the t=0 surface and,
    optionally, the full per-date history (ordered forward in time)."""
    if not isinstance(model, (BSModel, MertonModel)):
        raise ModelError(f"1-D recursion needs a closed-form density model, "
                         f"got {type(model).__name__}")
    events = _build_schedule(contract, env)
    payoff = project_payoff(contract, grid)
    h = payoff.values
    ops = operators if operators is not None else {}

    def get_op(tau: float, dividend: float) -> Dense1D:
        key = (round(tau, 12), round(dividend, 12))
        if key not in ops:
            shift = cash_dividend_shift(grid, dividend) if dividend > 0 else None
            ops[key] = build_transition_1d(model, env, grid, tau, shift=shift)
        return ops[key]

    history: list[StepRecord] = []
    # expiry
    v = _knockout(contract, grid, h.copy())
    history.append(StepRecord(t=events[-1].t, dividend=events[-1].dividend,
                              monitor=True, continuation=None, values=v,
                              exercise_mask=v >= h))
    # walk back over earlier events
    prev_t = events[-1].t
    for ev in reversed(events[:-1]):
        tau = prev_t - ev.t
        cont = get_op(tau, ev.dividend).apply(v)
        if ev.monitor:
            mask = h > cont
            v = np.where(mask, h, cont)
        else:
            mask = None
            v = cont
        v = _knockout(contract, grid, v)
        history.append(StepRecord(t=ev.t, dividend=ev.dividend,
                                  monitor=ev.monitor, continuation=cont,
                                  values=v, exercise_mask=mask))
        prev_t = ev.t
    # final plain step to t=0
    if prev_t > 1e-12:
        v = get_op(prev_t, 0.0).apply(v)
    surface = ValueSurface(values=v, t=0.0)
    history.append(StepRecord(t=0.0, dividend=0.0, monitor=False,
                              continuation=v, values=v, exercise_mask=None))
    history.reverse()
    return surface, (history if keep_steps else None), ops


def price_bermudan_1d(contract: Contract, model, env: MarketEnv,
                      grid: LatticeGrid, spot: float):
    """Price at the requested spot (linear interpolation between the two
    bracketing nodes) plus the full t=0 value surface."""
    _check_spot_interior(grid, spot)
    surface, _, _ = run_recursion_1d(contract, model, env, grid)
    price = float(np.interp(math.log(spot), grid.y, surface.values))
    return price, surface


# ---------------------------------------------------------------------------
# 2-D recursion
# ---------------------------------------------------------------------------

def run_recursion_2d(contract: Contract, model, env: MarketEnv,
                     grid: LatticeGrid, fgrid: FourierGrid,
                     keep_steps: bool = False,
                     operators: dict | None = None,
                     ring_tol: float = RING_TOL_DEFAULT):
    """Backward induction on the (log-price, variance) grid.

    The step into expiry contracts the price-axis marginal kernel directly
    against the payoff; all earlier steps contract the full 2-D kernel
    against the value surface. Dividend dates shift the conditioning point.
    """
    if not isinstance(model, (HestonModel, BatesModel)):
        raise ModelError(f"2-D recursion needs a stochastic-variance model, "
                         f"got {type(model).__name__}")
    if grid.w is None:
        raise GridError("2-D recursion needs variance nodes on the grid")
    events = _build_schedule(contract, env)
    h1 = contract.payoff.value(np.exp(grid.y))          # (N,)
    h2 = np.repeat(h1[:, None], grid.n_w, axis=1)       # (N, W)
    ops = operators if operators is not None else {}

    def get_op(tau: float) -> Kernel2D:
        key = round(tau, 12)
        if key not in ops:
            ops[key] = build_gamma2(model, env, grid, fgrid, tau,
                                    ring_tol=ring_tol)
        return ops[key]

    def shifted_x(dividend: float) -> np.ndarray | None:
        if dividend <= 0:
            return None
        spot_grid = np.exp(grid.y)
        if np.any(spot_grid - dividend <= 0):
            raise PricingError(
                f"cash dividend {dividend} exceeds spot at the lowest node")
        return np.log(spot_grid - dividend)

    def knockout2(v):
        if isinstance(contract.payoff, DownAndOutDigitalCall):
            v = v.copy()
            v[np.exp(grid.y) <= contract.payoff.barrier, :] = 0.0
        return v

    history: list[StepRecord] = []
    v = knockout2(h2.copy())
    history.append(StepRecord(t=events[-1].t, dividend=events[-1].dividend,
                              monitor=True, continuation=None, values=v,
                              exercise_mask=v >= h2))
    prev_t = events[-1].t
    last_step = True
    for ev in reversed(events[:-1]):
        tau = prev_t - ev.t
        op = get_op(tau)
        x = shifted_x(ev.dividend)
        if last_step:
            cont = op.apply_gamma1(h1, x=x)     # payoff is flat in variance
        elif x is None:
            cont = op.apply(v)
        else:
            cont = op.apply_at(v, x)
        if ev.monitor:
            mask = h2 > cont
            v = np.where(mask, h2, cont)
        else:
            mask = None
            v = cont
        v = knockout2(v)
        history.append(StepRecord(t=ev.t, dividend=ev.dividend,
                                  monitor=ev.monitor, continuation=cont,
                                  values=v, exercise_mask=mask))
        prev_t = ev.t
        last_step = False
    if prev_t > 1e-12:
        op = get_op(prev_t)
        v = op.apply_gamma1(h1) if last_step else op.apply(v)
    surface = ValueSurface(values=v, t=0.0)
    history.append(StepRecord(t=0.0, dividend=0.0, monitor=False,
                              continuation=v, values=v, exercise_mask=None))
    history.reverse()
    return surface, (history if keep_steps else None), ops


def read_surface_2d(grid: LatticeGrid, values: np.ndarray, spot: float,
                    v0: float) -> float:
    """Read a 2-D surface at (spot, v0): linear in log-price between the two
    bracketing nodes, local cubic in variance (the surface is smooth but
    visibly concave in variance, so linear interpolation there leaves a
    readout bias an order larger than the grid error)."""
    x = math.log(spot)
    vals_w = np.array([np.interp(x, grid.y, values[:, p])
                       for p in range(grid.n_w)])
    exact = np.nonzero(np.abs(grid.w - v0) < 1e-12)[0]
    if exact.size:
        return float(vals_w[exact[0]])
    if not (grid.w[0] <= v0 <= grid.w[-1]):
        raise PricingError(f"v0={v0} outside variance grid "
                           f"[{grid.w[0]}, {grid.w[-1]}]")
    take = min(4, grid.n_w)
    idx = np.sort(np.argsort(np.abs(grid.w - v0))[:take])
    poly = np.poly1d(lagrange(grid.w[idx], vals_w[idx]))
    return float(np.polyval(poly, v0))


def price_bermudan_2d(contract: Contract, model, env: MarketEnv,
                      grid: LatticeGrid, fgrid: FourierGrid, spot: float,
                      ring_tol: float = RING_TOL_DEFAULT):
    """Price at (spot, model v0) plus the full t=0 value surface."""
    _check_spot_interior(grid, spot)
    v0 = model.v0 if isinstance(model, HestonModel) else model.heston.v0
    surface, _, _ = run_recursion_2d(contract, model, env, grid, fgrid,
                                     ring_tol=ring_tol)
    price = read_surface_2d(grid, surface.values, spot, v0)
    return price, surface


# ---------------------------------------------------------------------------
# grid policy + one-call pricing front end
# ---------------------------------------------------------------------------

def reference_sigma(model, env: MarketEnv, maturity: float) -> float:
    """Annualized return volatility scale used to size the grid."""
    return math.sqrt(effective_bs_variance(model, maturity) / maturity)


def default_grid(contract: Contract, model, env: MarketEnv, J: int,
                 J_w: int = 4, width_mult: float | None = None,
                 variance_bounds: tuple[float, float] = VARIANCE_BOUNDS):
    """Grid sized by the policy defaults for the model family."""
    two_d = isinstance(model, (HestonModel, BatesModel))
    if width_mult is None:
        width_mult = WIDTH_MULT_2D if two_d else WIDTH_MULT_1D
    max_div = 0.0
    divs = env.cash_dividends(contract.maturity)
    if divs:
        max_div = max(d for _, d in divs)
    grid = build_grid(contract.payoff.strike,
                      reference_sigma(model, env, contract.maturity),
                      contract.maturity, J, width_mult=width_mult,
                      variance_bounds=variance_bounds if two_d else None,
                      J_w=J_w, max_dividend=max_div)
    return grid


@dataclass
class PriceResult:
    price: float
    surface: ValueSurface
    grid: LatticeGrid
    wall_time: float
    delta: float | None = None
    gamma: float | None = None


def price_contract(contract: Contract, model, env: MarketEnv, spot: float,
                   J: int = 10, J_w: int = 4,
                   width_mult: float | None = None,
                   ring_tol: float = RING_TOL_DEFAULT,
                   with_greeks: bool = False) -> PriceResult:
    """Build grids by policy, run the recursion, read out price (and Greeks
    from the same surface if requested)."""
    start = time.perf_counter()
    grid = default_grid(contract, model, env, J, J_w=J_w,
                        width_mult=width_mult)
    if isinstance(model, (HestonModel, BatesModel)):
        fgrid = build_fourier_grid(grid)
        price, surface = price_bermudan_2d(contract, model, env, grid, fgrid,
                                           spot, ring_tol=ring_tol)
    else:
        price, surface = price_bermudan_1d(contract, model, env, grid, spot)
    result = PriceResult(price=price, surface=surface, grid=grid,
                         wall_time=time.perf_counter() - start)
    if with_greeks:
        result.delta, result.gamma = greeks(surface, grid, spot,
                                            model=model)
    return result


# ---------------------------------------------------------------------------
# Greeks and convergence
# ---------------------------------------------------------------------------

def greeks(surface: ValueSurface, grid: LatticeGrid, spot: float,
           model=None) -> tuple[float, float]:
    """Delta and gamma from central differences of the t=0 surface in
    log-price, mapped to price space by the chain rule."""
    _check_spot_interior(grid, spot, margin=2)
    values = surface.values
    if values.ndim == 2:
        if model is None:
            raise PricingError("2-D Greeks need the model (for v0)")
        v0 = model.v0 if isinstance(model, HestonModel) else model.heston.v0
        if np.any(np.abs(grid.w - v0) < 1e-12):
            p = int(np.argmin(np.abs(grid.w - v0)))
            values = values[:, p]
        else:
            values = np.array([read_surface_2d(grid, surface.values,
                                               math.exp(yj), v0)
                               for yj in grid.y])
    v_y = np.gradient(values, grid.dy)
    v_yy = np.gradient(v_y, grid.dy)
    x = math.log(spot)
    dy1 = float(np.interp(x, grid.y, v_y))
    dy2 = float(np.interp(x, grid.y, v_yy))
    delta = dy1 / spot
    gamma = (dy2 - dy1) / spot**2
    return delta, gamma


@dataclass
class ConvergenceRow:
    J: int
    price: float
    error: float       # against the finest level in the study
    wall_time: float


@dataclass
class ConvergenceStudy:
    rows: list[ConvergenceRow]
    slope: float       # fitted slope of log2|error| against J


def convergence_study(contract: Contract, model, env: MarketEnv, spot: float,
                      J_range, J_w: int = 4,
                      width_mult: float | None = None,
                      ring_tol: float = RING_TOL_DEFAULT) -> ConvergenceStudy:
    """Price at each resolution level and fit the error-decay slope
    (errors measured against the finest level, which gets error 0)."""
    levels = sorted(J_range)
    if len(levels) < 4:
        raise PricingError("convergence study needs at least 4 levels")
    rows = []
    for J in levels:
        res = price_contract(contract, model, env, spot, J=J, J_w=J_w,
                             width_mult=width_mult, ring_tol=ring_tol)
        rows.append(ConvergenceRow(J=J, price=res.price, error=math.nan,
                                   wall_time=res.wall_time))
    finest = rows[-1].price
    for row in rows:
        row.error = abs(row.price - finest)
    xs = np.array([r.J for r in rows[:-1]], dtype=float)
    ys = np.array([math.log2(max(r.error, 1e-300)) for r in rows[:-1]])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return ConvergenceStudy(rows=rows, slope=slope)
