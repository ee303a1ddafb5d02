"""Independent pricing oracles used for ground truth in tests and benchmarks.

These deliberately do not share code with the grid engine: closed-form
European formulas, binomial trees with discrete cash dividends, and
least-squares Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.stats import norm, poisson

from .models import (BatesModel, BSModel, CashDividends, DividendYield,
                     HestonModel, MarketEnv, MertonModel, ModelError,
                     NoDividend)

__all__ = [
    "bs_call", "bs_put", "bs_delta", "bs_vega",
    "european_closed_form", "TreeSpec", "tree_price", "McSpec", "lsm_price",
]


# ---------------------------------------------------------------------------
# Closed-form European prices
# ---------------------------------------------------------------------------

def _d1_d2(spot, strike, tau, r, q, sigma):
    st = sigma * math.sqrt(tau)
    d1 = (math.log(spot / strike) + (r - q + 0.5 * sigma**2) * tau) / st
    return d1, d1 - st


def bs_call(spot, strike, tau, r, sigma, q=0.0):
    if tau <= 0:
        return max(spot - strike, 0.0)
    d1, d2 = _d1_d2(spot, strike, tau, r, q, sigma)
    return spot * math.exp(-q * tau) * norm.cdf(d1) - strike * math.exp(-r * tau) * norm.cdf(d2)


def bs_put(spot, strike, tau, r, sigma, q=0.0):
    if tau <= 0:
        return max(strike - spot, 0.0)
    d1, d2 = _d1_d2(spot, strike, tau, r, q, sigma)
    return strike * math.exp(-r * tau) * norm.cdf(-d2) - spot * math.exp(-q * tau) * norm.cdf(-d1)


def bs_delta(spot, strike, tau, r, sigma, q=0.0, kind="call"):
    d1, _ = _d1_d2(spot, strike, tau, r, q, sigma)
    if kind == "call":
        return math.exp(-q * tau) * norm.cdf(d1)
    return -math.exp(-q * tau) * norm.cdf(-d1)


def bs_vega(spot, strike, tau, r, sigma, q=0.0):
    d1, _ = _d1_d2(spot, strike, tau, r, q, sigma)
    return spot * math.exp(-q * tau) * norm.pdf(d1) * math.sqrt(tau)


def merton_call(spot, strike, tau, r, model: MertonModel, q=0.0, tail=1e-14):
    """Merton European call as the Poisson-weighted Black-Scholes series,
    with the standard intensity tilt lambda' = gamma * (1 + upsilon)."""
    upsilon = model.jump_compensator
    lam_tilt = model.gamma * (1.0 + upsilon) * tau
    log_mean_jump = model.mu_psi + 0.5 * model.sigma_psi**2  # = log(1+upsilon)
    total = 0.0
    n = 0
    while True:
        w = poisson.pmf(n, lam_tilt)
        sigma_n = math.sqrt(model.sigma_m**2 + n * model.sigma_psi**2 / tau)
        r_n = r - model.gamma * upsilon + n * log_mean_jump / tau
        total += w * bs_call(spot, strike, tau, r_n, sigma_n, q=q)
        n += 1
        if poisson.sf(n - 1, lam_tilt) < tail:
            break
    return total


def _heston_marginal_cf(u, spot, tau, r, q, model: HestonModel):
    """Risk-neutral characteristic function of log S_T (Heston 1993), in the
    Albrecher branch-stable form.  Written independently of the engine's
    joint kernel on purpose."""
    kappa, theta, sigma, rho, v0 = (model.beta, model.theta, model.omega,
                                    model.rho, model.v0)
    x = math.log(spot)
    d = np.sqrt((rho * sigma * 1j * u - kappa) ** 2 + sigma**2 * (1j * u + u**2))
    g = (kappa - rho * sigma * 1j * u - d) / (kappa - rho * sigma * 1j * u + d)
    exp_dt = np.exp(-d * tau)
    C = (1j * u * (r - q) * tau
         + kappa * theta / sigma**2 * ((kappa - rho * sigma * 1j * u - d) * tau
                                       - 2.0 * np.log((1 - g * exp_dt) / (1 - g))))
    Dv = (kappa - rho * sigma * 1j * u - d) / sigma**2 * (1 - exp_dt) / (1 - g * exp_dt)
    return np.exp(C + Dv * v0 + 1j * u * x)


def heston_call(spot, strike, tau, r, model: HestonModel, q=0.0):
    """Heston European call via the two Gil-Pelaez probability integrals."""
    lnk = math.log(strike)

    def integrand_p1(u):
        cf = _heston_marginal_cf(u - 1j, spot, tau, r, q, model)
        denom = _heston_marginal_cf(-1j, spot, tau, r, q, model)
        return (np.exp(-1j * u * lnk) * cf / (1j * u * denom)).real

    def integrand_p2(u):
        cf = _heston_marginal_cf(u, spot, tau, r, q, model)
        return (np.exp(-1j * u * lnk) * cf / (1j * u)).real

    i1, _ = integrate.quad(integrand_p1, 1e-10, 200.0, limit=400)
    i2, _ = integrate.quad(integrand_p2, 1e-10, 200.0, limit=400)
    p1 = 0.5 + i1 / math.pi
    p2 = 0.5 + i2 / math.pi
    return spot * math.exp(-q * tau) * p1 - strike * math.exp(-r * tau) * p2


def european_closed_form(model, payoff_kind: str, spot, strike, tau,
                         env: MarketEnv):
    """Closed-form / semi-analytic European price; supports yield or no
    dividends only."""
    if isinstance(env.dividend, CashDividends):
        raise ModelError("closed-form oracle does not support cash dividends")
    q = env.carry_rate
    if isinstance(model, BSModel):
        if payoff_kind == "call":
            return bs_call(spot, strike, tau, env.r, model.sigma, q)
        if payoff_kind == "put":
            return bs_put(spot, strike, tau, env.r, model.sigma, q)
    elif isinstance(model, MertonModel):
        if payoff_kind == "call":
            return merton_call(spot, strike, tau, env.r, model, q)
        if payoff_kind == "put":
            call = merton_call(spot, strike, tau, env.r, model, q)
            return call - spot * math.exp(-q * tau) + strike * math.exp(-env.r * tau)
    elif isinstance(model, HestonModel):
        if payoff_kind == "call":
            return heston_call(spot, strike, tau, env.r, model, q)
        if payoff_kind == "put":
            call = heston_call(spot, strike, tau, env.r, model, q)
            return call - spot * math.exp(-q * tau) + strike * math.exp(-env.r * tau)
    raise ModelError(f"unsupported oracle combination {type(model)!r}/{payoff_kind}")


# ---------------------------------------------------------------------------
# Binomial trees with discrete cash dividends
# ---------------------------------------------------------------------------

@dataclass
class TreeSpec:
    steps: int                      # total time steps over the option life
    variant: str = "interpolated"   # "interpolated" | "non_recombining"
    snap_tol: float | None = None   # dividend snap offset bound (default dt/2)

    def __post_init__(self):
        if self.steps < 1:
            raise ModelError("tree needs steps >= 1")
        if self.variant not in ("interpolated", "non_recombining"):
            raise ModelError(f"unknown tree variant {self.variant!r}")


@dataclass
class TreeResult:
    price: float
    node_evaluations: int
    dividend_snap_offsets: tuple[float, ...]


def _snap_dividends(divs, steps, maturity):
    dt = maturity / steps
    snapped = []
    offsets = []
    for t, d in divs:
        k = round(t / dt)
        k = min(max(k, 1), steps - 1)
        snapped.append((k, d))
        offsets.append(k * dt - t)
    return snapped, offsets, dt


def tree_price(model: BSModel, env: MarketEnv, payoff_kind: str, spot: float,
               strike: float, maturity: float, spec: TreeSpec,
               american: bool = True) -> TreeResult:
    """CRR binomial price with discrete cash dividends (Black-Scholes only).

    ``interpolated``: recombining lattice; at each ex-dividend step the
    continuation value is re-read at the dropped price by linear
    interpolation across nodes (Vellekoop-Nieuwenhuis style).
    ``non_recombining``: a fresh tree is grown from every node after each
    ex-dividend date; reference quality, exponential in dividend count.
    """
    if not isinstance(model, BSModel):
        raise ModelError("tree oracle supports the Black-Scholes model only")
    divs = list(env.cash_dividends(maturity))
    q = env.carry_rate
    if spec.variant == "interpolated":
        return _tree_interpolated(model, env.r, q, payoff_kind, spot, strike,
                                  maturity, divs, spec, american)
    return _tree_non_recombining(model, env.r, q, payoff_kind, spot, strike,
                                 maturity, divs, spec, american)


def _payoff(kind, s, k):
    if kind == "call":
        return np.maximum(s - k, 0.0)
    if kind == "put":
        return np.maximum(k - s, 0.0)
    raise ModelError(f"tree supports call/put payoffs, got {kind!r}")


def _tree_interpolated(model, r, q, payoff_kind, spot, strike, maturity,
                       divs, spec, american):
    n = spec.steps
    snapped, offsets, dt = _snap_dividends(divs, n, maturity)
    tol = spec.snap_tol if spec.snap_tol is not None else dt / 2 + 1e-12
    for off in offsets:
        if abs(off) > tol:
            raise ModelError(f"dividend snap offset {off:.4g} exceeds {tol:.4g}")
    div_at_step = {}
    for k, d in snapped:
        div_at_step[k] = div_at_step.get(k, 0.0) + d

    u = math.exp(model.sigma * math.sqrt(dt))
    d_ = 1.0 / u
    disc = math.exp(-r * dt)
    p = (math.exp((r - q) * dt) - d_) / (u - d_)
    if not (0.0 < p < 1.0):
        raise ModelError("tree step too coarse for these parameters")

    j = np.arange(n + 1)
    prices = spot * u**j * d_ ** (n - j)
    values = _payoff(payoff_kind, prices, strike)
    evals = n + 1
    for step in range(n - 1, -1, -1):
        j = np.arange(step + 1)
        prices = spot * u**j * d_ ** (step - j)
        values = disc * (p * values[1:] + (1 - p) * values[:-1])
        evals += step + 1
        if step in div_at_step:
            d_amt = div_at_step[step]
            dropped = np.maximum(prices - d_amt, prices[0] * 1e-12)
            cont = np.interp(dropped, prices, values)
            if american:
                values = np.maximum(cont, _payoff(payoff_kind, prices, strike))
            else:
                values = cont
        elif american and payoff_kind == "put":
            values = np.maximum(values, _payoff(payoff_kind, prices, strike))
    return TreeResult(float(values[0]), evals, tuple(offsets))


def _tree_non_recombining(model, r, q, payoff_kind, spot, strike, maturity,
                          divs, spec, american):
    n_total = spec.steps
    counter = [0]

    def solve(s0, t0, remaining_divs, steps_left):
        """Recombining CRR segment until the next dividend (or maturity)."""
        if remaining_divs:
            t_div, d_amt = remaining_divs[0]
            seg_time = t_div - t0
            seg_steps = max(1, round(steps_left * seg_time / (maturity - t0)))
        else:
            t_div, d_amt = None, 0.0
            seg_time = maturity - t0
            seg_steps = steps_left
        dt = seg_time / seg_steps
        u = math.exp(model.sigma * math.sqrt(dt))
        dn = 1.0 / u
        disc = math.exp(-r * dt)
        p = (math.exp((r - q) * dt) - dn) / (u - dn)

        j = np.arange(seg_steps + 1)
        end_prices = s0 * u**j * dn ** (seg_steps - j)
        counter[0] += seg_steps + 1
        if t_div is None:
            values = _payoff(payoff_kind, end_prices, strike)
        else:
            values = np.empty(seg_steps + 1)
            for idx, s in enumerate(end_prices):
                dropped = s - d_amt
                if dropped <= 0:
                    cont = 0.0
                else:
                    cont = solve(dropped, t_div, remaining_divs[1:],
                                 steps_left - seg_steps)
                intrinsic = _payoff(payoff_kind, np.array([s]), strike)[0]
                values[idx] = max(cont, intrinsic) if american else cont
        for step in range(seg_steps - 1, -1, -1):
            values = disc * (p * values[1:] + (1 - p) * values[:-1])
            counter[0] += step + 1
            if american and payoff_kind == "put":
                jj = np.arange(step + 1)
                prices = s0 * u**jj * dn ** (step - jj)
                values = np.maximum(values, _payoff(payoff_kind, prices, strike))
        return float(values[0])

    live_divs = [(t, d) for t, d in divs if t > 1e-12]
    price = solve(spot, 0.0, live_divs, n_total)
    return TreeResult(price, counter[0], ())


# ---------------------------------------------------------------------------
# Least-squares Monte Carlo
# ---------------------------------------------------------------------------

@dataclass
class McSpec:
    paths: int
    steps_per_year: int = 250
    seed: int = 0
    basis_degree: int = 3


@dataclass
class McResult:
    price: float
    std_error: float


def _basis_matrix(s, v, degree):
    cols = [np.ones_like(s)]
    sn = s / np.mean(s)
    for k in range(1, degree + 1):
        cols.append(sn**k)
    if v is not None:
        vn = v / max(np.mean(v), 1e-12)
        cols.append(vn)
        cols.append(vn * sn)
    return np.column_stack(cols)


def _simulate_paths(model, env, spot, monitor_dates, maturity, spec, rng):
    """Simulate log-price (and variance) at the monitoring dates, applying
    cash-dividend drops immediately after each monitored ex-dividend date."""
    div_map = dict(env.cash_dividends(maturity))
    q = env.carry_rate
    n = spec.paths
    x = np.full(n, math.log(spot))
    v = None
    out_s = []
    out_v = []
    t_prev = 0.0
    if isinstance(model, (HestonModel, BatesModel)):
        hest = model.heston if isinstance(model, BatesModel) else model
        v = np.full(n, hest.v0)

    for t in monitor_dates:
        span = t - t_prev
        if span > 1e-14:
            if isinstance(model, BSModel):
                z = rng.standard_normal(n)
                x += (env.r - q - 0.5 * model.sigma**2) * span \
                    + model.sigma * math.sqrt(span) * z
            elif isinstance(model, MertonModel):
                z = rng.standard_normal(n)
                nj = rng.poisson(model.gamma * span, n)
                jumps = model.mu_psi * nj + model.sigma_psi * np.sqrt(nj) \
                    * rng.standard_normal(n)
                x += (env.r - q - model.gamma * model.jump_compensator
                      - 0.5 * model.sigma_m**2) * span \
                    + model.sigma_m * math.sqrt(span) * z + jumps
            else:
                hest = model.heston if isinstance(model, BatesModel) else model
                n_sub = max(1, round(spec.steps_per_year * span))
                dt = span / n_sub
                sq_dt = math.sqrt(dt)
                has_jumps = isinstance(model, BatesModel)
                comp = model.gamma * model.jump_compensator if has_jumps else 0.0
                for _ in range(n_sub):
                    z1 = rng.standard_normal(n)
                    z2 = hest.rho * z1 + math.sqrt(1 - hest.rho**2) \
                        * rng.standard_normal(n)
                    vp = np.maximum(v, 0.0)
                    sv = np.sqrt(vp)
                    x += (env.r - q - comp - 0.5 * vp) * dt + sv * sq_dt * z1
                    v = v + hest.beta * (hest.theta - vp) * dt \
                        + hest.omega * sv * sq_dt * z2
                    if has_jumps:
                        nj = rng.poisson(model.gamma * dt, n)
                        x += model.mu_psi * nj + model.sigma_psi \
                            * np.sqrt(nj) * rng.standard_normal(n)
        out_s.append(np.exp(x))
        out_v.append(None if v is None else v.copy())
        for td, d in div_map.items():
            if abs(td - t) < 1e-10 and td < maturity - 1e-12:
                s_after = np.maximum(np.exp(x) - d, 1e-12)
                x = np.log(s_after)
        t_prev = t
    return out_s, out_v


def lsm_price(model, env: MarketEnv, payoff_kind: str, spot: float,
              strike: float, maturity: float, exercise_dates,
              spec: McSpec) -> McResult:
    """Longstaff-Schwartz price with exercise restricted to the given dates.

    ``exercise_dates`` are the times (cum-dividend, immediately before any
    ex-dividend drop) at which early exercise is compared; the maturity is
    always appended.
    """
    rng = np.random.default_rng(spec.seed)
    dates = sorted(set(float(t) for t in exercise_dates if t < maturity - 1e-12))
    monitor = dates + [maturity]
    s_paths, v_paths = _simulate_paths(model, env, spot, monitor, maturity,
                                       spec, rng)

    def intrinsic(s):
        return _payoff(payoff_kind, s, strike)

    cash = intrinsic(s_paths[-1])
    tau_prev = maturity
    degenerate = False
    for idx in range(len(dates) - 1, -1, -1):
        t = monitor[idx]
        cash = cash * math.exp(-env.r * (tau_prev - t))
        tau_prev = t
        s = s_paths[idx]
        exer = intrinsic(s)
        itm = exer > 0
        if np.count_nonzero(itm) > spec.basis_degree + 3:
            X = _basis_matrix(s[itm], None if v_paths[idx] is None
                              else v_paths[idx][itm], spec.basis_degree)
            coef, *_ = np.linalg.lstsq(X, cash[itm], rcond=None)
            if not np.all(np.isfinite(coef)):
                degenerate = True
                coef, *_ = np.linalg.lstsq(X[:, :2], cash[itm], rcond=None)
                cont = X[:, :2] @ coef
            else:
                cont = X @ coef
            take = np.zeros_like(itm)
            take[itm] = exer[itm] > cont
            cash = np.where(take, exer, cash)
    price_paths = cash * math.exp(-env.r * tau_prev)
    price = float(np.mean(price_paths))
    se = float(np.std(price_paths, ddof=1) / math.sqrt(spec.paths))
    result = McResult(price, se)
    result.degenerate_basis = degenerate
    return result
