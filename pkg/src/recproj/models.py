"""Model dynamics and market environment definitions.

Four dynamics are supported for the underlying stock: Black-Scholes,
Merton jump-diffusion, Heston stochastic volatility, and Bates
(Heston + Merton jumps).  All engine code works in log-price
``X = log S``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence, Union


class ModelError(ValueError):
    """Invalid model or environment parameters."""


@dataclass(frozen=True)
class BSModel:
    sigma: float  # volatility per sqrt(year)

    def __post_init__(self):
        if self.sigma <= 0:
            raise ModelError(f"sigma must be positive, got {self.sigma}")

    kind = "bs"


@dataclass(frozen=True)
class MertonModel:
    sigma_m: float    # diffusive volatility
    gamma: float      # jump intensity per year
    mu_psi: float     # mean of log jump size
    sigma_psi: float  # stdev of log jump size

    def __post_init__(self):
        if self.sigma_m <= 0:
            raise ModelError(f"sigma_m must be positive, got {self.sigma_m}")
        if self.gamma < 0:
            raise ModelError(f"gamma must be >= 0, got {self.gamma}")
        if self.sigma_psi < 0:
            raise ModelError(f"sigma_psi must be >= 0, got {self.sigma_psi}")

    kind = "merton"

    @property
    def jump_compensator(self) -> float:
        """Mean relative jump size E[psi - 1]; always derived, never stored."""
        return math.exp(self.mu_psi + 0.5 * self.sigma_psi**2) - 1.0


@dataclass(frozen=True)
class HestonModel:
    v0: float        # initial variance
    beta: float      # mean-reversion speed per year
    sigma_lt: float  # long-run volatility (long-run variance = sigma_lt**2)
    omega: float     # volatility of volatility
    rho: float       # correlation between price and variance shocks

    def __post_init__(self):
        if self.v0 < 0:
            raise ModelError(f"v0 must be >= 0, got {self.v0}")
        if self.beta < 0:
            raise ModelError(f"beta must be >= 0, got {self.beta}")
        if self.sigma_lt < 0:
            raise ModelError(f"sigma_lt must be >= 0, got {self.sigma_lt}")
        if self.omega < 0:
            raise ModelError(f"omega must be >= 0, got {self.omega}")
        if abs(self.rho) > 1:
            raise ModelError(f"|rho| must be <= 1, got {self.rho}")

    kind = "heston"

    @property
    def theta(self) -> float:
        """Long-run variance."""
        return self.sigma_lt**2

    def expected_integrated_variance(self, t: float) -> float:
        """E[ integral_0^t v_s ds ] under the square-root variance dynamics."""
        if t <= 0:
            return 0.0
        if self.beta == 0:
            return self.v0 * t
        decay = (1.0 - math.exp(-self.beta * t)) / self.beta
        return self.theta * t + (self.v0 - self.theta) * decay


@dataclass(frozen=True)
class BatesModel:
    heston: HestonModel
    gamma: float
    mu_psi: float
    sigma_psi: float

    def __post_init__(self):
        if self.gamma < 0:
            raise ModelError(f"gamma must be >= 0, got {self.gamma}")
        if self.sigma_psi < 0:
            raise ModelError(f"sigma_psi must be >= 0, got {self.sigma_psi}")

    kind = "bates"

    @property
    def jump_compensator(self) -> float:
        return math.exp(self.mu_psi + 0.5 * self.sigma_psi**2) - 1.0


ModelSpec = Union[BSModel, MertonModel, HestonModel, BatesModel]


@dataclass(frozen=True)
class CashDividends:
    """Discrete cash dividends: list of (time in years, amount)."""

    schedule: tuple[tuple[float, float], ...]

    def __init__(self, schedule: Sequence[tuple[float, float]]):
        pairs = tuple(sorted((float(t), float(d)) for t, d in schedule))
        for t, d in pairs:
            if t <= 0:
                raise ModelError(f"dividend time must be > 0, got {t}")
            if d < 0:
                raise ModelError(f"dividend amount must be >= 0, got {d}")
        object.__setattr__(self, "schedule", pairs)

    kind = "cash"

    def before(self, maturity: float) -> tuple[tuple[float, float], ...]:
        """Dividends strictly before maturity (a payment at expiry cannot
        affect the option)."""
        return tuple((t, d) for t, d in self.schedule if t < maturity - 1e-12)

    def max_amount(self) -> float:
        return max((d for _, d in self.schedule), default=0.0)


@dataclass(frozen=True)
class DividendYield:
    rate: float  # continuously compounded dividend yield per year

    def __post_init__(self):
        if self.rate < 0:
            raise ModelError(f"dividend yield must be >= 0, got {self.rate}")

    kind = "yield"


@dataclass(frozen=True)
class NoDividend:
    kind = "none"


DividendSpec = Union[CashDividends, DividendYield, NoDividend]


@dataclass(frozen=True)
class MarketEnv:
    r: float  # continuously compounded risk-free rate per year
    dividend: DividendSpec = field(default_factory=NoDividend)

    @property
    def carry_rate(self) -> float:
        """Continuous drift adjustment (yield dividends only)."""
        if isinstance(self.dividend, DividendYield):
            return self.dividend.rate
        return 0.0

    def cash_dividends(self, maturity: float) -> tuple[tuple[float, float], ...]:
        if isinstance(self.dividend, CashDividends):
            return self.dividend.before(maturity)
        return ()


# ---------------------------------------------------------------------------
# JSON (de)serialization
# ---------------------------------------------------------------------------

def model_to_dict(model: ModelSpec) -> dict:
    if isinstance(model, BSModel):
        return {"kind": "bs", "sigma": model.sigma}
    if isinstance(model, MertonModel):
        return {"kind": "merton", "sigma_m": model.sigma_m, "gamma": model.gamma,
                "mu_psi": model.mu_psi, "sigma_psi": model.sigma_psi}
    if isinstance(model, HestonModel):
        return {"kind": "heston", "v0": model.v0, "beta": model.beta,
                "sigma_lt": model.sigma_lt, "omega": model.omega, "rho": model.rho}
    if isinstance(model, BatesModel):
        d = model_to_dict(model.heston)
        d.update(kind="bates", gamma=model.gamma, mu_psi=model.mu_psi,
                 sigma_psi=model.sigma_psi)
        return d
    raise ModelError(f"unknown model type {type(model)!r}")


def model_from_dict(d: dict) -> ModelSpec:
    kind = d.get("kind")
    if kind == "bs":
        return BSModel(sigma=d["sigma"])
    if kind == "merton":
        return MertonModel(sigma_m=d["sigma_m"], gamma=d["gamma"],
                           mu_psi=d["mu_psi"], sigma_psi=d["sigma_psi"])
    if kind == "heston":
        return HestonModel(v0=d["v0"], beta=d["beta"], sigma_lt=d["sigma_lt"],
                           omega=d["omega"], rho=d["rho"])
    if kind == "bates":
        heston = HestonModel(v0=d["v0"], beta=d["beta"], sigma_lt=d["sigma_lt"],
                             omega=d["omega"], rho=d["rho"])
        return BatesModel(heston=heston, gamma=d["gamma"], mu_psi=d["mu_psi"],
                          sigma_psi=d["sigma_psi"])
    raise ModelError(f"unknown model kind {kind!r}")


def env_to_dict(env: MarketEnv) -> dict:
    div = env.dividend
    if isinstance(div, CashDividends):
        dd = {"kind": "cash", "schedule": [[t, d] for t, d in div.schedule]}
    elif isinstance(div, DividendYield):
        dd = {"kind": "yield", "rate": div.rate}
    else:
        dd = {"kind": "none"}
    return {"r": env.r, "dividend": dd}


def env_from_dict(d: dict) -> MarketEnv:
    unknown = set(d) - {"r", "dividend"}
    if unknown:
        raise ModelError(f"unknown environment fields {sorted(unknown)}; "
                         f"expected 'r' and optionally 'dividend'")
    dd = d.get("dividend", {"kind": "none"})
    kind = dd.get("kind", "none")
    if kind == "cash":
        div: DividendSpec = CashDividends([(t, a) for t, a in dd["schedule"]])
    elif kind == "yield":
        div = DividendYield(rate=dd["rate"])
    elif kind == "none":
        div = NoDividend()
    else:
        raise ModelError(f"unknown dividend kind {kind!r}")
    return MarketEnv(r=d["r"], dividend=div)


def model_from_json(text: str) -> ModelSpec:
    return model_from_dict(json.loads(text))


def env_from_json(text: str) -> MarketEnv:
    return env_from_dict(json.loads(text))


def effective_bs_variance(model: ModelSpec, t: float) -> float:
    """Total return variance over [0, t]; used to build the matched-variance
    Black-Scholes comparator.

    Heston: expected integrated variance.  Merton: diffusive variance plus
    the jump contribution gamma * (mu_psi**2 + sigma_psi**2) per year.
    """
    if isinstance(model, BSModel):
        return model.sigma**2 * t
    if isinstance(model, MertonModel):
        rate = model.sigma_m**2 + model.gamma * (model.mu_psi**2 + model.sigma_psi**2)
        return rate * t
    if isinstance(model, HestonModel):
        return model.expected_integrated_variance(t)
    if isinstance(model, BatesModel):
        jump = model.gamma * (model.mu_psi**2 + model.sigma_psi**2)
        return model.heston.expected_integrated_variance(t) + jump * t
    raise ModelError(f"unknown model type {type(model)!r}")


def matched_bs(model: ModelSpec, t: float) -> BSModel:
    """Black-Scholes comparator whose total variance over [0, t] matches."""
    if t <= 0:
        raise ModelError("matched_bs requires t > 0")
    return BSModel(sigma=math.sqrt(effective_bs_variance(model, t) / t))
