"""Discounted transition densities and characteristic functions.

Everything is expressed in log-price ``X = log S``.  The closed-form
densities (Black-Scholes, Merton) are discounted transition densities
``g(x, y, tau) = e^{-r tau} p(X_{t+tau} = y | X_t = x)``; the Heston and
Bates kernels are discounted joint characteristic functions of
``(X_T, v_T)`` given ``(x, xi)``:

    char2(x, xi, tau, lam, kap) = e^{-r tau} E[exp(i lam X_T + i kap v_T)].

All functions broadcast over numpy array arguments.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import poisson

from .models import BatesModel, BSModel, HestonModel, MarketEnv, MertonModel

__all__ = [
    "bs_green",
    "merton_density",
    "merton_n_terms",
    "heston_char2",
    "bates_char2",
    "KernelDomainError",
    "KernelOverflowError",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)
# exp() saturates around 709 for float64; stay well below
_EXP_CAP = 700.0


class KernelDomainError(ValueError):
    """Inputs outside the kernel's domain (e.g. non-positive tau)."""


class KernelOverflowError(FloatingPointError):
    """The affine exponent overflowed; carries diagnostics in the message."""


class TruncationError(ValueError):
    """Series cutoff too small to meet the requested tail bound."""


def bs_green(x, y, tau: float, env: MarketEnv, model: BSModel):
    """Discounted Black-Scholes transition density in log-price.

    Returns e^{-r tau} times the Gaussian density of X_{t+tau} at y
    given X_t = x, with drift r - r_d - sigma^2/2.
    """
    if tau <= 0:
        raise KernelDomainError(f"tau must be positive, got {tau}")
    sig2 = model.sigma**2 * tau
    mean = np.asarray(x) + (env.r - env.carry_rate - 0.5 * model.sigma**2) * tau
    z = (np.asarray(y) - mean) ** 2 / (2.0 * sig2)
    return math.exp(-env.r * tau) * np.exp(-z) / (_SQRT2PI * math.sqrt(sig2))


def merton_n_terms(gamma: float, tau: float, tail: float = 1e-12) -> int:
    """Smallest Poisson cutoff n such that P(N > n) < tail for N~Poisson(gamma*tau)."""
    lam = gamma * tau
    if lam == 0:
        return 1
    n = max(1, int(lam))
    while poisson.sf(n, lam) >= tail:
        n += 1
    return n


def merton_density(x, y, tau: float, env: MarketEnv, model: MertonModel,
                   n_terms: int | None = None, tail: float = 1e-12):
    """Discounted Merton jump-diffusion transition density in log-price.

    Poisson-weighted mixture of Gaussians, truncated at ``n_terms`` jumps.
    The default cutoff keeps the truncated Poisson tail below ``tail``.
    """
    if tau <= 0:
        raise KernelDomainError(f"tau must be positive, got {tau}")
    lam = model.gamma * tau
    if n_terms is None:
        n_terms = merton_n_terms(model.gamma, tau, tail)
    if n_terms < 1:
        raise KernelDomainError(f"n_terms must be >= 1, got {n_terms}")
    if poisson.sf(n_terms, lam) >= tail:
        raise TruncationError(
            f"n_terms={n_terms} leaves Poisson tail {poisson.sf(n_terms, lam):.3e}"
            f" >= {tail:.1e} for gamma*tau={lam}")

    drift = (env.r - env.carry_rate - model.gamma * model.jump_compensator
             - 0.5 * model.sigma_m**2) * tau
    base_mean = np.asarray(x) + drift
    yv = np.asarray(y)
    out = np.zeros(np.broadcast(base_mean, yv).shape)
    weights = poisson.pmf(np.arange(n_terms + 1), lam)
    for n in range(n_terms + 1):
        var = model.sigma_m**2 * tau + n * model.sigma_psi**2
        mean = base_mean + n * model.mu_psi
        out = out + weights[n] * np.exp(-((yv - mean) ** 2) / (2.0 * var)) \
            / (_SQRT2PI * math.sqrt(var))
    return math.exp(-env.r * tau) * out


def _heston_affine(tau: float, lam, kap, env: MarketEnv, model: HestonModel):
    """Exponential-affine coefficients (A, B, drift phase) for the discounted
    joint characteristic function of (X_T, v_T).

    B solves the Riccati equation
        B' = (omega^2/2) B^2 - (beta - i rho omega lam) B - (lam^2 + i lam)/2
    with B(0) = i kap, and A' = beta * theta * B with A(0) = 0.

    Uses the branch-stable formulation: the solution is written in terms of
    e^{-D tau} with Re(D) >= 0 so the complex logarithm never winds for the
    maturities and frequency ranges used here.
    """
    lam = np.asarray(lam, dtype=complex)
    kap = np.asarray(kap, dtype=complex)
    beta, omega, theta = model.beta, model.omega, model.theta

    a = 0.5 * omega**2
    b = beta - 1j * model.rho * omega * lam
    c = -0.5 * (lam**2 + 1j * lam)
    D = np.sqrt(b * b - 4.0 * a * c)
    # enforce Re(D) >= 0 so e^{-D tau} decays
    D = np.where(D.real < 0, -D, D)

    B0 = 1j * kap
    # below ~1e-6 the quadratic Riccati term is negligible but its closed
    # form cancels catastrophically; use the exact omega=0 linear solution
    if omega > 1e-6:
        r_minus = 2.0 * c / (b + D)          # stable small root
        r_plus = (b + D) / (2.0 * a)
        # g = (B0 - r_minus) / (B0 - r_plus), computed without forming the
        # huge root difference when omega is tiny
        g = (B0 - r_minus) * (2.0 * a) / (B0 * 2.0 * a - (b + D))
        e = np.exp(-D * tau)
        denom = 1.0 - g * e
        B = (r_minus - (b + D) / (2.0 * a) * g * e) / denom
        log_term = np.log(denom / (1.0 - g))
        A = beta * theta * (r_minus * tau - (2.0 / omega**2) * log_term)
    elif beta > 0:
        # omega ~ 0: linear ODE B' = -b B + c, deterministic variance path
        e = np.exp(-b * tau)
        B = B0 * e + c * (1.0 - e) / b
        A = beta * theta * (c * tau / b + (B0 - c / b) * (1.0 - e) / b)
    else:
        # omega ~ 0 and beta = 0: frozen variance
        B = B0 + c * tau
        A = np.zeros_like(B)
    return A, B


def heston_char2(x, xi, tau: float, lam, kap, env: MarketEnv,
                 model: HestonModel):
    """Discounted joint characteristic function of (X_T, v_T) under Heston.

    Valid for any parameters with beta, omega >= 0; the affine formula does
    not require the Feller condition 2*beta*theta >= omega^2.
    """
    if tau <= 0:
        raise KernelDomainError(f"tau must be positive, got {tau}")
    lam = np.asarray(lam, dtype=complex)
    A, B = _heston_affine(tau, lam, kap, env, model)
    exponent = (-env.r * tau
                + 1j * lam * (np.asarray(x) + (env.r - env.carry_rate) * tau)
                + A + B * np.asarray(xi))
    if np.any(exponent.real > _EXP_CAP):
        worst = float(np.max(exponent.real))
        raise KernelOverflowError(
            f"affine exponent overflow: max Re(exponent)={worst:.1f} "
            f"(tau={tau}, |lam|max={float(np.max(np.abs(lam))):.3g})")
    return np.exp(exponent)


def merton_jump_cf_factor(tau: float, lam, gamma: float, mu_psi: float,
                          sigma_psi: float):
    """Characteristic-function factor of the compensated compound-Poisson
    log-jump component over a horizon tau."""
    lam = np.asarray(lam, dtype=complex)
    upsilon = math.exp(mu_psi + 0.5 * sigma_psi**2) - 1.0
    jump_cf = np.exp(1j * lam * mu_psi - 0.5 * lam**2 * sigma_psi**2)
    return np.exp(gamma * tau * (jump_cf - 1.0) - 1j * lam * gamma * upsilon * tau)


def bates_char2(x, xi, tau: float, lam, kap, env: MarketEnv,
                model: BatesModel):
    """Discounted joint characteristic function of (X_T, v_T) under Bates.

    The jump component is independent of the diffusion, so the result is the
    Heston kernel times the compensated Merton jump factor; the factor does
    not depend on kap.
    """
    base = heston_char2(x, xi, tau, lam, kap, env, model.heston)
    return base * merton_jump_cf_factor(tau, lam, model.gamma, model.mu_psi,
                                        model.sigma_psi)


def char2(x, xi, tau: float, lam, kap, env: MarketEnv, model):
    """Dispatch to the joint characteristic function for the given model."""
    if isinstance(model, HestonModel):
        return heston_char2(x, xi, tau, lam, kap, env, model)
    if isinstance(model, BatesModel):
        return bates_char2(x, xi, tau, lam, kap, env, model)
    raise KernelDomainError(f"no joint characteristic function for {type(model)!r}")


def density_1d(x, y, tau: float, env: MarketEnv, model):
    """Dispatch to the closed-form discounted density for 1-D models."""
    if isinstance(model, BSModel):
        return bs_green(x, y, tau, env, model)
    if isinstance(model, MertonModel):
        return merton_density(x, y, tau, env, model)
    raise KernelDomainError(f"no closed-form density for {type(model)!r}")
