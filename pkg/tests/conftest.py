import sys

import pytest

from recproj.models import (
    BSModel,
    CashDividends,
    HestonModel,
    MarketEnv,
    MertonModel,
)
from recproj.pricer import AmericanCallOnDivDates, Call, Contract


@pytest.fixture(scope="session")
def bs_annual_div():
    """American call on a stock paying 2.0 at the end of each year, T=3."""
    model = BSModel(sigma=0.2)
    env = MarketEnv(r=0.05, dividend=CashDividends(
        [(1.0, 2.0), (2.0, 2.0), (3.0, 2.0)]))
    contract = Contract(payoff=Call(100.0), maturity=3.0,
                        style=AmericanCallOnDivDates())
    return model, env, contract


@pytest.fixture(scope="session")
def heston_quarterly_div():
    """American call under stochastic variance, three quarterly dividends."""
    model = HestonModel(v0=0.04, beta=2.0, sigma_lt=0.2, omega=0.2, rho=0.0)
    env = MarketEnv(r=0.05, dividend=CashDividends(
        [(0.25, 2.0), (0.5, 2.0), (0.75, 2.0)]))
    contract = Contract(payoff=Call(100.0), maturity=1.0,
                        style=AmericanCallOnDivDates())
    return model, env, contract


@pytest.fixture(scope="session")
def heston_large_div():
    """American call under stochastic variance, one large dividend d=10."""
    model = HestonModel(v0=0.04, beta=2.0, sigma_lt=0.2, omega=0.2, rho=0.0)
    env = MarketEnv(r=0.05, dividend=CashDividends([(0.5, 10.0)]))
    contract = Contract(payoff=Call(100.0), maturity=1.0,
                        style=AmericanCallOnDivDates())
    return model, env, contract


@pytest.fixture(scope="session")
def heston_boundary_setup():
    """Heston dynamics and quarterly dividend used for boundary studies."""
    model = HestonModel(v0=0.04, beta=4.0, sigma_lt=0.3, omega=0.1, rho=-0.5)
    env = MarketEnv(r=0.05, dividend=CashDividends(
        [(0.25, 1.38), (0.5, 1.38), (0.75, 1.38)]))
    contract = Contract(payoff=Call(100.0), maturity=0.75,
                        style=AmericanCallOnDivDates())
    return model, env, contract


@pytest.fixture(scope="session")
def merton_boundary_setup():
    """Merton dynamics and quarterly dividend used for boundary studies."""
    model = MertonModel(sigma_m=0.05 ** 0.5, gamma=5.0, mu_psi=0.0,
                        sigma_psi=0.05 ** 0.5)
    env = MarketEnv(r=0.08, dividend=CashDividends(
        [(0.25, 1.125), (0.5, 1.125), (0.75, 1.125)]))
    contract = Contract(payoff=Call(40.0), maturity=0.75,
                        style=AmericanCallOnDivDates())
    return model, env, contract


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the one-line acceptance verdicts after capture has ended."""
    mod = (sys.modules.get("test_acceptance")
           or sys.modules.get("tests.test_acceptance"))
    lines = getattr(mod, "VERDICTS", None) if mod is not None else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
