"""HTTP service exposing the pricing engine.

Endpoints mirror the command surface: /price, /implied-vol, /boundary, and
/analyze, plus /health.  Request and response bodies are explicit pydantic
models; model, market, and contract specifications reuse the same JSON
shapes as the CLI configs.
"""

from __future__ import annotations

import math
import time
from typing import Literal

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field, field_validator

from . import __version__
from .models import ModelError, env_from_dict, model_from_dict, model_to_dict
from .lattice import DividendTooLargeError, GridError, NyquistError, RingingError
from .pricer import (
    ContractError,
    PricingError,
    contract_from_dict,
    price_contract,
)
from .boundary import exercise_boundary_discrete, exercise_boundary_yield
from .calibration import ImpliedVolError, implied_vol
from .analytics import build_report, synthetic_events
from .kernels import KernelDomainError, KernelOverflowError, TruncationError

_BAD_INPUT = (ContractError, ModelError, KeyError, TypeError, ValueError)
_NUMERICAL = (PricingError, GridError, DividendTooLargeError, NyquistError,
              RingingError, KernelDomainError, KernelOverflowError,
              TruncationError, ImpliedVolError, FloatingPointError)


class GridParams(BaseModel):
    J: int = Field(10, ge=4, le=14)
    J_w: int = Field(4, ge=2, le=8)
    width_mult: float | None = Field(None, gt=0)
    kappa_mult: int = Field(4, ge=1, le=32)


class PriceRequest(BaseModel):
    model_spec: dict = Field(alias="model")
    env: dict
    contract: dict
    spot: float = Field(gt=0)
    grid: GridParams = GridParams()
    greeks: bool = True

    model_config = {"populate_by_name": True}


class GreeksOut(BaseModel):
    delta: float | None = None
    gamma: float | None = None


class PriceResponse(BaseModel):
    price: float
    greeks: GreeksOut
    J: int
    grid_bounds: tuple[float, float]
    wall_time_ms: float


class ImpliedVolRequest(BaseModel):
    price: float = Field(gt=0)
    spot: float = Field(gt=0)
    strike: float = Field(gt=0)
    maturity: float = Field(gt=0)
    env: dict


class ImpliedVolResponse(BaseModel):
    implied_vol: float


class BoundaryRequest(BaseModel):
    model_spec: dict = Field(alias="model")
    env: dict
    contract: dict
    regime: Literal["discrete", "yield"] = "discrete"
    dates: list[float] | None = None
    steps_per_year: float = Field(250, gt=0)
    grid: GridParams = GridParams()

    model_config = {"populate_by_name": True}

    @field_validator("dates")
    @classmethod
    def _sorted_dates(cls, v):
        if v is not None and any(t <= 0 for t in v):
            raise ValueError("boundary dates must be positive")
        return v


class BoundaryPointOut(BaseModel):
    t: float
    ttm: float
    s_star: float | None
    regime: str


class BoundaryResponse(BaseModel):
    model_kind: str
    points: list[BoundaryPointOut]


class AnalyzeRequest(BaseModel):
    n_events: int = Field(1000, ge=0, le=100_000)
    seed: int = 0
    models: list[str] = ["bs"]
    fee: float = Field(0.0, ge=0)


class ReportOut(BaseModel):
    n_events: int
    n_should_exercise: int
    n_suboptimal: int
    money_available: float
    total_loss: float
    ne_buckets: dict[str, float]


class AnalyzeResponse(BaseModel):
    fee: float
    reports: dict[str, ReportOut]


def create_app() -> FastAPI:
    app = FastAPI(title="recproj", version=__version__)

    def guard(fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _NUMERICAL as exc:
            raise HTTPException(status_code=422,
                                detail=f"numerical failure: {exc}")
        except _BAD_INPUT as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/price", response_model=PriceResponse)
    def price(req: PriceRequest) -> PriceResponse:
        def run():
            model = model_from_dict(req.model_spec)
            env = env_from_dict(req.env)
            contract = contract_from_dict(req.contract)
            return price_contract(
                contract, model, env, req.spot, J=req.grid.J,
                J_w=req.grid.J_w, width_mult=req.grid.width_mult,
                with_greeks=req.greeks)
        result = guard(run)
        return PriceResponse(
            price=result.price,
            greeks=GreeksOut(delta=result.delta, gamma=result.gamma),
            J=req.grid.J,
            grid_bounds=(float(math.exp(result.grid.y[0])),
                         float(math.exp(result.grid.y[-1]))),
            wall_time_ms=result.wall_time * 1e3)

    @app.post("/implied-vol", response_model=ImpliedVolResponse)
    def implied(req: ImpliedVolRequest) -> ImpliedVolResponse:
        vol = guard(implied_vol, req.price, req.spot, req.strike,
                    req.maturity, env_from_dict(req.env))
        return ImpliedVolResponse(implied_vol=vol)

    @app.post("/boundary", response_model=BoundaryResponse)
    def boundary(req: BoundaryRequest) -> BoundaryResponse:
        def run():
            model = model_from_dict(req.model_spec)
            env = env_from_dict(req.env)
            contract = contract_from_dict(req.contract)
            kwargs = dict(J=req.grid.J, J_w=req.grid.J_w,
                          kappa_mult=req.grid.kappa_mult)
            if req.regime == "discrete":
                return model, exercise_boundary_discrete(
                    contract, model, env, **kwargs)
            if not req.dates:
                raise PricingError("yield-regime boundary needs dates")
            return model, exercise_boundary_yield(
                contract, model, env, dates=req.dates,
                steps_per_year=req.steps_per_year, **kwargs)
        model, points = guard(run)
        return BoundaryResponse(
            model_kind=model.kind,
            points=[BoundaryPointOut(t=p.t, ttm=p.ttm, s_star=p.s_star,
                                     regime=p.regime) for p in points])

    @app.post("/analyze", response_model=AnalyzeResponse)
    def analyze(req: AnalyzeRequest) -> AnalyzeResponse:
        events = synthetic_events(req.n_events, seed=req.seed,
                                  model_labels=tuple(req.models))
        reports = guard(build_report, events, req.models, fee=req.fee)
        return AnalyzeResponse(fee=req.fee, reports={
            lbl: ReportOut(
                n_events=r.n_events,
                n_should_exercise=r.n_should_exercise,
                n_suboptimal=r.n_suboptimal,
                money_available=r.money_available,
                total_loss=r.total_loss,
                ne_buckets=r.ne_buckets)
            for lbl, r in reports.items()})

    return app


app = create_app()
