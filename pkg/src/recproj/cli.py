"""Batch command-line surface: price, converge, boundary, calibrate,
analyze, bench.

Every command reads one JSON config document; individual fields can be
overridden with ``--set dotted.key=value`` flags (flags win over the file).
Outputs embed the SHA-256 hash of the effective config so results can be
traced back to their inputs.  Exit codes: 0 success, 2 config error,
3 numerical failure.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
import time

import click
import numpy as np

from . import __version__
from .models import (
    MarketEnv,
    ModelError,
    env_from_dict,
    matched_bs,
    model_from_dict,
    model_to_dict,
)
from .lattice import (
    DividendTooLargeError,
    GridError,
    NyquistError,
    RingingError,
)
from .pricer import (
    ContractError,
    PricingError,
    contract_from_dict,
    convergence_study,
    price_contract,
)
from .boundary import (
    exercise_boundary_discrete,
    exercise_boundary_yield,
)
from .calibration import (
    CalibrationError,
    QuotePricer,
    calibrate,
    quotes_from_csv,
)
from .analytics import (
    AnalyticsError,
    build_report,
    events_from_csv,
    report_to_csv,
    report_to_json,
    synthetic_events,
)
from .kernels import KernelDomainError, KernelOverflowError, TruncationError

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

# numerical failures are checked first: several subclass ValueError, which
# would otherwise be swallowed by the config-error net
_NUMERICAL_ERRORS = (PricingError, GridError, DividendTooLargeError,
                     NyquistError, RingingError, KernelDomainError,
                     KernelOverflowError, TruncationError, CalibrationError,
                     AnalyticsError, FloatingPointError)
_CONFIG_ERRORS = (KeyError, TypeError, ValueError, json.JSONDecodeError,
                  FileNotFoundError, ContractError, ModelError)


class ConfigError(Exception):
    pass


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _apply_override(config: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = config
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through non-object {p!r}")
    node[parts[-1]] = value


def _load_config(path: str, overrides: tuple[str, ...]) -> tuple[dict, str]:
    with open(path) as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    for ov in overrides:
        key, value = _parse_override(ov)
        _apply_override(config, key, value)
    return config, _config_hash(config)


def _grid_kwargs(config: dict) -> dict:
    g = config.get("grid", {})
    J = int(g.get("J", 10))
    if not 4 <= J <= 14:
        raise ConfigError(f"J must lie in [4, 14], got {J}")
    out = {"J": J, "J_w": int(g.get("J_w", 4))}
    if g.get("width_mult") is not None:
        out["width_mult"] = float(g["width_mult"])
    return out


def _write_json(path: str | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    click.echo(text)


def _run(command, config_path: str, overrides: tuple[str, ...]) -> None:
    try:
        config, digest = _load_config(config_path, overrides)
    except (ConfigError, *_CONFIG_ERRORS) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    try:
        command(config, digest)
    except _NUMERICAL_ERRORS as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    except (ConfigError, *_CONFIG_ERRORS) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


@click.group()
@click.version_option(__version__)
def main():
    """Recursive-projection option pricing toolkit."""


def _command(name):
    def deco(fn):
        @main.command(name)
        @click.argument("config_path", type=click.Path(exists=True))
        @click.option("--set", "overrides", multiple=True,
                      help="Override a config field: dotted.key=value "
                           "(value parsed as JSON when possible).")
        def wrapper(config_path, overrides):
            _run(fn, config_path, overrides)
        wrapper.__doc__ = fn.__doc__
        return fn
    return deco


def _parse_core(config: dict):
    model = model_from_dict(config["model"])
    env = env_from_dict(config["env"])
    contract = contract_from_dict(config["contract"])
    spot = float(config["spot"])
    return model, env, contract, spot


@_command("price")
def cmd_price(config: dict, digest: str) -> None:
    """Price one contract; emits a JSON record."""
    model, env, contract, spot = _parse_core(config)
    gk = _grid_kwargs(config)
    result = price_contract(contract, model, env, spot,
                            with_greeks=bool(config.get("greeks", True)),
                            **gk)
    payload = {
        "config_hash": digest,
        "model": model_to_dict(model),
        "contract": config["contract"],
        "J": gk["J"],
        "grid_bounds": [float(math.exp(result.grid.y[0])),
                        float(math.exp(result.grid.y[-1]))],
        "price": result.price,
        "greeks": {"delta": result.delta, "gamma": result.gamma},
        "wall_time_ms": result.wall_time * 1e3,
    }
    _write_json(config.get("output"), payload)


def _csv_out(path: str | None):
    if path:
        return open(path, "w", newline="")
    return sys.stdout


@_command("converge")
def cmd_converge(config: dict, digest: str) -> None:
    """Price across a range of grid levels; emits a CSV table and a JSON
    summary with the fitted convergence slope."""
    model, env, contract, spot = _parse_core(config)
    gk = _grid_kwargs(config)
    j_lo, j_hi = config.get("J_range", [6, gk["J"]])
    study = convergence_study(contract, model, env, spot,
                              range(int(j_lo), int(j_hi) + 1),
                              J_w=gk["J_w"])
    out = config.get("output")
    fh = _csv_out(out)
    writer = csv.writer(fh)
    writer.writerow(["J", "price", "error", "wall_time_ms", "config_hash"])
    for row in study.rows:
        writer.writerow([row.J, f"{row.price:.10f}", f"{row.error:.3e}",
                         f"{row.wall_time * 1e3:.1f}", digest])
    if out:
        fh.close()
    _write_json(None, {"config_hash": digest, "slope": study.slope})


@_command("boundary")
def cmd_boundary(config: dict, digest: str) -> None:
    """Extract an early-exercise boundary; emits a CSV of
    (ttm, s_star, regime, model) rows."""
    model = model_from_dict(config["model"])
    env = env_from_dict(config["env"])
    contract = contract_from_dict(config["contract"])
    gk = _grid_kwargs(config)
    regime = config.get("regime", "discrete")
    label = config.get("model_label", model.kind)
    if config.get("matched_bs"):
        model = matched_bs(model, float(config["matched_bs"]))
        label = f"{label}-matched-bs"
    kwargs = dict(J=gk["J"], J_w=gk["J_w"],
                  kappa_mult=int(config.get("grid", {}).get("kappa_mult", 4)))
    if regime == "discrete":
        points = exercise_boundary_discrete(contract, model, env, **kwargs)
    elif regime == "yield":
        points = exercise_boundary_yield(
            contract, model, env, dates=[float(t) for t in config["dates"]],
            steps_per_year=float(config.get("steps_per_year", 250)), **kwargs)
    else:
        raise ConfigError(f"unknown boundary regime {regime!r}")
    out = config.get("output")
    fh = _csv_out(out)
    writer = csv.writer(fh)
    writer.writerow(["ttm", "s_star", "regime", "model", "config_hash"])
    for p in sorted(points, key=lambda p: p.ttm):
        writer.writerow([f"{p.ttm:.10g}",
                         "" if p.s_star is None else f"{p.s_star:.10g}",
                         p.regime, label, digest])
    if out:
        fh.close()


@_command("calibrate")
def cmd_calibrate(config: dict, digest: str) -> None:
    """Fit model parameters to a quote CSV; emits a JSON result."""
    env = env_from_dict(config["env"])
    quotes = quotes_from_csv(config["quotes"])
    init = model_from_dict(config["init"])
    kind = config.get("model_kind", init.kind)
    pc = config.get("pricer", {})
    pricer = QuotePricer(
        quotes, env, J=int(pc.get("J", 8)), J_w=int(pc.get("J_w", 4)),
        variance_bounds=tuple(pc.get("variance_bounds", (0.0, 0.6))),
        kappa_mult=int(pc.get("kappa_mult", 4)))
    result = calibrate(kind, quotes, env, init, pricer=pricer,
                       max_iter=int(config.get("max_iter", 2000)))
    _write_json(config.get("output"), {
        "config_hash": digest,
        "model": model_to_dict(result.model),
        "objective": result.objective,
        "iterations": result.iterations,
        "converged": result.converged,
    })


@_command("analyze")
def cmd_analyze(config: dict, digest: str) -> None:
    """Aggregate suboptimal-non-exercise analytics over an event set;
    emits a JSON report (and a CSV table when an output path is given)."""
    labels = list(config.get("models", ["bs"]))
    fee = float(config.get("fee", 0.0))
    syn = config.get("synthetic")
    if syn:
        events = synthetic_events(int(syn.get("n", 1000)),
                                  seed=int(config.get("seed", 0)),
                                  model_labels=tuple(labels))
    else:
        def factory(row: dict) -> dict:
            conts = {}
            for lbl in labels:
                raw = row.get(f"cont_{lbl}")
                if raw is None or raw == "":
                    raise AnalyticsError(
                        f"events CSV needs a cont_{lbl} column with the "
                        f"model continuation value per row")
                conts[lbl] = float(raw)
            return conts
        events = events_from_csv(config["events"], continuation_factory=factory)
    reports = build_report(events, labels, fee=fee)
    out = config.get("output")
    if out:
        report_to_csv(reports, out)
        report_to_json(reports, out + ".json")
    summary = {lbl: {"n_events": r.n_events,
                     "n_should_exercise": r.n_should_exercise,
                     "n_suboptimal": r.n_suboptimal,
                     "money_available": round(r.money_available, 2),
                     "total_loss": round(r.total_loss, 2)}
               for lbl, r in reports.items()}
    _write_json(None, {"config_hash": digest, "fee": fee, "report": summary})


@_command("bench")
def cmd_bench(config: dict, digest: str) -> None:
    """Error-versus-time benchmark across grid levels (the finest level is
    the reference); emits a CSV table."""
    model, env, contract, spot = _parse_core(config)
    gk = _grid_kwargs(config)
    j_lo, j_hi = config.get("J_range", [6, gk["J"]])
    study = convergence_study(contract, model, env, spot,
                              range(int(j_lo), int(j_hi) + 1),
                              J_w=gk["J_w"])
    out = config.get("output")
    fh = _csv_out(out)
    writer = csv.writer(fh)
    writer.writerow(["J", "wall_time_ms", "abs_error", "price",
                     "config_hash"])
    for row in study.rows:
        writer.writerow([row.J, f"{row.wall_time * 1e3:.2f}",
                         f"{row.error:.3e}", f"{row.price:.10f}", digest])
    if out:
        fh.close()


if __name__ == "__main__":
    main()
