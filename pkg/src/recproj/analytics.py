"""Suboptimal-non-exercise analytics for American calls on dividend payers.

Immediately before an ex-dividend date, holding the call is suboptimal when
the continuation value of the post-dividend position falls below the
intrinsic value.  Given observed open interest, these routines quantify how
much money unexercised contracts leave on the table, with and without a
per-share transaction fee, and the break-even fee that would rationalize
non-exercise.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .models import MarketEnv

__all__ = [
    "AnalyticsError",
    "ExerciseEvent",
    "should_exercise",
    "ne_percentage",
    "total_loss",
    "implied_fee",
    "build_report",
    "Report",
    "synthetic_events",
    "events_from_csv",
    "events_to_csv",
    "REFERENCE_FEE",
    "CONTRACT_MULTIPLIER",
]

# conservative per-share transaction cost used as the classification
# threshold for "fee cannot explain the non-exercise"
REFERENCE_FEE = 0.4446
CONTRACT_MULTIPLIER = 100


class AnalyticsError(Exception):
    pass


@dataclass(frozen=True)
class ExerciseEvent:
    """One (contract, ex-dividend date) decision observation.

    ``continuation`` maps a model label to C(S−d, K, F), the value of the
    still-alive option on the post-dividend stock price, as a function of
    the fee F added to the strike.  It is stored as a callable so the
    fee-adjusted variants reuse one pricing setup."""
    quote_id: str
    ex_date: float            # years from observation to the ex-dividend date
    spot: float               # S immediately before the dividend
    dividend: float
    strike: float
    maturity: float           # years from the ex-dividend date to expiry
    oi_prev: float            # open interest the day before the ex-date
    oi_prev2: float           # open interest two days before
    continuation: dict = field(compare=False)
    delta: float | None = None

    def __post_init__(self):
        if self.oi_prev < 0 or self.oi_prev2 < 0:
            raise AnalyticsError("open interest must be >= 0")
        if self.dividend < 0:
            raise AnalyticsError("dividend must be >= 0")

    def continuation_value(self, model_label: str, fee: float = 0.0) -> float:
        c = self.continuation[model_label]
        value = c(fee) if callable(c) else (
            c if fee == 0.0 else _linear_strike_shift(self, model_label, fee))
        if value < 0:
            raise AnalyticsError("continuation value must be >= 0")
        return value


def _linear_strike_shift(event: ExerciseEvent, label: str, fee: float):
    raise AnalyticsError(
        f"event {event.quote_id!r} stores a scalar continuation for "
        f"{label!r}; fee-adjusted analytics need a callable continuation")


# ---------------------------------------------------------------------------
# per-event formulas
# ---------------------------------------------------------------------------

def should_exercise(event: ExerciseEvent, model_label: str,
                    fee: float = 0.0) -> bool:
    """True when exercising just before the ex-dividend date beats holding:
    C(S−d, K+F, T) <= S − K − F."""
    intrinsic = event.spot - event.strike - fee
    return event.continuation_value(model_label, fee) <= intrinsic


def ne_percentage(oi_prev: float, oi_prev2: float,
                  clip_log: list | None = None) -> float:
    """Fraction of open interest left unexercised across the ex-date,
    OI_{t−1} / OI_{t−2}, clipped to [0, 1] (new issuance can push the raw
    ratio above one; clips are recorded when a log list is supplied)."""
    if oi_prev2 <= 0:
        raise AnalyticsError("ne_percentage undefined for OI_{t-2} <= 0")
    raw = oi_prev / oi_prev2
    clipped = min(max(raw, 0.0), 1.0)
    if clipped != raw and clip_log is not None:
        clip_log.append((oi_prev, oi_prev2, raw))
    return clipped


def total_loss(event: ExerciseEvent, model_label: str,
               fee: float = 0.0) -> float:
    """Money left on the table by the contracts that stayed open:
    100 × OI_{t−1} × max{0, (S − K − F) − C(S−d, K+F, T)}."""
    gap = (event.spot - event.strike - fee
           - event.continuation_value(model_label, fee))
    return CONTRACT_MULTIPLIER * event.oi_prev * max(0.0, gap)


def implied_fee(event: ExerciseEvent, model_label: str,
                tol: float = 1e-4, fee_cap: float = 1e3) -> float:
    """Break-even fee F*: the root of
    f(F) = C(S−d, K+F, T) − (S − K − F).

    f is strictly increasing in F (the continuation rises by at most the
    strike shift while the intrinsic falls one-for-one), so the root is
    unique; it is bracketed and bisected to ``tol`` currency units.  When
    f(0) > 0 no fee is needed and 0 is returned."""
    def f(F: float) -> float:
        return (event.continuation_value(model_label, F)
                - (event.spot - event.strike - F))

    if f(0.0) > 0:
        return 0.0
    lo, hi = 0.0, 1.0
    while f(hi) < 0:
        lo, hi = hi, hi * 2.0
        if hi > fee_cap:
            raise AnalyticsError("no break-even fee below the cap")
    while hi - lo > tol / 2:
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    return root


# ---------------------------------------------------------------------------
# report aggregation
# ---------------------------------------------------------------------------

@dataclass
class Report:
    model_label: str
    fee: float
    n_events: int
    n_should_exercise: int
    n_suboptimal: int               # should exercise and OI stayed open
    money_available: float          # loss if no one had exercised
    total_loss: float               # loss from the open interest actually left
    ne_buckets: dict                # delta bucket -> mean NE% of should-exercise
    rejects: list = field(default_factory=list)
    clip_log: list = field(default_factory=list)


def _bucket(delta: float | None, low: float = 0.375,
            high: float = 0.625) -> str:
    if delta is None:
        return "unknown"
    if delta < low:
        return "otm"
    if delta > high:
        return "itm"
    return "atm"


def build_report(events: list[ExerciseEvent], model_labels: list[str],
                 fee: float = 0.0) -> dict[str, Report]:
    """Aggregate per-model exercise statistics over an event set."""
    out = {}
    for label in model_labels:
        rep = Report(model_label=label, fee=fee, n_events=0,
                     n_should_exercise=0, n_suboptimal=0,
                     money_available=0.0, total_loss=0.0,
                     ne_buckets={})
        sums: dict[str, list] = {}
        for ev in events:
            try:
                ex = should_exercise(ev, label, fee)
            except (AnalyticsError, KeyError) as exc:
                rep.rejects.append((ev.quote_id, str(exc)))
                continue
            rep.n_events += 1
            if not ex:
                continue
            rep.n_should_exercise += 1
            ne = ne_percentage(ev.oi_prev, ev.oi_prev2, rep.clip_log)
            if ne > 0:
                rep.n_suboptimal += 1
            gap = (ev.spot - ev.strike - fee
                   - ev.continuation_value(label, fee))
            rep.money_available += (CONTRACT_MULTIPLIER * ev.oi_prev2
                                    * max(0.0, gap))
            rep.total_loss += total_loss(ev, label, fee)
            sums.setdefault(_bucket(ev.delta), []).append(ne)
        rep.ne_buckets = {k: float(np.mean(v)) for k, v in sorted(sums.items())}
        out[label] = rep
    return out


def report_to_json(reports: dict[str, Report], path) -> None:
    payload = {}
    for label, rep in reports.items():
        d = asdict(rep)
        d["rejects"] = [list(x) for x in rep.rejects]
        d["clip_log"] = [list(x) for x in rep.clip_log]
        payload[label] = d
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def report_to_csv(reports: dict[str, Report], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "fee", "n_events", "n_should_exercise",
                         "n_suboptimal", "money_available", "total_loss"])
        for label, rep in sorted(reports.items()):
            writer.writerow([label, f"{rep.fee:.10g}", rep.n_events,
                             rep.n_should_exercise, rep.n_suboptimal,
                             f"{rep.money_available:.2f}",
                             f"{rep.total_loss:.2f}"])


# ---------------------------------------------------------------------------
# synthetic event generation and CSV interchange
# ---------------------------------------------------------------------------

def synthetic_events(n: int, seed: int, model_labels: tuple[str, ...] = ("bs",),
                     boundary: float = 1.25) -> list[ExerciseEvent]:
    """Deterministic synthetic event set with a known exercise rule.

    The continuation value is a stylized but well-behaved function with the
    right qualitative properties: increasing in spot with slope < 1 and
    increasing in the fee with slope strictly between 0 and 1, so every
    analytics identity (uniqueness of the break-even fee, loss clamps,
    subset orderings across models) can be checked exactly by brute force.
    ``boundary`` scales the synthetic time value and hence how often
    exercise is optimal.  Later labels carry more time value, so their
    should-exercise sets are nested inside the earlier ones."""
    rng = np.random.default_rng(seed)
    events = []
    for i in range(n):
        strike = float(rng.uniform(20.0, 120.0))
        spot = strike * float(rng.uniform(0.8, 1.8))
        dividend = float(rng.uniform(0.2, 2.0))
        maturity = float(rng.uniform(0.05, 0.6))
        oi2 = float(rng.integers(1, 5000))
        oi1 = oi2 * float(rng.uniform(0.0, 1.1))
        delta = float(rng.uniform(0.05, 0.95))
        s_star = boundary * strike
        conts = {}
        for k, label in enumerate(model_labels):
            # slightly different time value per label preserves the
            # subset structure of exercise decisions across models
            tv = 0.04 * (1.0 + 0.5 * k) * s_star * math.sqrt(maturity)

            def cont(fee: float, spot=spot, strike=strike, dividend=dividend,
                     tv=tv) -> float:
                anchor = max(spot - dividend - strike - fee, 0.0)
                return anchor + tv / (1.0 + 0.3 * anchor) + 0.6 * fee
            conts[label] = cont
        events.append(ExerciseEvent(
            quote_id=f"ev{i:05d}", ex_date=float(rng.uniform(0.0, 0.1)),
            spot=spot, dividend=dividend, strike=strike, maturity=maturity,
            oi_prev=oi1, oi_prev2=oi2, continuation=conts, delta=delta))
    return events


EVENT_FIELDS = ["quote_id", "ex_date", "spot", "dividend", "strike",
                "maturity", "oi_prev", "oi_prev2", "delta"]


def events_to_csv(events: list[ExerciseEvent], path) -> None:
    """Event observables (continuation values are model outputs, not data,
    and are recomputed on load by whoever owns the pricer)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENT_FIELDS)
        for ev in events:
            writer.writerow([
                ev.quote_id, f"{ev.ex_date:.10g}", f"{ev.spot:.10g}",
                f"{ev.dividend:.10g}", f"{ev.strike:.10g}",
                f"{ev.maturity:.10g}", f"{ev.oi_prev:.10g}",
                f"{ev.oi_prev2:.10g}",
                "" if ev.delta is None else f"{ev.delta:.10g}"])


def events_from_csv(path, continuation_factory) -> list[ExerciseEvent]:
    """Load events; ``continuation_factory(row_dict)`` supplies the
    per-model continuation mapping for each row."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(EVENT_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise AnalyticsError(f"event CSV missing columns: {sorted(missing)}")
        for row in reader:
            out.append(ExerciseEvent(
                quote_id=row["quote_id"], ex_date=float(row["ex_date"]),
                spot=float(row["spot"]), dividend=float(row["dividend"]),
                strike=float(row["strike"]), maturity=float(row["maturity"]),
                oi_prev=float(row["oi_prev"]), oi_prev2=float(row["oi_prev2"]),
                continuation=continuation_factory(row),
                delta=float(row["delta"]) if row["delta"] else None))
    return out
