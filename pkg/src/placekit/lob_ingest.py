"""Level-I order-book event logs: parsing, rate estimation, synthetic logs.

CSV layout (UTF-8, ``#`` lines ignored)::

    timestamp,side,event,level,size

timestamp is seconds since the session open, side is bid/ask, event is
add/cancel/execute/price_change, level counts ticks (1 = best quote) and
size is in batches of 100 shares.  A ``price_change`` record marks a move of
the best quote on its side; its size is the queue now standing at the new
best.  A bid price_change is a downward move; the first ask ``add`` at level
1 after it re-closes the spread and its size is one draw of the refill law.
"""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .rho_engine import TABLE1, QueueModel

SIDES = ("bid", "ask")
EVENTS = ("add", "cancel", "execute", "price_change")
HEADER = ["timestamp", "side", "event", "level", "size"]
BATCH_SHARES = 100


class LobParseError(ValueError):
    def __init__(self, message, errors=()):
        super().__init__(message)
        self.errors = list(errors)


class InsufficientEvents(ValueError):
    pass


@dataclass(frozen=True)
class LobEventRecord:
    timestamp: float
    side: str
    event: str
    level: int
    size: int


@dataclass
class ParseReport:
    records: list
    errors: list           # (line number, message)
    n_data_lines: int = 0

    @property
    def malformed_fraction(self) -> float:
        return len(self.errors) / self.n_data_lines if self.n_data_lines else 0.0

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def _parse_row(row, last_ts):
    if len(row) != 5:
        raise ValueError(f"expected 5 fields, got {len(row)}")
    ts = float(row[0])
    if not math.isfinite(ts) or ts < 0:
        raise ValueError("timestamp must be finite and >= 0")
    if last_ts is not None and ts < last_ts:
        raise ValueError("timestamp decreases")
    side, event = row[1].strip().lower(), row[2].strip().lower()
    if side not in SIDES:
        raise ValueError(f"bad side {row[1]!r}")
    if event not in EVENTS:
        raise ValueError(f"bad event {row[2]!r}")
    level = int(row[3])
    size = int(row[4])
    if level < 1:
        raise ValueError("level must be >= 1")
    if size < 1:
        raise ValueError("size must be >= 1")
    return LobEventRecord(ts, side, event, level, size)


def parse_lines(lines, max_malformed: float = 0.01) -> ParseReport:
    """Parse an iterable of text lines (header included)."""
    records, errors = [], []
    n_data = 0
    header_seen = False
    last_ts = None
    for lineno, row in _numbered_rows(lines):
        if not header_seen:
            header_seen = True
            if [c.strip().lower() for c in row] != HEADER:
                raise LobParseError(f"line {lineno}: header must be {','.join(HEADER)}")
            continue
        n_data += 1
        try:
            rec = _parse_row(row, last_ts)
        except ValueError as exc:
            errors.append((lineno, str(exc)))
            continue
        last_ts = rec.timestamp
        records.append(rec)
    report = ParseReport(records, errors, n_data)
    if report.malformed_fraction > max_malformed:
        raise LobParseError(f"{len(errors)} of {n_data} lines malformed "
                            f"(limit {max_malformed:.0%})", errors)
    return report


def _numbered_rows(lines):
    for lineno, line in enumerate(lines, start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        yield lineno, next(csv.reader([s]))


def parse_events(path, max_malformed: float = 0.01) -> ParseReport:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise LobParseError(f"cannot read {path}: {exc}") from exc
    if not any(l.strip() and not l.lstrip().startswith("#") for l in lines):
        return ParseReport([], [], 0)
    return parse_lines(lines, max_malformed)


def write_events(path, records):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for r in records:
            w.writerow([repr(float(r.timestamp)), r.side, r.event, r.level, r.size])


# ---------------------------------------------------------------- estimation

@dataclass
class RateEstimates:
    lambda_a: float
    lambda_b: float
    dep_a: float
    dep_b: float
    std_errors: dict
    f_a_hist: dict
    mean_bid_after_drop: float
    active_seconds: float
    n_events: int
    degenerate: list = field(default_factory=list)

    @property
    def rates(self) -> dict:
        return dict(lambda_a=self.lambda_a, lambda_b=self.lambda_b,
                    dep_a=self.dep_a, dep_b=self.dep_b)

    def to_document(self) -> dict:
        """Key-value document with the queue section of a run config."""
        return {
            "rates": {k: float(v) for k, v in self.rates.items()},
            "std_errors": {k: float(v) for k, v in self.std_errors.items()},
            "f_a": {"pmf": {int(k): float(v) for k, v in sorted(self.f_a_hist.items())}},
            "mean_bid_after_drop": float(self.mean_bid_after_drop),
            "active_seconds": float(self.active_seconds),
            "n_events": int(self.n_events),
            "degenerate": list(self.degenerate),
        }


def active_seconds(timestamps, max_gap: float = 60.0) -> float:
    ts = np.asarray(timestamps, dtype=float)
    if ts.size < 2:
        return 0.0
    gaps = np.diff(ts)
    return float(gaps[gaps <= max_gap].sum())


def estimate_rates(events, max_gap: float = 60.0, min_events: int = 1000) -> RateEstimates:
    """Table-style level-1 rates in batches per active second.

    Arrivals count ``add`` batches at level 1, depletions count ``cancel``
    and ``execute`` batches at level 1.  Refill adds (the first ask add after
    a bid price change) are not arrivals at a standing queue and are kept
    out of lambda_a; they feed the refill histogram instead.
    """
    events = list(events)
    level1 = [e for e in events if e.level == 1]
    if len(level1) < min_events:
        raise InsufficientEvents(f"need at least {min_events} level-1 events, got {len(level1)}")
    T = active_seconds([e.timestamp for e in events], max_gap)
    if T <= 0:
        raise InsufficientEvents("no active time in the log")

    sums = Counter()
    squares = Counter()
    refills = Counter()
    bid_drops = []
    waiting_refill = False
    for e in events:
        if e.event == "price_change":
            if e.side == "bid":
                waiting_refill = True
                bid_drops.append(e.size)
            continue
        if e.level != 1:
            continue
        if e.side == "ask" and e.event == "add" and waiting_refill:
            refills[e.size] += 1
            waiting_refill = False
            continue
        key = ("lambda_" if e.event == "add" else "dep_") + e.side[0]
        sums[key] += e.size
        squares[key] += e.size * e.size

    rates = {k: sums[k] / T for k in ("lambda_a", "lambda_b", "dep_a", "dep_b")}
    # compound-Poisson standard error of a batch rate
    ses = {k: math.sqrt(squares[k]) / T for k in rates}
    degenerate = [k for k in ("dep_a", "dep_b") if rates[k] == 0]
    n_ref = sum(refills.values())
    hist = {int(i): c / n_ref for i, c in sorted(refills.items())} if n_ref else {}
    mean_bid = float(np.mean(bid_drops)) if bid_drops else float("nan")
    return RateEstimates(rates["lambda_a"], rates["lambda_b"], rates["dep_a"], rates["dep_b"],
                         ses, hist, mean_bid, T, len(events), degenerate)


def build_queue_model(est: RateEstimates, theta_k=None, depth_profile=None,
                      default_theta=None, tick: float = 0.01, qa0: int = 0) -> QueueModel:
    """Assemble a QueueModel from estimates plus cancellation rates and a profile."""
    if theta_k is None:
        theta_k = default_theta
    if theta_k is None:
        raise ValueError("theta_k missing and no default supplied")
    if not est.f_a_hist:
        raise ValueError("empty refill distribution f_a")
    if est.degenerate:
        raise ValueError(f"degenerate estimates: {', '.join(est.degenerate)} = 0")
    return QueueModel(lambda_a=est.lambda_a, lambda_b=est.lambda_b, dep_a=est.dep_a,
                      dep_b=est.dep_b, theta_k=tuple(theta_k), f_a=dict(est.f_a_hist),
                      depth_profile=dict(depth_profile or {}), tick=tick, qa0=qa0)


# ---------------------------------------------------------------- synthetic logs

def synthetic_events(n_events: int, rates: dict | None = None, seed: int = 0,
                     f_a=None, drop_rate: float = 0.05, bid_after_drop: float = 38.0,
                     halt: tuple | None = None) -> list:
    """Poisson level-1 flow with unit batches at the given rates.

    n_events counts the flow events (adds, cancels, executes).  Downward
    price changes arrive at ``drop_rate`` per second, each followed by a
    refill add on the ask with size drawn from f_a (geometric, mean 6, when
    omitted) and carrying a Poisson(bid_after_drop) bid queue size.
    ``halt=(at, length)`` inserts a trading gap.
    """
    rates = dict(TABLE1 if rates is None else rates)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    names = ["lambda_a", "dep_a", "lambda_b", "dep_b"]
    lam = np.array([rates[k] for k in names], dtype=float)
    total = lam.sum()
    times = np.cumsum(rng.exponential(1.0 / total, n_events))
    kinds = rng.choice(4, size=n_events, p=lam / total)
    ex_or_cancel = rng.random(n_events) < 0.5
    horizon = times[-1] if n_events else 0.0
    n_drop = rng.poisson(drop_rate * horizon)
    drop_t = np.sort(rng.uniform(0.0, horizon, n_drop))
    if f_a is None:
        refill = rng.geometric(1 / 6.0, n_drop)
    else:
        sup = np.array(list(dict(f_a).keys()))
        w = np.array(list(dict(f_a).values()), dtype=float)
        refill = rng.choice(sup, size=n_drop, p=w / w.sum())
    bid_q = np.maximum(rng.poisson(bid_after_drop, n_drop), 1)

    out = []
    for t, k, ec in zip(times, kinds, ex_or_cancel):
        side = "ask" if k < 2 else "bid"
        ev = "add" if k % 2 == 0 else ("execute" if ec else "cancel")
        out.append(LobEventRecord(float(t), side, ev, 1, 1))
    for t, r, b in zip(drop_t, refill, bid_q):
        out.append(LobEventRecord(float(t), "bid", "price_change", 1, int(b)))
        out.append(LobEventRecord(float(np.nextafter(t, np.inf)), "ask", "add", 1, int(r)))
    out.sort(key=lambda e: e.timestamp)
    if halt is not None:
        at, length = halt
        out = [e if e.timestamp < at else
               LobEventRecord(e.timestamp + length, e.side, e.event, e.level, e.size)
               for e in out]
    return out
