"""Run configuration: YAML documents validated against a fixed schema.

Unknown keys are rejected at every level so that typos fail loudly.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .market import ConstantRho, ExecProbability, MarketParams, TabulatedRho
from .numerics import QuadratureSpec
from .rho_engine import HittingModel, QueueModel, engine_for, geometric_f_a

MODELS = ("bachelier", "black-scholes")


class ConfigError(ValueError):
    pass


def _only(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(d).__name__}")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(sorted(map(str, extra)))}")
    return d


def _num(v, where, positive=False, allow_none=False):
    if v is None and allow_none:
        return None
    try:
        x = float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a number, got {v!r}") from None
    if not math.isfinite(x) or (positive and x <= 0):
        raise ConfigError(f"{where}: invalid value {v!r}")
    return x


@dataclass
class Tolerances:
    quad_abs: float = 1e-10
    quad_rel: float = 1e-8
    root: float = 1e-10

    def quadrature(self) -> QuadratureSpec:
        return QuadratureSpec(abs_tol=self.quad_abs, rel_tol=self.quad_rel)


@dataclass
class SimSettings:
    n_paths: int = 100_000
    dt: float | None = None        # None: horizon / 200
    antithetic: bool = False


@dataclass
class QueueSpec:
    queue: QueueModel
    time_scale: float = 1.0        # seconds per model time unit
    hitting: MarketParams | None = None


@dataclass
class RunConfig:
    model: str
    market: MarketParams
    rho_spec: dict                 # {"constant": v} | {"table": path} | {"queue": QueueSpec}
    horizons: list = field(default_factory=list)
    depth_grid: list = field(default_factory=list)
    output: str = "out"
    seed: int = 12345
    tolerances: Tolerances = field(default_factory=Tolerances)
    simulation: SimSettings = field(default_factory=SimSettings)
    validate: dict = field(default_factory=dict)
    source: str | None = None

    @property
    def rho_kind(self) -> str:
        return next(iter(self.rho_spec))

    def queue_spec(self) -> QueueSpec:
        if self.rho_kind != "queue":
            raise ConfigError("this command needs a queue-backed rho (rho: {queue: ...})")
        return self.rho_spec["queue"]

    def hitting_model(self) -> HittingModel:
        qs = self.queue_spec()
        return HittingModel(self.model, qs.hitting or self.market)

    def exec_probability(self) -> ExecProbability:
        """rho as a function of the depth argument of the configured model."""
        kind = self.rho_kind
        if kind == "constant":
            return ConstantRho(self.rho_spec["constant"])
        if kind == "table":
            return load_rho_table(self.rho_spec["table"])
        h = self.hitting_model()
        eng = engine_for(self.queue_spec().queue, h)
        depths = self.depth_grid or list(np.linspace(0, 10 * eng.q.tick, 11))
        times = sorted(self.horizons) or [1.0]
        if len(times) == 1:
            times = [times[0] * 0.5, times[0]]
        return eng.exec_probability(depths, times)


# ---------------------------------------------------------------- parsing

def _market(d) -> MarketParams:
    _only(d, ("mu", "sigma", "s0", "rebate", "fee"), "market")
    for k in ("mu", "sigma"):
        if k not in d:
            raise ConfigError(f"market: missing {k}")
    try:
        return MarketParams(**{k: _num(v, f"market.{k}") for k, v in d.items()})
    except ValueError as exc:
        raise ConfigError(f"market: {exc}") from None


def _f_a(d):
    _only(d, ("geometric_mean", "pmf"), "queue.f_a")
    if len(d) != 1:
        raise ConfigError("queue.f_a: give exactly one of geometric_mean, pmf")
    if "geometric_mean" in d:
        m = _num(d["geometric_mean"], "queue.f_a.geometric_mean", positive=True)
        if m < 1:
            raise ConfigError("queue.f_a.geometric_mean must be >= 1")
        return geometric_f_a(m)
    pmf = d["pmf"]
    if not isinstance(pmf, dict) or not pmf:
        raise ConfigError("queue.f_a.pmf: expected a non-empty mapping size -> probability")
    return {int(k): _num(v, "queue.f_a.pmf") for k, v in pmf.items()}


def parse_queue(d, base_dir=".") -> QueueSpec:
    if isinstance(d, str):
        path = d if os.path.isabs(d) else os.path.join(base_dir, d)
        d = _load_yaml(path)
        if isinstance(d, dict) and "queue" in d and len(d) == 1:
            d = d["queue"]
    _only(d, ("rates", "theta_k", "f_a", "depth_profile", "tick", "qa0",
              "time_scale", "hitting", "std_errors", "mean_bid_after_drop",
              "active_seconds", "n_events", "degenerate"), "queue")
    rates = _only(d.get("rates") or {}, ("lambda_a", "lambda_b", "dep_a", "dep_b"), "queue.rates")
    if set(rates) != {"lambda_a", "lambda_b", "dep_a", "dep_b"}:
        raise ConfigError("queue.rates: need lambda_a, lambda_b, dep_a, dep_b")
    if d.get("degenerate"):
        raise ConfigError(f"queue: degenerate estimates {d['degenerate']}")
    scale = _num(d.get("time_scale", 1.0), "queue.time_scale", positive=True)
    theta = d.get("theta_k", [])
    if not isinstance(theta, list):
        theta = [theta]
    profile = d.get("depth_profile") or {}
    if not isinstance(profile, dict):
        raise ConfigError("queue.depth_profile: expected a mapping tick -> size")
    hitting = None
    if d.get("hitting") is not None:
        hitting = _market(d["hitting"])
    try:
        q = QueueModel(
            lambda_a=_num(rates["lambda_a"], "rates.lambda_a") * scale,
            lambda_b=_num(rates["lambda_b"], "rates.lambda_b") * scale,
            dep_a=_num(rates["dep_a"], "rates.dep_a") * scale,
            dep_b=_num(rates["dep_b"], "rates.dep_b") * scale,
            theta_k=tuple(_num(v, "queue.theta_k") * scale for v in theta),
            f_a=_f_a(d.get("f_a") or {"geometric_mean": 6}),
            depth_profile={int(k): int(v) for k, v in profile.items()},
            tick=_num(d.get("tick", 0.01), "queue.tick", positive=True),
            qa0=int(d.get("qa0", 0)),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"queue: {exc}") from None
    return QueueSpec(q, scale, hitting)


def _rho(d, base_dir):
    _only(d, ("constant", "table", "queue"), "rho")
    if len(d) != 1:
        raise ConfigError("rho: give exactly one of constant, table, queue")
    if "constant" in d:
        v = _num(d["constant"], "rho.constant")
        if not 0 <= v <= 1:
            raise ConfigError("rho.constant must lie in [0, 1]")
        return {"constant": v}
    if "table" in d:
        path = d["table"]
        path = path if os.path.isabs(path) else os.path.join(base_dir, path)
        return {"table": path}
    return {"queue": parse_queue(d["queue"], base_dir)}


def _grid(v, where):
    """A list of numbers or {start, stop, num}."""
    if v is None:
        return []
    if isinstance(v, dict):
        _only(v, ("start", "stop", "num"), where)
        n = int(v.get("num", 0))
        if n < 1:
            raise ConfigError(f"{where}: num must be >= 1")
        return [float(x) for x in np.linspace(_num(v["start"], where), _num(v["stop"], where), n)]
    if isinstance(v, (int, float)):
        v = [v]
    if not isinstance(v, list):
        raise ConfigError(f"{where}: expected a list or start/stop/num")
    return [_num(x, where) for x in v]


def from_dict(d, base_dir=".", source=None) -> RunConfig:
    _only(d, ("model", "market", "rho", "horizons", "depth_grid", "output", "seed",
              "tolerances", "simulation", "validate"), "config")
    model = d.get("model", "bachelier")
    if model not in MODELS:
        raise ConfigError(f"model must be one of {MODELS}, got {model!r}")
    if "market" not in d:
        raise ConfigError("config: missing market")
    tol = Tolerances(**{k: _num(v, f"tolerances.{k}", positive=True)
                        for k, v in _only(d.get("tolerances") or {}, ("quad_abs", "quad_rel", "root"),
                                          "tolerances").items()})
    sim = _only(d.get("simulation") or {}, ("n_paths", "dt", "antithetic"), "simulation")
    sim = SimSettings(n_paths=int(sim.get("n_paths", 100_000)),
                      dt=_num(sim.get("dt"), "simulation.dt", positive=True, allow_none=True),
                      antithetic=bool(sim.get("antithetic", False)))
    if sim.n_paths < 1:
        raise ConfigError("simulation.n_paths must be positive")
    seed = int(d.get("seed", 12345))
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    horizons = _grid(d.get("horizons"), "horizons")
    if any(h <= 0 for h in horizons):
        raise ConfigError("horizons must be positive")
    return RunConfig(
        model=model,
        market=_market(d["market"]),
        rho_spec=_rho(d.get("rho") or {"constant": 1.0}, base_dir),
        horizons=horizons,
        depth_grid=_grid(d.get("depth_grid"), "depth_grid"),
        output=str(d.get("output", "out")),
        seed=seed,
        tolerances=tol,
        simulation=sim,
        validate=dict(d.get("validate") or {}),
        source=source,
    )


def _load_yaml(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def load(path) -> RunConfig:
    return from_dict(_load_yaml(path), os.path.dirname(os.path.abspath(path)), str(path))


def reference_path() -> str:
    return str(resources.files("placekit").joinpath("data", "reference.yaml"))


def load_reference() -> RunConfig:
    return load(reference_path())


# ---------------------------------------------------------------- rho tables

def load_rho_table(path) -> TabulatedRho:
    """CSV with header ``t,<depth1>,<depth2>,...`` and one row per horizon."""
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read rho table {path}: {exc}") from None
    try:
        depths = [float(v) for v in rows[0][1:]]
        times = [float(r[0]) for r in rows[1:]]
        vals = [[float(v) for v in r[1:]] for r in rows[1:]]
        return TabulatedRho(depths, times, vals)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"rho table {path}: {exc}") from None
