"""placekit command-line front end.

Every verb reads a YAML run config (the shipped reference config when
--config is omitted) and writes CSV files into --out.  Exit codes: 0 ok,
2 configuration or input error, 3 numerical failure, 4 validation failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time

import numpy as np
import yaml

from . import config as cfgmod
from .config import ConfigError
from .lob_ingest import InsufficientEvents, LobParseError, build_queue_model, estimate_rates, parse_events
from .market import ConstantRho
from .numerics import NumericsError
from .placement_bm import (approx_xstar_near_t0, cost_bm, critical_time_bm, optimal_x_bm,
                           theta0, theta1_large_t, xstar_bounds_large_t)
from .placement_gbm import (approx_ystar_near_t0, cost_gbm, critical_time_gbm, optimal_y_gbm,
                            ystar_large_t_gbm)
from .rho_engine import alpha_race, condition_probe, engine_for
from .sim_oracle import (SimConfig, simulate_cost_continuous, simulate_cost_discrete,
                         simulate_queue_race, simulate_rho)
from .validation import Suite

log = logging.getLogger("placekit")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VALIDATION = 0, 2, 3, 4


class UsageError(ValueError):
    pass


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.12g}"
    return str(v)


def write_csv(path, header, rows):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    log.info("wrote %s", path)
    return path


def parse_grid(text, what):
    """'a,b,c' or 'start:stop:num'."""
    if text is None:
        return None
    text = text.strip()
    if not text:
        raise UsageError(f"empty {what}")
    try:
        if ":" in text:
            a, b, n = text.split(":")
            n = int(n)
            if n < 1:
                raise UsageError(f"{what}: num must be >= 1")
            return [float(v) for v in np.linspace(float(a), float(b), n)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse {what} {text!r}") from None


def _load(args):
    path = args.config or cfgmod.reference_path()
    cfg = cfgmod.load(path)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.tol is not None:
        cfg.tolerances.root = args.tol
    return cfg


def _out(args, cfg, name):
    return os.path.join(args.out or cfg.output, name)


def _horizons(args, cfg):
    text = getattr(args, "t", None)
    ts = parse_grid(text, "horizons") if text is not None else cfg.horizons
    if not ts:
        raise UsageError("no horizons given (--t or horizons in the config)")
    if any(t <= 0 for t in ts):
        raise UsageError("horizons must be positive")
    return ts


def _rho(cfg):
    rho = cfg.exec_probability()
    if cfg.model == "black-scholes" and cfg.rho_kind != "constant":
        rho = rho.in_log_depth(cfg.market.s0)
    return rho


# ---------------------------------------------------------------- verbs

def cmd_cost(args, cfg):
    xs = parse_grid(args.x_grid, "x grid") if args.x_grid is not None else cfg.depth_grid
    if not xs:
        raise UsageError("empty depth grid")
    rho = _rho(cfg)
    col = "x" if cfg.model == "bachelier" else "y"
    f = cost_bm if cfg.model == "bachelier" else cost_gbm
    paths = []
    for t in _horizons(args, cfg):
        rows = [(x, float(f(cfg.market, rho, x, t))) for x in xs]
        paths.append(write_csv(_out(args, cfg, f"cost_t{fmt(t)}.csv"), [col, "cost"], rows))
    return paths


def cmd_optimal(args, cfg):
    rho = _rho(cfg)
    tol = cfg.tolerances.root
    rows = []
    for t in _horizons(args, cfg):
        if cfg.model == "bachelier":
            s = optimal_x_bm(cfg.market, rho, t, tol)
            rows.append((t, s.depth, s.cost, s.boundary_case.value))
        else:
            s = optimal_y_gbm(cfg.market, rho, t, tol)
            rows.append((t, s.y_star, s.price_level, s.cost, s.boundary_case.value))
    header = (["t", "x_star", "cost", "boundary_case"] if cfg.model == "bachelier"
              else ["t", "y_star", "price_level", "cost", "boundary_case"])
    return write_csv(_out(args, cfg, "optimal.csv"), header, rows)


def _critical_row(p, rho, model):
    if p.c <= 0:
        raise UsageError("critical time needs r + f > 0")
    if model == "bachelier":
        t0, bar = critical_time_bm(p, rho)
        *_, k1, k2 = approx_xstar_near_t0(p, rho, t0)
        return [t0, bar, k1, k2]
    t0, bar, tilde, lower, diag = critical_time_gbm(p, rho)
    *_, r1, r2 = approx_ystar_near_t0(p, rho, t0)
    return [t0, bar, tilde, lower, diag["ordering_ok"], r1, r2]


def cmd_critical_time(args, cfg):
    rho = _rho(cfg)
    if cfg.model == "bachelier":
        header = ["t0", "bar_t0", "kappa1", "kappa2"]
    else:
        header = ["t0_star", "bar_t", "tilde_t", "lower", "ordering_ok", "kappa1", "kappa2"]
    s0s = parse_grid(args.s0_grid, "s0 grid")
    if s0s:
        rows = [[s0] + _critical_row(cfg.market.replace(s0=s0), rho, cfg.model) for s0 in s0s]
        header = ["s0"] + header
    else:
        rows = [_critical_row(cfg.market, rho, cfg.model)]
    return write_csv(_out(args, cfg, "critical_time.csv"), header, rows)


def cmd_approx(args, cfg):
    rho = _rho(cfg)
    p = cfg.market
    bm = cfg.model == "bachelier"
    if args.regime == "near-t0":
        t0 = critical_time_bm(p, rho)[0] if bm else critical_time_gbm(p, rho)[0]
        fracs = parse_grid(args.t, "horizon factors") if args.t else [1.05, 1.1, 1.2]
        rows = []
        for fac in fracs:
            t = fac * t0
            if bm:
                exact = optimal_x_bm(p, rho, t).depth
                first, second, k1, k2 = approx_xstar_near_t0(p, rho, t)
            else:
                exact = optimal_y_gbm(p, rho, t).y_star
                first, second, k1, k2 = approx_ystar_near_t0(p, rho, t)
            rows.append((t, exact, first, second, abs(first - exact) / exact,
                         abs(second - exact) / exact, k1, k2))
        return write_csv(_out(args, cfg, "approx_near_t0.csv"),
                         ["t", "exact", "first_order", "second_order", "rel_err_first",
                          "rel_err_second", "kappa1", "kappa2"], rows)
    if not rho.is_constant:
        raise UsageError("large-horizon approximations need a constant rho")
    rc = rho.rho0()
    rows = []
    for t in _horizons(args, cfg):
        if bm:
            x = optimal_x_bm(p, rho, t).depth
            lo, hi, valid = xstar_bounds_large_t(p, rc, t)
            th0 = theta0(p, rc)
            rows.append((t, x, -p.mu * th0 * t, lo, hi, valid,
                         t * (x * x / t ** 2 - p.mu ** 2 * th0 ** 2), theta1_large_t(p, rc)))
        else:
            y = optimal_y_gbm(p, rho, t).y_star
            slope, second = ystar_large_t_gbm(p, rc, t)
            rows.append((t, y, y / t, slope, second))
    header = (["t", "exact", "first_order", "lower", "upper", "bounds_valid", "theta1_lhs", "theta1"]
              if bm else ["t", "exact", "exact_over_t", "limit_slope", "second_order"])
    return write_csv(_out(args, cfg, "approx_large_t.csv"), header, rows)


def cmd_rho(args, cfg):
    qs = cfg.queue_spec()
    depths = parse_grid(args.depth_grid, "depth grid") if args.depth_grid is not None else cfg.depth_grid
    times = parse_grid(args.t, "t grid") if args.t is not None else cfg.horizons
    if not depths or not times:
        raise UsageError("rho needs non-empty depth and time grids")
    eng = engine_for(qs.queue, cfg.hitting_model())
    rows = [(d, t, eng.rho(d, t)) for t in times for d in depths]
    return write_csv(_out(args, cfg, "rho.csv"), ["depth", "t", "rho"], rows)


def cmd_rho_report(args, cfg):
    qs = cfg.queue_spec()
    rows = []
    for t in _horizons(args, cfg):
        rep = condition_probe(qs.queue, cfg.hitting_model(), t)
        for k, v in rep.items():
            if np.isscalar(v):
                rows.append((t, k, v))
    return write_csv(_out(args, cfg, "rho_report.csv"), ["t", "key", "value"], rows)


def cmd_validate(args, cfg):
    suite = Suite(cfg, seed=cfg.seed, tol=args.tol)
    groups = [g.strip() for g in args.only.split(",") if g.strip()] if args.only else None
    if groups is not None:
        bad = [g for g in groups if g not in Suite.GROUPS]
        if bad or not groups:
            raise UsageError(f"unknown check group(s) {', '.join(bad) or '(none)'}; "
                             f"choose from {', '.join(Suite.GROUPS)}")

    def progress(name, rows, dt):
        for r in rows:
            print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  value={fmt(r.value)} "
                  f"ref={fmt(r.reference)} tol={fmt(r.tolerance)}  {r.detail}")
        log.info("%s finished in %.1fs", name, dt)

    start = time.perf_counter()
    results = suite.run(groups, progress)
    write_csv(_out(args, cfg, "validate.csv"),
              ["name", "value", "reference", "tolerance", "passed", "detail"],
              [(r.name, r.value, r.reference, r.tolerance, r.passed, r.detail) for r in results])
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed in "
          f"{time.perf_counter() - start:.1f}s (seed {suite.seed})")
    return EXIT_VALIDATION if n_fail else EXIT_OK


def cmd_estimate(args, cfg):
    if not args.input:
        raise UsageError("estimate needs --input")
    report = parse_events(args.input)
    for lineno, msg in report.errors:
        log.warning("line %d: %s", lineno, msg)
    est = estimate_rates(report.records, max_gap=args.max_gap)
    doc = est.to_document()
    theta = parse_grid(args.theta_k, "theta_k") if args.theta_k else None
    if theta is not None:
        doc["theta_k"] = theta
    if est.degenerate:
        log.warning("degenerate estimates: %s", ", ".join(est.degenerate))
    else:
        # check the assembled model is acceptable before writing it out
        build_queue_model(est, theta, default_theta=[1.0])
    out = args.output or _out(args, cfg, "queue.yaml")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("# rate estimates, batches per active second\n")
        yaml.safe_dump({"queue": doc}, fh, sort_keys=False)
    log.info("wrote %s", out)
    return out


def cmd_simulate(args, cfg):
    n = args.paths or cfg.simulation.n_paths
    rows = []
    if args.kind in ("continuous", "discrete"):
        rho = _rho(cfg)
        xs = parse_grid(args.x_grid, "x grid") or [d for d in cfg.depth_grid if d > 0]
        if not xs:
            raise UsageError("empty depth grid")
        for t in _horizons(args, cfg):
            for x in xs:
                if args.kind == "continuous":
                    sc = SimConfig(n, cfg.simulation.dt or t / 200, cfg.seed, cfg.simulation.antithetic)
                    est = simulate_cost_continuous(cfg.market, rho, cfg.model, x, t, sc)
                    ref = (cost_bm if cfg.model == "bachelier" else cost_gbm)(cfg.market, rho, x, t)
                else:
                    eps = args.eps
                    delta = args.delta or eps ** 2 / cfg.market.sigma ** 2
                    execution = cfg.queue_spec().queue if cfg.rho_kind == "queue" else rho
                    est = simulate_cost_discrete(cfg.market, execution, cfg.model, x, t, delta, eps,
                                                 SimConfig(n, seed=cfg.seed))
                    ref = cost_bm(cfg.market, rho, x, t)
                rows.append((x, t, est.mean, est.std_error, est.n, float(ref)))
        return write_csv(_out(args, cfg, f"simulate_{args.kind}.csv"),
                         ["depth", "t", "mean", "std_error", "n", "analytic"], rows)
    qs = cfg.queue_spec()
    if args.kind == "race":
        for u in _horizons(args, cfg):
            est = simulate_queue_race(qs.queue, u, args.i, args.ell, SimConfig(n, seed=cfg.seed))
            rows.append((u, args.i, args.ell, est.mean, est.std_error, est.n,
                         alpha_race(qs.queue, u, args.i, args.ell)))
        return write_csv(_out(args, cfg, "simulate_race.csv"),
                         ["u", "i", "ell", "mean", "std_error", "n", "analytic"], rows)
    eng = engine_for(qs.queue, cfg.hitting_model())
    xs = parse_grid(args.x_grid, "x grid") or [d for d in cfg.depth_grid if d > 0]
    for t in _horizons(args, cfg):
        for x in xs:
            est = simulate_rho(qs.queue, cfg.hitting_model(), x, t, SimConfig(n, seed=cfg.seed))
            rows.append((x, t, est.mean, est.std_error, est.n, eng.rho(x, t)))
    return write_csv(_out(args, cfg, "simulate_rho.csv"),
                     ["depth", "t", "mean", "std_error", "n", "analytic"], rows)


# ---------------------------------------------------------------- parser

def _global_flags(suppress):
    """Global flags; the per-verb copy must not overwrite values given earlier."""
    g = argparse.ArgumentParser(add_help=False)
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    g.add_argument("--config", help="YAML run config (default: shipped reference)", **kw)
    g.add_argument("--seed", type=int, help="override the config seed", **kw)
    g.add_argument("--out", help="output directory (default: config 'output')", **kw)
    g.add_argument("--tol", type=float, help="override tolerance", **kw)
    g.add_argument("-v", "--verbose", action="store_true", **kw)
    return g


def build_parser():
    common = _global_flags(True)
    ap = argparse.ArgumentParser(prog="placekit", parents=[_global_flags(False)],
                                 description="Optimal limit-order placement toolkit")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("cost", parents=[common], help="cost curves C(x, t) over a depth grid")
    p.add_argument("--x-grid", help="depths: 'a,b,c' or 'start:stop:num'")
    p.add_argument("--t", help="horizons: 'a,b,c' or 'start:stop:num'")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("optimal", parents=[common], help="optimal placement per horizon")
    p.add_argument("--t")
    p.set_defaults(func=cmd_optimal)

    p = sub.add_parser("critical-time", parents=[common], help="critical horizon and bounds")
    p.add_argument("--s0-grid", help="sweep the initial price (Black-Scholes)")
    p.set_defaults(func=cmd_critical_time)

    p = sub.add_parser("approx", parents=[common], help="asymptotic approximations of the optimum")
    p.add_argument("--regime", choices=["near-t0", "large-t"], default="near-t0")
    p.add_argument("--t", help="near-t0: multiples of t0; large-t: horizons")
    p.set_defaults(func=cmd_approx)

    p = sub.add_parser("rho", parents=[common], help="queue-backed execution probability surface")
    p.add_argument("--depth-grid")
    p.add_argument("--t")
    p.set_defaults(func=cmd_rho)

    p = sub.add_parser("rho-report", parents=[common], help="numerical condition probes on rho")
    p.add_argument("--t")
    p.set_defaults(func=cmd_rho_report)

    p = sub.add_parser("validate", parents=[common], help="run the cross-check suite")
    p.add_argument("--only", help="comma-separated check groups")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("estimate", parents=[common], help="estimate queue rates from an event log")
    p.add_argument("--input", help="event CSV")
    p.add_argument("--output", help="queue YAML to write")
    p.add_argument("--theta-k", help="cancellation rates per level, comma separated")
    p.add_argument("--max-gap", type=float, default=60.0, help="gaps longer than this are inactive (s)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", parents=[common], help="Monte-Carlo oracles")
    p.add_argument("--kind", choices=["continuous", "discrete", "race", "rho"], default="continuous")
    p.add_argument("--x-grid")
    p.add_argument("--t")
    p.add_argument("--paths", type=int)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--delta", type=float)
    p.add_argument("--i", type=int, default=6)
    p.add_argument("--ell", type=int, default=1)
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be a 64-bit unsigned integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _load(args)
        rc = args.func(args, cfg)
    except (ConfigError, UsageError, LobParseError, InsufficientEvents) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return rc if isinstance(rc, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
