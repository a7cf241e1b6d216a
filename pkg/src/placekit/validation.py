"""Cross-check suite behind the ``validate`` verb.

Each check compares an analytic quantity with an independent route (high
precision differencing, Monte Carlo, direct quadrature, a synthetic data
generator) and returns one Check row.  Everything is seeded from the run
config, so two runs with the same config and seed give identical reports.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import hiprec
from .config import RunConfig, _market, parse_queue
from .lob_ingest import estimate_rates, synthetic_events
from .market import ConstantRho, MarketParams
from .placement_bm import (approx_xstar_near_t0, cost_bm, critical_time_bm, d2C_dx2_bm,
                           dC_dx_bm, hit_probability_bm, optimal_x_bm, theta0,
                           theta1_large_t, xstar_bounds_large_t)
from .placement_gbm import (approx_ystar_near_t0, cost_gbm, critical_time_gbm,
                            d2C_dy2_gbm, dC_dy_gbm, optimal_y_gbm)
from .rho_engine import (TABLE1, HittingModel, RhoEngine, alpha_race, depletion_density_bid)
from .sim_oracle import (SimConfig, simulate_cost_continuous, simulate_cost_discrete,
                         simulate_hit_probability, simulate_queue_race, simulate_rho)

Z_MAX = 3.0


@dataclass
class Check:
    name: str
    value: float
    reference: float
    tolerance: float
    passed: bool
    detail: str = ""
    seconds: float = 0.0


def _rel(a, b):
    return abs(a - b) / abs(b) if b != 0 else abs(a - b)


def _mc_check(name, est, ref, detail="", proportion=False):
    """|mean - ref| <= 3 standard errors.

    For Bernoulli estimates the standard error is taken under the reference
    probability, sqrt(p (1 - p) / n), which stays meaningful when no (or
    every) replication succeeds.
    """
    se = math.sqrt(ref * (1 - ref) / est.n) if proportion else est.std_error
    z = abs(est.mean - ref) / se if se > 0 else (0.0 if est.mean == ref else math.inf)
    return Check(name, est.mean, ref, Z_MAX, z <= Z_MAX,
                 f"z={z:.3f} se={se:.3g} n={est.n}" + (f" {detail}" if detail else ""))


class Suite:
    GROUPS = ("derivatives", "boundary", "critical_time", "expansions", "monte_carlo",
              "discrete", "queues", "estimator")

    def __init__(self, cfg: RunConfig, seed: int | None = None, tol: float | None = None):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else int(seed)
        self.tol = tol
        v = cfg.validate
        self.bm = cfg.market if cfg.model == "bachelier" else MarketParams(-0.1, 0.2, rebate=0.006)
        gm = v.get("gbm_market")
        self.gbm = _market(gm) if gm else (cfg.market if cfg.model == "black-scholes"
                                           else MarketParams(-0.1, 0.2, s0=50.0, rebate=0.006))
        self.rho_const = ConstantRho(cfg.rho_spec.get("constant", 1.0)) \
            if "constant" in cfg.rho_spec else ConstantRho(1.0)
        self.n_draws = int(v.get("derivative_draws", 200))
        self.mc_paths = int(v.get("mc_paths", 1_000_000))
        self.race_reps = int(v.get("race_replications", 100_000))
        self.rho_reps = int(v.get("rho_replications", 100_000))
        self.est_events = int(v.get("estimator_events", 100_000))
        if v.get("queue") is not None:
            self.queue = parse_queue(v["queue"])
        elif cfg.rho_kind == "queue":
            self.queue = cfg.queue_spec()
        else:
            self.queue = None

    def _tol(self, default):
        return default if self.tol is None else self.tol

    def _sub(self, k):
        """Seed for sub-check k."""
        return int(np.random.SeedSequence(self.seed, spawn_key=(99, k)).generate_state(1, np.uint64)[0])

    # ------------------------------------------------------------ analytic

    def derivatives(self):
        rng = np.random.Generator(np.random.Philox(self._sub(1)))
        tol = self._tol(1e-6)
        worst = np.zeros(4)
        for _ in range(self.n_draws):
            mu = rng.uniform(-0.5, 0.5)
            sig = rng.uniform(0.05, 0.5)
            t = rng.uniform(0.01, 2.0)
            c = rng.uniform(0.0, 0.01)
            r = rng.uniform(0.5, 1.0)
            s0 = rng.uniform(10.0, 100.0)
            x = rng.uniform(0.05, 2.0) * sig * math.sqrt(t)
            rho = ConstantRho(r)
            p = MarketParams(mu, sig, rebate=c)
            pg = MarketParams(mu, sig, s0=s0, rebate=c)

            def fb(z):
                return hiprec.cost_bm(mu, sig, c, 0, r, z, t)

            def fg(z):
                return hiprec.cost_gbm(mu, sig, s0, c, 0, r, z, t)

            pairs = [(dC_dx_bm(p, rho, x, t), hiprec.central_diff(fb, x, 1)),
                     (d2C_dx2_bm(p, rho, x, t), hiprec.central_diff(fb, x, 2)),
                     (dC_dy_gbm(pg, rho, x, t), hiprec.central_diff(fg, x, 1)),
                     (d2C_dy2_gbm(pg, rho, x, t), hiprec.central_diff(fg, x, 2))]
            for j, (a, b) in enumerate(pairs):
                worst[j] = max(worst[j], _rel(float(a), float(b)))
        names = ["dC_dx_bm", "d2C_dx2_bm", "dC_dy_gbm", "d2C_dy2_gbm"]
        return [Check(f"derivative:{n}", float(w), 0.0, tol, bool(w <= tol),
                      f"max relative error over {self.n_draws} draws")
                for n, w in zip(names, worst)]

    def boundary(self):
        tol = self._tol(1e-10)
        out = []
        for t in self.cfg.horizons or [0.02]:
            p, r = self.bm, self.rho_const
            want = p.fee - r.rho0() * p.c
            got = float(cost_bm(p, r, 0.0, t))
            out.append(Check(f"boundary:bm_zero:t={t:g}", got, want, tol, abs(got - want) <= tol))
            g = self.gbm
            want = g.fee - r.rho0() * g.c
            got = float(cost_gbm(g, r, 0.0, t))
            out.append(Check(f"boundary:gbm_zero:t={t:g}", got, want, tol, abs(got - want) <= tol))
        # x -> infinity: C -> mu t + f with shrinking gaps
        p, t = self.bm, max(self.cfg.horizons or [0.02])
        s = p.sigma * math.sqrt(t)
        gaps = [abs(float(cost_bm(p, self.rho_const, k * s, t)) - (p.mu * t + p.fee))
                for k in (2, 4, 8, 16)]
        ok = all(b <= a for a, b in zip(gaps, gaps[1:])) and gaps[-1] < 1e-12
        out.append(Check("boundary:bm_far", gaps[-1], 0.0, 1e-12, ok,
                         "gaps " + " ".join(f"{g:.2e}" for g in gaps)))
        return out

    def critical_time(self):
        out = []
        rng = np.random.Generator(np.random.Philox(self._sub(2)))
        worst_bm = -math.inf
        order_ok = 0
        n = 50
        for _ in range(n):
            p = MarketParams(rng.uniform(-1, -0.01), rng.uniform(0.05, 0.5),
                             rebate=rng.uniform(1e-4, 0.01))
            r = ConstantRho(rng.uniform(0.3, 1.0))
            t0, bar = critical_time_bm(p, r)
            worst_bm = max(worst_bm, t0 / bar)
            g = MarketParams(rng.uniform(-1, -0.01), rng.uniform(0.05, 0.5),
                             s0=rng.uniform(10, 100), rebate=rng.uniform(1e-4, 0.01))
            *_, diag = critical_time_gbm(g, r)
            order_ok += diag["ordering_ok"]
        out.append(Check("critical:bm_below_bound", worst_bm, 1.0, 0.0, worst_bm <= 1.0,
                         f"max t0/bar over {n} draws"))
        out.append(Check("critical:gbm_ordering", order_ok, n, 0.0, order_ok == n,
                         f"lower < t0* < upper on {order_ok}/{n} draws"))
        g = self.gbm
        devs = []
        for c in (6e-3, 6e-4, 6e-5):
            gc = g.replace(rebate=c, fee=0.0)
            t0, bar, *_ = critical_time_gbm(gc, self.rho_const)
            devs.append(abs(t0 / bar - 1))
        ok = devs[0] > devs[1] > devs[2] and devs[2] <= 0.05
        out.append(Check("critical:gbm_ratio_limit", devs[-1], 0.0, 0.05, ok,
                         "deviations " + " ".join(f"{d:.3e}" for d in devs)))
        return out

    def expansions(self):
        out = []
        tol = 0.05
        p = self.bm.replace(mu=-0.25, sigma=0.2, rebate=0.006, fee=0.0)
        t0, _ = critical_time_bm(p, self.rho_const)
        t = 1.1 * t0
        exact = optimal_x_bm(p, self.rho_const, t).depth
        first, second, *_ = approx_xstar_near_t0(p, self.rho_const, t)
        e1, e2 = _rel(first, exact), _rel(second, exact)
        out.append(Check("expansion:bm_near_t0", e2, 0.0, tol, e2 <= tol and e2 <= e1,
                         f"first-order {e1:.3e} second-order {e2:.3e}"))
        g = self.gbm.replace(rebate=0.006, fee=0.0)
        t0, *_ = critical_time_gbm(g, self.rho_const)
        t = 1.1 * t0
        exact = optimal_y_gbm(g, self.rho_const, t).y_star
        first, second, *_ = approx_ystar_near_t0(g, self.rho_const, t)
        e1, e2 = _rel(first, exact), _rel(second, exact)
        out.append(Check("expansion:gbm_near_t0", e2, 0.0, tol, e2 <= tol and e2 <= e1,
                         f"first-order {e1:.3e} second-order {e2:.3e}"))
        # large horizon, Bachelier
        p = self.bm.replace(mu=-0.25, sigma=0.2, rebate=0.006, fee=0.0)
        rc = self.rho_const.rho0()
        sandwich = 0
        ts = (1.0, 2.0, 5.0, 10.0, 20.0, 40.0)
        in_window = 0
        for t in ts:
            lo, hi, valid = xstar_bounds_large_t(p, rc, t)
            if not valid:
                continue
            in_window += 1
            x = optimal_x_bm(p, self.rho_const, t).depth
            sandwich += lo <= x <= hi
        out.append(Check("expansion:bm_theta0_sandwich", sandwich, in_window, 0.0,
                         in_window > 0 and sandwich == in_window,
                         f"{sandwich}/{in_window} horizons inside the bounds"))
        t = 40.0
        x = optimal_x_bm(p, self.rho_const, t).depth
        th0 = theta0(p, rc)
        lhs = t * (x * x / t ** 2 - p.mu ** 2 * th0 ** 2)
        th1 = theta1_large_t(p, rc)
        out.append(Check("expansion:bm_theta1", lhs, th1, 0.10, _rel(lhs, th1) <= 0.10,
                         f"relative {_rel(lhs, th1):.3e}"))
        return out

    # ------------------------------------------------------------ Monte Carlo

    def monte_carlo(self):
        out = []
        p, rho = self.bm, self.rho_const
        hz = self.cfg.horizons or [0.02, 0.04]
        k = 10
        for t in hz:
            x = optimal_x_bm(p, rho, t).depth or p.sigma * math.sqrt(t) / 2
            cfg = SimConfig(self.mc_paths, t / 100, self._sub(k))
            est = simulate_cost_continuous(p, rho, "bachelier", x, t, cfg)
            out.append(_mc_check(f"mc:cost_bm:t={t:g}", est, float(cost_bm(p, rho, x, t)), f"x={x:.6g}"))
            k += 1
        g = self.gbm
        for t, y in ((0.05, 0.004), (0.5, 0.05)):
            cfg = SimConfig(self.mc_paths, t / 100, self._sub(k))
            est = simulate_cost_continuous(g, rho, "black-scholes", y, t, cfg)
            out.append(_mc_check(f"mc:cost_gbm:t={t:g}", est, float(cost_gbm(g, rho, y, t)), f"y={y:g}"))
            k += 1
        t = hz[-1]
        x = p.sigma * math.sqrt(t)
        est = simulate_hit_probability(p, "bachelier", x, t, SimConfig(self.mc_paths, t / 100, self._sub(k)))
        out.append(_mc_check("mc:bridge_hit_probability", est, float(hit_probability_bm(p, x, t)),
                              proportion=True))
        return out

    def discrete(self):
        out = []
        p = MarketParams(self.bm.mu, self.bm.sigma)
        eps = 0.01
        t = max(self.cfg.horizons or [0.04])
        est = simulate_cost_discrete(p, ConstantRho(1.0), "bachelier", eps, t, eps ** 2 / p.sigma ** 2,
                                     eps, SimConfig(10_000, seed=self._sub(20)))
        out.append(Check("discrete:touch_execution", est.mean, -eps, 1e-12,
                         abs(est.mean + eps) <= 1e-12))
        rho = ConstantRho(0.8)
        x = 0.04
        ref = float(cost_bm(p, rho, x, t))
        gaps = []
        for j, e in enumerate((0.01, 0.005, 0.0025)):
            est = simulate_cost_discrete(p, rho, "bachelier", x, t, e ** 2 / p.sigma ** 2, e,
                                         SimConfig(200_000, seed=self._sub(21 + j)))
            gaps.append(abs(est.mean - ref))
        ok = gaps[0] > gaps[1] > gaps[2]
        out.append(Check("discrete:refinement", gaps[-1], 0.0, 0.0, ok,
                         "gaps " + " ".join(f"{g:.3e}" for g in gaps)))
        return out

    # ------------------------------------------------------------ queues

    def queues(self):
        out = []
        if self.queue is None:
            return out
        q = self.queue.queue
        g0 = float(depletion_density_bid(q, 1, np.array([0.0]))[0])
        out.append(Check("queue:g_b1_at_zero", g0, q.dep_b, 1e-12, abs(g0 - q.dep_b) <= 1e-12))
        k = 30
        for i in (1, 6, 38):
            for ell in (1, 6, 38):
                est = simulate_queue_race(q, 1.0, i, ell, SimConfig(self.race_reps, seed=self._sub(k)))
                out.append(_mc_check(f"queue:race:i={i}:l={ell}", est, alpha_race(q, 1.0, i, ell),
                                         proportion=True))
                k += 1
        ratio = alpha_race(q, math.inf, 6, 39) / alpha_race(q, math.inf, 6, 2)
        out.append(Check("queue:alpha_inf_ratio", ratio, 0.667, 0.15, abs(ratio - 0.667) <= 0.15))
        h = HittingModel(self.cfg.model, self.queue.hitting or MarketParams(-0.001, 0.01))
        eng = RhoEngine(q, h)
        for depth, t in ((0.1, 60.0), (0.03, 20.0), (0.005, 5.0)):
            est = simulate_rho(q, h, depth, t, SimConfig(self.rho_reps, seed=self._sub(k)))
            out.append(_mc_check(f"queue:rho:x={depth:g}:t={t:g}", est, eng.rho(depth, t), proportion=True))
            k += 1
        vals = []
        for Q in (0, 1, 10, 38, 50, 100):
            qq = q.replace(depth_profile={10: Q})
            vals.append(RhoEngine(qq, h).rho(0.1, 60.0))
        ok = all(b < a for a, b in zip(vals, vals[1:]))
        out.append(Check("queue:rho_decreasing_in_queue", vals[-1], vals[0], 0.0, ok,
                         " ".join(f"{v:.6f}" for v in vals)))
        return out

    def estimator(self):
        ev = synthetic_events(self.est_events, TABLE1, seed=self._sub(60))
        est = estimate_rates(ev)
        worst = max(_rel(est.rates[k], TABLE1[k]) for k in TABLE1)
        return [Check("estimate:rate_recovery", worst, 0.0, 0.05, worst <= 0.05,
                      " ".join(f"{k}={v:.4f}" for k, v in est.rates.items()))]

    def run(self, groups=None, progress=None):
        results = []
        for name in groups or self.GROUPS:
            start = time.perf_counter()
            rows = getattr(self, name)()
            dt = time.perf_counter() - start
            for r in rows:
                r.seconds = dt / max(len(rows), 1)
            results.extend(rows)
            if progress:
                progress(name, rows, dt)
        return results
