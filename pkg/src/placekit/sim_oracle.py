"""Monte-Carlo oracles for the placement cost and the queue race.

Randomness comes from counter-based Philox streams keyed by (seed, stream
tag, block index): paths are simulated in fixed-size blocks, each block has
its own generator, blocks may run on worker threads, and block results
are reduced in block order so estimates do not depend on the thread count.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .market import ExecProbability, MarketParams
from .rho_engine import HittingModel, QueueModel, log_hit_probability

BLOCK = 1 << 15

# stream tags keep the simulators' random numbers unrelated
_TAG_COST, _TAG_DISCRETE, _TAG_RACE, _TAG_RHO, _TAG_HIT = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    dt: float = 1e-3
    seed: int = 12345
    antithetic: bool = False

    def __post_init__(self):
        if int(self.n_paths) < 1:
            raise ValueError("n_paths must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def steps_for(self, t: float) -> int:
        """Number of Euler steps for horizon t (at least 100)."""
        return max(100, int(math.ceil(t / self.dt - 1e-9)))

    def replace(self, **kw) -> "SimConfig":
        d = dict(n_paths=self.n_paths, dt=self.dt, seed=self.seed, antithetic=self.antithetic)
        d.update(kw)
        return SimConfig(**d)


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n: int

    def within(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean - value) <= k * self.std_error

    def z(self, value: float) -> float:
        return (self.mean - value) / self.std_error if self.std_error > 0 else math.inf


def worker_count() -> int:
    cap = os.environ.get("PLACEKIT_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = max(1, min(n, int(cap)))
        except ValueError:
            pass
    return n


def block_rng(seed: int, tag: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(tag, block))
    return np.random.Generator(np.random.Philox(ss))


def _run_blocks(fn, n_items: int, seed: int, tag: int, block: int = BLOCK):
    """Apply fn(rng, size) over blocks; returns the list of block results in order."""
    sizes = [block] * (n_items // block)
    if n_items % block:
        sizes.append(n_items % block)
    jobs = list(enumerate(sizes))

    def run(job):
        b, size = job
        return fn(block_rng(seed, tag, b), size)

    workers = worker_count()
    if workers == 1 or len(jobs) == 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(run, jobs))


def _reduce(parts) -> McEstimate:
    """parts: (sum, sum of squares, count) per block, reduced in order."""
    s = math.fsum(p[0] for p in parts)
    ss = math.fsum(p[1] for p in parts)
    n = sum(p[2] for p in parts)
    mean = s / n
    var = max(ss / n - mean * mean, 0.0) * n / max(n - 1, 1)
    return McEstimate(mean, math.sqrt(var / n), n)


def _moments(v):
    v = np.asarray(v, dtype=float)
    return float(np.sum(v)), float(np.sum(v * v)), v.size


# ---------------------------------------------------------------- price paths

def _bridge_paths(rng, size, drift, sigma, barrier, t, n_steps, antithetic):
    """Endpoint and hit indicator of X = drift s + sigma W against -barrier.

    Between grid points the probability that the Brownian bridge dips below
    the barrier is exp(-2 a b / (sigma^2 dt)), a and b the distances of the
    two endpoints from the barrier; a path counts as hit when a uniform
    falls below one minus the product of the survival factors.
    """
    dt = t / n_steps
    sd = sigma * math.sqrt(dt)
    half = (size + 1) // 2 if antithetic else size
    x = np.zeros(half * (2 if antithetic else 1))
    log_surv = np.zeros_like(x)
    hit = np.zeros(x.shape, dtype=bool)
    for _ in range(n_steps):
        z = rng.standard_normal(half)
        if antithetic:
            z = np.concatenate([z, -z])
        x_new = x + drift * dt + sd * z
        below = x_new <= -barrier
        hit |= below
        a = x + barrier
        b = x_new + barrier
        ok = ~hit
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            p_cross = np.exp(-2.0 * a * b / (sigma * sigma * dt))
            log_surv = np.where(ok, log_surv + np.log1p(-np.minimum(p_cross, 1.0)), log_surv)
        x = x_new
    u = rng.random(half)
    if antithetic:
        u = np.concatenate([u, 1.0 - u])
    hit |= u >= np.exp(log_surv)
    return x[:size], hit[:size]


def _pair_moments(v, antithetic):
    """Moments of the per-pair averages when antithetic, else of v."""
    if not antithetic:
        return _moments(v)
    h = (v.size + 1) // 2
    full = np.concatenate([v, v[:h]])[: 2 * h] if v.size < 2 * h else v
    pairs = 0.5 * (full[:h] + full[h:2 * h])
    return _moments(pairs)


def simulate_cost_continuous(p: MarketParams, rho: ExecProbability, model: str,
                             depth: float, t: float, cfg: SimConfig) -> McEstimate:
    """Monte-Carlo estimate of the continuous-time placement cost.

    depth is x (price units) for ``bachelier`` and the log-depth y for
    ``black-scholes``.  Path outcomes:
      level never reached        -> S_t - S0 + f
      reached, executed (prob rho) -> -x - r
      reached, not executed      -> -x + f   (buy back at the touched level)
    """
    if model not in ("bachelier", "black-scholes"):
        raise ValueError(f"unknown model {model!r}")
    if not (depth > 0 and t > 0):
        raise ValueError("depth and t must be positive")
    if cfg.dt > t / 100 + 1e-15:
        raise ValueError("SimConfig.dt must be at most t/100")
    n_steps = cfg.steps_for(t)
    r_val = float(rho.value(depth, t))
    if model == "bachelier":
        drift, x = p.mu, depth
    else:
        drift, x = p.mu - p.sigma ** 2 / 2, p.s0 * (1 - math.exp(-depth))

    def block(rng, size):
        xt, hit = _bridge_paths(rng, size, drift, p.sigma, depth, t, n_steps, cfg.antithetic)
        v = rng.random(xt.size if not cfg.antithetic else (size + 1) // 2)
        if cfg.antithetic:
            v = np.concatenate([v, 1.0 - v])[:size]
        executed = v < r_val
        if model == "bachelier":
            terminal = xt + p.fee
        else:
            terminal = p.s0 * np.expm1(xt) + p.fee
        cost = np.where(hit, np.where(executed, -x - p.rebate, -x + p.fee), terminal)
        return _pair_moments(cost, cfg.antithetic)

    est = _reduce(_run_blocks(block, cfg.n_paths, cfg.seed, _TAG_COST))
    return McEstimate(est.mean, est.std_error, cfg.n_paths)


def simulate_hit_probability(p: MarketParams, model: str, depth: float, t: float,
                             cfg: SimConfig) -> McEstimate:
    """P(running minimum reaches the level) with the bridge correction."""
    n_steps = cfg.steps_for(t)
    drift = p.mu if model == "bachelier" else p.mu - p.sigma ** 2 / 2

    def block(rng, size):
        _, hit = _bridge_paths(rng, size, drift, p.sigma, depth, t, n_steps, cfg.antithetic)
        return _pair_moments(hit.astype(float), cfg.antithetic)

    est = _reduce(_run_blocks(block, cfg.n_paths, cfg.seed, _TAG_COST))
    return McEstimate(est.mean, est.std_error, cfg.n_paths)


def simulate_hitting_times(h: HittingModel, depth: float, t: float, cfg: SimConfig):
    """Hitting times (< t) of the level from simulated paths.

    Each path is stepped on the grid; the crossing step is the first one
    whose endpoint is below the level or whose bridge dips below it, and
    the time is placed uniformly inside that step.
    """
    n_steps = cfg.steps_for(t)
    dt = t / n_steps
    sig, drift = h.params.sigma, h.drift
    sd = sig * math.sqrt(dt)

    def block(rng, size):
        x = np.zeros(size)
        tau = np.full(size, np.nan)
        alive = np.ones(size, dtype=bool)
        for k in range(n_steps):
            x_new = x + drift * dt + sd * rng.standard_normal(size)
            a, b = x + depth, x_new + depth
            with np.errstate(over="ignore", invalid="ignore"):
                pc = np.where(b <= 0, 1.0, np.exp(-2 * a * b / (sig * sig * dt)))
            crossed = alive & (rng.random(size) < pc)
            tau[crossed] = (k + rng.random(int(crossed.sum()))) * dt
            alive &= ~crossed
            x = x_new
        return tau[~np.isnan(tau)]

    parts = _run_blocks(block, cfg.n_paths, cfg.seed, _TAG_HIT)
    return np.concatenate(parts) if parts else np.array([])


# ---------------------------------------------------------------- discrete model

def simulate_cost_discrete(p: MarketParams, execution, model: str, x: float, t: float,
                           delta: float, eps: float, cfg: SimConfig,
                           return_cases: bool = False):
    """Monte-Carlo cost of the tick-level strategy.

    The best ask moves by +-eps at the jump times of a Poisson process with
    mean spacing delta; each move is up with probability
    (1 + mu delta/eps)/2 (clamped), matching the drift of the Bachelier
    limit.  The order at S0 - x is reached when the ask first touches
    S0 - x + eps.  ``execution`` is an ExecProbability (Bernoulli rho(x,t)
    at the touch) or a QueueModel (the bid/ask depletion race decides both
    the execution and the next price move).  Outcomes: not reached
    S_t - S0 + f; executed -x - r; next move up before t -x + f + 2 eps;
    otherwise -x + f + eps.
    """
    if model != "bachelier":
        raise ValueError("the tick-level simulator implements the Bachelier walk only")
    if not (eps > 0 and delta > 0 and t > 0):
        raise ValueError("eps, delta and t must be positive")
    K = int(round(x / eps))
    if K < 1 or abs(K * eps - x) > 1e-9 * max(1.0, x):
        raise ValueError("x must be a positive multiple of eps")
    p_up = min(max(0.5 * (1 + p.mu * delta / eps), 0.0), 1.0)
    use_queue = isinstance(execution, QueueModel)
    r_val = None if use_queue else float(execution.value(x, t))
    mean_jumps = t / delta
    n_max = int(mean_jumps + 10 * math.sqrt(mean_jumps) + 20)

    def block(rng, size):
        n_jumps = rng.poisson(mean_jumps, size)
        # jump times: cumulative exponential spacings truncated at t
        gaps = rng.exponential(delta, (size, n_max))
        times = np.cumsum(gaps, axis=1)
        steps = np.where(rng.random((size, n_max)) < p_up, 1, -1)
        valid = times <= t
        # the Poisson count and the spacings describe the same process:
        # use the spacings (n_jumps only guards the array width)
        del n_jumps
        walk = np.cumsum(np.where(valid, steps, 0), axis=1)
        target = -(K - 1)
        if K == 1:
            hit = np.ones(size, dtype=bool)
            tau = np.zeros(size)
        else:
            reached = (walk <= target) & valid
            hit = reached.any(axis=1)
            first = np.argmax(reached, axis=1)
            tau = np.where(hit, times[np.arange(size), first], np.inf)
        s_t = eps * walk[:, -1]
        cost = s_t + p.fee
        case = np.zeros(size, dtype=np.int8)          # 1: not reached
        case[:] = 1
        idx = np.flatnonzero(hit)
        remaining = t - tau[idx]
        if use_queue:
            executed, ask_first = _queue_outcome(rng, execution, K, tau[idx], remaining)
            next_up = ask_first
        else:
            executed = rng.random(idx.size) < r_val
            # time to the next move, memoryless
            next_up = rng.exponential(delta, idx.size) <= remaining
        c = np.where(executed, -x - p.rebate,
                     np.where(next_up, -x + p.fee + 2 * eps, -x + p.fee + eps))
        cost[idx] = c
        case[idx] = np.where(executed, 2, np.where(next_up, 3, 4))
        counts = np.bincount(case, minlength=5)
        return _moments(cost) + (counts,)

    parts = _run_blocks(block, cfg.n_paths, cfg.seed, _TAG_DISCRETE, block=BLOCK // 4)
    est = _reduce([pt[:3] for pt in parts])
    if return_cases:
        counts = sum(pt[3] for pt in parts)
        return est, {"not_reached": int(counts[1]), "executed": int(counts[2]),
                     "rebound": int(counts[3]), "timeout": int(counts[4])}
    return est


def _queue_outcome(rng, q: QueueModel, k: int, tau, remaining):
    """Race at the touched level.  Returns (executed, ask_depleted_first)."""
    n = tau.size
    Q = q.queue_at(k)
    if k == 1:
        ahead = np.full(n, Q)
    else:
        cancels = np.minimum(rng.poisson(q.theta(k) * tau), Q)
        ahead = Q - cancels
    ell = ahead + 1
    i = _draw_ask_size(rng, q, n, k)
    return _race(rng, q, i, ell, remaining)


def _draw_ask_size(rng, q: QueueModel, n, k: int = 1):
    # qa0 is the current best ask; after a drop of k - 1 ticks the ask
    # queue is a fresh one drawn from f_a
    if q.qa0 > 0 and k == 1:
        return np.full(n, q.qa0)
    support = np.array([a for a, _ in q.f_a])
    w = np.array([b for _, b in q.f_a])
    return rng.choice(support, size=n, p=w / w.sum())


def _race(rng, q: QueueModel, i, ell, horizon):
    """Bid (pure death, ell orders) against ask (birth-death, i orders).

    Returns (bid_first_before_horizon, ask_first_before_horizon).
    """
    n = np.size(i)
    sigma_b = rng.gamma(np.asarray(ell, dtype=float), 1.0 / q.dep_b, n)
    cap = np.minimum(sigma_b, horizon)
    size = np.asarray(i, dtype=np.int64).copy()
    clock = np.zeros(n)
    depleted_at = np.full(n, np.inf)
    rate = q.lambda_a + q.dep_a
    p_birth = q.lambda_a / rate
    active = np.ones(n, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        clock[idx] += rng.exponential(1.0 / rate, idx.size)
        late = clock[idx] >= cap[idx]
        active[idx[late]] = False
        idx = idx[~late]
        birth = rng.random(idx.size) < p_birth
        size[idx] += np.where(birth, 1, -1)
        gone = size[idx] == 0
        depleted_at[idx[gone]] = clock[idx[gone]]
        active[idx[gone]] = False
    bid_first = (sigma_b < horizon) & (sigma_b < depleted_at)
    ask_first = (depleted_at < horizon) & (depleted_at <= sigma_b)
    return bid_first, ask_first


def simulate_queue_race(q: QueueModel, u: float, i: int, ell: int, cfg: SimConfig) -> McEstimate:
    """Fraction of runs in which the bid queue empties first and before u."""
    if i < 1 or ell < 1:
        raise ValueError("i and ell must be >= 1")
    if u <= 0:
        return McEstimate(0.0, 0.0, cfg.n_paths)

    def block(rng, size):
        win, _ = _race(rng, q, np.full(size, i), np.full(size, ell), u)
        return _moments(win.astype(float))

    return _reduce(_run_blocks(block, cfg.n_paths, cfg.seed, _TAG_RACE))


def _sample_hitting_time(rng, h: HittingModel, depth: float, t: float, n: int):
    """Exact draws of the first-passage time conditioned on being below t.

    The first passage of drift*s + sigma W to -depth, given it happens, is
    inverse Gaussian with mean depth/|drift| and shape depth^2/sigma^2
    (Levy when drift = 0); draws beyond t are rejected.  When acceptance is
    poor the conditional cdf is inverted on a grid instead.
    """
    sig, m = h.params.sigma, h.drift
    acc = math.exp(log_hit_probability(h, depth, t))
    if m > 0:
        acc /= math.exp(-2 * depth * m / sig ** 2)
    if acc > 0.02:
        out = np.empty(0)
        while out.size < n:
            need = n - out.size
            k = int(need / acc * 1.2) + 16
            if m == 0:
                z = rng.standard_normal(k)
                s = depth ** 2 / (sig ** 2 * z * z)
            else:
                s = rng.wald(depth / abs(m), depth ** 2 / sig ** 2, k)
            out = np.concatenate([out, s[s < t][:need]])
        return out
    # inverse transform on the conditional cdf
    grid = np.linspace(0.0, t, 20001)[1:]
    lp = np.array([log_hit_probability(h, depth, s) for s in grid])
    cdf = np.exp(lp - lp[-1])
    cdf = np.maximum.accumulate(cdf)
    return np.interp(rng.random(n), np.concatenate([[0.0], cdf]), np.concatenate([[0.0], grid]))


def simulate_rho(q: QueueModel, h: HittingModel, depth: float, t: float, cfg: SimConfig) -> McEstimate:
    """Discrete-event estimate of the execution probability rho(depth, t)."""
    k = int(round(h.price_depth(depth) / q.tick))

    def block(rng, size):
        if h.price_depth(depth) < 1.5 * q.tick:
            ell = np.full(size, q.queue_at(1) + 1)
            horizon = np.full(size, t)
        else:
            tau = _sample_hitting_time(rng, h, depth, t, size)
            Q = q.queue_at(k)
            cancels = np.minimum(rng.poisson(q.theta(k) * tau), Q)
            ell = Q - cancels + 1
            horizon = t - tau
        i = _draw_ask_size(rng, q, size, 1 if h.price_depth(depth) < 1.5 * q.tick else k)
        win, _ = _race(rng, q, i, ell, horizon)
        return _moments(win.astype(float))

    return _reduce(_run_blocks(block, cfg.n_paths, cfg.seed, _TAG_RHO))
