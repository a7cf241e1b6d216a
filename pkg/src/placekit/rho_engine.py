"""Execution probability rho(x, t) from a Poisson queue model.

An order placed at depth x joins the bid queue at that level.  It is
executed if, once the best bid has fallen to its level (at the hitting time
tau < t), the orders ahead of it are depleted before the best ask queue is
and before the horizon.  Time is in seconds and all rates are per second;
the hitting model's drift and volatility must use the same time unit.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicSpline

from .market import ExecProbability, MarketParams, TabulatedRho
from .numerics import (IntegrationError, NumericsError, QuadratureSpec, integrate,
                       log_normal_cdf)

TABLE1 = dict(dep_a=19.32, lambda_a=21.78, dep_b=18.68, lambda_b=21.98)


class HittingUnderflow(NumericsError):
    """The probability of reaching the level underflows to zero."""


def _as_pmf(dist):
    """Normalise a distribution given as dict {i: p} or pairs to sorted tuples."""
    items = dist.items() if isinstance(dist, dict) else dist
    pairs = sorted((int(i), float(p)) for i, p in items if float(p) > 0)
    if not pairs:
        raise ValueError("f_a must have positive mass")
    if any(i < 1 for i, _ in pairs):
        raise ValueError("f_a support must be positive integers")
    total = sum(p for _, p in pairs)
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"f_a must sum to 1 (got {total})")
    return tuple((i, p / total) for i, p in pairs)


@dataclass(frozen=True)
class QueueModel:
    """Poisson order-flow model around the best quotes.

    theta_k[0] is the cancellation rate at k = 2 ticks, theta_k[1] at k = 3,
    and so on; deeper levels reuse the last entry.  depth_profile holds
    (tick index, queue size) pairs; missing levels are empty.
    """
    lambda_a: float
    lambda_b: float
    dep_a: float
    dep_b: float
    theta_k: tuple = ()
    f_a: tuple = ((6, 1.0),)
    depth_profile: tuple = ()
    tick: float = 0.01
    qa0: int = 0        # current best-ask size; 0 means draw it from f_a

    def __post_init__(self):
        for name in ("lambda_a", "lambda_b", "dep_a", "dep_b", "tick"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0")
        if self.dep_a <= 0 or self.dep_b <= 0:
            raise ValueError("depletion rates must be positive")
        if self.tick <= 0:
            raise ValueError("tick must be positive")
        if int(self.qa0) < 0:
            raise ValueError("qa0 must be >= 0")
        object.__setattr__(self, "theta_k", tuple(float(v) for v in self.theta_k))
        if any(not (math.isfinite(v) and v >= 0) for v in self.theta_k):
            raise ValueError("theta_k must be finite and >= 0")
        object.__setattr__(self, "f_a", _as_pmf(self.f_a))
        prof = self.depth_profile.items() if isinstance(self.depth_profile, dict) else self.depth_profile
        prof = tuple(sorted((int(k), int(q)) for k, q in prof))
        if any(q < 0 or k < 1 for k, q in prof):
            raise ValueError("depth profile needs k >= 1 and sizes >= 0")
        object.__setattr__(self, "depth_profile", prof)

    def theta(self, k: int) -> float:
        if k < 2 or not self.theta_k:
            return 0.0
        return self.theta_k[min(k - 2, len(self.theta_k) - 1)]

    def queue_at(self, k: int) -> int:
        return dict(self.depth_profile).get(int(k), 0)

    def f_a_truncated(self, mass: float = 1 - 1e-6):
        """Support and weights of f_a cut where the cumulative mass reaches `mass`."""
        i = np.array([a for a, _ in self.f_a])
        p = np.array([b for _, b in self.f_a])
        cut = int(np.searchsorted(np.cumsum(p), mass)) + 1
        i, p = i[:cut], p[:cut]
        return i, p / p.sum()

    @property
    def mean_f_a(self) -> float:
        return sum(i * p for i, p in self.f_a)

    def replace(self, **kw) -> "QueueModel":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return QueueModel(**d)


def geometric_f_a(mean: float = 6.0, mass: float = 1 - 1e-9):
    """Geometric distribution on {1, 2, ...} with the given mean."""
    p = 1.0 / mean
    n = int(math.ceil(math.log(1 - mass) / math.log(1 - p)))
    i = np.arange(1, n + 1)
    w = p * (1 - p) ** (i - 1)
    return tuple(zip(i.tolist(), (w / w.sum()).tolist()))


@dataclass(frozen=True)
class HittingModel:
    kind: str
    params: MarketParams

    def __post_init__(self):
        if self.kind not in ("bachelier", "black-scholes"):
            raise ValueError(f"unknown hitting model {self.kind!r}")

    @property
    def drift(self) -> float:
        """Drift of the process whose running minimum decides the hit."""
        p = self.params
        return p.mu if self.kind == "bachelier" else p.mu - p.sigma ** 2 / 2

    def barrier(self, depth: float) -> float:
        """Distance of the level in the driving Brownian coordinate."""
        return depth

    def price_depth(self, depth: float) -> float:
        """Depth in price units (x) for a depth argument (x or y)."""
        if self.kind == "bachelier":
            return depth
        return self.params.s0 * (1 - math.exp(-depth))


# ---------------------------------------------------------------- hitting law

def log_hit_probability(h: HittingModel, depth: float, t: float) -> float:
    sig, m = h.params.sigma, h.drift
    st = sig * math.sqrt(t)
    a = log_normal_cdf((-depth - m * t) / st)
    b = -2 * depth * m / sig ** 2 + log_normal_cdf((-depth + m * t) / st)
    return float(np.logaddexp(a, b))


def log_hitting_density(h: HittingModel, depth: float, s):
    """log of the unconditional first-passage density of the level."""
    s = np.asarray(s, dtype=float)
    sig, m = h.params.sigma, h.drift
    with np.errstate(divide="ignore"):
        return (math.log(depth) - math.log(sig) - 1.5 * np.log(s)
                - 0.5 * ((depth + m * s) / (sig * np.sqrt(s))) ** 2 - 0.5 * math.log(2 * math.pi))


def hitting_density(h: HittingModel, depth: float, t: float, s):
    """Conditional density of the hitting time given it occurs before t.

    depth is x for the Bachelier model and the log-depth y for the
    Black-Scholes model (whose log-price has drift mu - sigma^2/2).
    """
    if not (depth > 0 and t > 0):
        raise ValueError("depth and t must be positive")
    lp = log_hit_probability(h, depth, t)
    if not math.isfinite(lp):
        raise HittingUnderflow(f"P(tau < t) underflows for depth {depth}, t {t}")
    s = np.asarray(s, dtype=float)
    inside = (s > 0) & (s < t)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(inside, np.exp(log_hitting_density(h, depth, np.where(inside, s, 1.0)) - lp), 0.0)
    return out if out.ndim else float(out)


def _hitting_breakpoints(h, depth, t):
    """Points in (0, t) around which the conditional density concentrates."""
    sig, m = h.params.sigma, h.drift
    # mode of the unconditional density
    mode = (math.sqrt(9 * sig ** 4 + 4 * m * m * depth * depth) - 3 * sig ** 2) / (2 * m * m) \
        if m != 0 else depth * depth / (3 * sig ** 2)
    pts = {0.0, t}
    for f in (0.25, 0.5, 1.0, 2.0, 4.0):
        pts.add(min(mode * f, t))
    # near the horizon when the level is far: t - s ~ sigma^2 t^2 / depth^2
    w = sig * sig * t * t / (depth * depth)
    for f in (1.0, 4.0, 16.0, 64.0):
        pts.add(max(t - f * w, 0.0))
    return sorted(p for p in pts if 0.0 <= p <= t)


# ---------------------------------------------------------------- depletion

def depletion_density_ask(q: QueueModel, i: int, s):
    """Density of the depletion time of an ask queue holding i batches.

    The queue is a birth-death chain (births lambda_a, deaths dep_a); the
    density is defective when lambda_a > dep_a.
    """
    if i < 1:
        raise ValueError("i must be >= 1")
    s = np.asarray(s, dtype=float)
    la, d = q.lambda_a, q.dep_a
    if la == 0:
        out = stats.gamma.pdf(s, i, scale=1 / d)
        return out if out.ndim else float(out)
    z = 2 * math.sqrt(la * d) * s
    pos = s > 0
    sp = np.where(pos, s, 1.0)
    zp = np.where(pos, z, 1.0)
    with np.errstate(divide="ignore"):
        logg = (math.log(i) - np.log(sp) + 0.5 * i * math.log(d / la)
                + np.log(special.ive(i, zp)) + zp - sp * (la + d))
    out = np.where(pos, np.exp(logg), d if i == 1 else 0.0)
    return out if out.ndim else float(out)


def depletion_density_bid(q: QueueModel, ell: int, s):
    """Gamma(ell, dep_b) density: the orders ahead only deplete."""
    if ell < 1:
        raise ValueError("ell must be >= 1")
    out = stats.gamma.pdf(np.asarray(s, dtype=float), ell, scale=1 / q.dep_b)
    return out if np.ndim(out) else float(out)


def depletion_cdf_bid(q: QueueModel, ell: int, s):
    out = special.gammainc(ell, q.dep_b * np.maximum(np.asarray(s, dtype=float), 0))
    return out if np.ndim(out) else float(out)


def ask_never_depletes(q: QueueModel, i: int) -> float:
    """P(sigma_a^i = inf) = 1 - min(1, dep_a/lambda_a)^i for the birth-death queue."""
    if q.lambda_a <= q.dep_a:
        return 0.0
    return 1.0 - (q.dep_a / q.lambda_a) ** i


def alpha_race(q: QueueModel, u: float, i: int, ell: int,
               spec: QuadratureSpec | None = None) -> float:
    """P(bid queue of ell depletes before the ask queue of i and before u).

    Evaluated as the integral of P(sigma_b < s) against the ask depletion
    density on (0, u) plus P(sigma_b < u) P(sigma_a > u).  u may be inf.
    """
    spec = spec or QuadratureSpec(abs_tol=1e-12, rel_tol=1e-10, max_subdivisions=400)
    if u < 0:
        raise ValueError("u must be >= 0")
    if u == 0:
        return 0.0

    def f(s):
        return depletion_cdf_bid(q, ell, s) * depletion_density_ask(q, i, s)

    if math.isinf(u):
        # the ask queue may never deplete (lambda_a > dep_a): that mass is won
        body = integrate(f, 0.0, math.inf, spec)
        return float(min(max(body + ask_never_depletes(q, i), 0.0), 1.0))
    # split where the densities live to help the adaptive rule
    scale = (ell + i) / min(q.dep_a, q.dep_b)
    edges = sorted({0.0, u} | {min(u, scale * k) for k in (0.25, 1.0, 4.0, 16.0)})
    body = sum(integrate(f, a, b, spec) for a, b in zip(edges[:-1], edges[1:]) if b > a)
    surv = 1.0 - sum(integrate(lambda s: depletion_density_ask(q, i, s), a, b, spec)
                     for a, b in zip(edges[:-1], edges[1:]) if b > a)
    val = body + depletion_cdf_bid(q, ell, u) * surv
    return float(min(max(val, 0.0), 1.0))


def rho_limit_0plus(q: QueueModel, i_dist=None, ell: int = 1,
                    spec: QuadratureSpec | None = None) -> float:
    """Limit of the race probability as the horizon grows.

    Includes the event that the ask queue never depletes, which has
    positive probability when lambda_a > dep_a.  i_dist: None (use the
    model's f_a), an int, or a distribution.
    """
    if i_dist is None:
        pairs = q.f_a
    elif isinstance(i_dist, (int, np.integer)):
        pairs = ((int(i_dist), 1.0),)
    else:
        pairs = _as_pmf(i_dist)
    return float(sum(p * alpha_race(q, math.inf, i, ell, spec) for i, p in pairs))


def cancellations_ahead(q: QueueModel, k: int, s: float, j):
    """P(N_s = j) for the Poisson cancellations ahead at k ticks.

    The count is capped at the initial queue size Q = Q^b_k(0): j = Q
    receives the whole upper tail.
    """
    Q = q.queue_at(k)
    j = np.asarray(j)
    if np.any(j < 0) or np.any(j > Q):
        raise ValueError(f"j must lie in [0, {Q}]")
    lam = q.theta(k) * s
    pmf = stats.poisson.pmf(j, lam)
    tail = stats.poisson.sf(Q - 1, lam) if Q > 0 else 1.0
    out = np.where(j == Q, tail, pmf)
    return out if out.ndim else float(out)


def rho_0plus_of_t(q: QueueModel, t: float, qa0: int, qb0: int,
                   spec: QuadratureSpec | None = None) -> float:
    """rho at one tick below the best ask: the race with qb0 + 1 orders."""
    if qa0 < 1 or qb0 < 0:
        raise ValueError("need qa0 >= 1 and qb0 >= 0")
    return alpha_race(q, t, qa0, qb0 + 1, spec)


# ---------------------------------------------------------------- engine

class RhoEngine:
    """Evaluates rho(depth, t) for one queue model and hitting model.

    The f_a-mixed race probabilities A(u, ell) are tabulated once on a
    uniform grid (cumulative Simpson rule) and cubic-spline interpolated;
    the outer integral over the hitting time is adaptive.
    """

    def __init__(self, q: QueueModel, h: HittingModel, grid_step: float = 0.0025,
                 spec: QuadratureSpec | None = None):
        self.q, self.h = q, h
        self.step = grid_step
        self.spec = spec or QuadratureSpec(abs_tol=1e-11, rel_tol=1e-9, max_subdivisions=400)
        self._horizon = 0.0
        self._splines = {}
        self._sbar = None
        self._grid = None

    # survival of the mixed ask depletion time on the grid
    def _build(self, horizon):
        n = int(math.ceil(horizon / self.step))
        n += n % 2      # even number of intervals
        v = np.linspace(0.0, n * self.step, n + 1)
        ii, pp = self.q.f_a_truncated()
        sbar = np.zeros_like(v)
        for i, p in zip(ii, pp):
            g = depletion_density_ask(self.q, int(i), v)
            sbar += p * (1.0 - cumulative_simpson(g, x=v, initial=0.0))
        self._grid, self._sbar = v, np.clip(sbar, 0.0, 1.0)
        self._horizon = v[-1]
        self._splines = {}

    def _ensure(self, horizon):
        if self._grid is None or horizon > self._horizon:
            self._build(max(horizon, 2 * self._horizon, 1.0))

    def _spline(self, ell):
        sp = self._splines.get(ell)
        if sp is None:
            v = self._grid
            a = cumulative_simpson(depletion_density_bid(self.q, ell, v) * self._sbar, x=v, initial=0.0)
            sp = CubicSpline(v, a)
            self._splines[ell] = sp
        return sp

    def race(self, u, ell):
        """f_a-mixed race probability A(u, ell) = sum_i f_a(i) alpha_u(i, ell)."""
        u = np.asarray(u, dtype=float)
        self._ensure(float(np.max(u)) if u.size else 0.0)
        out = np.clip(self._spline(int(ell))(np.clip(u, 0.0, None)), 0.0, 1.0)
        return out if out.ndim else float(out)

    def tick_index(self, depth: float) -> int:
        return int(round(self.h.price_depth(depth) / self.q.tick))

    def rho0_of_t(self, t: float) -> float:
        """Value used below 1.5 ticks: the race at the first level."""
        qb = self.q.queue_at(1)
        if t <= 0:
            return 0.0
        if self.q.qa0 > 0:
            return rho_0plus_of_t(self.q, t, self.q.qa0, qb)
        return float(self.race(t, qb + 1))

    def rho(self, depth: float, t: float) -> float:
        if not (depth >= 0 and t >= 0):
            raise ValueError("depth and t must be nonnegative")
        if t == 0:
            return 0.0
        if self.h.price_depth(depth) < 1.5 * self.q.tick:
            return self.rho0_of_t(t)
        k = self.tick_index(depth)
        Q = self.q.queue_at(k)
        theta = self.q.theta(k)
        self._ensure(t)
        splines = [self._spline(Q - j + 1) for j in range(Q + 1)]
        js = np.arange(Q + 1)
        lp = log_hit_probability(self.h, depth, t)
        if not math.isfinite(lp):
            raise HittingUnderflow(f"P(tau < t) underflows for depth {depth}, t {t}")

        def f(s):
            s = np.asarray(s, dtype=float)
            dens = np.exp(log_hitting_density(self.h, depth, s) - lp)
            u = np.clip(t - s, 0.0, None)
            if Q == 0:
                return dens * np.clip(splines[0](u), 0, 1)
            lam = theta * s
            pmf = stats.poisson.pmf(js[:, None], lam[None, :])
            pmf[-1] = stats.poisson.sf(Q - 1, lam)
            race = np.array([np.clip(sp(u), 0, 1) for sp in splines])
            return dens * np.sum(pmf * race, axis=0)

        edges = _hitting_breakpoints(self.h, depth, t)
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            if b > a:
                total += integrate(f, a, b, self.spec)
        return float(min(max(total, 0.0), 1.0))

    def surface(self, depths, times):
        return np.array([[self.rho(d, t) for d in depths] for t in times])

    def exec_probability(self, depths, times) -> TabulatedRho:
        """Tabulate rho on a grid as an ExecProbability.

        The first depth node is replaced by 0 and carries the 0+ value.
        """
        depths = np.asarray(depths, dtype=float)
        times = np.atleast_1d(np.asarray(times, dtype=float))
        nodes = np.concatenate([[0.0], depths[depths > 0]])
        vals = np.array([[self.rho0_of_t(t) if d == 0 else self.rho(d, t) for d in nodes]
                         for t in times])
        tab = TabulatedRho(nodes, times, vals)
        tab.kind = "queue-backed"
        return tab


@functools.lru_cache(maxsize=16)
def engine_for(q: QueueModel, h: HittingModel) -> RhoEngine:
    return RhoEngine(q, h)


def rho(q: QueueModel, h: HittingModel, depth: float, t: float) -> float:
    """Execution probability of an order at the given depth, horizon t."""
    return engine_for(q, h).rho(depth, t)


# ---------------------------------------------------------------- probes

def condition_probe(q, h: HittingModel, t: float, n_points: int = 12,
                    ceiling: float | None = None) -> dict:
    """Numerical checks of the tail conditions on rho used by the theory.

    Reports max |d rho/dx| on a geometric depth grid, the minimum of
    x^2 rho(x,t) over the upper half of the grid against 2 g_b^1(0) sigma^2 t^2,
    and D(t) = rho(2 eps, t) - rho(eps, t).  ``q`` may also be a plain
    ExecProbability, in which case only its own values are probed.

    The tail x^2 rho approaches its bound once the mean residual time
    2 sigma^2 t^2 / x^2 is short against 1/g_b^1(0), so the default ceiling
    is ten times sqrt(2 g_b^1(0)) sigma t.
    """
    sig = h.params.sigma
    if isinstance(q, ExecProbability):
        eps, dep_b = 0.01, None
        value = lambda x: float(q.value(x, t))
    else:
        eng = engine_for(q, h)
        eps, dep_b = q.tick, q.dep_b
        value = lambda x: eng.rho(x, t)
    if ceiling is None:
        ceiling = max(20 * sig * math.sqrt(t), 10 * eps)
        if dep_b is not None:
            ceiling = max(ceiling, 10 * math.sqrt(2 * dep_b) * sig * t)
    xs = np.geomspace(2 * eps, ceiling, n_points)
    vals, ders = [], []
    for x in xs:
        hx = 1e-3 * x
        try:
            r = value(x)
            d = (value(x + hx) - value(x - hx)) / (2 * hx)
        except HittingUnderflow:
            r, d = float("nan"), float("nan")
        vals.append(r)
        ders.append(d)
    vals, ders = np.array(vals), np.array(ders)
    if h.kind == "bachelier":
        tail = xs ** 2 * vals
    else:
        tail = np.exp(xs) * xs ** 2 * vals
    upper = tail[n_points // 2:]
    bound = 2 * dep_b * sig ** 2 * t ** 2 if dep_b is not None else float("nan")
    d_eps = value(2 * eps) - value(eps)
    return {
        "depths": xs.tolist(), "rho": vals.tolist(), "drho_dx": ders.tolist(),
        "max_abs_drho_dx": float(np.nanmax(np.abs(ders))),
        "drho_dx_at_ceiling": float(ders[-1]),
        "tail_values": tail.tolist(),
        "tail_min": float(np.nanmin(upper)), "tail_at_ceiling": float(tail[-1]),
        "tail_bound": bound,
        "D": float(d_eps),
    }
