"""Optimal limit-order placement when the best ask follows a geometric
Brownian motion S_t = S0 exp((mu - sigma^2/2) t + sigma W_t).

The order sits at the price level S0 e^{-y}; y > 0 is the log-depth and
``y = 0`` denotes the 0+ limit.  ``rho`` arguments are execution
probabilities expressed in y (see ExecProbability.in_log_depth).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .market import BoundaryCase, ExecProbability, GbmPlacement, MarketParams
from .numerics import (NumericsError, RootBracket, find_root, log_normal_cdf,
                       mills_ratio, normal_cdf, normal_pdf)
from .placement_bm import _check, _psi

PHI0 = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class GbmArgs:
    alpha_plus: float
    alpha_minus: float
    alpha: float
    beta: float

    @classmethod
    def of(cls, p: MarketParams) -> "GbmArgs":
        s2 = p.sigma ** 2 / 2
        return cls(p.mu + s2, p.mu - s2, (p.mu - s2) / p.sigma, (p.mu + s2) / p.sigma)


def _pieces(p, y, t):
    """Standardised arguments (D, A, Dp, B) and log prefactors."""
    g = GbmArgs.of(p)
    st = p.sigma * math.sqrt(t)
    y = np.asarray(y, dtype=float)
    D = (-y - g.alpha_minus * t) / st
    A = (-y + g.alpha_minus * t) / st
    Dp = (y + g.alpha_plus * t) / st
    B = (-y + g.alpha_plus * t) / st
    k = 2 * p.mu / p.sigma ** 2
    # E e^y N(A) and E e^{mu t - y} N(B), E = e^{-k y}
    ena = np.exp(-k * y + y + log_normal_cdf(A))
    enb = np.exp(-k * y + p.mu * t - y + log_normal_cdf(B))
    return D, A, Dp, B, k, ena, enb


def hit_probability_gbm(p: MarketParams, y, t):
    _check(t, y)
    D, A, Dp, B, k, ena, enb = _pieces(p, y, t)
    return normal_cdf(D) + ena


def cost_gbm(p: MarketParams, rho: ExecProbability, y, t):
    """Expected cost C~(y, t)."""
    _check(t, y)
    y = np.asarray(y, dtype=float)
    D, A, Dp, B, k, ena, enb = _pieces(p, y, t)
    prob = normal_cdf(D) + ena
    q = np.exp(p.mu * t) * normal_cdf(Dp) - enb
    r = rho.value(y, t)
    out = (p.s0 * np.exp(-y) - p.c * r) * prob + p.s0 * q + p.fee - p.s0
    return out if np.ndim(out) else float(out)


def cost_gbm_price(p: MarketParams, rho: ExecProbability, level, t):
    """Cost with the order given as an absolute price level in (0, S0)."""
    level = np.asarray(level, dtype=float)
    if np.any(level <= 0) or np.any(level > p.s0):
        raise ValueError("price level must lie in (0, S0]")
    return cost_gbm(p, rho, np.log(p.s0 / level), t)


def dC_dy_gbm(p: MarketParams, rho: ExecProbability, y, t):
    """First y-derivative, written term by term as four lines."""
    _check(t, y)
    y = np.asarray(y, dtype=float)
    mu, sig, s0, c = p.mu, p.sigma, p.s0, p.c
    D, A, Dp, B, k, ena, enb = _pieces(p, y, t)
    st = sig * math.sqrt(t)
    r, ry = rho.value(y, t), rho.dx(y, t)
    ey = np.exp(-y)
    # E N(A) and E e^{mu t} N(B) share the prefactor E = e^{-k y}
    l1 = -s0 * ey * k * (ena - enb * np.exp(y))
    l2 = s0 * ey * (enb * np.exp(y) - normal_cdf(D))
    # E e^y phi(A) = phi(D)
    l3 = c * r * (2 / st * normal_pdf(D) - (1 - k) * ena)
    l4 = -c * ry * (normal_cdf(D) + ena)
    out = l1 + l2 + l3 + l4
    return out if np.ndim(out) else float(out)


def _blocks(p, y, t):
    """P, P', P'', Q', Q'' (in y) of the hit probability and no-hit mean."""
    D, A, Dp, B, k, ena, enb = _pieces(p, y, t)
    st = p.sigma * math.sqrt(t)
    m = GbmArgs.of(p).alpha_minus
    km = 2 * m / p.sigma ** 2
    phid = normal_pdf(D)
    eqd = np.exp(p.mu * t) * normal_pdf(Dp)
    prob = normal_cdf(D) + ena
    p1 = -2 * phid / st - km * ena
    p2 = -2 * D * phid / (p.sigma ** 2 * t) + km ** 2 * ena + km * phid / st
    q1 = 2 * eqd / st + (1 + k) * enb
    q2 = -2 * eqd * Dp / (p.sigma ** 2 * t) - (1 + k) ** 2 * enb - (1 + k) * eqd / st
    return prob, p1, p2, q1, q2


def dC_dy_gbm_blocks(p: MarketParams, rho: ExecProbability, y, t):
    """First derivative assembled from the hit-probability building blocks."""
    y = np.asarray(y, dtype=float)
    prob, p1, p2, q1, q2 = _blocks(p, y, t)
    s, c = p.s0 * np.exp(-y), p.c
    r, ry = rho.value(y, t), rho.dx(y, t)
    out = (-s - c * ry) * prob + (s - c * r) * p1 + p.s0 * q1
    return out if np.ndim(out) else float(out)


def d2C_dy2_gbm(p: MarketParams, rho: ExecProbability, y, t):
    _check(t, y)
    y = np.asarray(y, dtype=float)
    prob, p1, p2, q1, q2 = _blocks(p, y, t)
    s, c = p.s0 * np.exp(-y), p.c
    r, ry, ryy = rho.value(y, t), rho.dx(y, t), rho.dxx(y, t)
    out = (s - c * ryy) * prob + 2 * (-s - c * ry) * p1 + (s - c * r) * p2 + p.s0 * q2
    return out if np.ndim(out) else float(out)


def dC_dy_gbm_scaled(p: MarketParams, rho: ExecProbability, y, t):
    """dC/dy divided by phi(D) > 0, D = (-y - alpha_- t)/(sigma sqrt t)."""
    y = np.asarray(y, dtype=float)
    D, A, Dp, B, k, ena, enb = _pieces(p, y, t)
    st = p.sigma * math.sqrt(t)
    km = 2 * GbmArgs.of(p).alpha_minus / p.sigma ** 2
    rd, ra, rb = mills_ratio(-D), mills_ratio(-A), mills_ratio(-B)
    s, c = p.s0 * np.exp(-y), p.c
    r, ry = rho.value(y, t), rho.dx(y, t)
    out = ((-s - c * ry) * (rd + ra)
           + (s - c * r) * (-2 / st - km * ra)
           + s * (2 / st + (1 + k) * rb))
    return out if np.ndim(out) else float(out)


def dC_dy_gbm_at0(p: MarketParams, rho: ExecProbability, t: float) -> float:
    _check(t)
    g = GbmArgs.of(p)
    sq = math.sqrt(t)
    c, s0, sig = p.c, p.s0, p.sigma
    r, ry = rho.value(0.0, t), rho.dx(0.0, t)
    return (2 * c * r / (sig * sq) * _psi(g.alpha * sq)
            - s0 * (1 + 2 * g.alpha / sig * normal_cdf(g.alpha * sq)
                    - 2 * g.beta / sig * math.exp(p.mu * t) * normal_cdf(g.beta * sq))
            - c * ry)


def d2C_dtdy_gbm_at0(p: MarketParams, rho: ExecProbability, t: float) -> float:
    _check(t)
    g = GbmArgs.of(p)
    sq = math.sqrt(t)
    mu, c, s0, sig = p.mu, p.c, p.s0, p.sigma
    r, rt, rty = rho.value(0.0, t), rho.dt(0.0, t), rho.dtx(0.0, t)
    return (s0 * 2 * mu / (sig * sq) * normal_pdf(g.alpha * sq)
            + 2 * s0 * g.beta / sig * mu * math.exp(mu * t) * normal_cdf(g.beta * sq)
            - c * r / (sig * t * sq) * normal_pdf(g.alpha * sq)
            + 2 * c * rt / (sig * sq) * _psi(g.alpha * sq)
            - c * rty)


def d2C_dy2_gbm_at0(p: MarketParams, rho: ExecProbability, t: float) -> float:
    """Second y-derivative at 0+ in closed form.

    The rho'-term carries the coefficient 4 c rho'(0)/(sigma sqrt t); this
    is what differentiating the cost twice gives, and it agrees with the
    general-y second derivative at y = 0.
    """
    _check(t)
    g = GbmArgs.of(p)
    sq = math.sqrt(t)
    mu, c, s0, sig = p.mu, p.c, p.s0, p.sigma
    r, ry, ryy = rho.value(0.0, t), rho.dx(0.0, t), rho.dxx(0.0, t)
    psi = _psi(g.alpha * sq)
    return (s0 * (2 * mu / sig ** 2) ** 2 * normal_cdf(g.alpha * sq)
            - 4 * s0 * g.beta ** 2 / sig ** 2 * math.exp(mu * t) * normal_cdf(g.beta * sq)
            + s0 * normal_cdf(-g.alpha * sq)
            - 4 * g.alpha / (sig ** 2 * sq) * r * c * psi
            + 4 * c * ry / (sig * sq) * psi
            - c * ryy)


# ---------------------------------------------------------------- solvers

def _case_a(p):
    return 1 if p.mu <= -p.sigma ** 2 / 2 else 2


def condition_report(p: MarketParams, rho: ExecProbability, t: float) -> dict:
    """Check rho(0+,t) < a S0 |mu| t / (r+f) and d rho/dy (0+, t) >= 0."""
    a = _case_a(p)
    r0 = rho.value(0.0, t)
    bound = a * p.s0 * abs(p.mu) * t / p.c if p.c > 0 else math.inf
    return {"a": a, "rho0": r0, "rho0_bound": bound,
            "rho0_ok": bool(p.mu < 0 and r0 < bound),
            "drho_dy_at0": rho.dx(0.0, t), "drho_ok": bool(rho.dx(0.0, t) >= 0)}


def limit_slope_gbm(p: MarketParams) -> float:
    return -p.mu + 1.5 * p.sigma ** 2 - p.sigma * math.sqrt(-2 * p.mu + 2 * p.sigma ** 2)


def optimal_y_gbm(p: MarketParams, rho: ExecProbability, t: float,
                  tol: float = 1e-10, ceiling: float | None = None) -> GbmPlacement:
    _check(t)
    diag = {"conditions": condition_report(p, rho, t)}
    d0 = dC_dy_gbm_at0(p, rho, t)
    diag["dC_dy_at0"] = d0
    c0 = cost_gbm(p, rho, 0.0, t)
    if d0 >= 0:
        if d0 == 0:
            diag["note"] = "interior-degenerate"
        return GbmPlacement(0.0, p.s0, c0, BoundaryCase.TRIVIAL_ZERO, 0, None, diag)

    def g(y):
        v = dC_dy_gbm_scaled(p, rho, y, t)
        if not math.isfinite(v):
            v = dC_dy_gbm(p, rho, y, t)
        return v

    if ceiling is None:
        ceiling = 10 * (abs(p.mu) * t + p.sigma ** 2 * t + 6 * p.sigma * math.sqrt(t))
    diag["ceiling"] = ceiling
    lo = 0.0
    if p.mu < 0 and t > 10:
        start = t * limit_slope_gbm(p)
        if g(start) < 0:
            lo = start
        hi = 1.5 * start if lo else start
    else:
        hi = min(p.sigma * math.sqrt(t), -p.mu * t if p.mu < 0 else math.inf)
    hi = min(hi, ceiling)
    while g(hi) < 0:
        lo = hi
        if hi >= ceiling:
            diag["note"] = "no sign change below ceiling"
            return GbmPlacement(math.inf, 0.0, p.fee + p.s0 * (math.exp(p.mu * t) - 1),
                                BoundaryCase.UNBOUNDED, 0, None, diag)
        hi = min(2 * hi, ceiling)
    bracket = RootBracket(lo, hi, g(lo), g(hi))
    y, it = find_root(g, bracket, tol)
    d2 = d2C_dy2_gbm(p, rho, y, t)
    diag["d2C_dy2"] = d2
    diag["second_order_ok"] = bool(d2 >= -1e-12 * p.s0)
    cost = cost_gbm(p, rho, y, t)
    if cost > c0:
        diag["note"] = "interior stationary point dominated by 0+"
        return GbmPlacement(0.0, p.s0, c0, BoundaryCase.TRIVIAL_ZERO, it, bracket, diag)
    return GbmPlacement(y, p.s0 * math.exp(-y), cost, BoundaryCase.INTERIOR, it, bracket, diag)


def lower_t(p: MarketParams, rho0: float, z: float):
    """The explicit lower bound function t(z) for the critical time.

    Returns (value, ok); ok is False when the square root leaves the real
    domain, in which case the value is reported as 0.
    """
    sig, s0, cr = p.sigma, p.s0, rho0 * p.c
    am = p.mu - sig ** 2 / 2
    disc = am ** 2 - 32 * sig ** 2 * PHI0 * s0 * z / cr
    if disc < 0:
        return 0.0, False
    return cr ** 2 * ((-am - math.sqrt(disc)) / (8 * sig * s0 * z)) ** 2, True


def critical_time_gbm(p: MarketParams, rho: ExecProbability, tol: float = 1e-12):
    """(t0_star, bar_t, tilde_t, lower, diagnostics)."""
    if p.mu >= 0:
        raise ValueError("critical time requires mu < 0")
    if p.c <= 0:
        raise ValueError("critical time requires r + f > 0")
    r0 = rho.rho0()
    if r0 <= 0:
        raise ValueError("critical time requires rho(0+) > 0")
    g_ = GbmArgs.of(p)
    bar = r0 * p.c / (2 * abs(p.mu) * p.s0)
    tilde = 2 * bar
    if p.mu < -p.sigma ** 2 / 2:
        z = p.mu * PHI0
    else:
        z = p.mu * PHI0 - g_.beta * math.sqrt(-p.mu / 2) * math.exp(-0.5)
    lower, lower_ok = lower_t(p, r0, z)

    def f(t):
        return dC_dy_gbm_at0(p, rho, t)

    lo, hi = bar * 1e-12, tilde
    f_lo, f_hi = f(lo), f(hi)
    grow = 0
    while f_hi > 0 and grow < 60:
        hi *= 2
        f_hi = f(hi)
        grow += 1
    if not (f_lo > 0 and f_hi <= 0):
        raise NumericsError(
            f"dC/dy(0+, t) has no sign change on ({lo:.3g}, {hi:.3g}]; "
            f"conditions: {condition_report(p, rho, hi)}")
    t0, _ = find_root(f, RootBracket(lo, hi, f_lo, f_hi), tol * bar)
    upper = tilde if p.mu < -p.sigma ** 2 / 2 else bar
    diag = {"lower_ok": lower_ok, "z": z, "upper_used": upper,
            "ordering_ok": bool(lower < t0 < upper)}
    return t0, bar, tilde, lower, diag


def _third_partials(p, rho, t0, scale_y, scale_t):
    hy = 1e-5 * scale_y
    ht = 1e-5 * scale_t
    f0 = d2C_dy2_gbm_at0(p, rho, t0)
    f1 = d2C_dy2_gbm(p, rho, hy, t0)
    f2 = d2C_dy2_gbm(p, rho, 2 * hy, t0)
    cyyy = (-3 * f0 + 4 * f1 - f2) / (2 * hy)
    ctyy = (d2C_dy2_gbm_at0(p, rho, t0 + ht) - d2C_dy2_gbm_at0(p, rho, t0 - ht)) / (2 * ht)
    cytt = (d2C_dtdy_gbm_at0(p, rho, t0 + ht) - d2C_dtdy_gbm_at0(p, rho, t0 - ht)) / (2 * ht)
    return cyyy, ctyy, cytt


def expansion_coefficients_gbm(p, rho, base_t):
    cyy = d2C_dy2_gbm_at0(p, rho, base_t)
    if cyy <= 0:
        raise NumericsError(f"d2C/dy2(0, t0) = {cyy:.3g} is not positive")
    cty = d2C_dtdy_gbm_at0(p, rho, base_t)
    r1 = -cty / cyy
    cyyy, ctyy, cytt = _third_partials(p, rho, base_t, p.sigma * math.sqrt(base_t), base_t)
    r2 = -(0.5 * cyyy * r1 ** 2 + ctyy * r1 + 0.5 * cytt) / cyy
    return r1, r2


def approx_ystar_near_t0(p: MarketParams, rho: ExecProbability, t: float,
                         use_bar_t: bool = False):
    """(first_order, second_order, rho1, rho2) expansion of y*(t) near t0*."""
    t0, bar, *_ = critical_time_gbm(p, rho)
    base = bar if use_bar_t else t0
    r1, r2 = expansion_coefficients_gbm(p, rho, base)
    d = t - base
    return r1 * d, r1 * d + r2 * d * d, r1, r2


def ystar_large_t_gbm(p: MarketParams, rho_const: float, t: float):
    """(limit_slope, second_order_value) for y*(t)/t at large t."""
    if p.mu >= 0:
        raise ValueError("large-t regime requires mu < 0")
    slope = limit_slope_gbm(p)
    coef = p.sigma / (2 * math.sqrt(-2 * p.mu + 2 * p.sigma ** 2))
    return slope, slope + coef * math.log(t) / t


def ystar_small_sigma(p: MarketParams, rho_const: float, sigma: float, t: float):
    """(approx, a_const) small-volatility approximation of y*."""
    if p.mu >= 0:
        raise ValueError("small-sigma regime requires mu < 0")
    if not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    L = math.log(1 / sigma)
    w = math.sqrt(2 * sigma ** 2 * t * L)
    a = (math.log(p.s0) + p.mu * t + 0.5 * math.log(t) - math.log(rho_const * p.c)
         + 0.5 * math.log(2 * math.pi))
    return -p.mu * t - w + a / (2 * L) * w, a
