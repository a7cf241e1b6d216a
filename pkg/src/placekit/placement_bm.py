"""Optimal limit-order placement when the best ask follows a Brownian motion
with drift (Bachelier model).

Depth x is measured in price units below the initial best ask S0; the
order is placed at S0 - x.  ``x = 0`` denotes the 0+ limit throughout.
"""
from __future__ import annotations

import math

import numpy as np

from .market import BoundaryCase, ExecProbability, MarketParams, PlacementSolution
from .numerics import (NumericsError, RootBracket, find_root, log_normal_cdf,
                       mills_ratio, normal_cdf, normal_pdf)


def _check(t, x=None):
    if not (math.isfinite(t) and t > 0):
        raise ValueError(f"horizon t must be finite and positive, got {t}")
    if x is not None:
        xa = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(xa)) or np.any(xa < 0):
            raise ValueError("depth must be finite and nonnegative")


def standardized(p: MarketParams, x, t):
    """(alpha_t(x), beta_t(x), a_t) with alpha + beta = 2 a."""
    s = p.sigma * math.sqrt(t)
    x = np.asarray(x, dtype=float)
    return (x + p.mu * t) / s, (-x + p.mu * t) / s, p.mu * math.sqrt(t) / p.sigma


def _exp_n(p, x, beta):
    """e^{-2 x mu / sigma^2} N(beta), computed in log space."""
    return np.exp(-2.0 * x * p.mu / p.sigma ** 2 + log_normal_cdf(beta))


def hit_probability_bm(p: MarketParams, x, t):
    """P(min_{s<=t} S_s - S0 <= -x)."""
    _check(t, x)
    alpha, beta, _ = standardized(p, x, t)
    return normal_cdf(-alpha) + _exp_n(p, np.asarray(x, dtype=float), beta)


def cost_bm(p: MarketParams, rho: ExecProbability, x, t):
    """Expected cost C(x, t) of the placement strategy."""
    _check(t, x)
    x = np.asarray(x, dtype=float)
    alpha, beta, _ = standardized(p, x, t)
    c = p.c
    r = rho.value(x, t)
    en = _exp_n(p, x, beta)
    prob = normal_cdf(-alpha) + en
    out = prob * (-x - c * r) + p.mu * t * normal_cdf(alpha) + (2 * x - p.mu * t) * en + p.fee
    return out if np.ndim(out) else float(out)


def dC_dx_bm(p: MarketParams, rho: ExecProbability, x, t):
    _check(t, x)
    x = np.asarray(x, dtype=float)
    mu, sig, c = p.mu, p.sigma, p.c
    st = sig * math.sqrt(t)
    alpha, beta, _ = standardized(p, x, t)
    r, rx = rho.value(x, t), rho.dx(x, t)
    en = _exp_n(p, x, beta)
    out = (2 * normal_pdf(alpha) * (c * r + mu * t) / st
           + (2 / sig ** 2) * en * (-mu * (x - mu * t) + mu * c * r + sig ** 2 / 2)
           - normal_cdf(-alpha)
           - c * rx * (normal_cdf(-alpha) + en))
    return out if np.ndim(out) else float(out)


def dC_dx_bm_scaled(p: MarketParams, rho: ExecProbability, x, t):
    """dC/dx divided by phi(alpha_t(x)) > 0.

    Same sign as dC/dx but free of the Gaussian underflow that makes the
    raw derivative vanish numerically at large depths.
    """
    x = np.asarray(x, dtype=float)
    mu, sig, c = p.mu, p.sigma, p.c
    st = sig * math.sqrt(t)
    alpha, beta, _ = standardized(p, x, t)
    r, rx = rho.value(x, t), rho.dx(x, t)
    ra, rb = mills_ratio(alpha), mills_ratio(-beta)
    out = (2 * (c * r + mu * t) / st
           + (2 / sig ** 2) * rb * (-mu * (x - mu * t) + mu * c * r + sig ** 2 / 2)
           - ra - c * rx * (ra + rb))
    return out if np.ndim(out) else float(out)


def d2C_dx2_bm(p: MarketParams, rho: ExecProbability, x, t):
    _check(t, x)
    x = np.asarray(x, dtype=float)
    mu, sig, c = p.mu, p.sigma, p.c
    alpha, beta, _ = standardized(p, x, t)
    r, rx, rxx = rho.value(x, t), rho.dx(x, t), rho.dxx(x, t)
    en = _exp_n(p, x, beta)
    phi = normal_pdf(alpha)
    prob = normal_cdf(-alpha) + en
    sq = math.sqrt(t)
    out = (-phi / (sig ** 3 * t * sq) * (2 * c * r * x + 4 * mu * t * (c * r + mu * t))
           + (4 * mu * en / sig ** 4) * (mu * (x - mu * t) - mu * c * r - sig ** 2)
           - c * rxx * prob
           + (4 * c * rx / (sig ** 2 * sq)) * (sig * phi + mu * sq * en))
    return out if np.ndim(out) else float(out)


def _psi(a):
    return normal_pdf(a) + a * normal_cdf(a)


def dC_dx_bm_at0(p: MarketParams, rho: ExecProbability, t: float) -> float:
    """Closed form of dC/dx at the 0+ boundary."""
    _check(t)
    mu, sig, c = p.mu, p.sigma, p.c
    a = mu * math.sqrt(t) / sig
    r, rx = rho.value(0.0, t), rho.dx(0.0, t)
    return (_psi(a) * (2 / sig) * (c * r / math.sqrt(t) + mu * math.sqrt(t))
            + 2 * normal_cdf(a) - 1 - c * rx)


def d2C_dtdx_bm_at0(p: MarketParams, rho: ExecProbability, t: float) -> float:
    _check(t)
    mu, sig, c = p.mu, p.sigma, p.c
    sq = math.sqrt(t)
    a = mu * sq / sig
    r, rt, rtx = rho.value(0.0, t), rho.dt(0.0, t), rho.dtx(0.0, t)
    return (-normal_pdf(a) * c * r / (sig * t * sq)
            + (2 * mu / (sig * sq)) * _psi(a)
            + _psi(a) * (2 * c / (sig * sq)) * rt
            - c * rtx)


def d2C_dx2_bm_at0(p: MarketParams, rho: ExecProbability, t: float) -> float:
    _check(t)
    mu, sig, c = p.mu, p.sigma, p.c
    sq = math.sqrt(t)
    a = mu * sq / sig
    r, rx, rxx = rho.value(0.0, t), rho.dx(0.0, t), rho.dxx(0.0, t)
    return (-_psi(a) * (4 * mu * (c * r + mu * t) / (sig ** 3 * sq) - 4 * c * rx / (sig * sq))
            - 4 * mu * normal_cdf(a) / sig ** 2
            - c * rxx)


# ---------------------------------------------------------------- large t

def theta0(p: MarketParams, rho_const: float) -> float:
    if p.mu >= 0:
        raise ValueError("theta0 requires mu < 0")
    cr = rho_const * p.c
    if cr <= 0:
        raise ValueError("theta0 requires rho (r+f) > 0")
    return math.sqrt(1.0 - 2.0 * p.sigma ** 2 / (p.mu * cr))


def xstar_bounds_large_t(p: MarketParams, rho_const: float, t: float):
    """(lower, upper, valid) bounds on x*(t); valid flags the lower-bound window."""
    th = theta0(p, rho_const)
    mu, sig = p.mu, p.sigma
    lower = -sig * math.sqrt(t) - mu * t * th
    upper = -mu * th * t
    t_min = max(rho_const * p.c / (-mu), sig ** 2 / (mu ** 2 * (th - 1) ** 2))
    return lower, upper, t > t_min


def theta1_large_t(p: MarketParams, rho_const: float, with_terms: bool = False):
    """Second-order large-horizon coefficient theta1.

    t (x*(t)^2 / t^2 - mu^2 theta0^2) -> theta1 as t grows.
    """
    th = theta0(p, rho_const)
    mu, sig = p.mu, p.sigma
    cr = rho_const * p.c
    pref = sig ** 4 / (2 * cr * abs(mu) * th)
    terms = (-6 * (th - 1) / (th + 1) ** 2,
             (1 + 2 * mu * cr / sig ** 2) * (th - 1) / (th + 1),
             -(th + 1) ** 2 / (th - 1) ** 2)
    val = pref * sum(terms)
    if with_terms:
        return val, tuple(pref * v for v in terms)
    return val


# ---------------------------------------------------------------- solvers

def _search_ceiling(p, rho, t):
    if rho.is_constant and p.mu < 0 and rho.rho0() * p.c > 0:
        return 10 * (-p.mu * t * theta0(p, rho.rho0()) + p.sigma * math.sqrt(t))
    return 10 * (abs(p.mu) * t + 6 * p.sigma * math.sqrt(t))


def optimal_x_bm(p: MarketParams, rho: ExecProbability, t: float,
                 tol: float = 1e-10, ceiling: float | None = None) -> PlacementSolution:
    """Minimise C(., t) over depths in (0, inf)."""
    _check(t)
    diag = {}
    d0 = dC_dx_bm_at0(p, rho, t)
    diag["dC_dx_at0"] = d0
    c0 = cost_bm(p, rho, 0.0, t)
    if d0 >= 0:
        if d0 == 0:
            diag["note"] = "interior-degenerate"
        return PlacementSolution(0.0, c0, BoundaryCase.TRIVIAL_ZERO, 0, None, diag)

    def g(x):
        return dC_dx_bm_scaled(p, rho, x, t)

    ceiling = ceiling or _search_ceiling(p, rho, t)
    diag["ceiling"] = ceiling
    if rho.is_constant and p.mu < 0 and rho.rho0() * p.c > 0:
        hi = 2 * (-p.mu * theta0(p, rho.rho0()) * t)
    else:
        hi = p.sigma * math.sqrt(t)
    lo = 0.0
    hi = min(hi, ceiling)
    while g(hi) < 0:
        lo = hi
        if hi >= ceiling:
            diag["note"] = "no sign change below ceiling"
            return PlacementSolution(math.inf, p.mu * t + p.fee, BoundaryCase.UNBOUNDED,
                                     0, None, diag)
        hi = min(2 * hi, ceiling)
    bracket = RootBracket(lo, hi, g(lo), g(hi))
    x, it = find_root(g, bracket, tol)
    d2 = d2C_dx2_bm(p, rho, x, t)
    diag["d2C_dx2"] = d2
    diag["second_order_ok"] = bool(d2 >= -1e-12)
    cost = cost_bm(p, rho, x, t)
    if cost > c0:
        # interior stationary point worse than 0+ (possible for exotic rho)
        diag["note"] = "interior stationary point dominated by 0+"
        return PlacementSolution(0.0, c0, BoundaryCase.TRIVIAL_ZERO, it, bracket, diag)
    return PlacementSolution(x, cost, BoundaryCase.INTERIOR, it, bracket, diag)


def critical_time_bm(p: MarketParams, rho: ExecProbability, tol: float = 1e-12):
    """(t0, bar_t0): the smallest horizon with dC/dx(0+, t) = 0 and its bound."""
    if p.mu >= 0:
        raise ValueError("critical time requires mu < 0")
    r0 = rho.rho0()
    if r0 * p.c <= 0:
        raise ValueError("critical time requires rho(0+) (r+f) > 0")
    bar = r0 * p.c / (2 * abs(p.mu))

    def g(t):
        return dC_dx_bm_at0(p, rho, t)

    lo = bar * 1e-12
    g_lo, g_hi = g(lo), g(bar)
    if not (g_lo > 0 and g_hi <= 0):
        raise NumericsError(
            f"dC/dx(0+, t) has no sign change on ({lo:.3g}, {bar:.3g}]: "
            f"values {g_lo:.3g}, {g_hi:.3g}; standing assumptions on rho violated")
    t0, _ = find_root(g, RootBracket(lo, bar, g_lo, g_hi), tol * bar)
    assert 0 < t0 <= bar
    return t0, bar


def _third_partials(p, rho, t0, scale_x, scale_t):
    hx = 1e-5 * scale_x
    ht = 1e-5 * scale_t
    f0 = d2C_dx2_bm_at0(p, rho, t0)
    f1 = d2C_dx2_bm(p, rho, hx, t0)
    f2 = d2C_dx2_bm(p, rho, 2 * hx, t0)
    cxxx = (-3 * f0 + 4 * f1 - f2) / (2 * hx)
    ctxx = (d2C_dx2_bm_at0(p, rho, t0 + ht) - d2C_dx2_bm_at0(p, rho, t0 - ht)) / (2 * ht)
    cxtt = (d2C_dtdx_bm_at0(p, rho, t0 + ht) - d2C_dtdx_bm_at0(p, rho, t0 - ht)) / (2 * ht)
    return cxxx, ctxx, cxtt


def expansion_coefficients_bm(p, rho, base_t):
    cxx = d2C_dx2_bm_at0(p, rho, base_t)
    if cxx <= 0:
        raise NumericsError(f"d2C/dx2(0, t0) = {cxx:.3g} is not positive")
    ctx = d2C_dtdx_bm_at0(p, rho, base_t)
    k1 = -ctx / cxx
    cxxx, ctxx, cxtt = _third_partials(p, rho, base_t, p.sigma * math.sqrt(base_t), base_t)
    k2 = -(0.5 * cxxx * k1 ** 2 + ctxx * k1 + 0.5 * cxtt) / cxx
    return k1, k2


def approx_xstar_near_t0(p: MarketParams, rho: ExecProbability, t: float,
                         use_bar_t0: bool = False):
    """(first_order, second_order, kappa1, kappa2) expansion of x*(t) near t0.

    With use_bar_t0 the expansion is taken around the explicit bound bar_t0
    instead of the exact critical time.
    """
    t0, bar = critical_time_bm(p, rho)
    base = bar if use_bar_t0 else t0
    k1, k2 = expansion_coefficients_bm(p, rho, base)
    if k1 <= 0:
        raise NumericsError(f"kappa1 = {k1:.3g} is not positive")
    d = t - base
    return k1 * d, k1 * d + k2 * d * d, k1, k2
