"""Special functions, quadrature, root finding and finite differences.

Everything here is a pure function of its arguments.  The normal helpers
accept scalars or numpy arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)
INV_SQRT2PI = 1.0 / SQRT2PI
LOG_SQRT2PI = 0.5 * math.log(2.0 * math.pi)


class NumericsError(ArithmeticError):
    """Raised when a numerical routine cannot deliver its contract."""


class IntegrationError(NumericsError):
    def __init__(self, message, estimate=float("nan"), error=float("nan")):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


# ---------------------------------------------------------------- normal law

def normal_pdf(z):
    z = np.asarray(z, dtype=float)
    out = INV_SQRT2PI * np.exp(-0.5 * z * z)
    return out if out.ndim else float(out)


def normal_cdf(z):
    # erfc keeps full relative accuracy in the lower tail
    z = np.asarray(z, dtype=float)
    out = 0.5 * special.erfc(-z / SQRT2)
    return out if out.ndim else float(out)


def normal_sf(z):
    z = np.asarray(z, dtype=float)
    out = 0.5 * special.erfc(z / SQRT2)
    return out if out.ndim else float(out)


def log_normal_cdf(z):
    z = np.asarray(z, dtype=float)
    out = special.log_ndtr(z)
    return out if out.ndim else float(out)


def log_normal_pdf(z):
    z = np.asarray(z, dtype=float)
    out = -0.5 * z * z - LOG_SQRT2PI
    return out if out.ndim else float(out)


def mills_ratio(z):
    """R(z) = N(-z) / phi(z), finite for every z that does not overflow.

    Uses the scaled complementary error function so that the upper tail
    keeps its precision (R(z) ~ 1/z).
    """
    z = np.asarray(z, dtype=float)
    out = math.sqrt(math.pi / 2.0) * special.erfcx(z / SQRT2)
    return out if out.ndim else float(out)


def mills_bounds_check(z: float):
    """Return (lower, upper, value) for the Mills-ratio sandwich at z >= 0.

    lower = phi(z)(1/z - 1/z^3), upper = phi(z)/z, value = N(-z).  The
    inequality lower <= phi(z) z/(z^2+1) <= value <= upper is asserted for
    z > 0; at z = 0 the bracket is vacuous (lower=-inf, upper=+inf).
    """
    z = float(z)
    if not math.isfinite(z) or z < 0:
        raise ValueError("mills_bounds_check needs a finite z >= 0")
    value = normal_sf(z)
    if z == 0.0:
        return -math.inf, math.inf, value
    phi = normal_pdf(z)
    lower = phi * (1.0 / z - 1.0 / z ** 3)
    upper = phi / z
    middle = phi * z / (z * z + 1.0)
    # a few ulps of slack: the inequalities become equalities asymptotically
    slack = 1e-13 * value
    if not (lower <= middle + slack and middle <= value + slack and value <= upper + slack):
        raise NumericsError(f"Mills sandwich violated at z={z}")
    return lower, upper, value


# ---------------------------------------------------------------- Bessel I

def bessel_i(order: int, z: float, scaled: bool = False) -> float:
    """Modified Bessel function I_order(z); e^{-z} I_order(z) if scaled."""
    if order < 0 or int(order) != order:
        raise ValueError("order must be a nonnegative integer")
    if z < 0 or not math.isfinite(z):
        raise ValueError("z must be finite and >= 0")
    if scaled:
        return float(special.ive(order, z))
    val = float(special.iv(order, z))
    if math.isinf(val):
        raise OverflowError(f"I_{order}({z}) overflows; request scaled=True")
    return val


def log_bessel_i(order, z):
    """log I_order(z) via the scaled variant, vectorised over z > 0."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(special.ive(order, z)) + z
    return out


# ---------------------------------------------------------------- quadrature

@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_subdivisions: int = 200

    def __post_init__(self):
        if not self.abs_tol > 0 or not self.rel_tol > 0:
            raise ValueError("tolerances must be positive")
        if int(self.max_subdivisions) < 1:
            raise ValueError("max_subdivisions must be >= 1")


# Kronrod 15-point abscissae (positive half) and weights, Gauss 7-point weights
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
# full 15-point node set on [-1, 1]
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KW = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GW = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod abscissae (1, 3, 5) plus the centre
for _k, _w in zip((1, 3, 5), _WG[:3]):
    _GW[_k] = _w
    _GW[14 - _k] = _w
_GW[7] = _WG[3]


def _gk15(f, a, b):
    c = 0.5 * (a + b)
    h = 0.5 * (b - a)
    try:
        fx = np.asarray(f(c + h * _NODES), dtype=float)
    except TypeError:
        # scalar-only integrand
        fx = np.empty(0)
    if fx.shape != _NODES.shape:
        fx = np.array([f(v) for v in c + h * _NODES], dtype=float)
    k = h * float(fx @ _KW)
    g = h * float(fx @ _GW)
    return k, abs(k - g)


def integrate(f, a: float, b: float, spec: QuadratureSpec | None = None,
              full_output: bool = False):
    """Adaptive Gauss-Kronrod (G7/K15) quadrature with global bisection.

    f is called with a numpy array of 15 nodes (falls back to scalar calls
    if it returns something of the wrong shape).  b may be +inf, in which
    case s = a + u/(1-u) maps the half line onto [0, 1).
    """
    spec = spec or QuadratureSpec()
    if not (a < b):
        raise ValueError("integrate requires a < b")
    if math.isinf(b):
        if math.isinf(a):
            raise ValueError("only the upper limit may be infinite")
        g = f

        def f(u, _g=g, _a=a):
            u = np.asarray(u, dtype=float)
            w = 1.0 - u
            return np.asarray(_g(_a + u / w), dtype=float) / (w * w)

        a, b = 0.0, 1.0

    k, e = _gk15(f, a, b)
    panels = [(e, a, b, k)]
    total, err = k, e
    n = 1
    while err > max(spec.abs_tol, spec.rel_tol * abs(total)):
        if n >= spec.max_subdivisions:
            if full_output:
                return total, err
            raise IntegrationError(
                f"no convergence after {n} subdivisions (estimate {total:.6g}, error {err:.3g})",
                total, err)
        # bisect the panel with the largest error
        idx = max(range(len(panels)), key=lambda j: panels[j][0])
        pe, pa, pb, pk = panels.pop(idx)
        m = 0.5 * (pa + pb)
        k1, e1 = _gk15(f, pa, m)
        k2, e2 = _gk15(f, m, pb)
        panels.append((e1, pa, m, k1))
        panels.append((e2, m, pb, k2))
        total = sum(p[3] for p in panels)
        err = sum(p[0] for p in panels)
        n += 1
        if not math.isfinite(total):
            raise IntegrationError("integrand produced a non-finite value", total, err)
    if full_output:
        return total, err
    return total


def gauss_legendre_panels(edges, order: int = 8):
    """Nodes and weights of composite Gauss-Legendre rule on the given edges."""
    edges = np.asarray(edges, dtype=float)
    xg, wg = np.polynomial.legendre.leggauss(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo) + half * xg[None, :])
    weights = half * wg[None, :]
    return nodes, weights


# ---------------------------------------------------------------- roots

@dataclass(frozen=True)
class RootBracket:
    lo: float
    hi: float
    f_lo: float
    f_hi: float

    def __post_init__(self):
        if not (self.lo < self.hi):
            raise ValueError(f"invalid bracket: lo={self.lo} >= hi={self.hi}")
        if not (self.f_lo * self.f_hi <= 0):
            raise ValueError("invalid bracket: no sign change")

    @classmethod
    def of(cls, f, lo, hi):
        return cls(lo, hi, f(lo), f(hi))


def find_root(f, bracket: RootBracket, tol: float = 1e-10, maxiter: int = 500):
    """Bracketed root.  Returns (root, iterations)."""
    if bracket.f_lo == 0:
        return bracket.lo, 0
    if bracket.f_hi == 0:
        return bracket.hi, 0
    xtol = tol * max(1.0, abs(bracket.lo), abs(bracket.hi)) * 1e-2
    root, res = optimize.brentq(f, bracket.lo, bracket.hi, xtol=max(xtol, 1e-300),
                                rtol=4 * np.finfo(float).eps, maxiter=maxiter,
                                full_output=True, disp=False)
    if not res.converged:
        raise NumericsError(f"root finder did not converge: {res.flag}")
    return float(root), int(res.iterations)


# ---------------------------------------------------------------- derivatives

def finite_diff(f, x: float, order: int = 1, h: float = 1e-4) -> float:
    """Central difference estimate of f'(x) (order 1) or f''(x) (order 2)."""
    if h <= 0:
        raise ValueError("h must be positive")
    if order == 1:
        return (f(x + h) - f(x - h)) / (2 * h)
    if order == 2:
        return (f(x + h) - 2 * f(x) + f(x - h)) / (h * h)
    raise ValueError("order must be 1 or 2")


def richardson_diff(f, x: float, order: int = 1, h: float = 1e-3) -> float:
    """Central difference with one Richardson step (error O(h^4))."""
    d1 = finite_diff(f, x, order, h)
    d2 = finite_diff(f, x, order, h / 2)
    return (4 * d2 - d1) / 3
