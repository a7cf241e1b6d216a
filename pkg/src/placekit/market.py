"""Shared value types: market parameters, execution probabilities, solutions."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator


@dataclass(frozen=True)
class MarketParams:
    """Drift, volatility, initial best ask, rebate and fee.

    Units: prices in currency, time in the unit used for mu and sigma
    (days for the placement analytics, seconds when coupled to queue rates).
    """
    mu: float
    sigma: float
    s0: float = 1.0
    rebate: float = 0.0
    fee: float = 0.0

    def __post_init__(self):
        for name in ("mu", "sigma", "s0", "rebate", "fee"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.s0 <= 0:
            raise ValueError("s0 must be positive")
        if self.rebate < 0 or self.fee < 0:
            raise ValueError("rebate and fee must be nonnegative")

    @property
    def c(self) -> float:
        """Non-execution penalty r + f."""
        return self.rebate + self.fee

    def replace(self, **kw) -> "MarketParams":
        d = dict(mu=self.mu, sigma=self.sigma, s0=self.s0,
                 rebate=self.rebate, fee=self.fee)
        d.update(kw)
        return MarketParams(**d)


class BoundaryCase(str, enum.Enum):
    INTERIOR = "interior"
    TRIVIAL_ZERO = "trivial_zero"
    UNBOUNDED = "unbounded_flag"


@dataclass
class PlacementSolution:
    depth: float            # 0.0 encodes the trivial 0+ placement
    cost: float
    boundary_case: BoundaryCase
    iterations: int = 0
    bracket_used: object = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def is_trivial(self) -> bool:
        return self.boundary_case is BoundaryCase.TRIVIAL_ZERO


@dataclass
class GbmPlacement:
    y_star: float
    price_level: float
    cost: float
    boundary_case: BoundaryCase
    iterations: int = 0
    bracket_used: object = None
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------- rho(x, t)

class ExecProbability:
    """Execution probability rho(depth, t) with its partial derivatives.

    Evaluating at depth 0 returns the 0+ limit.  Subclasses implement
    ``_eval(x, t, nx, nt)`` returning the (nx, nt)-th mixed partial.
    """
    kind = "abstract"

    def _eval(self, x, t, nx, nt):
        raise NotImplementedError

    def _call(self, x, t, nx, nt):
        x = np.asarray(x, dtype=float)
        out = np.asarray(self._eval(x, float(t), nx, nt), dtype=float)
        out = np.broadcast_to(out, x.shape)
        return out if out.ndim else float(out)

    def value(self, x, t):
        return self._call(x, t, 0, 0)

    def dx(self, x, t):
        return self._call(x, t, 1, 0)

    def dxx(self, x, t):
        return self._call(x, t, 2, 0)

    def dt(self, x, t):
        return self._call(x, t, 0, 1)

    def dtx(self, x, t):
        return self._call(x, t, 1, 1)

    @property
    def is_constant(self) -> bool:
        return False

    def rho0(self, t=None) -> float:
        """The 0+ limit; t=None asks for the time-invariant value."""
        return float(self.value(0.0, math.inf if t is None else t))

    def in_log_depth(self, s0: float) -> "ExecProbability":
        """View of this probability as a function of log-depth y.

        Depth x relates to y through x = s0 (1 - e^{-y}).
        """
        if self.is_constant:
            return self
        return _LogDepthView(self, s0)


class ConstantRho(ExecProbability):
    kind = "constant"

    def __init__(self, value: float):
        value = float(value)
        if not 0.0 <= value <= 1.0:
            raise ValueError("constant rho must lie in [0, 1]")
        self.const = value

    def _eval(self, x, t, nx, nt):
        return self.const if (nx == 0 and nt == 0) else 0.0

    @property
    def is_constant(self) -> bool:
        return True

    def rho0(self, t=None) -> float:
        return self.const

    def __repr__(self):
        return f"ConstantRho({self.const})"


class TabulatedRho(ExecProbability):
    """Monotone cubic (PCHIP) tensor interpolation of a rho table.

    ``depths`` and ``times`` are increasing grids, ``values[i, j]`` is rho at
    (times[i], depths[j]).  Outside the grid the table is clamped (partials
    vanish there).  A single time row gives a time-invariant table.  The
    first depth column is the 0+ value.
    """
    kind = "tabulated"

    def __init__(self, depths, times, values):
        self.depths = np.asarray(depths, dtype=float)
        self.times = np.atleast_1d(np.asarray(times, dtype=float))
        vals = np.asarray(values, dtype=float).reshape(len(self.times), len(self.depths))
        if len(self.depths) < 2:
            raise ValueError("need at least two depth nodes")
        if np.any(np.diff(self.depths) <= 0) or np.any(np.diff(self.times) <= 0):
            raise ValueError("grids must be strictly increasing")
        if np.any(vals < 0) or np.any(vals > 1) or not np.all(np.isfinite(vals)):
            raise ValueError("tabulated rho must lie in [0, 1]")
        self.values = vals
        self._rows = [PchipInterpolator(self.depths, row) for row in vals]

    def _eval(self, x, t, nx, nt):
        xs = np.atleast_1d(x)
        inside = (xs >= self.depths[0]) & (xs <= self.depths[-1])
        xc = np.clip(xs, self.depths[0], self.depths[-1])
        rows = np.array([r(xc, nu=nx) for r in self._rows])
        if nx > 0:
            rows = np.where(inside[None, :], rows, 0.0)
        if len(self.times) == 1:
            out = rows[0] if nt == 0 else np.zeros_like(xc)
        else:
            tc = min(max(t, self.times[0]), self.times[-1])
            if nt > 0 and not (self.times[0] <= t <= self.times[-1]):
                out = np.zeros_like(xc)
            elif len(self.times) == 2:
                # linear in t with only two rows
                w = (tc - self.times[0]) / (self.times[1] - self.times[0])
                if nt == 0:
                    out = (1 - w) * rows[0] + w * rows[1]
                else:
                    out = (rows[1] - rows[0]) / (self.times[1] - self.times[0])
            else:
                out = PchipInterpolator(self.times, rows, axis=0)(tc, nu=nt)
        if nx == 0 and nt == 0:
            out = np.clip(out, 0.0, 1.0)
        return out.reshape(np.shape(x))

    def __repr__(self):
        return f"TabulatedRho({len(self.times)}x{len(self.depths)})"


class _LogDepthView(ExecProbability):
    """rho~(y, t) = rho(s0 (1 - e^{-y}), t) with chain-rule partials."""

    def __init__(self, base: ExecProbability, s0: float):
        self.base = base
        self.s0 = float(s0)
        self.kind = base.kind

    def _eval(self, y, t, nx, nt):
        x = self.s0 * (1.0 - np.exp(-y))
        g1 = self.s0 * np.exp(-y)      # dx/dy
        if nx == 0:
            return self.base._call(x, t, 0, nt)
        if nx == 1:
            return self.base._call(x, t, 1, nt) * g1
        if nx == 2 and nt == 0:
            return self.base._call(x, t, 2, 0) * g1 * g1 - self.base._call(x, t, 1, 0) * g1
        raise NotImplementedError("partial not available")

    def rho0(self, t=None) -> float:
        return self.base.rho0(t)

    def in_log_depth(self, s0):
        raise ValueError("already a log-depth view")
