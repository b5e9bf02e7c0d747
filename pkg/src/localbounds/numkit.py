"""Scalar machinery: surrogate functions, fixed points, Dudley's integral.

Everything here is a pure function of its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
from scipy import integrate

__all__ = [
    "NumericError",
    "SurrogateSpec",
    "FixedPointResult",
    "fixed_point",
    "fixed_point_bounded",
    "is_sub_root",
    "dudley_bound",
    "suboptimality_ratio",
    "nonparametric_rstar",
    "mp_rate_nonparametric",
    "previous_rate_nonparametric",
]

PROBE_POINTS = 4096
SUB_ROOT_RTOL = 1e-9


class NumericError(ArithmeticError):
    """A numeric routine met an input it cannot handle (non-monotone, non-finite, ...)."""


@dataclass(frozen=True)
class FixedPointResult:
    r_star: float
    iterations: int
    bracket_width: float


@dataclass(frozen=True)
class SurrogateSpec:
    """A surrogate ``psi(r; delta)`` for the localized uniform deviation.

    ``kind`` is one of ``nonparametric``, ``vc``, ``parametric``,
    ``rademacher`` or ``user``.  Arguments larger than ``cap_R`` are clipped
    to ``cap_R`` so the surrogate is bounded.
    """

    kind: str
    n: int = 1
    rho: float | None = None
    d: int | None = None
    B: float = 1.0
    cap_R: float | None = None
    constant_c: float = 1.0
    empirical: Any = None
    table: Mapping[float, tuple[Any, Any]] | None = field(default=None, hash=False)

    def __post_init__(self) -> None:
        if self.kind not in {"nonparametric", "vc", "parametric", "rademacher", "user"}:
            raise ValueError(f"unknown surrogate kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("n must be a positive integer")
        if self.B <= 0 or self.constant_c <= 0:
            raise ValueError("B and constant_c must be positive")
        if self.kind == "nonparametric" and not (self.rho is not None and 0 < self.rho < 1):
            raise ValueError("nonparametric surrogate needs rho in (0, 1)")
        if self.kind in {"vc", "parametric"} and not (self.d is not None and self.d >= 1):
            raise ValueError(f"{self.kind} surrogate needs a positive integer d")
        if self.kind == "rademacher" and self.empirical is None:
            raise ValueError("rademacher surrogate needs an EmpiricalPsi")
        if self.kind == "user" and not self.table:
            raise ValueError("user surrogate needs a table")
        if self.cap_R is None:
            cap = self.empirical.cap_R if self.kind == "rademacher" else 4.0 * self.B**2
            object.__setattr__(self, "cap_R", float(cap))
        if self.cap_R <= 0:
            raise ValueError("cap_R must be positive")

    @classmethod
    def nonparametric(cls, rho: float, n: int, B: float = 1.0, **kw) -> "SurrogateSpec":
        return cls("nonparametric", n=n, rho=rho, B=B, **kw)

    @classmethod
    def vc(cls, d: int, n: int, B: float = 1.0, **kw) -> "SurrogateSpec":
        return cls("vc", n=n, d=d, B=B, **kw)

    @classmethod
    def parametric(cls, d: int, n: int, B: float = 1.0, **kw) -> "SurrogateSpec":
        return cls("parametric", n=n, d=d, B=B, **kw)

    @classmethod
    def from_empirical(cls, psi, **kw) -> "SurrogateSpec":
        return cls("rademacher", n=psi.n, B=psi.B, empirical=psi, **kw)

    def evaluate(self, r: float, delta: float) -> float:
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if r < 0:
            raise ValueError("r must be non-negative")
        r = min(float(r), self.cap_R)
        c, n = self.constant_c, self.n
        if self.kind == "nonparametric":
            return c * math.sqrt(r ** (1.0 - self.rho) / n)
        if self.kind == "parametric":
            return c * math.sqrt(self.d * r / n)
        if self.kind == "vc":
            # log(8B^2/r) makes the raw form non-monotone; freeze the
            # first term past its maximiser and the second at r = B^2/n
            B2 = self.B**2
            rr = min(r, 8.0 * B2 / math.e)
            first = math.sqrt(self.d * rr / n * math.log(8.0 * B2 / rr)) if rr > 0 else 0.0
            second = self.B * self.d / n * math.log(8.0 * n)
            return c * max(first, second)
        if self.kind == "rademacher":
            return c * self.empirical.evaluate(r, delta)
        return c * _table_eval(self.table, r, delta)

    def __call__(self, r: float, delta: float) -> float:
        return self.evaluate(r, delta)


def _table_eval(table, r, delta):
    def at(key):
        rs, vs = (np.asarray(a, float) for a in table[key])
        return float(np.interp(r, rs, np.maximum.accumulate(vs)))

    keys = sorted(table)
    if delta in table:
        return at(delta)
    # linear in log(1/delta) between neighbouring tabulated levels
    xs = [math.log(1 / k) for k in keys]
    x = math.log(1 / delta)
    order = np.argsort(xs)
    xs_sorted = [xs[i] for i in order]
    vals = [at(keys[i]) for i in order]
    return float(np.interp(x, xs_sorted, vals))


def fixed_point(phi: Callable[[float], float], domain_hi: float, tol: float = 1e-12) -> FixedPointResult:
    """Largest ``r`` in ``[0, domain_hi]`` with ``r <= phi(r)``.

    ``phi`` is probed on a log-spaced grid first, so step discontinuities do
    not derail the bisection.  Returns ``r_star = 0`` when no probe above
    ``tol`` satisfies the inequality.
    """
    if not domain_hi > 0:
        raise ValueError("domain_hi must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if domain_hi <= tol:
        v = float(phi(domain_hi))
        return FixedPointResult(domain_hi if domain_hi <= v else 0.0, 0, 0.0)

    grid = np.geomspace(tol, domain_hi, PROBE_POINTS)
    grid[-1] = domain_hi
    vals = np.array([float(phi(r)) for r in grid])
    if not np.all(np.isfinite(vals)):
        raise NumericError("phi returned non-finite values on the probe grid")
    if np.any(vals < 0):
        raise NumericError("phi must be non-negative")
    drops = vals[:-1] - vals[1:]
    slack = np.maximum(tol, SUB_ROOT_RTOL * np.abs(vals[:-1]))
    if np.any(drops > slack):
        i = int(np.argmax(drops - slack))
        raise NumericError(f"phi is not non-decreasing near r={grid[i]:.6g}")

    ok = grid <= vals
    if not ok.any():
        return FixedPointResult(0.0, 0, 0.0)
    i = int(np.flatnonzero(ok)[-1])
    if i == len(grid) - 1:
        return FixedPointResult(float(domain_hi), 0, 0.0)

    lo, hi = float(grid[i]), float(grid[i + 1])
    it = 0
    while hi - lo > tol and it < 200:
        mid = 0.5 * (lo + hi)
        if mid <= phi(mid):
            lo = mid
        else:
            hi = mid
        it += 1
    return FixedPointResult(lo, it, hi - lo)


def fixed_point_bounded(phi: Callable[[float], float], cap: float, tol: float = 1e-12) -> FixedPointResult:
    """Fixed point of a ``phi`` that is constant on ``[cap, inf)``.

    Past ``cap`` the condition ``r <= phi(r)`` reads ``r <= phi(cap)``, so the
    search range ``[0, max(cap, phi(cap))]`` always contains the answer.
    """
    return fixed_point(phi, max(cap, float(phi(cap))), tol)


def is_sub_root(phi: Callable[[float], float], grid) -> bool:
    """True iff ``phi(r)/sqrt(r)`` is non-increasing over ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing and positive")
    ratio = np.array([float(phi(r)) for r in grid]) / np.sqrt(grid)
    return bool(np.all(ratio[1:] <= ratio[:-1] * (1 + SUB_ROOT_RTOL) + 1e-300))


def _golden_min(f, a, b, tol):
    inv = (math.sqrt(5) - 1) / 2
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def dudley_bound(entropy: Callable[[float], float], r: float, n: int) -> float:
    """``inf_{e0} 4 e0 + 12 * int_{e0}^{sqrt r} sqrt(entropy(e)/n) de``.

    The objective is convex in ``e0`` for a non-increasing entropy, so a
    golden-section search over ``[0, sqrt r]`` plus the two endpoints finds
    the infimum.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    if n < 1:
        raise ValueError("n must be a positive integer")
    top = math.sqrt(r)

    def integrand(e):
        h = float(entropy(e))
        if not math.isfinite(h) or h < 0:
            raise NumericError(f"entropy({e:.3g}) = {h} is negative or non-finite")
        return math.sqrt(h / n)

    def objective(e0):
        if e0 >= top:
            return 4.0 * top
        val, _ = integrate.quad(integrand, e0, top, epsrel=1e-6, limit=200)
        return 4.0 * e0 + 12.0 * val

    candidates = [objective(0.0), objective(top)]
    _, fmid = _golden_min(objective, 0.0, top, 1e-8 * max(top, 1e-300))
    candidates.append(fmid)
    return max(0.0, min(candidates))


def suboptimality_ratio(V: float, B: float, n: int, rho: float) -> float:
    """Gap between the previous and the localized variance-dependent rates
    for a non-parametric class of entropy exponent ``rho``."""
    if V < 0 or not math.isfinite(V):
        raise ValueError("V must be finite and non-negative")
    if B <= 0 or n < 1:
        raise ValueError("B must be positive and n >= 1")
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    return max(1.0, (V * (n / B**2) ** (1.0 / (1.0 + rho))) ** (rho / 2.0))


def nonparametric_rstar(B: float, n: int, rho: float) -> float:
    """Order of the fixed point for polynomial entropy, constants set to one."""
    return B ** (2.0 / (1.0 + rho)) * n ** (-1.0 / (1.0 + rho))


def mp_rate_nonparametric(V: float, B: float, n: int, rho: float) -> float:
    """Localized variance-dependent rate ``V^{(1-rho)/2} n^{-1/2} v r*/B``."""
    return max(V ** ((1.0 - rho) / 2.0) * n**-0.5, nonparametric_rstar(B, n, rho) / B)


def previous_rate_nonparametric(V: float, B: float, n: int, rho: float) -> float:
    """Sub-root-based rate ``sqrt(V) B^{-rho/(1+rho)} n^{-1/(2+2rho)} v r*/B``."""
    first = math.sqrt(V) * B ** (-rho / (1.0 + rho)) * n ** (-1.0 / (2.0 + 2.0 * rho))
    return max(first, nonparametric_rstar(B, n, rho) / B)
