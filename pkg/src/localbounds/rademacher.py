"""Localized empirical Rademacher complexity for finite classes and the
empirical surrogate built from it.

For a finite class the localized sup depends on ``r`` only through which
hypotheses fall inside the ball ``{P_n f^2 <= 2r}``.  Sorting hypotheses by
their empirical second moment turns the sup for every radius into a running
maximum, so one matrix product serves every ``r`` at once.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from . import rng as _rng
from .classes import FiniteLossProblem
from .numkit import SurrogateSpec

__all__ = [
    "EmpiricalPsi",
    "PeelingReport",
    "local_rademacher",
    "local_rademacher_profile",
    "build_psi",
    "validate_peeling",
    "peeling_trial",
]

EXACT_MAX_N = 20


def _excess(losses: np.ndarray, center_index: int) -> np.ndarray:
    losses = np.asarray(losses, dtype=float)
    if losses.ndim != 2 or losses.shape[0] == 0:
        raise ValueError("losses must be a non-empty (n, H) matrix")
    if not 0 <= center_index < losses.shape[1]:
        raise IndexError("center_index out of range")
    return losses - losses[:, [center_index]]


def _signs(n: int, mc_draws: int, seed: int, exact: bool) -> np.ndarray:
    if exact:
        if n > EXACT_MAX_N:
            raise ValueError(f"exact enumeration limited to n <= {EXACT_MAX_N}")
        return np.array(list(itertools.product((-1.0, 1.0), repeat=n)))
    if mc_draws < 1:
        raise ValueError("mc_draws must be positive")
    g = _rng.stream(seed, _rng.STREAM_SIGNS)
    return np.where(g.random((mc_draws, n)) < 0.5, -1.0, 1.0)


def local_rademacher_profile(losses, center_index: int, mc_draws: int = 200, seed: int = 0,
                             exact: bool = False):
    """Per-draw localized sups at every breakpoint.

    Returns ``(second_moments, sups)``: ``second_moments`` sorted ascending
    (length ``H``) and ``sups[j, k]`` the sup over the ``k+1`` hypotheses
    with the smallest empirical second moment, for sign draw ``j``.
    """
    F = _excess(losses, center_index)
    n = F.shape[0]
    m = np.mean(F**2, axis=0)
    order = np.argsort(m, kind="stable")
    signs = _signs(n, mc_draws, seed, exact)
    corr = signs @ F[:, order] / n
    # the center has f = 0, so every ball contains the zero function
    sups = np.maximum.accumulate(np.maximum(corr, 0.0), axis=1)
    return m[order], sups


def local_rademacher(losses, center_index: int, r: float, mc_draws: int = 200, seed: int = 0,
                     exact: bool = False, return_se: bool = False):
    """``E_sign sup_{P_n f^2 <= 2r} (1/n) sum_i sign_i f(z_i)`` over excess losses
    ``f = l(h) - l(center)``.

    ``exact=True`` averages over all ``2^n`` sign vectors instead of
    ``mc_draws`` Monte Carlo draws.
    """
    if r < 0:
        raise ValueError("r must be non-negative")
    m, sups = local_rademacher_profile(losses, center_index, mc_draws, seed, exact)
    k = int(np.searchsorted(m, 2 * r, side="right"))
    vals = sups[:, k - 1] if k > 0 else np.zeros(sups.shape[0])
    est = float(vals.mean())
    if not return_se:
        return est
    se = 0.0 if exact else float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return est, se


@dataclass(frozen=True)
class EmpiricalPsi:
    """``4 R_n{P_n f^2 <= 2r} + sqrt(2 r log(8/delta)/n) + 9 B log(8/delta)/n``.

    ``R_n`` is a step function of ``r`` with jumps at half the empirical
    second moments; it is stored exactly at those breakpoints.  With
    ``sub_root=True`` the surrogate is replaced by its least sub-root
    majorant ``sqrt(r) * sup_{s >= r} psi(s)/sqrt(s)``.
    """

    n: int
    B: float
    breakpoints: np.ndarray
    rad_values: np.ndarray
    rad_se: np.ndarray
    mc_draws: int
    sub_root: bool = False

    @property
    def cap_R(self) -> float:
        return 4.0 * self.B**2

    def rademacher(self, r: float) -> float:
        k = int(np.searchsorted(self.breakpoints, r, side="right"))
        return float(self.rad_values[k - 1]) if k > 0 else 0.0

    def _raw(self, r: float, log_term: float) -> float:
        return (4.0 * self.rademacher(r) + math.sqrt(2.0 * r * log_term / self.n)
                + 9.0 * self.B * log_term / self.n)

    def evaluate(self, r: float, delta: float) -> float:
        if not 0 < delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if r < 0:
            raise ValueError("r must be non-negative")
        r = min(float(r), self.cap_R)
        L = math.log(8.0 / delta)
        val = self._raw(r, L)
        if self.sub_root and r > 0:
            knots = self.breakpoints[(self.breakpoints > r) & (self.breakpoints < self.cap_R)]
            knots = np.append(knots, self.cap_R)
            ratios = [self._raw(s, L) / math.sqrt(s) for s in knots if s > r]
            if ratios:
                val = max(val, math.sqrt(r) * max(ratios))
        return val

    def __call__(self, r: float, delta: float) -> float:
        return self.evaluate(r, delta)

    def as_spec(self, **kw) -> SurrogateSpec:
        return SurrogateSpec.from_empirical(self, **kw)


def build_psi(losses, center_index: int, B: float, mc_draws: int = 200, seed: int = 0,
              exact: bool = False, sub_root: bool = False) -> EmpiricalPsi:
    """Empirical surrogate from the localized Rademacher profile of ``losses``."""
    if B <= 0:
        raise ValueError("B must be positive")
    m, sups = local_rademacher_profile(losses, center_index, mc_draws, seed, exact)
    means = np.maximum.accumulate(sups.mean(axis=0))
    se = sups.std(axis=0, ddof=1) / math.sqrt(sups.shape[0]) if sups.shape[0] > 1 else np.zeros_like(means)
    return EmpiricalPsi(n=np.asarray(losses).shape[0], B=float(B), breakpoints=m / 2.0,
                        rad_values=means, rad_se=se, mc_draws=sups.shape[0], sub_root=sub_root)


@dataclass(frozen=True)
class PeelingReport:
    violation_rate: float
    se: float
    trials: int
    delta: float
    r0: float
    C_r0: float

    def to_dict(self) -> dict:
        return {"violation_rate": self.violation_rate, "se": self.se, "trials": self.trials,
                "delta": self.delta, "r0": self.r0}


PsiLike = Union[SurrogateSpec, EmpiricalPsi, Callable[[float, float], float], str]


def peeling_trial(problem: FiniteLossProblem, psi: PsiLike, dprime: float, r0: float, n: int,
                  seed: int, trial: int, mc_draws: int = 100) -> bool:
    """Whether one dataset draw breaks the uniform localized inequality at level ``dprime``."""
    star = problem.optimal_index
    risks = problem.risks()
    pop_gap = risks - risks[star]
    radius = np.maximum(2.0 * problem.excess_second_moments(star), r0)
    L = problem.loss_matrix(problem.sample(n, seed, "peeling", trial))
    dev = pop_gap - (L.mean(axis=0) - L[:, star].mean())
    if isinstance(psi, str):
        if psi != "empirical":
            raise ValueError(f"unknown surrogate {psi!r}")
        psi = build_psi(L, star, problem.B, mc_draws, _rng.derive_seed(seed, "signs", trial))
    bound = np.array([psi(r, dprime) for r in radius])
    return bool(np.any(dev > bound))


def validate_peeling(problem: FiniteLossProblem, psi: PsiLike, delta: float, r0: float,
                     trials: int, n: int, seed: int = 0, mc_draws: int = 100) -> PeelingReport:
    """Monte Carlo frequency of the event that some excess loss ``f`` breaks
    ``(P - P_n) f <= psi(2 T(f) v r0; delta / C_r0)``.

    ``T(f) = P[f^2]`` is exact for a finite problem.  ``psi="empirical"``
    rebuilds the empirical surrogate on every dataset draw, centred at the
    population optimum.
    """
    if trials < 100:
        raise ValueError("trials < 100 is too noisy to be meaningful")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    R = 4.0 * problem.B**2
    if not 0 < r0 <= R:
        raise ValueError("r0 must lie in (0, 4B^2]")
    C_r0 = 2.0 * math.log2(2.0 * R / r0)
    violations = sum(peeling_trial(problem, psi, delta / C_r0, r0, n, seed, t, mc_draws)
                     for t in range(trials))
    rate = violations / trials
    return PeelingReport(rate, math.sqrt(rate * (1 - rate) / trials), trials, delta, r0, C_r0)
