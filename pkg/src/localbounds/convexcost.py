"""Structured convex supervised costs: the cost catalogue, small-ball
diagnostics, the two-fixed-point bound and the heavy-tail experiment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng as _rng
from .classes import ConvexCostData, Sample, gen_heavy_tailed_linear
from .estimators import Certificate, _digest
from .numkit import fixed_point, fixed_point_bounded

__all__ = [
    "CostSpec",
    "CurvatureVanishedError",
    "DegenerateInputError",
    "SmallBallEstimate",
    "alpha",
    "huber_value",
    "huber_derivative",
    "small_ball_estimate",
    "theorem81_bound",
    "fit_square",
    "fit_huber",
    "huber_vs_square_experiment",
]


class CurvatureVanishedError(ValueError):
    """The local strong-convexity parameter is zero at the required level."""


class DegenerateInputError(ValueError):
    """The hypothesis family contains ``h*`` itself, so ratios are undefined."""


@dataclass(frozen=True)
class CostSpec:
    """A convex cost of the residual ``u = h(x) - y`` (margin for logistic)."""

    kind: str
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in {"square", "huber", "logistic"}:
            raise ValueError(f"unknown cost {self.kind!r}")
        if self.kind == "huber" and not (self.gamma is not None and self.gamma > 0):
            raise ValueError("huber cost needs gamma > 0")

    @classmethod
    def square(cls) -> "CostSpec":
        return cls("square")

    @classmethod
    def huber(cls, gamma: float) -> "CostSpec":
        return cls("huber", gamma)

    @classmethod
    def logistic(cls) -> "CostSpec":
        return cls("logistic")

    @property
    def beta_sv(self) -> float:
        return 0.25 if self.kind == "logistic" else 0.5

    def value(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "square":
            return 0.5 * u**2
        if self.kind == "huber":
            return huber_value(u, self.gamma)
        # logistic cost of a signed margin
        return np.logaddexp(0.0, -u)

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "square":
            return u
        if self.kind == "huber":
            return huber_derivative(u, self.gamma)
        return -np.exp(-np.logaddexp(0.0, u))


def huber_value(u, gamma: float):
    """``u^2/2`` for ``|u| <= gamma`` and ``gamma |u| - gamma^2/2`` beyond."""
    a = np.abs(np.asarray(u, dtype=float))
    return np.where(a <= gamma, 0.5 * a**2, gamma * a - 0.5 * gamma**2)


def huber_derivative(u, gamma: float):
    return np.clip(np.asarray(u, dtype=float), -gamma, gamma)


def alpha(cost: CostSpec, v: float) -> float:
    """Strong-convexity parameter over residuals of magnitude at most ``v``."""
    if v < 0:
        raise ValueError("v must be non-negative")
    if cost.kind == "square":
        return 0.5
    if cost.kind == "huber":
        return 0.5 if v <= cost.gamma else 0.0
    # e^{v+1}/(e^{v+1}+1)^2 written to stay finite for large v
    t = -(v + 1.0)
    return math.exp(t) / (1.0 + math.exp(t)) ** 2


@dataclass(frozen=True)
class SmallBallEstimate:
    kappa: float
    c_kappa: float
    probe_count: int
    grid: tuple[tuple[float, float], ...] = field(default=())


def small_ball_estimate(data: ConvexCostData, hypothesis_family="linear", kappa_grid=None,
                        probes: int = 10_000, seed: int = 0,
                        num_hypotheses: int = 64) -> SmallBallEstimate:
    """Monte Carlo small-ball constant.

    ``hypothesis_family`` is ``"linear"`` (random offsets ``theta - theta*``)
    or a callable mapping an ``(probes, d)`` feature array to an
    ``(m, probes)`` array of differences ``h(x) - h*(x)``.  For every ``kappa``
    the constant is the smallest empirical frequency of
    ``|h - h*| >= kappa |h - h*|_{L2}`` across the family; the grid point
    maximising ``kappa^2 c_kappa`` is returned.
    """
    if probes < 10_000:
        raise ValueError("probes must be at least 10^4")
    kappa_grid = np.linspace(0.05, 1.0, 20) if kappa_grid is None else np.asarray(kappa_grid, float)
    if np.any(kappa_grid <= 0) or np.any(kappa_grid > 1):
        raise ValueError("kappa values must lie in (0, 1]")
    g = _rng.stream(seed, _rng.STREAM_SAMPLE, "small-ball")
    x = g.standard_normal((probes, data.d))
    if hypothesis_family == "linear":
        offsets = g.standard_normal((num_hypotheses, data.d))
        diffs = offsets @ x.T
    elif callable(hypothesis_family):
        diffs = np.atleast_2d(np.asarray(hypothesis_family(x), float))
    else:
        raise ValueError("hypothesis_family must be 'linear' or a callable")
    l2 = np.sqrt(np.mean(diffs**2, axis=1))
    if np.any(l2 == 0):
        raise DegenerateInputError("hypothesis family contains h = h*")
    ratio = np.abs(diffs) / l2[:, None]
    table = tuple((float(k), float(np.min(np.mean(ratio >= k, axis=1)))) for k in kappa_grid)
    best = max(table, key=lambda kc: kc[0] ** 2 * kc[1])
    if best[1] <= 0:
        raise DegenerateInputError("small-ball frequency is zero on the whole kappa grid")
    return SmallBallEstimate(best[0], min(best[1], 1 - 1e-12), probes, table)


def _r_only(phi, dprime: float) -> Callable[[float], float]:
    if hasattr(phi, "evaluate"):
        return lambda r: float(phi.evaluate(r, dprime))
    return lambda r: float(phi(r))


def theorem81_bound(cost: CostSpec, data: ConvexCostData, phi, phi_noise, sb: SmallBallEstimate,
                    delta: float, r0: float, n: int | None = None) -> Certificate:
    """Bound for ERM under a structured convex cost.

    ``phi(r)`` bounds the Rademacher complexity of the version space and
    ``phi_noise(r, delta)`` the noise-multiplier process.  With
    ``C = 2 + (16/c_k + 2) log(4 Delta^2/r0)`` and
    ``a = alpha(4 |xi|/sqrt(c_k))`` the two generators are
    ``4/(c_k k^2 a) phi_noise(2r; delta/C)`` and ``8/(c_k k) sqrt(2r) phi(2r)``;
    both surrogates are frozen past ``4 Delta^2``.  The excess-risk bound is
    ``beta_sv/2 * max(fp_noise, fp_version, r0)``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    Delta, xi = data.Delta, data.xi_l2
    if not 0 < r0 < 4 * Delta**2:
        raise ValueError("r0 must lie in (0, 4 Delta^2)")
    ck, k = sb.c_kappa, sb.kappa
    C = 2.0 + (16.0 / ck + 2.0) * math.log(4 * Delta**2 / r0)
    dprime = delta / C
    level = 4 * xi / math.sqrt(ck)
    a = alpha(cost, level)
    if a <= 0:
        raise CurvatureVanishedError(
            f"alpha({level:.6g}) = 0 for the {cost.kind} cost; curvature vanishes at the "
            "localization level 4|xi|/sqrt(c_kappa)")

    cap = 4 * Delta**2
    ver = _r_only(phi, dprime)
    noise = lambda r: float(phi_noise(min(r, cap), dprime))  # noqa: E731
    k_noise = 4.0 / (ck * k**2 * a)
    k_ver = 8.0 / (ck * k)

    fp_noise = fixed_point_bounded(lambda r: k_noise * noise(2 * r), cap / 2).r_star
    M = ver(cap)
    hi = max(cap / 2, 2 * (k_ver * M) ** 2)
    fp_ver = fixed_point(lambda r: k_ver * math.sqrt(2 * r) * ver(min(2 * r, cap)), hi).r_star

    radius = max(fp_noise, fp_ver, r0)
    gates = {
        "noise_gate": bool(noise(8 * Delta**2) <= a * xi**2 / 2),
        "version_gate": bool(ver(8 * Delta**2) <= math.sqrt(2 * ck) * xi**2 / (16 * Delta)),
    }
    if n is not None:
        gates["sample_size"] = bool(n > 72 / ck**2 * math.log(C / delta))
    return Certificate(
        bound=cost.beta_sv / 2 * radius, delta=delta, kind="convex-cost",
        constants={"C_r0": C, "alpha": a, "kappa": k, "c_kappa": ck, "r0": r0},
        inputs_digest=_digest(cost.kind, cost.gamma, xi, Delta, k, ck, delta, r0),
        details={
            "fp_of_noise_surrogate": fp_noise,
            "fp_of_version_surrogate": fp_ver,
            "l2_radius": radius,
            # the conventional labels, which are attached to the opposite generators
            "source_labels": {"fp_of_noise_surrogate": "r*_ver", "fp_of_version_surrogate": "r*_noise"},
            "preconditions": gates,
        },
    )


# ---------------------------------------------------------------------------
# empirical risk minimisation for linear hypotheses


def fit_square(sample: Sample) -> np.ndarray:
    return np.linalg.lstsq(sample.x, sample.y, rcond=None)[0]


def fit_huber(sample: Sample, gamma: float, tol: float = 1e-8, max_iter: int = 100):
    """Semismooth Newton with Armijo backtracking from the least-squares fit.

    Returns ``(theta, converged)``; ``converged`` means the mean gradient norm
    reached ``tol``.
    """
    X, y = sample.x, sample.y
    n, d = X.shape
    theta = fit_square(sample)

    def objective(t):
        return float(np.mean(huber_value(X @ t - y, gamma)))

    for _ in range(max_iter):
        u = X @ theta - y
        grad = X.T @ huber_derivative(u, gamma) / n
        if np.linalg.norm(grad) <= tol:
            return theta, True
        active = np.abs(u) <= gamma
        H = X[active].T @ X[active] / n
        try:
            step = np.linalg.solve(H + 1e-12 * np.eye(d), grad)
        except np.linalg.LinAlgError:
            step = grad
        f0, s = objective(theta), 1.0
        while objective(theta - s * step) > f0 - 1e-4 * s * (grad @ step) and s > 1e-12:
            s *= 0.5
        theta = theta - s * step
    u = X @ theta - y
    return theta, bool(np.linalg.norm(X.T @ huber_derivative(u, gamma) / n) <= tol)


def huber_trial(data: ConvexCostData, n: int, gamma: float, seed: int, trial: int):
    """Squared parameter errors ``(square, huber, huber_converged)`` for one dataset."""
    s = data.sample(n, seed, "huber-vs-square", n, trial)
    e_sq = float(np.sum((fit_square(s) - data.theta_star) ** 2))
    th, ok = fit_huber(s, gamma)
    return e_sq, float(np.sum((th - data.theta_star) ** 2)), ok


def huber_vs_square_experiment(d: int, dof: float | None, n_grid, trials: int, seed: int = 0,
                               scale: float = 1.0, gamma: float | None = None) -> list[dict]:
    """Median and 95th-percentile squared parameter error of square-cost and
    Huber-cost ERM on linear data with Student-t noise (``dof=None``: Gaussian).

    The Huber threshold defaults to ``2 * |xi|_{L2}``.
    """
    data = gen_heavy_tailed_linear(d, dof, scale, seed)
    gam = 2 * data.xi_l2 if gamma is None else gamma
    if gam <= 0:
        gam = 1.0  # noiseless data: any threshold works
    rows = []
    for n in n_grid:
        res = np.array([huber_trial(data, int(n), gam, seed, t) for t in range(trials)])
        for cost, col in (("square", 0), ("huber", 1)):
            errs = res[:, col]
            rows.append({
                "cost": cost, "n": int(n), "median_err": float(np.median(errs)),
                "p95_err": float(np.percentile(errs, 95)), "trials": int(trials),
                "nonconverged": int(np.sum(res[:, 2] == 0)) if cost == "huber" else 0,
            })
    return rows
