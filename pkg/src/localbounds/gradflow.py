"""Gradient descent under the Polyak-Lojasiewicz condition and gradient
concentration diagnostics for smooth parametric models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .classes import Sample, SmoothParametricModel
from .numkit import NumericError

__all__ = [
    "GDTrace",
    "DivergenceError",
    "UnsupportedOperationError",
    "DiagnosticReport",
    "gradient_descent",
    "iterate",
    "local_smoothness",
    "stat_error_prediction",
    "stationarity_threshold",
    "stationary_point_check",
    "localized_gradient_diagnostic",
]


class DivergenceError(NumericError):
    """Iterates left the region the guarantees cover, or gradients blew up."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


class UnsupportedOperationError(NotImplementedError):
    """The operation needs an oracle the model does not provide."""


@dataclass
class GDTrace:
    iterates: np.ndarray
    empirical_grad_norms: np.ndarray
    population_excess: np.ndarray
    step_size: float
    stat_error_prediction: float
    param_errors: np.ndarray | None = None
    preconditions: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        n = len(self.iterates)
        if len(self.empirical_grad_norms) != n or len(self.population_excess) != n:
            raise ValueError("trace columns must have equal length")

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]


def _require_star(model) -> np.ndarray:
    star = getattr(model, "theta_star", None)
    if star is None:
        raise UnsupportedOperationError("this operation needs a known theta_star")
    return np.asarray(star, float)


def _grad_second_moment(model, eval_sample: Sample) -> float:
    g = model.grads(_require_star(model), eval_sample)
    return float(np.mean(np.sum(g**2, axis=1)))


def stat_error_prediction(grad_m2: float, mu: float, G_star: float, n: int, delta: float) -> float:
    """``16 P|grad*|^2 log(4/d)/(mu n) + (8 G*^2 log^2(4/d) + mu^2)/(mu n^2)``."""
    L = math.log(4.0 / delta)
    return 16 * grad_m2 * L / (mu * n) + (8 * G_star**2 * L**2 + mu**2) / (mu * n**2)


def stationarity_threshold(grad_m2: float, G_star: float, n: int, delta: float) -> float:
    """``sqrt(2 P|grad*|^2 log(4/d)/n) + G* log(4/d)/n``."""
    L = math.log(4.0 / delta)
    return math.sqrt(2 * grad_m2 * L / n) + G_star * L / n


def local_smoothness(model, sample: Sample, theta, h: float = 1e-5) -> float:
    """Largest absolute eigenvalue of the empirical Hessian at ``theta``
    (central differences of the mean gradient)."""
    theta = np.asarray(theta, float)
    d = theta.size
    H = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        H[:, j] = (model.mean_grad(theta + e, sample) - model.mean_grad(theta - e, sample)) / (2 * h)
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (H + H.T)))))


def iterate(direction: Callable[[np.ndarray], np.ndarray], theta0, steps: int, step_size: float,
            excess: Callable[[np.ndarray], float] | None = None, star=None,
            diverge_radius: float = math.inf, excess_every: int = 1):
    """Run ``theta <- theta - step * direction(theta)`` and record the trace columns.

    Returns ``(iterates, grad_norms, excess_values, param_errors)``.  The
    excess oracle is evaluated every ``excess_every`` iterations and at the
    last iterate; skipped entries are NaN.
    """
    if steps < 0:
        raise ValueError("steps must be non-negative")
    theta = np.array(theta0, dtype=float)
    its = np.empty((steps + 1, theta.size))
    norms = np.empty(steps + 1)
    exc = np.full(steps + 1, np.nan)
    perr = np.full(steps + 1, np.nan)
    for t in range(steps + 1):
        g = np.asarray(direction(theta), float)
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient", t)
        its[t] = theta
        norms[t] = np.linalg.norm(g)
        if star is not None:
            perr[t] = np.linalg.norm(theta - star)
            if perr[t] > diverge_radius:
                raise DivergenceError("iterate left the ball of radius 10*delta_M", t)
        if excess is not None and (t % excess_every == 0 or t == steps):
            exc[t] = excess(theta)
        if t < steps:
            theta = theta - step_size * g
    return its, norms, exc, perr


def gradient_descent(model: SmoothParametricModel, sample: Sample, theta0, steps: int,
                     step_size: float | None = None, delta: float = 0.1,
                     eval_sample: Sample | None = None, constant_c: float = 1.0,
                     excess_every: int = 1) -> GDTrace:
    """Full-batch gradient descent ``theta <- theta - alpha P_n grad l(theta)``.

    The default step is ``1/beta``.  Excess risk is measured by the model's
    oracle on ``eval_sample`` (``model.eval_sample()`` when omitted).
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    step = 1.0 / model.beta if step_size is None else float(step_size)
    if step <= 0:
        raise ValueError("step_size must be positive")
    star = _require_star(model)
    ev = model.eval_sample() if eval_sample is None else eval_sample
    n = len(sample)

    its, norms, exc, perr = iterate(
        lambda th: model.mean_grad(th, sample), theta0, steps, step,
        excess=lambda th: model.excess_risk(th, ev), star=star,
        diverge_radius=10 * model.delta_M, excess_every=excess_every)

    m2 = _grad_second_moment(model, ev)
    pred = stat_error_prediction(m2, model.mu, model.G_star, n, delta)
    D = model.d + math.log(8 * math.log2(2 * n * model.delta_M + 2) / delta)
    pre = {
        "init_in_ball": bool(np.linalg.norm(np.asarray(theta0) - star)
                             <= math.sqrt(model.mu / model.beta) * model.delta_m),
        "stat_error_below_curvature": bool(pred < model.mu * model.delta_m**2 / 2),
        "sample_size": bool(n >= constant_c * (model.beta / model.mu) ** 2 * D),
    }
    return GDTrace(its, norms, exc, step, pred, perr, pre)


def stationary_point_check(model: SmoothParametricModel, sample: Sample, theta, delta: float,
                           eval_sample: Sample | None = None) -> bool:
    """Whether ``|P_n grad l(theta)|`` is below the stationarity threshold."""
    _require_star(model)
    ev = model.eval_sample() if eval_sample is None else eval_sample
    thr = stationarity_threshold(_grad_second_moment(model, ev), model.G_star, len(sample), delta)
    return bool(np.linalg.norm(model.mean_grad(theta, sample)) <= thr)


@dataclass(frozen=True)
class DiagnosticReport:
    distances: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    @property
    def fraction_satisfied(self) -> float:
        return float(np.mean(self.lhs <= self.rhs))

    def rows(self):
        return list(zip(self.distances.tolist(), self.lhs.tolist(), self.rhs.tolist()))


def localized_gradient_diagnostic(model: SmoothParametricModel, sample: Sample, probe_thetas,
                                  delta: float, constant_c: float = 1.0,
                                  eval_sample: Sample | None = None) -> DiagnosticReport:
    """Compare ``|(P - P_n)(grad l(theta) - grad l(theta*))|`` with the envelope
    ``c beta max(|theta - theta*|, 1/n) (sqrt(D/n) + D/n)``,
    ``D = d + log(4 log2(2 n Delta_M + 2)/delta)``."""
    star = _require_star(model)
    ev = model.eval_sample() if eval_sample is None else eval_sample
    n = len(sample)
    D = model.d + math.log(4 * math.log2(2 * n * model.delta_M + 2) / delta)
    scale = constant_c * model.beta * (math.sqrt(D / n) + D / n)
    g_star_pop = model.mean_grad(star, ev)
    g_star_emp = model.mean_grad(star, sample)
    dist, lhs, rhs = [], [], []
    for th in np.atleast_2d(np.asarray(probe_thetas, float)):
        diff = (model.mean_grad(th, ev) - g_star_pop) - (model.mean_grad(th, sample) - g_star_emp)
        r = float(np.linalg.norm(th - star))
        dist.append(r)
        lhs.append(float(np.linalg.norm(diff)))
        rhs.append(scale * max(r, 1.0 / n))
    return DiagnosticReport(np.array(dist), np.array(lhs), np.array(rhs))
