"""Hypothesis classes, loss oracles and synthetic data generators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import special

from . import rng as _rng

__all__ = [
    "Sample",
    "FiniteLossProblem",
    "SmoothParametricModel",
    "QuadraticModel",
    "LinearRegressionModel",
    "SigmoidRegressionModel",
    "ConvexCostData",
    "BoundednessError",
    "gen_finite_zero_variance",
    "gen_finite_random",
    "gen_sigmoid_regression",
    "gen_linear_regression",
    "gen_quadratic",
    "gen_gmm2",
    "gen_mlr2",
    "gen_heavy_tailed_linear",
]


class BoundednessError(ValueError):
    """A loss value escaped the declared range ``[-B, B]``."""


class Sample(NamedTuple):
    """``x`` has one row per observation; ``y`` is ``None`` for unsupervised data."""

    x: np.ndarray
    y: np.ndarray | None = None

    def __len__(self) -> int:  # type: ignore[override]
        return self.x.shape[0]


# ---------------------------------------------------------------------------
# finite classes


@dataclass(frozen=True)
class FiniteLossProblem:
    """Finite hypothesis class over a finite sample space.

    ``table[h, a]`` is the loss of hypothesis ``h`` on atom ``a`` and atoms
    are drawn with probabilities ``probs``.  Population quantities are exact
    sums over atoms, so no reference sample is needed.
    """

    table: np.ndarray
    probs: np.ndarray
    B: float
    name: str = "finite"
    optimal_index: int = field(init=False)

    def __post_init__(self) -> None:
        table = np.asarray(self.table, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if table.ndim != 2 or probs.shape != (table.shape[1],):
            raise ValueError("table must be (hypotheses, atoms) and probs (atoms,)")
        if np.any(probs < 0) or not math.isclose(probs.sum(), 1.0, rel_tol=1e-12):
            raise ValueError("probs must be a probability vector")
        if self.B <= 0:
            raise ValueError("B must be positive")
        if np.any(np.abs(table) > self.B * (1 + 1e-12)):
            raise BoundednessError(f"loss table leaves [-{self.B}, {self.B}]")
        table.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "optimal_index", int(np.argmin(table @ probs)))

    @property
    def num_hypotheses(self) -> int:
        return self.table.shape[0]

    def loss(self, h: int, z) -> np.ndarray:
        return self.table[h, z]

    def sample(self, n: int, seed: int, *keys) -> np.ndarray:
        """Atom indices of an i.i.d. sample of size ``n``."""
        u = _rng.stream(seed, _rng.STREAM_SAMPLE, *keys).random(n)
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        return np.searchsorted(cdf, u, side="right").clip(max=len(cdf) - 1)

    def loss_matrix(self, sample) -> np.ndarray:
        """``(n, H)`` matrix of losses on the given atoms."""
        return self.table[:, np.asarray(sample)].T

    def risks(self) -> np.ndarray:
        return self.table @ self.probs

    def excess_risk(self, h: int) -> float:
        r = self.risks()
        return float(r[h] - r[self.optimal_index])

    def excess_second_moments(self, center: int | None = None) -> np.ndarray:
        """Population ``P[(l(h) - l(center))^2]`` for every ``h``."""
        c = self.optimal_index if center is None else center
        diff = self.table - self.table[c]
        return (diff**2) @ self.probs

    def variance(self, h: int) -> float:
        m = self.table[h] @ self.probs
        return float(((self.table[h] - m) ** 2) @ self.probs)

    def effective_loss(self) -> float:
        """``P[l(h*) - inf_H l(h)]``."""
        return float((self.table[self.optimal_index] - self.table.min(axis=0)) @ self.probs)


def gen_finite_zero_variance(eps: float, B: float = 1.0, seed: int = 0) -> FiniteLossProblem:
    """Two hypotheses: ``h0`` with zero loss and ``h1`` with loss ``B*s``.

    ``s`` is ``+1`` with probability ``1/2 + eps``, so ``h0`` is optimal with
    zero variance while ``h1`` has risk ``2*eps*B``.  ``seed`` is accepted
    for a uniform generator signature; the construction is deterministic.
    """
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 0.5)")
    table = np.array([[0.0, 0.0], [B, -B]])
    probs = np.array([0.5 + eps, 0.5 - eps])
    return FiniteLossProblem(table, probs, B, name="zero-variance")


def gen_finite_random(num_hypotheses: int = 16, num_atoms: int = 32, B: float = 1.0,
                      seed: int = 0) -> FiniteLossProblem:
    """Random loss table with a shared per-atom component, so hypotheses are correlated."""
    g = _rng.stream(seed, _rng.STREAM_MODEL, "finite-random")
    shared = g.uniform(-1, 1, size=num_atoms)
    own = g.uniform(-1, 1, size=(num_hypotheses, num_atoms))
    mix = g.uniform(0.2, 0.9, size=(num_hypotheses, 1))
    table = B * np.clip(mix * shared + (1 - mix) * own, -1, 1)
    probs = g.dirichlet(np.full(num_atoms, 2.0))
    return FiniteLossProblem(table, probs, B, name="finite-random")


# ---------------------------------------------------------------------------
# smooth parametric models


class SmoothParametricModel:
    """Loss and gradient oracles plus the structural constants of the fast-rate regime.

    Subclasses implement ``losses`` and ``grads`` vectorised over a sample
    and ``_draw`` for the data distribution.  ``theta_star`` is known since
    every model here is synthetic.
    """

    d: int
    theta_star: np.ndarray
    beta: float
    mu: float
    G_star: float
    delta_m: float
    delta_M: float
    seed: int

    def losses(self, theta: np.ndarray, sample: Sample) -> np.ndarray:
        raise NotImplementedError

    def grads(self, theta: np.ndarray, sample: Sample) -> np.ndarray:
        raise NotImplementedError

    def _draw(self, n: int, g: np.random.Generator) -> Sample:
        raise NotImplementedError

    def loss(self, theta, z: Sample) -> float:
        return float(self.losses(np.asarray(theta, float), z)[0])

    def grad(self, theta, z: Sample) -> np.ndarray:
        return self.grads(np.asarray(theta, float), z)[0]

    def risk(self, theta, sample: Sample) -> float:
        return float(np.mean(self.losses(np.asarray(theta, float), sample)))

    def mean_grad(self, theta, sample: Sample) -> np.ndarray:
        return self.grads(np.asarray(theta, float), sample).mean(axis=0)

    def sample(self, n: int, seed: int | None = None, *keys) -> Sample:
        s = self.seed if seed is None else seed
        return self._draw(n, _rng.stream(s, _rng.STREAM_SAMPLE, *keys))

    def eval_sample(self, n: int = 100_000) -> Sample:
        """Fixed evaluation set used as a stand-in for the population."""
        return self._draw(n, _rng.stream(self.seed, _rng.STREAM_EVAL))

    def excess_risk(self, theta, eval_sample: Sample) -> float:
        return self.risk(theta, eval_sample) - self.risk(self.theta_star, eval_sample)

    def in_domain(self, theta) -> bool:
        return bool(np.linalg.norm(np.asarray(theta) - self.theta_star) <= self.delta_M)


@dataclass
class QuadraticModel(SmoothParametricModel):
    """``l(theta; z) = |theta - z|^2 / 2`` with ``z ~ N(theta*, noise_sd^2 I)``."""

    d: int
    theta_star: np.ndarray
    noise_sd: float = 1.0
    delta_M: float = 10.0
    seed: int = 0
    beta: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        self.theta_star = np.asarray(self.theta_star, float)
        self.delta_m = self.delta_M
        self.G_star = self.noise_sd * math.sqrt(self.d)

    def losses(self, theta, sample):
        return 0.5 * np.sum((theta - sample.x) ** 2, axis=1)

    def grads(self, theta, sample):
        return theta - sample.x

    def _draw(self, n, g):
        return Sample(self.theta_star + self.noise_sd * g.standard_normal((n, self.d)))

    def excess_risk(self, theta, eval_sample=None):
        return 0.5 * float(np.sum((np.asarray(theta) - self.theta_star) ** 2))


@dataclass
class LinearRegressionModel(SmoothParametricModel):
    """``l = (x^T theta - y)^2 / 2`` with Gaussian design and Gaussian noise.

    ``beta = 8/3`` is the sub-exponential constant of ``(u^T x)^2`` for a
    standard normal ``x``, which also bounds the population smoothness.
    """

    d: int
    theta_star: np.ndarray
    noise_sd: float = 1.0
    delta_M: float = 10.0
    seed: int = 0
    beta: float = 8.0 / 3.0
    mu: float = 1.0

    def __post_init__(self):
        self.theta_star = np.asarray(self.theta_star, float)
        self.delta_m = self.delta_M
        self.G_star = self.noise_sd * math.sqrt(self.d)

    def losses(self, theta, sample):
        return 0.5 * (sample.x @ theta - sample.y) ** 2

    def grads(self, theta, sample):
        return (sample.x @ theta - sample.y)[:, None] * sample.x

    def _draw(self, n, g):
        x = g.standard_normal((n, self.d))
        return Sample(x, x @ self.theta_star + self.noise_sd * g.standard_normal(n))

    def excess_risk(self, theta, eval_sample=None):
        return 0.5 * float(np.sum((np.asarray(theta) - self.theta_star) ** 2))


def _sigmoid(t):
    return special.expit(t)


def _dsigmoid(t):
    s = special.expit(t)
    return s * (1 - s)


def _d2sigmoid(t):
    s = special.expit(t)
    return s * (1 - s) * (1 - 2 * s)


@dataclass
class SigmoidRegressionModel(SmoothParametricModel):
    """Non-convex regression ``l = (sigmoid(theta^T x) - y)^2``.

    ``x`` has i.i.d. coordinates uniform on ``[-tau, tau]``; the label noise
    is Gaussian truncated symmetrically to ``[-1, 1]`` so ``y`` stays in
    ``[-1, 2]``, the loss stays below ``B = 4`` and ``E[y|x]`` is exactly
    ``sigmoid(x^T theta*)``.  The feasible set is ``|theta| <= delta_M/2``.
    """

    d: int
    tau: float
    delta_M: float
    noise_sd: float
    theta_star: np.ndarray
    seed: int = 0
    B: float = 4.0

    def __post_init__(self):
        self.theta_star = np.asarray(self.theta_star, float)
        self.delta_m = self.delta_M / 2 - float(np.linalg.norm(self.theta_star))
        if self.delta_m <= 0:
            raise ValueError("theta_star must lie strictly inside |theta| <= delta_M/2")
        t_max = self.delta_M * self.tau * math.sqrt(self.d)
        ts = np.linspace(-t_max, t_max, 20001)
        self.C_eta = float(np.max(np.maximum(_dsigmoid(ts), _d2sigmoid(ts))))
        self.c_eta = float(np.min(_dsigmoid(ts)))
        # E[x x^T] = tau^2/3 I for uniform coordinates
        self.gamma = 1.0 / 3.0
        self.beta = 2 * self.C_eta * (self.C_eta + math.sqrt(self.B)) * self.tau**2
        self.mu = 2 * self.c_eta**3 * self.tau**2 * self.gamma / self.C_eta
        self.G_star = 2 * self.C_eta * self.tau * math.sqrt(self.B * self.d)

    def losses(self, theta, sample):
        return (_sigmoid(sample.x @ theta) - sample.y) ** 2

    def grads(self, theta, sample):
        t = sample.x @ theta
        return (2 * (_sigmoid(t) - sample.y) * _dsigmoid(t))[:, None] * sample.x

    def _draw(self, n, g):
        x = g.uniform(-self.tau, self.tau, size=(n, self.d))
        noise = np.clip(self.noise_sd * g.standard_normal(n), -1.0, 1.0)
        return Sample(x, _sigmoid(x @ self.theta_star) + noise)

    def excess_risk(self, theta, eval_sample):
        # the noise is independent and mean zero, so only the regression
        # function gap survives the expectation
        x = eval_sample.x
        gap = _sigmoid(x @ np.asarray(theta)) - _sigmoid(x @ self.theta_star)
        return float(np.mean(gap**2))

    def in_domain(self, theta) -> bool:
        return bool(np.linalg.norm(theta) <= self.delta_M / 2 + 1e-12)


def _random_direction(g, d):
    v = g.standard_normal(d)
    return v / np.linalg.norm(v)


def gen_sigmoid_regression(d: int, tau: float, delta_M: float, noise_sd: float,
                           seed: int = 0) -> SigmoidRegressionModel:
    """Sigmoid regression with ``|theta*| = delta_M/4``, so ``delta_m = delta_M/4``."""
    if d < 1 or tau <= 0 or delta_M <= 0:
        raise ValueError("need d >= 1 and positive tau, delta_M")
    g = _rng.stream(seed, _rng.STREAM_MODEL, "sigmoid")
    theta_star = _random_direction(g, d) * delta_M / 4
    return SigmoidRegressionModel(d, tau, delta_M, noise_sd, theta_star, seed)


def gen_linear_regression(d: int, noise_sd: float = 1.0, theta_norm: float = 1.0,
                          seed: int = 0) -> LinearRegressionModel:
    g = _rng.stream(seed, _rng.STREAM_MODEL, "linear")
    return LinearRegressionModel(d, _random_direction(g, d) * theta_norm, noise_sd, seed=seed)


def gen_quadratic(d: int, noise_sd: float = 1.0, theta_norm: float = 1.0,
                  seed: int = 0) -> QuadraticModel:
    g = _rng.stream(seed, _rng.STREAM_MODEL, "quadratic")
    return QuadraticModel(d, _random_direction(g, d) * theta_norm, noise_sd, seed=seed)


def gen_gmm2(d: int, sigma: float, theta_star, seed: int = 0):
    """Symmetric two-component Gaussian mixture; see :class:`localbounds.em.GMM2`."""
    from .em import GMM2

    return GMM2(d, sigma, np.asarray(theta_star, float), seed)


def gen_mlr2(d: int, sigma: float, theta_star, seed: int = 0):
    """Symmetric mixture of two linear regressions; see :class:`localbounds.em.MLR2`."""
    from .em import MLR2

    return MLR2(d, sigma, np.asarray(theta_star, float), seed)


# ---------------------------------------------------------------------------
# supervised data for structured convex costs


@dataclass
class ConvexCostData:
    """Linear model ``y = x^T theta* + noise`` with standard normal features.

    ``xi = h*(x) - y`` is minus the noise.  ``Delta`` is the worst-case
    ``L2`` distance ``sup_h |h(x) - y|`` over linear ``h`` within
    ``class_radius`` of ``theta*``.
    """

    d: int
    theta_star: np.ndarray
    scale: float
    dof: float | None
    xi_l2: float
    Delta: float
    class_radius: float = 1.0
    seed: int = 0

    def h_star(self, x: np.ndarray) -> np.ndarray:
        return x @ self.theta_star

    def noise(self, n: int, g: np.random.Generator) -> np.ndarray:
        if self.dof is None:
            return self.scale * g.standard_normal(n)
        return self.scale * g.standard_t(self.dof, size=n)

    def sample(self, n: int, seed: int | None = None, *keys) -> Sample:
        g = _rng.stream(self.seed if seed is None else seed, _rng.STREAM_SAMPLE, *keys)
        x = g.standard_normal((n, self.d))
        return Sample(x, self.h_star(x) + self.noise(n, g))


def gen_heavy_tailed_linear(d: int, dof: float | None, scale: float = 1.0, seed: int = 0,
                            theta_norm: float = 1.0, class_radius: float = 1.0) -> ConvexCostData:
    """Student-t noise with ``dof > 2`` degrees of freedom; ``dof=None`` gives Gaussian noise."""
    if dof is not None and math.isinf(dof):
        dof = None
    if dof is not None and not dof > 2:
        raise ValueError("dof must exceed 2 so the noise has a finite second moment")
    if scale < 0:
        raise ValueError("scale must be non-negative")
    g = _rng.stream(seed, _rng.STREAM_MODEL, "heavy-tailed")
    theta_star = _random_direction(g, d) * theta_norm
    xi_l2 = scale if dof is None else scale * math.sqrt(dof / (dof - 2))
    Delta = math.sqrt(class_radius**2 + xi_l2**2)
    return ConvexCostData(d, theta_star, scale, dof, xi_l2, Delta, class_radius, seed)
