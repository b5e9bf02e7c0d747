"""First-order Expectation-Maximization for two symmetric latent-variable models.

Both models use the marginal loss ``sigma^2 * (-log f_theta(z))`` (additive
constants dropped).  With that scaling the surrogate
``l_{theta'}(theta; z) = w/2 |z - theta|^2 + (1 - w)/2 |z + theta|^2``
(and its regression analogue) has gradient exactly equal to the marginal
gradient at ``theta = theta'``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import rng as _rng
from .classes import Sample
from .gradflow import GDTrace, iterate

__all__ = [
    "EMModel",
    "GMM2",
    "MLR2",
    "gmm2_weight",
    "logistic_weight",
    "first_order_em",
    "default_init",
    "snr_parameters",
    "em_stat_error_prediction",
]

# the largest double below one; 1 - W_MAX is exact
W_MAX = 1.0 - 2.0**-53


def logistic_weight(a):
    """``1/(1 + exp(-a))`` clamped into ``(0, 1)`` with ``w(a) + w(-a) == 1`` exactly."""
    a = np.asarray(a, dtype=float)
    hi = np.minimum(special.expit(np.abs(a)), W_MAX)
    return np.where(a >= 0, hi, 1.0 - hi)


def gmm2_weight(theta_p, z, sigma: float):
    """Posterior weight of the ``+theta'`` component.

    The two-exponential ratio ``e^{-|theta'-z|^2/2s^2} / (e^{-|theta'-z|^2/2s^2} + e^{-|theta'+z|^2/2s^2})``
    simplifies to ``expit(2 theta'^T z / s^2)`` once the common terms cancel.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    z = np.asarray(z, dtype=float)
    return logistic_weight(2.0 * (z @ np.asarray(theta_p, float)) / sigma**2)


def _log_cosh(a):
    a = np.abs(a)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


class EMModel:
    """Latent-variable model with a weight function and surrogate-gradient oracle.

    Subclasses provide ``weights``, ``surrogate_grads``, ``marginal_losses``,
    ``marginal_grads`` and ``_draw``.
    """

    d: int
    sigma: float
    theta_star: np.ndarray
    seed: int
    beta: float = 1.0
    mu1: float = 1.0
    init_fraction: float = 1.0 / 8.0

    @property
    def snr(self) -> float:
        return float(np.linalg.norm(self.theta_star)) / self.sigma

    @property
    def G_star(self) -> float:
        return self.sigma * math.sqrt(self.d)

    @property
    def delta_M(self) -> float:
        return 2.0 * float(np.linalg.norm(self.theta_star))

    def weight(self, theta_p, z: Sample):
        return self.weights(np.asarray(theta_p, float), z)

    def surrogate_grad(self, theta_p, theta, z: Sample) -> np.ndarray:
        return self.surrogate_grads(np.asarray(theta_p, float), np.asarray(theta, float), z)

    def mean_surrogate_grad(self, theta_p, theta, sample: Sample) -> np.ndarray:
        return self.surrogate_grad(theta_p, theta, sample).mean(axis=0)

    def mean_grad(self, theta, sample: Sample) -> np.ndarray:
        return self.marginal_grads(np.asarray(theta, float), sample).mean(axis=0)

    def sample(self, n: int, seed: int | None = None, *keys) -> Sample:
        return self._draw(n, _rng.stream(self.seed if seed is None else seed, _rng.STREAM_SAMPLE, *keys))

    def eval_sample(self, n: int = 100_000) -> Sample:
        return self._draw(n, _rng.stream(self.seed, _rng.STREAM_EVAL))

    def excess_risk(self, theta, eval_sample: Sample) -> float:
        th = np.asarray(theta, float)
        return float(np.mean(self.marginal_losses(th, eval_sample)
                             - self.marginal_losses(self.theta_star, eval_sample)))


@dataclass
class GMM2(EMModel):
    """``z = s theta* + sigma g`` with a fair sign ``s`` and standard normal ``g``."""

    d: int
    sigma: float
    theta_star: np.ndarray
    seed: int = 0
    init_fraction: float = 1.0 / 8.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        self.theta_star = np.asarray(self.theta_star, float)
        if self.theta_star.shape != (self.d,):
            raise ValueError("theta_star must have length d")

    def _draw(self, n, g):
        s = np.where(g.random(n) < 0.5, -1.0, 1.0)
        return Sample(s[:, None] * self.theta_star + self.sigma * g.standard_normal((n, self.d)))

    def weights(self, theta_p, z):
        return gmm2_weight(theta_p, z.x, self.sigma)

    def surrogate_grads(self, theta_p, theta, z):
        # w (theta - z) + (1 - w)(theta + z) = theta - (2w - 1) z
        w = self.weights(theta_p, z)
        return theta[None, :] - (2.0 * w - 1.0)[:, None] * z.x

    def marginal_losses(self, theta, z):
        x = z.x
        a = x @ theta / self.sigma**2
        return 0.5 * (np.sum(x**2, axis=1) + theta @ theta) - self.sigma**2 * _log_cosh(a)

    def marginal_grads(self, theta, z):
        a = z.x @ theta / self.sigma**2
        return theta[None, :] - np.tanh(a)[:, None] * z.x


@dataclass
class MLR2(EMModel):
    """``y = s x^T theta* + sigma g`` with standard normal ``x``."""

    d: int
    sigma: float
    theta_star: np.ndarray
    seed: int = 0
    init_fraction: float = 1.0 / 64.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        self.theta_star = np.asarray(self.theta_star, float)
        if self.theta_star.shape != (self.d,):
            raise ValueError("theta_star must have length d")

    def _draw(self, n, g):
        x = g.standard_normal((n, self.d))
        s = np.where(g.random(n) < 0.5, -1.0, 1.0)
        return Sample(x, s * (x @ self.theta_star) + self.sigma * g.standard_normal(n))

    def weights(self, theta_p, z):
        return logistic_weight(2.0 * z.y * (z.x @ theta_p) / self.sigma**2)

    def surrogate_grads(self, theta_p, theta, z):
        # gradient of w/2 (y - x^T theta)^2 + (1 - w)/2 (y + x^T theta)^2
        w = self.weights(theta_p, z)
        return ((z.x @ theta) - (2.0 * w - 1.0) * z.y)[:, None] * z.x

    def marginal_losses(self, theta, z):
        u = z.x @ theta
        return 0.5 * (z.y**2 + u**2) - self.sigma**2 * _log_cosh(z.y * u / self.sigma**2)

    def marginal_grads(self, theta, z):
        u = z.x @ theta
        return (u - np.tanh(z.y * u / self.sigma**2) * z.y)[:, None] * z.x


def default_init(model: EMModel, seed: int, *keys) -> np.ndarray:
    """Uniform draw on the sphere of radius ``init_fraction * |theta*|`` around ``theta*``."""
    g = _rng.stream(seed, _rng.STREAM_INIT, *keys)
    v = g.standard_normal(model.d)
    v /= np.linalg.norm(v)
    return model.theta_star + model.init_fraction * np.linalg.norm(model.theta_star) * v


def em_stat_error_prediction(grad_m2: float, beta: float, mu1: float, G_star: float, n: int,
                             delta: float) -> float:
    """``16 beta/mu1^2 (sqrt(2 P|grad*|^2 log(4/d)/n) + (G* log(4/d) + mu1)/n)^2``."""
    L = math.log(4.0 / delta)
    return 16 * beta / mu1**2 * (math.sqrt(2 * grad_m2 * L / n) + (G_star * L + mu1) / n) ** 2


def first_order_em(model: EMModel, sample: Sample, theta0, steps: int,
                   step_size: float | None = None, delta: float = 0.1,
                   eval_sample: Sample | None = None, excess_every: int = 1) -> GDTrace:
    """``theta <- theta - alpha P_n grad_theta l_{theta^t}(theta^t; z)``.

    The default step ``2/(beta + mu1)`` is 1 for both built-in models; for
    the Gaussian mixture the step-1 update is ``P_n[(2w - 1) z]``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    step = 2.0 / (model.beta + model.mu1) if step_size is None else float(step_size)
    ev = model.eval_sample() if eval_sample is None else eval_sample
    star = model.theta_star
    its, norms, exc, perr = iterate(
        lambda th: model.mean_surrogate_grad(th, th, sample), theta0, steps, step,
        excess=lambda th: model.excess_risk(th, ev), star=star,
        diverge_radius=10 * model.delta_M, excess_every=excess_every)
    m2 = float(np.mean(np.sum(model.marginal_grads(star, ev) ** 2, axis=1)))
    pred = em_stat_error_prediction(m2, model.beta, model.mu1, model.G_star, len(sample), delta)
    pre = {"init_in_ball": bool(np.linalg.norm(np.asarray(theta0) - star)
                                <= np.linalg.norm(star) * (0.25 if isinstance(model, GMM2) else 1 / 32))}
    return GDTrace(its, norms, exc, step, pred, perr, pre)


def snr_parameters(model: EMModel, eta_threshold: float = 1.0, c1: float = 1.0,
                   c2: float = 1.0) -> tuple[float, bool]:
    """``(mu2, admissible)``: the gradient-smoothness constant at this signal-to-noise
    ratio and whether the ratio clears ``eta_threshold``."""
    eta = model.snr
    if isinstance(model, MLR2):
        mu2 = 0.25
    elif eta == 0:
        mu2 = math.inf
    else:
        mu2 = c1 * (1 + 1 / eta**2 + eta**2) * math.exp(-c2 * eta**2)
    return mu2, bool(eta >= eta_threshold)
