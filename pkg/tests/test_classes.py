import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from localbounds import rng
from localbounds.classes import (
    BoundednessError,
    FiniteLossProblem,
    Sample,
    gen_finite_random,
    gen_finite_zero_variance,
    gen_gmm2,
    gen_heavy_tailed_linear,
    gen_linear_regression,
    gen_mlr2,
    gen_quadratic,
    gen_sigmoid_regression,
)


def central_difference(f, theta, h):
    out = np.empty_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out


class TestFiniteProblems:
    def test_zero_variance_risks(self):
        p = gen_finite_zero_variance(0.1, 1.0)
        np.testing.assert_allclose(p.risks(), [0.0, 0.2], atol=1e-15)
        assert p.optimal_index == 0
        assert p.variance(0) == 0.0
        assert p.variance(1) == pytest.approx(1 - 0.2**2)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 0.49), st.floats(0.1, 10.0))
    def test_zero_variance_bounded(self, eps, B):
        p = gen_finite_zero_variance(eps, B)
        assert np.all(np.abs(p.loss_matrix(p.sample(500, 3))) <= B)
        assert p.risks()[1] == pytest.approx(2 * eps * B)

    @pytest.mark.parametrize("eps", [0.0, 0.5, -0.1])
    def test_eps_range(self, eps):
        with pytest.raises(ValueError):
            gen_finite_zero_variance(eps)

    def test_out_of_range_table(self):
        with pytest.raises(BoundednessError):
            FiniteLossProblem(np.array([[0.0, 2.0]]), np.array([0.5, 0.5]), 1.0)

    def test_bad_probs(self):
        with pytest.raises(ValueError):
            FiniteLossProblem(np.zeros((1, 2)), np.array([0.4, 0.4]), 1.0)

    def test_sampling_frequencies(self):
        p = gen_finite_zero_variance(0.1)
        atoms = p.sample(1_000_000, 11)
        freq = np.mean(atoms == 0)
        assert abs(freq - 0.6) <= 3 * math.sqrt(0.24 / 1e6)

    def test_optimal_is_empirically_minimal(self):
        p = gen_finite_random(16, 32, seed=4)
        L = p.loss_matrix(p.sample(1_000_000, 5))
        means = L.mean(axis=0)
        se = L.std(axis=0) / 1000
        assert np.all(means[p.optimal_index] <= means + 3 * (se + se[p.optimal_index]))

    def test_sampling_is_reproducible(self):
        p = gen_finite_random(seed=2)
        assert np.array_equal(p.sample(100, 7, "a", 1), p.sample(100, 7, "a", 1))
        assert not np.array_equal(p.sample(100, 7, "a", 1), p.sample(100, 7, "a", 2))

    def test_excess_second_moments(self):
        p = gen_finite_random(4, 6, seed=1)
        c = p.optimal_index
        manual = [sum(p.probs[a] * (p.table[h, a] - p.table[c, a]) ** 2 for a in range(6)) for h in range(4)]
        np.testing.assert_allclose(p.excess_second_moments(), manual, rtol=1e-12)
        assert p.excess_second_moments()[c] == 0.0

    def test_effective_loss_nonnegative(self):
        assert gen_finite_random(seed=3).effective_loss() >= 0


class TestSigmoid:
    model = gen_sigmoid_regression(5, 1.0, 4.0, 0.1, seed=0)

    def test_theta_star_inside(self):
        assert np.linalg.norm(self.model.theta_star) == pytest.approx(1.0)
        assert self.model.delta_m == pytest.approx(1.0)
        assert self.model.in_domain(self.model.theta_star)

    def test_labels_in_range_and_loss_bounded(self):
        s = self.model.sample(50_000, 1)
        assert np.all((s.y >= -1) & (s.y <= 2))
        assert np.all(self.model.losses(np.zeros(5), s) <= 4)

    def test_gradient_at_star_formula(self):
        s = self.model.sample(20, 2)
        t = s.x @ self.model.theta_star
        eta = 1 / (1 + np.exp(-t))
        want = (2 * (eta - s.y) * eta * (1 - eta))[:, None] * s.x
        np.testing.assert_allclose(self.model.grads(self.model.theta_star, s), want, rtol=1e-12)

    def test_noiseless_realizable(self):
        m = gen_sigmoid_regression(3, 1.0, 4.0, 0.0, seed=1)
        s = m.sample(100, 0)
        assert np.max(np.abs(m.losses(m.theta_star, s))) < 1e-28
        assert np.max(np.abs(m.grads(m.theta_star, s))) < 1e-14

    def test_finite_difference_gradient(self):
        g = rng.stream(9, rng.STREAM_INIT, "fd")
        worst = 0.0
        for k in range(100):
            z = self.model.sample(1, 100 + k)
            theta = g.uniform(-1, 1, 5)
            fd = central_difference(lambda th: self.model.losses(th, z)[0], theta, 1e-6)
            an = self.model.grads(theta, z)[0]
            worst = max(worst, np.linalg.norm(an - fd) / (1 + np.linalg.norm(an)))
        assert worst <= 1e-5

    def test_constants_positive(self):
        assert self.model.beta > 0 and self.model.mu > 0 and self.model.G_star > 0
        assert self.model.mu < self.model.beta

    @pytest.mark.parametrize("kw", [{"d": 0}, {"tau": 0.0}, {"delta_M": -1.0}])
    def test_invalid(self, kw):
        args = {"d": 2, "tau": 1.0, "delta_M": 4.0, "noise_sd": 0.1} | kw
        with pytest.raises(ValueError):
            gen_sigmoid_regression(**args)


class TestOtherParametric:
    @pytest.mark.parametrize("factory", [gen_linear_regression, gen_quadratic])
    def test_finite_difference(self, factory):
        m = factory(4, seed=2)
        z = m.sample(1, 3)
        theta = m.theta_star + 0.3
        fd = central_difference(lambda th: m.losses(th, z)[0], theta, 1e-6)
        np.testing.assert_allclose(m.grads(theta, z)[0], fd, rtol=1e-6, atol=1e-7)

    @pytest.mark.parametrize("factory", [gen_linear_regression, gen_quadratic])
    def test_excess_zero_at_star(self, factory):
        m = factory(3, seed=1)
        assert m.excess_risk(m.theta_star) == pytest.approx(0.0, abs=1e-12)
        assert m.excess_risk(m.theta_star + 0.1) > 0


class TestMixtures:
    theta = np.array([1.0, -2.0, 0.5])

    def test_gmm_moments(self):
        m = gen_gmm2(3, 0.7, self.theta, seed=1)
        z = m.sample(1_000_000, 2).x
        sq = np.sum(z**2, axis=1)
        target = self.theta @ self.theta + 0.49 * 3
        assert abs(sq.mean() - target) <= 3 * sq.std() / 1000
        assert np.all(np.abs(z.mean(axis=0)) <= 3 * z.std(axis=0) / 1000)

    def test_gmm_degenerate(self):
        z = gen_gmm2(3, 1e-12, self.theta).sample(100, 0).x
        dist = np.minimum(np.linalg.norm(z - self.theta, axis=1), np.linalg.norm(z + self.theta, axis=1))
        assert np.max(dist) < 1e-10

    def test_mlr_moments(self):
        m = gen_mlr2(3, 0.5, self.theta, seed=1)
        s = m.sample(1_000_000, 2)
        u = s.x @ self.theta
        # conditional moments checked through uncorrelated residuals
        r1 = s.y
        r2 = s.y**2 - u**2 - 0.25
        for r in (r1, r2):
            assert abs(r.mean()) <= 3 * r.std() / 1000
            assert abs(np.mean(r * u)) <= 3 * np.std(r * u) / 1000

    def test_mlr_degenerate(self):
        m = gen_mlr2(3, 1e-12, self.theta)
        s = m.sample(100, 0)
        np.testing.assert_allclose(np.abs(s.y), np.abs(s.x @ self.theta), atol=1e-10)

    @pytest.mark.parametrize("factory", [gen_gmm2, gen_mlr2])
    def test_sigma_positive(self, factory):
        with pytest.raises(ValueError):
            factory(3, 0.0, self.theta)


class TestHeavyTailed:
    def test_xi_l2(self):
        assert gen_heavy_tailed_linear(4, 2.5, 1.0).xi_l2 == pytest.approx(math.sqrt(5), abs=1e-12)

    def test_realizable(self):
        data = gen_heavy_tailed_linear(4, 2.5, 0.0)
        s = data.sample(100, 1)
        assert data.xi_l2 == 0
        np.testing.assert_array_equal(s.y, data.h_star(s.x))

    @pytest.mark.parametrize("dof", [2.0, 1.0])
    def test_dof_range(self, dof):
        with pytest.raises(ValueError):
            gen_heavy_tailed_linear(3, dof)

    @pytest.mark.parametrize("dof", [5.0, None])
    def test_second_moment(self, dof):
        # dof 2.5 has infinite fourth moment, so the 3-SE check uses lighter tails
        data = gen_heavy_tailed_linear(3, dof, 1.5, seed=2)
        s = data.sample(1_000_000, 3)
        xi2 = (data.h_star(s.x) - s.y) ** 2
        assert abs(xi2.mean() - data.xi_l2**2) <= 3 * xi2.std() / 1000

    def test_heavy_second_moment_loose(self):
        data = gen_heavy_tailed_linear(3, 2.5, 1.0, seed=2)
        s = data.sample(1_000_000, 3)
        assert np.mean((data.h_star(s.x) - s.y) ** 2) == pytest.approx(5.0, rel=0.2)

    def test_infinite_dof_is_gaussian(self):
        assert gen_heavy_tailed_linear(2, math.inf).dof is None


def test_sample_len():
    assert len(Sample(np.zeros((7, 2)))) == 7
