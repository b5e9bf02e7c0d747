import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from localbounds.classes import gen_heavy_tailed_linear
from localbounds.convexcost import (
    CostSpec,
    CurvatureVanishedError,
    DegenerateInputError,
    SmallBallEstimate,
    alpha,
    fit_huber,
    fit_square,
    huber_derivative,
    huber_value,
    huber_vs_square_experiment,
    small_ball_estimate,
    theorem81_bound,
)

COSTS = [CostSpec.square(), CostSpec.huber(1.0), CostSpec.huber(0.3), CostSpec.logistic()]


class TestCatalogue:
    def test_huber_alpha(self):
        c = CostSpec.huber(1.0)
        assert alpha(c, 0.5) == 0.5 and alpha(c, 2.0) == 0.0 and alpha(c, 1.0) == 0.5

    def test_logistic_alpha(self):
        assert alpha(CostSpec.logistic(), 0.0) == pytest.approx(math.e / (math.e + 1) ** 2, rel=1e-14)
        assert alpha(CostSpec.logistic(), 0.0) == pytest.approx(0.19661, abs=1e-5)

    @pytest.mark.parametrize("v", [0.0, 1.0, 1e6])
    def test_square_alpha(self, v):
        assert alpha(CostSpec.square(), v) == 0.5

    @pytest.mark.parametrize("cost", COSTS, ids=lambda c: f"{c.kind}-{c.gamma}")
    def test_alpha_non_increasing(self, cost):
        vals = [alpha(cost, v) for v in np.linspace(0, 50, 500)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_beta_sv(self):
        assert [c.beta_sv for c in COSTS] == [0.5, 0.5, 0.5, 0.25]

    def test_alpha_negative_v(self):
        with pytest.raises(ValueError):
            alpha(CostSpec.square(), -1.0)

    @pytest.mark.parametrize("args", [("bogus",), ("huber",), ("huber", -1.0)])
    def test_invalid_cost(self, args):
        with pytest.raises(ValueError):
            CostSpec(*args)

    @given(st.floats(0.01, 10.0))
    def test_huber_seam_is_c1(self, gamma):
        for side in (-1.0, 1.0):
            u = side * gamma
            left, right = u * (1 - 1e-15), u * (1 + 1e-15)
            assert abs(float(huber_value(left, gamma)) - float(huber_value(right, gamma))) <= 1e-12
            assert abs(float(huber_derivative(left, gamma)) - float(huber_derivative(right, gamma))) <= 1e-12
            assert float(huber_value(u, gamma)) == pytest.approx(0.5 * gamma**2)

    def test_huber_derivative_is_gradient(self):
        u = np.linspace(-3, 3, 61)
        h = 1e-6
        fd = (huber_value(u + h, 1.0) - huber_value(u - h, 1.0)) / (2 * h)
        np.testing.assert_allclose(huber_derivative(u, 1.0), fd, atol=1e-6)

    def test_logistic_derivative(self):
        c = CostSpec.logistic()
        u = np.linspace(-5, 5, 21)
        fd = (c.value(u + 1e-6) - c.value(u - 1e-6)) / 2e-6
        np.testing.assert_allclose(c.derivative(u), fd, atol=1e-8)

    def test_logistic_localization_payoff(self):
        c = CostSpec.logistic()
        assert alpha(c, 4 * 1.0 / math.sqrt(0.5)) / alpha(c, 20.0) > 1e3


class TestSmallBall:
    data = gen_heavy_tailed_linear(5, None, 1.0)

    def test_single_hypothesis_gaussian_tail(self):
        sb = small_ball_estimate(self.data, kappa_grid=[0.5], num_hypotheses=1, probes=40_000)
        p = 2 * (1 - norm.cdf(0.5))
        assert p == pytest.approx(0.61708, abs=1e-5)
        assert abs(sb.c_kappa - p) <= 3 * math.sqrt(p * (1 - p) / 40_000) + 0.01

    def test_min_over_family(self):
        sb = small_ball_estimate(self.data, kappa_grid=[0.5])
        assert 0.58 <= sb.c_kappa <= 0.62
        assert sb.probe_count == 10_000

    def test_small_kappa(self):
        grid = dict(small_ball_estimate(self.data, kappa_grid=[1e-4]).grid)
        assert grid[1e-4] >= 0.999

    def test_kappa_above_esssup(self):
        # bounded differences: |h - h*| is constant, so the ratio is exactly 1
        fam = lambda x: np.sign(x[:, :1].T)  # noqa: E731
        sb = small_ball_estimate(self.data, fam, kappa_grid=[0.5, 1.0])
        assert dict(sb.grid)[1.0] == 1.0
        # |h - h*| in {1, 1/2} has L2 norm ~0.79, so kappa = 1 keeps only the larger half
        fam2 = lambda x: np.where(x[:, :1].T > 0, 1.0, 0.5)  # noqa: E731
        assert small_ball_estimate(self.data, fam2, kappa_grid=[1.0]).grid[0][1] == pytest.approx(0.5, abs=0.03)

    def test_kappa_above_one_rejected(self):
        # the ratio never exceeds its essential sup, which is at least 1, so kappa > 1 is out of range
        fam = lambda x: np.ones((1, len(x)))  # noqa: E731
        g = small_ball_estimate(self.data, fam, kappa_grid=[1.0]).grid
        assert g[0][1] == 1.0
        with pytest.raises(ValueError):
            small_ball_estimate(self.data, fam, kappa_grid=[1.5])

    def test_returns_argmax(self):
        sb = small_ball_estimate(self.data)
        assert sb.kappa**2 * sb.c_kappa == max(k**2 * c for k, c in sb.grid)

    def test_degenerate(self):
        with pytest.raises(DegenerateInputError):
            small_ball_estimate(self.data, lambda x: np.zeros((1, len(x))))

    def test_too_few_probes(self):
        with pytest.raises(ValueError):
            small_ball_estimate(self.data, probes=9999)


def sqrt_phi(d, n):
    return lambda r: math.sqrt(d * r / n)


def noise_phi(s2, d, n):
    return lambda r, delta: math.sqrt(s2 * (d + math.log(1 / delta)) * r / n)


class TestTwoFixedPointBound:
    data = gen_heavy_tailed_linear(10, None, 1.0)
    sb = SmallBallEstimate(0.5, 0.5, 10_000)

    def test_version_fixed_point_zero_for_large_n(self):
        # generator slope 16 sqrt(d/n)/(c k) is below 1 at n = 10^6
        cert = theorem81_bound(CostSpec.square(), self.data, sqrt_phi(10, 10**6),
                               lambda r, d: 0.0, self.sb, 0.1, 1e-6)
        assert cert.details["fp_of_version_surrogate"] == 0.0

    def test_version_fixed_point_positive_small_n(self):
        n = 10**4
        cert = theorem81_bound(CostSpec.square(), self.data, sqrt_phi(10, n),
                               lambda r, d: 0.0, self.sb, 0.1, 1e-6)
        k = 8 / (0.5 * 0.5)
        cap = 4 * self.data.Delta**2
        # past the cap the generator is k sqrt(2r) sqrt(d cap/n)
        assert cert.details["fp_of_version_surrogate"] == pytest.approx(2 * k**2 * 10 * cap / n, rel=1e-9)

    def test_noise_fixed_point_closed_form(self):
        n, d, delta, r0 = 10**6, 10, 0.1, 1e-6
        cert = theorem81_bound(CostSpec.square(), self.data, sqrt_phi(d, 10**6), noise_phi(1.0, d, n),
                               self.sb, delta, r0)
        C = cert.constants["C_r0"]
        assert C == pytest.approx(2 + (16 / 0.5 + 2) * math.log(4 * self.data.Delta**2 / r0))
        k = 4 / (0.5 * 0.25 * 0.5)
        # k sqrt(K 2r) = r  =>  r = 2 k^2 K
        want = 2 * k**2 * (d + math.log(C / delta)) / n
        assert cert.details["fp_of_noise_surrogate"] == pytest.approx(want, rel=1e-9)
        assert cert.bound == pytest.approx(0.25 * want, rel=1e-9)
        assert cert.details["l2_radius"] == pytest.approx(want, rel=1e-9)

    def test_r0_dominates(self):
        cert = theorem81_bound(CostSpec.logistic(), self.data, lambda r: 0.0, lambda r, d: 0.0,
                               self.sb, 0.1, 0.01)
        assert cert.bound == pytest.approx(0.25 / 2 * 0.01)

    def test_monotone(self):
        base = dict(cost=CostSpec.square(), data=self.data, delta=0.1, r0=1e-6)
        b1 = theorem81_bound(phi=sqrt_phi(10, 10**4), phi_noise=noise_phi(1, 10, 10**4), sb=self.sb, **base)
        b2 = theorem81_bound(phi=sqrt_phi(20, 10**4), phi_noise=noise_phi(1, 10, 10**4), sb=self.sb, **base)
        b3 = theorem81_bound(phi=sqrt_phi(10, 10**4), phi_noise=noise_phi(2, 10, 10**4), sb=self.sb, **base)
        b4 = theorem81_bound(phi=sqrt_phi(10, 10**4), phi_noise=noise_phi(1, 10, 10**4),
                             sb=SmallBallEstimate(0.5, 0.4, 10_000), **base)
        assert b1.bound <= b2.bound and b1.bound <= b3.bound and b1.bound <= b4.bound

    def test_curvature_vanishes(self):
        with pytest.raises(CurvatureVanishedError, match="alpha"):
            theorem81_bound(CostSpec.huber(2 * self.data.xi_l2), self.data, lambda r: 0.0,
                            lambda r, d: 0.0, self.sb, 0.1, 1e-6)

    def test_huber_admissible(self):
        gamma = 4 * self.data.xi_l2 / math.sqrt(0.5)
        cert = theorem81_bound(CostSpec.huber(gamma), self.data, sqrt_phi(10, 10**6),
                               noise_phi(1, 10, 10**6), self.sb, 0.1, 1e-6, n=10**6)
        assert cert.constants["alpha"] == 0.5
        assert set(cert.details["preconditions"]) == {"noise_gate", "version_gate", "sample_size"}
        assert cert.details["source_labels"]["fp_of_noise_surrogate"] == "r*_ver"

    @pytest.mark.parametrize("kw", [{"delta": 1.0}, {"r0": 0.0}, {"r0": 1e9}])
    def test_invalid(self, kw):
        args = {"delta": 0.1, "r0": 1e-3} | kw
        with pytest.raises(ValueError):
            theorem81_bound(CostSpec.square(), self.data, lambda r: 0.0, lambda r, d: 0.0, self.sb, **args)


class TestFits:
    def test_noiseless_recovery(self):
        rows = huber_vs_square_experiment(5, None, [200], 5, scale=0.0)
        assert all(r["median_err"] < 1e-16 and r["p95_err"] < 1e-16 for r in rows)
        assert rows[1]["nonconverged"] == 0

    def test_huber_fit_is_stationary(self):
        data = gen_heavy_tailed_linear(4, 2.5, 1.0, seed=3)
        s = data.sample(400, 1)
        th, ok = fit_huber(s, 2.0)
        assert ok
        grad = s.x.T @ huber_derivative(s.x @ th - s.y, 2.0) / 400
        assert np.linalg.norm(grad) <= 1e-8

    def test_square_fit_normal_equations(self):
        data = gen_heavy_tailed_linear(4, None, 1.0)
        s = data.sample(100, 1)
        th = fit_square(s)
        np.testing.assert_allclose(s.x.T @ (s.x @ th - s.y), 0, atol=1e-10)

    def test_rows_schema(self):
        rows = huber_vs_square_experiment(3, 5.0, [50, 100], 4, seed=1)
        assert [(r["cost"], r["n"]) for r in rows] == [("square", 50), ("huber", 50), ("square", 100), ("huber", 100)]
        assert all(r["p95_err"] >= r["median_err"] for r in rows)
