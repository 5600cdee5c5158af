import numpy as np
import pytest

import oracles
from pimtool.errors import CapabilityMissing, UnsupportedAnalytic
from pimtool.models import ModelSpec
from pimtool.moments import (
    analytic_moments,
    compute_moments,
    mc_moments,
    scale_to_n_obs,
    score_moment_identity_check,
)
from pimtool.statistics import StatisticSet, custom, monomial

M12 = StatisticSet([1, 2])

ANALYTIC_CASES = [
    (ModelSpec("gaussian", (0.0, 1.0)), StatisticSet([1, 2, 3, 4])),
    (ModelSpec("gaussian", (0.7, 1.8)), M12),
    (ModelSpec("exponential", (2.0,)), M12),
    (ModelSpec("laplace", (0.4,), scale=1.3), M12),
    (ModelSpec("bernoulli", (0.3,)), StatisticSet([1])),
]


def within(est, exact, se, n_se, rel=0.0):
    allowed = np.maximum(n_se * se, rel * np.abs(exact))
    return np.all(np.abs(est - exact) <= allowed + 1e-14)


class TestAnalytic:
    def test_gaussian_m1_m2(self):
        s = analytic_moments(ModelSpec("gaussian", (0, 1)), M12)
        np.testing.assert_allclose(s.mu, oracles.GAUSS_MU, atol=1e-15)
        np.testing.assert_allclose(s.sigma, oracles.GAUSS_SIGMA, atol=1e-15)
        np.testing.assert_allclose(s.g, oracles.GAUSS_G, atol=1e-15)
        assert s.method == "analytic"

    def test_exponential_m1(self):
        s = analytic_moments(ModelSpec("exponential", (2.0,)), StatisticSet([1]))
        np.testing.assert_allclose(s.mu, oracles.EXPON_MU)
        np.testing.assert_allclose(s.sigma, oracles.EXPON_SIGMA)
        np.testing.assert_allclose(s.g, oracles.EXPON_G)

    def test_mean_of_four(self):
        s = analytic_moments(ModelSpec("gaussian", (0, 1), n_obs=4), StatisticSet([1]))
        np.testing.assert_allclose(s.sigma, [[0.25]])

    def test_laplace_covariance(self):
        s = analytic_moments(ModelSpec("laplace", (0.0,)), M12)
        np.testing.assert_allclose(s.sigma, oracles.LAPLACE_SIGMA_M1M2)

    @pytest.mark.parametrize("m, sset", ANALYTIC_CASES)
    def test_sigma_scales_inversely_with_n_obs(self, m, sset):
        one = analytic_moments(m, sset)
        many = analytic_moments(m.with_n_obs(5), sset)
        np.testing.assert_array_equal(many.mu, one.mu)
        np.testing.assert_allclose(many.sigma, one.sigma / 5, rtol=1e-15)

    @pytest.mark.parametrize(
        "m, sset",
        [
            (ModelSpec("gaussian", (0, 1)), StatisticSet([5])),
            (ModelSpec("exponential", (1.0,)), StatisticSet([3])),
            (ModelSpec("transformed-gaussian", (0, 1)), StatisticSet([1])),
            (ModelSpec("gaussian", (0, 1)), StatisticSet([custom("c", np.sum)])),
        ],
    )
    def test_unsupported(self, m, sset):
        with pytest.raises(UnsupportedAnalytic):
            analytic_moments(m, sset)

    def test_auto_falls_back(self):
        s = compute_moments(ModelSpec("exponential", (1.0,)), StatisticSet([1, 3]), "auto", k=1000, seed=0)
        assert s.method.startswith("monte-carlo")


class TestMonteCarlo:
    @pytest.mark.parametrize("m, sset", ANALYTIC_CASES)
    def test_agrees_with_closed_form(self, m, sset):
        exact = analytic_moments(m, sset)
        mc = mc_moments(m, sset, 10**6, 3)
        assert within(mc.mu, exact.mu, mc.mc_stderr_mu, 5)
        assert within(mc.sigma, exact.sigma, mc.mc_stderr_sigma, 5)
        assert within(mc.g, exact.g, mc.mc_stderr_g, 5, rel=1e-3)

    def test_transformed_gaussian_against_exact_moments(self):
        mc = mc_moments(ModelSpec("transformed-gaussian", (0, 1)), StatisticSet([1, 2, 3, 4]), 10**6, 3)
        assert within(mc.mu, oracles.TG_MU, mc.mc_stderr_mu, 5)
        assert within(mc.sigma, oracles.TG_SIGMA1, mc.mc_stderr_sigma, 5)
        assert within(mc.g, oracles.TG_G, mc.mc_stderr_g, 5, rel=1e-3)

    def test_odd_symmetry_of_transformed_mean(self):
        mc = mc_moments(ModelSpec("transformed-gaussian", (0, 1)), StatisticSet([1]), 10**6, 0)
        assert abs(mc.mu[0]) <= 4 * mc.mc_stderr_mu[0]

    def test_needs_two_draws(self):
        with pytest.raises(ValueError):
            mc_moments(ModelSpec("gaussian", (0, 1)), M12, 1, 0)

    def test_bitwise_repeatable(self):
        m = ModelSpec("laplace", (0.2,), n_obs=3)
        a = mc_moments(m, M12, 20_000, 5)
        b = mc_moments(m, M12, 20_000, 5, jobs=3)
        for x, y in [(a.mu, b.mu), (a.sigma, b.sigma), (a.g, b.g)]:
            assert x.tobytes() == y.tobytes()

    def test_sigma_is_symmetric_psd(self):
        s = mc_moments(ModelSpec("gaussian", (1, 2)), StatisticSet([1, 2, 3]), 10**4, 8)
        np.testing.assert_array_equal(s.sigma, s.sigma.T)
        assert np.linalg.eigvalsh(s.sigma)[0] >= -1e-12 * np.trace(s.sigma)

    def test_n_scaling_within_noise(self):
        m = ModelSpec("exponential", (1.5,))
        one = mc_moments(m, M12, 2 * 10**5, 1)
        five = mc_moments(m.with_n_obs(5), M12, 2 * 10**5, 1)
        assert within(five.sigma, one.sigma / 5, five.mc_stderr_sigma, 5)

    def test_rescaling_helper(self):
        m = ModelSpec("gaussian", (0, 1))
        s = scale_to_n_obs(analytic_moments(m, M12), 1, 10, M12)
        np.testing.assert_allclose(s.sigma, analytic_moments(m.with_n_obs(10), M12).sigma, rtol=1e-15)
        with pytest.raises(ValueError):
            scale_to_n_obs(s, 1, 10, StatisticSet([custom("c", np.sum)]))


class TestScoreMomentIdentity:
    @pytest.mark.parametrize(
        "m, sset",
        [
            (ModelSpec("gaussian", (0, 1)), M12),
            (ModelSpec("exponential", (2.0,)), StatisticSet([1])),
            (ModelSpec("bernoulli", (0.3,)), StatisticSet([1])),
            (ModelSpec("laplace", (0.0,)), StatisticSet([monomial(1), monomial(2)])),
        ],
    )
    def test_within_four_stderr(self, m, sset):
        rep = score_moment_identity_check(m, sset, analytic_moments(m, sset), 10**5, 0)
        assert rep.passed(4.0), rep.max_deviation

    def test_needs_a_density(self):
        m = ModelSpec("transformed-gaussian", (0, 1))
        s = mc_moments(m, M12, 100, 0)
        with pytest.raises(CapabilityMissing):
            score_moment_identity_check(m, M12, s, 100, 0)
