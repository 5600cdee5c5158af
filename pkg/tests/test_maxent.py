import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from pimtool.errors import Infeasible
from pimtool.maxent import (
    FiniteSupport,
    HalfLine,
    RealLine,
    bound_chain_check,
    cross_term,
    fit_maxent,
    maxent_for_model,
    misspecified_fim,
    structural_obstruction,
    tight_condition_residual,
)
from pimtool.models import ModelSpec
from pimtool.moments import analytic_moments
from pimtool.pim import pim
from pimtool.statistics import StatisticSet

M1, M12 = StatisticSet([1]), StatisticSet([1, 2])
# relative error carried by d_lambda from refits at theta +/- 1e-5
FD_ALLOWANCE = 1e-6
BERN = ModelSpec("bernoulli", (0.3,))
LAPLACE = ModelSpec("laplace", (0.0,))
GAUSS = ModelSpec("gaussian", (0.0, 1.0))


class TestFit:
    def test_bernoulli(self):
        fit = fit_maxent(FiniteSupport([0, 1]), M1, [0.3])
        assert fit.converged
        assert fit.lam[0] == pytest.approx(oracles.BERN_LAMBDA, abs=1e-10)
        assert fit.lambda0 == pytest.approx(oracles.BERN_LAMBDA0, abs=1e-10)

    def test_gaussian_on_real_line(self):
        fit = fit_maxent(RealLine(), M12, [0.0, 2.0])
        assert fit.converged
        np.testing.assert_allclose(fit.lam, oracles.GAUSS02_LAMBDA, atol=1e-10)
        assert fit.lambda0 == pytest.approx(oracles.GAUSS02_LAMBDA0, abs=1e-10)

    def test_exponential_on_half_line(self):
        fit = fit_maxent(HalfLine(), M1, [0.5])
        assert fit.lam[0] == pytest.approx(-2.0, abs=1e-9)
        assert fit.lambda0 == pytest.approx(-math.log(2.0), abs=1e-9)

    def test_outside_the_hull(self):
        with pytest.raises(Infeasible):
            fit_maxent(FiniteSupport([0, 1]), M1, [1.5])

    @pytest.mark.parametrize("support", [FiniteSupport([0, 1, 2]), RealLine()])
    def test_negative_variance_target(self, support):
        with pytest.raises(Infeasible):
            fit_maxent(support, M12, [1.0, 0.5])

    def test_odd_top_degree_on_real_line(self):
        assert structural_obstruction(RealLine(), M1) is not None
        assert structural_obstruction(HalfLine(), M1) is None
        with pytest.raises(Infeasible):
            fit_maxent(RealLine(), StatisticSet([1, 2, 3]), [0.0, 1.0, 0.0])

    def test_joint_parameters_scale_with_n_obs(self):
        one = fit_maxent(RealLine(), M12, [0.0, 2.0])
        five = fit_maxent(RealLine(), M12, [0.0, 2.0], n_obs=5)
        np.testing.assert_allclose(five.lam, 5 * one.lam, atol=1e-10)
        assert five.lambda0 == pytest.approx(5 * one.lambda0, rel=1e-12)

    @given(st.floats(-3, 3), st.floats(0.2, 5))
    def test_real_line_targets_are_reproduced(self, m, v):
        mu = np.array([m, m * m + v])
        fit = fit_maxent(RealLine(), M12, mu)
        assert fit.converged
        assert fit.residual <= 1e-10 * max(1.0, np.linalg.norm(mu))
        np.testing.assert_allclose(fit.lam, [m / v, -0.5 / v], rtol=1e-7, atol=1e-9)

    @given(st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3))
    def test_finite_support_targets_are_reproduced(self, weights):
        p = np.array(weights) / np.sum(weights)
        x = np.array([0.0, 1.0, 2.0])
        mu = np.array([p @ x, p @ x**2])
        fit = fit_maxent(FiniteSupport(x), M12, mu)
        assert fit.converged
        assert fit.residual <= 1e-10 * max(1.0, np.linalg.norm(mu))

    @given(st.floats(0.3, 3.0))
    def test_quartic_real_line_fit(self, v):
        # Gaussian targets for [m1..m4]: the fit must put zero weight on the odd and quartic terms
        mu = np.array([0.0, v, 0.0, 3 * v * v])
        fit = fit_maxent(RealLine(), StatisticSet([1, 2, 3, 4]), mu)
        assert fit.converged
        np.testing.assert_allclose(fit.lam, [0.0, -0.5 / v, 0.0, 0.0], atol=1e-6 / min(v, 1) ** 2)


class TestMisspecified:
    def test_bernoulli_self_fit(self):
        fit = maxent_for_model(BERN, M1)
        np.testing.assert_allclose(fit.d_lambda, [[1 / 0.21]], rtol=1e-6)
        f = misspecified_fim(fit, analytic_moments(BERN, M1).sigma)
        assert f.kind == "misspecified"
        assert f.matrix[0, 0] == pytest.approx(oracles.BERN_FIM_VALUE, rel=1e-6)

    def test_laplace_with_gaussian_maxent(self):
        fit = maxent_for_model(LAPLACE, M12)
        np.testing.assert_allclose(fit.d_lambda, oracles.LAPLACE_DLAMBDA, atol=1e-6)
        f = misspecified_fim(fit, oracles.LAPLACE_SIGMA_M1M2)
        assert f.matrix[0, 0] == pytest.approx(0.5, rel=1e-6)

    def test_zero_sensitivity(self):
        fit = maxent_for_model(LAPLACE, M12)
        import dataclasses

        flat = dataclasses.replace(fit, d_lambda=np.zeros_like(fit.d_lambda))
        np.testing.assert_array_equal(misspecified_fim(flat, oracles.LAPLACE_SIGMA_M1M2).matrix, [[0.0]])

    @pytest.mark.parametrize(
        "m, s", [(BERN, M1), (GAUSS, M12), (ModelSpec("gaussian", (1.0, 0.5), n_obs=3), M12), (ModelSpec("exponential", (2.0,)), M1)]
    )
    def test_log_partition_gradient(self, m, s):
        fit = maxent_for_model(m, s)
        expected = fit.d_lambda.T @ fit.target_mu
        np.testing.assert_allclose(fit.d_lambda0, expected, rtol=1e-6, atol=1e-9)


class TestCrossTerm:
    def test_vanishes_for_self_sufficient_model(self):
        fit = maxent_for_model(BERN, M1)
        ct = cross_term(fit, BERN, M1, 10**5, 0)
        # score - m is (1/(p(1-p)) - d_lambda)(y - p): only finite-difference error survives
        assert np.all(np.abs(ct.matrix) <= 4 * ct.stderr + FD_ALLOWANCE * oracles.BERN_FIM_VALUE)

    def test_vanishes_for_laplace_under_tight_condition(self):
        fit = maxent_for_model(LAPLACE, M12)
        ct = cross_term(fit, LAPLACE, M12, 10**5, 0)
        assert np.all(np.abs(ct.matrix) <= 4 * ct.stderr)

    def test_is_symmetric(self):
        m = ModelSpec("gaussian", (0.3, 1.4))
        fit = maxent_for_model(m, M12, target_shift=[0.2, 0.5])
        ct = cross_term(fit, m, M12, 10**4, 0)
        np.testing.assert_array_equal(ct.matrix, ct.matrix.T)


class TestChain:
    def test_bernoulli(self):
        rep = bound_chain_check(BERN, M1)
        for mat in (rep.f_star.matrix, rep.pim.matrix, rep.fim.matrix):
            assert mat[0, 0] == pytest.approx(oracles.BERN_FIM_VALUE, rel=1e-6)
        assert rep.chain_holds and rep.gap_identity_ok
        assert rep.tight_residual < 1e-8

    def test_laplace(self):
        rep = bound_chain_check(LAPLACE, M12)
        assert rep.f_star.matrix[0, 0] == pytest.approx(0.5, rel=1e-6)
        assert rep.pim.matrix[0, 0] == pytest.approx(0.5, rel=1e-12)
        assert rep.fim.matrix[0, 0] == 1.0
        assert rep.chain_holds and rep.gap_identity_ok
        assert rep.tight_residual < 1e-4

    def test_gaussian(self):
        rep = bound_chain_check(GAUSS, M12)
        np.testing.assert_allclose(rep.f_star.matrix, oracles.GAUSS_FIM, atol=1e-6)
        np.testing.assert_allclose(rep.pim.matrix, oracles.GAUSS_FIM, atol=1e-12)
        assert rep.chain_holds and rep.tight_residual < 1e-8

    @pytest.mark.parametrize("shift", [[0.3, 0.0], [0.0, 0.8], [-0.4, 1.5]])
    def test_mismatched_fit_still_bounded(self, shift):
        m = ModelSpec("gaussian", (0.0, 1.0))
        fit = maxent_for_model(m, M12, target_shift=shift)
        rep = bound_chain_check(m, M12, fit=fit)
        assert rep.tight_residual > 1e-3
        assert np.any(np.abs(rep.f_tilde) > 4 * rep.f_tilde_stderr)
        assert rep.lower_ok

    @pytest.mark.parametrize("shift", [[0.3, 0.0], [0.0, 0.8], [-0.4, 1.5]])
    def test_gap_identity_picks_up_the_moment_mismatch(self, shift):
        # with delta = mu_true - mu_fit, E[m m^T] gains d^T delta delta^T d, so
        # F* + F~ = PIM - D^T Sigma D - 2 d^T delta delta^T d
        m = ModelSpec("gaussian", (0.0, 1.0))
        fit = maxent_for_model(m, M12, target_shift=shift)
        rep = bound_chain_check(m, M12, fit=fit)
        v = fit.d_lambda.T @ np.asarray(shift)
        assert rep.gap_identity_residual == pytest.approx(np.linalg.norm(2 * np.outer(v, v)), abs=rep.gap_budget)

    def test_tight_condition_implies_f_star_equals_pim(self):
        for m, s in [(BERN, M1), (GAUSS, M12), (ModelSpec("exponential", (0.5,)), M1)]:
            rep = bound_chain_check(m, s)
            assert rep.tight_residual <= 1e-6
            b = rep.pim.matrix
            assert np.linalg.norm(rep.f_star.matrix - b) <= 1e-6 * np.linalg.norm(b)
            assert np.all(np.abs(rep.f_tilde) <= 4 * rep.f_tilde_stderr + FD_ALLOWANCE * np.linalg.norm(b))

    def test_tight_residual_measures_distance(self):
        fit = maxent_for_model(LAPLACE, M12)
        summ = analytic_moments(LAPLACE, M12)
        assert tight_condition_residual(fit, summ) < 1e-4
        assert pim(summ).matrix[0, 0] == pytest.approx(0.5)

    def test_monte_carlo_moments_budget(self):
        rep = bound_chain_check(LAPLACE, M12, 10**5, 3, method="mc")
        assert rep.chain_holds and rep.gap_identity_ok
