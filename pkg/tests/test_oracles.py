"""Re-derive the exact oracle literals symbolically."""

import numpy as np
import pytest

import oracles

sp = pytest.importorskip("sympy")


def gaussian_moment(k, m, v):
    """E x^k for x ~ N(m, v)."""
    # binomial expansion with E z^j = (j - 1)!! for even j
    return sp.expand(sum(sp.binomial(k, j) * m ** (k - j) * v ** (j // 2) * sp.factorial2(j - 1)
                         for j in range(0, k + 1, 2)))


def as_float(mat):
    return np.array(mat.tolist(), dtype=np.float64)


@pytest.fixture(scope="module")
def transformed_gaussian():
    m, v = sp.symbols("m v", real=True)
    c = sp.Rational(1, 10)
    moment = {}

    def y_moment(k):
        if k not in moment:
            poly = sp.Poly(sp.expand((sp.Symbol("x") + c * sp.Symbol("x") ** 3) ** k), sp.Symbol("x"))
            moment[k] = sum(coef * gaussian_moment(p, m, v) for (p,), coef in poly.terms())
        return moment[k]

    at = {m: 0, v: 1}
    mu = sp.Matrix([y_moment(k) for k in range(1, 5)])
    sigma = sp.Matrix(4, 4, lambda i, j: y_moment(i + j + 2) - y_moment(i + 1) * y_moment(j + 1)).subs(at)
    jac = mu.jacobian([m, v]).subs(at)
    return mu.subs(at), sigma, jac


def test_transformed_gaussian_moments(transformed_gaussian):
    mu, sigma, jac = transformed_gaussian
    np.testing.assert_allclose(as_float(mu).ravel(), oracles.TG_MU, rtol=1e-15)
    np.testing.assert_allclose(as_float(sigma), oracles.TG_SIGMA1, rtol=1e-15)
    np.testing.assert_allclose(as_float(jac), oracles.TG_G, rtol=1e-15)


def test_transformed_gaussian_pim(transformed_gaussian):
    _, sigma, jac = transformed_gaussian
    pim = jac.T * sigma.inv() * jac
    np.testing.assert_allclose(as_float(pim), oracles.TG_PIM1, rtol=1e-14, atol=1e-300)
    np.testing.assert_allclose(as_float((500 * pim).inv()), oracles.TG_PRED_COV_N500, rtol=1e-14)


def test_laplace_pim_ladder():
    y, t = sp.symbols("y t", real=True)
    # E y^k under Laplace(t, 1) via the symmetric density around t
    def moment(k):
        return sp.expand(sp.integrate(sp.expand((y + t) ** k) * sp.exp(-y), (y, 0, sp.oo)) / 2
                         + sp.integrate(sp.expand((t - y) ** k) * sp.exp(-y), (y, 0, sp.oo)) / 2)

    mom = [moment(k) for k in range(9)]
    for m_count, expected in oracles.LAPLACE_PIM_BY_M.items():
        jac = sp.Matrix([sp.diff(mom[k], t) for k in range(1, m_count + 1)]).subs(t, 0)
        sigma = sp.Matrix(m_count, m_count, lambda i, j: mom[i + j + 2] - mom[i + 1] * mom[j + 1]).subs(t, 0)
        assert sp.nsimplify((jac.T * sigma.inv() * jac)[0]) == sp.nsimplify(expected)
        if m_count == 2:
            np.testing.assert_array_equal(as_float(sigma), oracles.LAPLACE_SIGMA_M1M2)
