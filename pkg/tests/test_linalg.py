import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pimtool.errors import DimensionMismatch, NotPositiveDefinite
from pimtool.linalg import (
    cholesky,
    format_matrix,
    loewner_leq,
    min_eigenvalue,
    parse_matrix,
    solve_spd,
    sym,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def square(max_dim=5):
    return st.integers(1, max_dim).flatmap(lambda d: arrays(np.float64, (d, d), elements=finite))


@st.composite
def well_conditioned_spd(draw):
    d = draw(st.integers(1, 6))
    q, _ = np.linalg.qr(draw(arrays(np.float64, (d, d), elements=st.floats(-1, 1))) + 2 * np.eye(d))
    log_eigs = draw(arrays(np.float64, d, elements=st.floats(-3, 3)))
    return sym(q @ np.diag(10.0**log_eigs) @ q.T)


class TestSolve:
    def test_diagonal(self):
        np.testing.assert_allclose(solve_spd(np.diag([2.0, 2.0]), [1.0, 1.0]), [0.5, 0.5])

    def test_identity_passes_rhs_through(self):
        b = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(solve_spd(np.eye(3), b), b)

    def test_coupled_two_by_two(self):
        np.testing.assert_allclose(solve_spd([[2.0, 1.0], [1.0, 2.0]], [3.0, 3.0]), [1.0, 1.0], rtol=1e-14)

    def test_singular_raises(self):
        with pytest.raises(NotPositiveDefinite):
            solve_spd([[1.0, 1.0], [1.0, 1.0]], [1.0, 0.0])

    def test_indefinite_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.diag([1.0, -1.0]))

    def test_tiny_pivot_relative_to_trace_raises(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky(np.diag([1.0, 1e-17]))

    def test_rhs_rows_must_match(self):
        with pytest.raises(DimensionMismatch):
            solve_spd(np.eye(2), np.ones(3))

    @given(well_conditioned_spd(), st.integers(1, 3), st.data())
    def test_recovers_rhs(self, a, k, data):
        b = data.draw(arrays(np.float64, (a.shape[0], k), elements=st.floats(-10, 10)))
        x = solve_spd(a, b)
        assert np.linalg.norm(a @ x - b) <= 1e-10 * max(np.linalg.norm(b), 1e-300) + 1e-300


class TestLoewner:
    def test_diagonal_holds(self):
        rep = loewner_leq(np.diag([1.0, 0.0]), np.diag([1.0, 0.5]), 1e-10)
        assert rep.holds and bool(rep)

    def test_fails_with_negative_gap(self):
        rep = loewner_leq(np.eye(2), 0.5 * np.eye(2), 1e-10)
        assert not rep.holds
        assert rep.min_eigenvalue_of_difference == pytest.approx(-0.5)

    def test_scalar_gap(self):
        rep = loewner_leq([[0.5]], [[1.0]], 1e-10)
        assert rep.holds
        assert rep.min_eigenvalue_of_difference == pytest.approx(0.5)

    def test_tolerance_scales_with_norm(self):
        rep = loewner_leq(np.diag([300.0, 400.0]), np.diag([300.0, 400.0]), 1e-10)
        assert rep.tolerance_used == pytest.approx(500.0 * 1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            loewner_leq(np.eye(2), np.eye(3))

    @given(square(), st.floats(0, 1))
    def test_reflexive(self, a, tol):
        assert loewner_leq(a, a, tol).holds

    @given(
        st.integers(1, 5).flatmap(
            lambda d: st.tuples(*[arrays(np.float64, d, elements=st.integers(0, 50).map(float))] * 3)
        )
    )
    def test_transitive_on_exact_diagonals(self, parts):
        a = np.diag(parts[0])
        b = a + np.diag(parts[1])
        c = b + np.diag(parts[2])
        assert min_eigenvalue(b - a) >= 0 and min_eigenvalue(c - b) >= 0
        assert loewner_leq(a, c, 0.0).holds

    @given(square())
    def test_report_consistency(self, a):
        rep = loewner_leq(a, sym(a) + np.eye(a.shape[0]), 1e-10)
        assert rep.holds == (rep.min_eigenvalue_of_difference >= -rep.tolerance_used)


class TestSymmetricHelpers:
    @pytest.mark.parametrize(
        "a, expected", [(np.diag([3.0, 1.0, 2.0]), 1.0), (np.zeros((2, 2)), 0.0), ([[2.0, 1.0], [1.0, 2.0]], 1.0)]
    )
    def test_min_eigenvalue(self, a, expected):
        assert min_eigenvalue(a) == pytest.approx(expected, abs=1e-15)

    @given(square())
    def test_sym_is_idempotent(self, a):
        s = sym(a)
        np.testing.assert_array_equal(s, s.T)
        np.testing.assert_array_equal(sym(s), s)

    def test_sym_rejects_non_square(self):
        with pytest.raises(DimensionMismatch):
            sym(np.ones((2, 3)))

    @given(square())
    def test_text_round_trip(self, a):
        text = format_matrix(a)
        assert text.startswith(f"dim={a.shape[0]}\n")
        np.testing.assert_array_equal(parse_matrix("# header\n" + text), a)

    def test_parse_rejects_ragged(self):
        with pytest.raises(ValueError):
            parse_matrix("dim=2\n1 2\n3\n")
