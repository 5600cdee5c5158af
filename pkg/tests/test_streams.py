import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from pimtool.streams import draw_uniforms


def test_open_unit_interval():
    u = draw_uniforms(0, 0, 10**5, 3)
    assert u.shape == (10**5, 3)
    assert u.min() > 0 and u.max() < 1


def test_moments_of_uniform():
    u = draw_uniforms(1, 0, 10**6, 1).ravel()
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / u.size)


@given(st.integers(0, 2**64 - 1), st.integers(0, 500), st.integers(1, 40), st.integers(1, 7))
def test_draws_do_not_depend_on_the_window(seed, start, count, width):
    whole = draw_uniforms(seed, 0, start + count, width)
    window = draw_uniforms(seed, start, count, width)
    np.testing.assert_array_equal(whole[start:], window)


def test_jobs_do_not_change_bits():
    one = draw_uniforms(9, 3, 40_000, 5)
    many = draw_uniforms(9, 3, 40_000, 5, jobs=4)
    assert one.tobytes() == many.tobytes()


def test_streams_and_seeds_are_distinct():
    a = draw_uniforms(5, 0, 100, 2, stream=0)
    b = draw_uniforms(5, 0, 100, 2, stream=1)
    c = draw_uniforms(6, 0, 100, 2, stream=0)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)
