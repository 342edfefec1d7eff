import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zakai._kernels import MAX_HALF_BAND, CyclicBand, use_dense


def cyclic_band(n, p, rng, dominance=2.0):
    mat = np.zeros((n, n))
    for i in range(n):
        for o in range(-p, p + 1):
            mat[i, (i + o) % n] += rng.standard_normal()
        mat[i, i] += dominance * (2 * p + 1)
    return mat


@given(st.integers(1, 6), st.integers(0, 200), st.integers(0, 10**6))
def test_cyclic_band_solve_matches_dense(p, extra, seed):
    rng = np.random.default_rng(seed)
    n = 2 * p + 1 + extra
    mat = cyclic_band(n, p, rng)
    b = rng.standard_normal(n)
    cb = CyclicBand(mat, p)
    assert cb.status == -1  # no failing pivot
    x = cb.solve(b)
    ref = np.linalg.solve(mat, b)
    assert np.max(np.abs(x - ref)) <= 1e-11 * (1 + np.max(np.abs(ref)))


@pytest.mark.parametrize("n,p", [(10, 2), (40, MAX_HALF_BAND + 1), (64, 1), (9, 4)])
def test_dense_fallback_and_small_systems(n, p):
    rng = np.random.default_rng(n + p)
    mat = cyclic_band(n, p, rng)
    b = rng.standard_normal(n)
    x = CyclicBand(mat, p).solve(b)
    assert np.allclose(mat @ x, b, atol=1e-11)


def test_use_dense_rule():
    assert use_dense(10, MAX_HALF_BAND + 1)
    assert use_dense(4 * 3 + 2, 3)
    assert not use_dense(256, 3)


def test_pivoting_handles_zero_diagonal():
    # a cyclic shift with a zero diagonal needs row exchanges
    n, p = 30, 2
    rng = np.random.default_rng(3)
    mat = cyclic_band(n, p, rng, dominance=0.0)
    np.fill_diagonal(mat, 0.0)
    b = rng.standard_normal(n)
    x = CyclicBand(mat, p).solve(b)
    assert np.allclose(mat @ x, b, atol=1e-9 * np.linalg.cond(mat))
