import numpy as np
import pytest

from zakai.grid import GridFunction, SpatialGrid, centered_derivative, lp_norm, sobolev_norm


def test_grid_validation():
    with pytest.raises(ValueError):
        SpatialGrid(3, 1.0, 16)
    with pytest.raises(ValueError):
        SpatialGrid(1, 1.0, 4)
    assert SpatialGrid(1, 1.0, 1).scalar


def test_norm_of_constant():
    g = SpatialGrid(2, 3.0, 16)
    f = GridFunction(g, np.full(g.shape, 2.0))
    # ||c||_p = c L^{d/p}
    assert np.isclose(f.norm(2), 2.0 * 3.0)
    assert np.isclose(f.norm(1), 2.0 * 9.0)
    assert f.norm(np.inf) == 2.0


def test_sine_norm_and_derivative_order():
    errs = []
    for n in (32, 64, 128):
        g = SpatialGrid(1, 2 * np.pi, n)
        f = GridFunction.sample(g, lambda x: np.sin(x[0]))
        # ||sin||_2 on [0, 2 pi) is sqrt(pi); the rectangle rule is exact for trig polynomials
        assert np.isclose(f.norm(2), np.sqrt(np.pi), rtol=1e-12)
        d = centered_derivative(f.values, g, 0, 1)
        errs.append(np.max(np.abs(d - np.cos(g.axis))))
    assert 3.8 < errs[0] / errs[1] < 4.2 and 3.8 < errs[1] / errs[2] < 4.2


def test_sobolev_norm_of_sine():
    g = SpatialGrid(1, 2 * np.pi, 2048)
    f = np.sin(g.axis)
    # f, f', f'' all have L^2 norm sqrt(pi)
    assert np.isclose(sobolev_norm(f, g, 2), 3 * np.sqrt(np.pi), rtol=1e-5)
    batch = np.stack([f, 2 * f])
    assert np.allclose(lp_norm(batch, g), [np.sqrt(np.pi), 2 * np.sqrt(np.pi)])


def test_grid_function_rejects_nonfinite():
    g = SpatialGrid(1, 1.0, 8)
    with pytest.raises(ValueError):
        GridFunction(g, np.full(8, np.nan))
    with pytest.raises(ValueError):
        GridFunction(g, np.zeros(9))
