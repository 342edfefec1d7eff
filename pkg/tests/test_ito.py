import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zakai.ito import (
    BilinearOnPair,
    ItoSystem,
    LinearMap,
    TestFunction,
    bilinear_residual,
    group_adjoint_check,
    ito_residual,
    random_orthonormal,
    residual_ladder,
    simulate_ito,
    trace,
)
from zakai.paths import TimeGrid, sample_path, sample_paths


def _quadratic(m):
    return TestFunction(
        lambda t, x: np.sum(np.asarray(x) ** 2, axis=-1),
        lambda t, x: np.zeros(np.shape(x)[:-1]),
        lambda t, x: 2 * np.asarray(x),
        lambda t, x: 2 * np.broadcast_to(np.eye(m), np.shape(x)[:-1] + (m, m)),
        "sq",
    )


def _linear(c):
    c = np.asarray(c, dtype=float)
    m = c.size
    return TestFunction(
        lambda t, x: np.asarray(x) @ c,
        lambda t, x: np.zeros(np.shape(x)[:-1]),
        lambda t, x: np.broadcast_to(c, np.shape(x)),
        lambda t, x: np.zeros(np.shape(x)[:-1] + (m, m)),
        "lin",
    )


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10**6))
def test_trace_is_basis_free_and_matches_closed_form(n, m1, m2, seed):
    rng = np.random.default_rng(seed)
    R = LinearMap(rng.standard_normal((m1, n)))
    S = LinearMap(rng.standard_normal((m2, n)))
    T = BilinearOnPair.from_tensor(rng.standard_normal((2, m1, m2)))
    ref = np.einsum("lij,ij->l", T.tensor, R.matrix @ S.matrix.T)
    assert np.allclose(trace(R, S, T), ref, atol=1e-12)
    assert np.allclose(trace(R, S, T, random_orthonormal(n, rng)), ref, atol=1e-12)
    # |Tr| <= ||T|| gamma(R) gamma(S)
    if T.k == 1:
        assert np.linalg.norm(ref) <= T.norm() * R.frobenius * S.frobenius + 1e-12


def test_trace_rejects_bad_inputs():
    T = BilinearOnPair.dot(2)
    with pytest.raises(ValueError):
        trace(LinearMap(np.eye(2)), LinearMap(np.eye(3)[:2]), T)
    with pytest.raises(ValueError):
        trace(LinearMap(np.eye(2)), LinearMap(np.eye(2)), T, basis=2 * np.eye(2))


def test_bilinear_norm_is_top_singular_value():
    a = np.random.default_rng(1).standard_normal((3, 5))
    T = BilinearOnPair(lambda x, y: np.einsum("ij,...i,...j->...", a, x, y), 3, 5)
    assert abs(T.norm() - np.linalg.svd(a, compute_uv=False)[0]) < 1e-12
    assert T.check_bilinear() < 1e-12
    with pytest.raises(ValueError):
        BilinearOnPair(lambda x, y: np.sum(x * x) * np.sum(y), 2, 2).check_bilinear()


def test_validate_catches_wrong_derivative():
    good = _quadratic(2)
    pts = np.random.default_rng(0).standard_normal((3, 2))
    assert good.validate(pts, np.zeros(3)) < 1e-6
    bad = TestFunction(good.f, good.d1, lambda t, x: 3 * np.asarray(x), good.hess)
    with pytest.raises(ValueError):
        bad.validate(pts, np.zeros(3))


def test_exactness_classes_with_realized_quadrature():
    p = sample_path(TimeGrid(1.0, 1024), 2, 3, 0)
    # linear f, constant drift and diffusion
    lin = ItoSystem.affine([1.0, -1.0], np.zeros((2, 2)), [0.3, 0.1], np.zeros((2, 2, 2)), [[0.5, 0.0], [0.2, 0.7]])
    assert ito_residual(lin, p, _linear([1.0, 2.0]), quadrature="realized") < 1e-12
    # quadratic f, constant Phi, zero drift
    quad = ItoSystem.affine([0.5, 0.5], np.zeros((2, 2)), [0.0, 0.0], np.zeros((2, 2, 2)), [[0.4, 0.1], [0.0, 0.3]])
    assert ito_residual(quad, p, _quadratic(2), quadrature="realized") < 1e-12
    assert ito_residual(quad, p, _quadratic(2), quadrature="lebesgue") > 1e-6
    with pytest.raises(ValueError):
        ito_residual(quad, p, _quadratic(2), quadrature="midpoint")


def test_residual_order_is_one_half():
    gbm = ItoSystem.affine([1.0], [[0.1]], [0.0], [[[0.4]]], [[0.0]])
    f = TestFunction(
        lambda t, x: np.exp(t) * np.sin(x[..., 0]),
        lambda t, x: np.exp(t) * np.sin(x[..., 0]),
        lambda t, x: np.exp(t)[..., None] * np.cos(x) if np.ndim(t) else np.exp(t) * np.cos(x),
        lambda t, x: (-np.exp(t) * np.sin(x))[..., None],
    )
    paths = sample_paths(TimeGrid(1.0, 2048), 1, 4, range(200))
    lad = residual_ladder(lambda p: ito_residual(gbm, p, f, validate=False), paths, (32, 16, 8, 4, 2, 1))
    assert 0.35 < lad.order < 0.7


def test_product_rule_exact_for_constant_diffusions():
    p = sample_path(TimeGrid(1.0, 512), 1, 5, 0)
    s1 = ItoSystem.affine([1.0, 0.0], np.zeros((2, 2)), [0.0, 0.0], np.zeros((1, 2, 2)), [[0.3, 0.1]])
    s2 = ItoSystem.affine([0.0, 1.0], np.zeros((2, 2)), [0.0, 0.0], np.zeros((1, 2, 2)), [[0.2, 0.5]])
    assert bilinear_residual(s1, s2, None, p, "realized") < 1e-12
    s3 = ItoSystem.affine([1.0, 0.0], [[0.1, 0.2], [0.0, -0.3]], [0.0, 0.0], [[[0.3, 0.0], [0.1, 0.2]]], [[0.0, 0.0]])
    many = sample_paths(TimeGrid(1.0, 2048), 1, 6, range(100))
    lad = residual_ladder(lambda q: bilinear_residual(s3, s2, None, q), many, (16, 4, 1))
    assert 0.3 < lad.order < 0.7


def test_adjoint_check_nilpotent_and_diagonal():
    n = np.array([[0.0, 1.0], [0.0, 0.0]])
    p = sample_path(TimeGrid(1.0, 4096), 1, 2, 0)
    # exp(-W N)^T x is affine in W, so only the dt-term error remains (N^2 = 0)
    assert group_adjoint_check([n], [1.0, 2.0], p) < 1e-10
    d = [np.diag([0.5, -0.2]), np.diag([0.1, 0.3])]
    paths = sample_paths(TimeGrid(1.0, 2048), 2, 7, range(100))
    lad = residual_ladder(lambda q: group_adjoint_check(d, [1.0, 1.0], q), paths, (16, 4, 1))
    assert 0.3 < lad.order < 0.7


def test_adjoint_check_rejects_noncommuting():
    p = sample_path(TimeGrid(1.0, 16), 2, 0, 0)
    with pytest.raises(ValueError):
        group_adjoint_check([np.array([[0, 1], [0, 0.0]]), np.array([[0, 0], [1, 0.0]])], [1.0, 0.0], p)


def test_simulate_shapes_and_driver_check():
    s = ItoSystem.affine([1.0], [[0.0]], [0.0], [[[0.0]]], [[1.0]])
    p = sample_path(TimeGrid(1.0, 8), 1, 0, 0)
    z = simulate_ito(s, p)
    assert z.shape == (9, 1) and np.allclose(z[:, 0], 1 + p.values[:, 0])
    with pytest.raises(ValueError):
        simulate_ito(s, sample_path(TimeGrid(1.0, 8), 2, 0, 0))
