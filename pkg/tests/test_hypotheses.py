import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zakai.grid import SpatialGrid
from zakai.group import GroupGenerator
from zakai.hypotheses import (
    check_commutator,
    check_group_domain,
    check_parabolicity,
    check_resolvent_ray,
    check_tanabe,
    operator_norm,
    trig_test_set,
)
from zakai.instances import const_coeff_1d, rough_control, zakai_default
from zakai.operators import CoefficientModel, assemble_C

G64 = SpatialGrid(1, 2 * np.pi, 64)


@given(st.integers(2, 12), st.integers(0, 10**6))
def test_operator_norm_matches_svd(n, seed):
    m = np.random.default_rng(seed).standard_normal((n, n))
    est, _ = operator_norm(lambda v: m @ v, lambda v: m.T @ v, n, steps=500)
    top = np.linalg.svd(m, compute_uv=False)
    # power iteration converges slowly when the top two singular values are close
    assert est <= top[0] * (1 + 1e-12)
    if top[0] - top[1] > 0.1 * top[0]:
        assert abs(est - top[0]) < 1e-6 * top[0]


def test_parabolicity_of_default_instance():
    rep = check_parabolicity(zakai_default(64).model, np.linspace(0, 1, 5), G64)
    # min over x, t of 1 + 0.25 sin x cos t - 0.32, attained where sin x cos t = -1
    assert abs(rep.min_eig - (0.75 - 0.32)) < 1e-3 and rep.passed


def test_parabolicity_fails_for_strong_transport():
    rep = check_parabolicity(const_coeff_1d(64, beta=1.5, nu=0.1).model, [0.0], G64)
    assert abs(rep.min_eig - (1 - 1.125)) < 1e-12 and not rep.passed


def test_commutator_vanishes_for_constant_coefficients():
    rep = check_commutator(const_coeff_1d(64).model, [0.0, 0.5], G64)
    assert rep.sup_ratio < 1e-10 and rep.n_tests == 50
    with pytest.raises(ValueError):
        check_commutator(const_coeff_1d(64).model, [0.0], G64, trig_test_set(10))


def test_commutator_stays_bounded_for_smooth_and_grows_for_rough():
    smooth = [check_commutator(zakai_default(n).model, [0.0], SpatialGrid(1, 2 * np.pi, n)).sup_ratio for n in (64, 128)]
    rough = [check_commutator(rough_control(n).model, [0.0], SpatialGrid(1, 2 * np.pi, n)).sup_ratio for n in (64, 128)]
    assert abs(smooth[1] / smooth[0] - 1) < 0.2
    assert rough[1] / rough[0] > 1.5


def test_tanabe_exact_for_frozen_and_linear_rate():
    assert check_tanabe(const_coeff_1d(32).model, SpatialGrid(1, 2 * np.pi, 32)).exact
    g = SpatialGrid(1, 2 * np.pi, 32)
    lin = CoefficientModel(1, a=lambda t, x: 1 + 0.3 * t * np.cos(x[0]))
    rep = check_tanabe(lin, g)
    assert not rep.exact and abs(rep.mu_est - 1) < 0.05
    root = CoefficientModel(1, a=lambda t, x: 1 + 0.3 * np.sqrt(t) * np.cos(x[0]))
    # the sup over base points is attained at s = 0
    assert abs(check_tanabe(root, g).mu_est - 0.5) < 0.05


def test_group_domain_slope_small_for_constant_transport():
    g = SpatialGrid(1, 2 * np.pi, 64)
    const = check_group_domain(const_coeff_1d(64).model, 0.0, grid=g)
    assert const.slope < 1e-8
    var = check_group_domain(zakai_default(64).model, 0.0, grid=g)
    assert var.slope > 1e-3
    with pytest.raises(ValueError):
        check_group_domain(const_coeff_1d(64).model, 0.0, [2.0], g)


def test_resolvent_bound_on_ray():
    rep = check_resolvent_ray(zakai_default(32).model, 0.0, SpatialGrid(1, 2 * np.pi, 32))
    c = assemble_C(zakai_default(32).model, 0.0, SpatialGrid(1, 2 * np.pi, 32)).matrix.toarray()
    lam = rep.lambdas[-1]
    ref = np.linalg.norm(np.linalg.inv(lam * np.eye(32) - c), 2) * (1 + lam)
    # power iteration approaches the norm from below
    assert ref * (1 - 1e-2) < rep.scaled_norms[-1] <= ref * (1 + 1e-12)
    assert np.isfinite(rep.sup_scaled)


def test_reports_serialize():
    rep = check_parabolicity(zakai_default(32).model, [0.0], SpatialGrid(1, 2 * np.pi, 32))
    d = rep.as_dict()
    assert set(d) == {"min_eig", "nu", "passed"} and isinstance(d["passed"], bool)
