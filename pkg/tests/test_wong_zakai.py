import numpy as np
import pytest

from zakai.grid import GridFunction, SpatialGrid
from zakai.instances import gbm_exact, zakai_default
from zakai.operators import CoefficientModel
from zakai.pathwise import SolveConfig, solve_transformed, solve_transformed_batch
from zakai.paths import TimeGrid, sample_path, sample_paths, smooth, stack_values
from zakai.wong_zakai import solve_wz, stratonovich_gap, wz_convergence, wz_distances


def test_unit_mesh_coincides_with_transform_solution():
    inst = zakai_default(64)
    p = sample_path(TimeGrid(1.0, 128), 1, 3, 0)
    wz = solve_wz(inst.model, smooth(p, 1), inst.u0)
    ito = solve_transformed(inst.model, p, inst.u0)
    assert np.array_equal(wz.U, ito.U)


def test_without_noise_every_mesh_agrees():
    g = SpatialGrid(1, 2 * np.pi, 32)
    model = CoefficientModel(1, a=lambda t, x: 1 + 0.2 * np.cos(x[0]))
    u0 = GridFunction.sample(g, lambda x: np.sin(x[0]) + 2)
    p = sample_path(TimeGrid(1.0, 64), 1, 0, 0)
    ref = solve_transformed(model, p, u0).U
    for m in (16, 4):
        assert np.array_equal(solve_wz(model, smooth(p, m), u0).U, ref)


def test_scalar_ladder_decreases():
    inst = gbm_exact()
    paths = sample_paths(TimeGrid(1.0, 1024), 1, 11, range(100))
    rep = wz_convergence(inst.model, paths, inst.u0, (64, 16, 4, 1))
    med = rep.median_dist
    assert med[-1] == 0.0
    assert all(a >= 1.3 * b for a, b in zip(med[:-2], med[1:-1]))
    assert rep.monotone and rep.n_paths == 100


def test_uncorrected_limit_matches_stratonovich_gap():
    inst = gbm_exact(alpha=0.3, b=0.7)
    paths = sample_paths(TimeGrid(1.0, 256), 1, 12, range(20))
    W = stack_values(paths)
    ref = solve_transformed_batch(inst.model, W, paths[0].grid, inst.grid, inst.u0, stride=0)
    _, term, _ = wz_distances(inst.model, paths, inst.u0, (1,), correction=False, stride=0, reference=ref)
    gap = stratonovich_gap(0.3, 0.7, 1.0, W[:, -1, 0])
    assert np.max(np.abs(term[0] - gap) / gap) < 1e-10


def test_meshes_must_decrease_and_divide():
    inst = gbm_exact()
    paths = sample_paths(TimeGrid(1.0, 64), 1, 0, range(2))
    with pytest.raises(ValueError):
        wz_distances(inst.model, paths, inst.u0, (4, 16))
    with pytest.raises(ValueError):
        smooth(paths[0], 3)


def test_failed_reference_path_is_dropped():
    inst = zakai_default(32)
    paths = sample_paths(TimeGrid(1.0, 64), 1, 1, range(3))
    W = stack_values(paths).copy()
    W[0, 10:] = np.nan
    ref = solve_transformed_batch(inst.model, W, paths[0].grid, inst.grid, inst.u0, SolveConfig(), 1)
    sup, _, failed = wz_distances(inst.model, paths, inst.u0, (4, 1), reference=ref)
    assert failed.tolist() == [True, False, False]
    assert np.isnan(sup[:, 0]).all() and np.isfinite(sup[:, 1:]).all()
