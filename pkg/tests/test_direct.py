import dataclasses
import io

import numpy as np
import pytest

from zakai.direct import solve_direct, solve_direct_batch, strong_error, strong_error_ladder
from zakai.fitting import fit_order
from zakai.grid import GridFunction, SpatialGrid
from zakai.instances import gbm_exact, zakai_default
from zakai.operators import CoefficientModel
from zakai.pathwise import SolveConfig, solve_transformed
from zakai.paths import TimeGrid, sample_path, sample_paths, stack_values


@pytest.mark.parametrize("milstein,target", [(False, 0.5), (True, 1.0)])
def test_scalar_strong_orders_against_closed_form(milstein, target):
    inst = gbm_exact()
    fine = TimeGrid(1.0, 2048)
    W = stack_values(sample_paths(fine, 1, 21, range(400)))
    exact = inst.closed_form(1.0, W[:, -1, 0])
    dts, errs = [], []
    for f in (64, 32, 16, 8):
        tg = fine.coarsen(f)
        s = solve_direct_batch(inst.model, np.ascontiguousarray(W[:, ::f]), tg, inst.grid, inst.u0, milstein=milstein, stride=0)
        dts.append(tg.dt)
        errs.append(np.sqrt(np.mean((s.U_T[:, 0] - exact) ** 2)))
    order, _ = fit_order(dts, errs)
    assert abs(order - target) < 0.2


def test_without_noise_direct_equals_implicit_transform():
    # B = 0: both schemes are the same implicit step
    g = SpatialGrid(1, 2 * np.pi, 32)
    model = CoefficientModel(1, a=lambda t, x: 1 + 0.3 * np.sin(x[0]), r=lambda t, x: -0.1)
    u0 = GridFunction.sample(g, lambda x: np.exp(np.cos(x[0])))
    p = sample_path(TimeGrid(1.0, 64), 1, 0, 0)
    d = solve_direct(model, p, u0, SolveConfig(theta=1.0))
    t = solve_transformed(model, p, u0, SolveConfig(theta=1.0))
    assert np.max(np.abs(d.U[-1] - t.U[-1])) < 1e-12


def test_direct_close_to_transform_on_fine_step():
    inst = zakai_default(64)
    p = sample_path(TimeGrid(1.0, 2048), 1, 9, 0)
    d = solve_direct(inst.model, p, inst.u0, milstein=True)
    t = solve_transformed(inst.model, p, inst.u0)
    assert np.max(np.abs(d.U[-1] - t.U[-1])) < 0.05 * np.max(np.abs(t.U[-1]))


def test_strong_error_guards_and_output():
    inst = gbm_exact()
    paths = sample_paths(TimeGrid(1.0, 64), 1, 0, range(10))
    with pytest.raises(ValueError):
        strong_error(inst.model, paths, inst.u0)
    with pytest.raises(TypeError):
        strong_error(inst.model, stack_values(paths), inst.u0, min_paths=1)
    rep = strong_error(inst.model, paths, inst.u0, factors=(4, 2, 1), min_paths=5)
    assert rep.n_paths == 10 and len(rep.dts) == 3
    fh = io.StringIO()
    rep.write_csv(fh)
    assert fh.getvalue().splitlines()[0] == "dt,n_paths,e_strong,stderr"


def test_ladder_shares_transform_and_drops_failed_paths():
    inst = zakai_default(32)
    paths = sample_paths(TimeGrid(1.0, 64), 1, 3, range(6))
    bad = paths[2].values.copy()
    bad[40:] = np.nan
    paths[2] = dataclasses.replace(paths[2], values=bad)
    rep = strong_error_ladder(inst.model, paths, inst.u0, factors=(2, 1), min_paths=1)
    assert set(rep) == {False, True}
    assert rep[False].n_paths == 5 and np.all(np.isfinite(rep[True].errors))
