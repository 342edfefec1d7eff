import numpy as np
import pytest
from scipy.linalg import expm

from zakai.fitting import fit_order
from zakai.grid import GridFunction, SpatialGrid, lp_norm
from zakai.group import GroupGenerator
from zakai.instances import const_coeff_1d, gbm_exact, zakai_default
from zakai.operators import CoefficientModel, assemble_A, assemble_C
from zakai.pathwise import SolveConfig, fourier_oracle, frame_steps, solve_transformed, solve_transformed_batch
from zakai.paths import TimeGrid, sample_path, sample_paths, stack_values


def test_solve_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(theta=0.3)
    with pytest.raises(ValueError):
        SolveConfig(representation="magic")
    with pytest.raises(ValueError):
        SolveConfig(order=2)
    assert frame_steps(10, 3).tolist() == [0, 3, 6, 9, 10]
    assert frame_steps(10, 0).tolist() == [0, 10]


def test_scalar_exact_stepping_matches_closed_form():
    inst = gbm_exact()
    tg = TimeGrid(1.0, 256)
    paths = sample_paths(tg, 1, 11, range(50))
    sol = solve_transformed_batch(inst.model, stack_values(paths), tg, inst.grid, inst.u0, SolveConfig(), stride=1)
    exact = inst.closed_form(sol.times[None, :], stack_values(paths)[:, sol.steps, 0])
    assert np.max(np.abs(sol.U[:, :, 0] / exact - 1)) < 1e-12


@pytest.mark.parametrize("theta,target", [(0.5, 2.0), (1.0, 1.0)])
def test_scalar_theta_order(theta, target):
    inst = gbm_exact()
    fine = TimeGrid(1.0, 1024)
    W = stack_values(sample_paths(fine, 1, 2, range(20)))
    exact = inst.closed_form(1.0, W[:, -1, 0])
    cfg = SolveConfig(theta=theta, exact_scalar=False)
    dts, errs = [], []
    for f in (16, 8, 4, 2):
        tg = fine.coarsen(f)
        s = solve_transformed_batch(inst.model, W[:, ::f], tg, inst.grid, inst.u0, cfg, stride=0)
        dts.append(tg.dt)
        errs.append(np.sqrt(np.mean((s.U_T[:, 0] / exact - 1) ** 2)))
    order, _ = fit_order(dts, errs)
    assert abs(order - target) < 0.15


def test_fourier_oracle_against_matrix_exponential():
    # no noise: U(T) = exp(T A_h) u0 with the discrete symbol
    g = SpatialGrid(1, 2 * np.pi, 32)
    model = CoefficientModel(1, a=lambda t, x: 0.7, q=lambda t, x: 0.2, r=lambda t, x: -0.1)
    u0 = GridFunction.sample(g, lambda x: np.exp(np.cos(x[0])))
    p = sample_path(TimeGrid(0.5, 16), 1, 0, 0)
    ref = expm(0.5 * assemble_A(model, 0.0, g).matrix.toarray()) @ u0.values
    got = fourier_oracle(model, p, u0, symbol="discrete").values
    assert np.max(np.abs(got - ref)) < 1e-12


def test_fourier_oracle_with_constant_transport_noise():
    inst = const_coeff_1d(n=32)
    g = inst.grid
    p = sample_path(TimeGrid(1.0, 64), 1, 5, 3)
    w = p.values[-1, 0]
    # V(T) = exp(T C_h) u0, then U = e^{c W} V(x + beta W) applied as a Fourier phase
    v = expm(assemble_C(inst.model, 0.0, g).matrix.toarray()) @ inst.u0.values
    k = np.fft.rfftfreq(g.n, 1.0 / g.n)
    ref = np.exp(0.3 * w) * np.fft.irfft(np.fft.rfft(v) * np.exp(1j * k * 0.8 * w), g.n)
    got = fourier_oracle(inst.model, p, inst.u0, symbol="discrete").values
    assert np.max(np.abs(got - ref)) < 1e-11
    both = fourier_oracle(inst.model, [p, p], inst.u0, symbol="discrete")
    assert np.array_equal(both[1].values, got)


def test_constant_coefficients_against_oracle():
    inst = const_coeff_1d(n=64)
    p = sample_path(TimeGrid(1.0, 512), 1, 1, 0)
    tr = solve_transformed(inst.model, p, inst.u0)
    oracle = fourier_oracle(inst.model, p, inst.u0, symbol="discrete")
    assert lp_norm(tr.U[-1] - oracle.values, inst.grid) < 1e-5
    exact = fourier_oracle(inst.model, p, inst.u0, symbol="exact")
    assert lp_norm(tr.U[-1] - exact.values, inst.grid) < 1e-3


def test_two_dimensional_multiplicative_against_exponential():
    g = SpatialGrid(2, 2 * np.pi, 12)
    b = 0.6
    model = CoefficientModel(2, a=lambda t, x: 0.5 * np.eye(2).reshape(2, 2, 1, 1) * np.ones(x.shape[1:]),
                             generators=(GroupGenerator.multiplicative(b),))
    u0 = GridFunction.sample(g, lambda x: np.exp(np.cos(x[0]) * np.sin(x[1])))
    p = sample_path(TimeGrid(0.5, 256), 1, 3, 0)
    sol = solve_transformed(model, p, u0)
    w = p.values[-1, 0]
    # U(T) = exp(b W - b^2 T / 2) exp(T A_h) u0
    ref = np.exp(b * w - 0.5 * b * b * 0.5) * (expm(0.5 * assemble_A(model, 0, g).matrix.toarray()) @ u0.flat())
    assert np.max(np.abs(sol.U[-1].ravel() - ref)) < 1e-5
    assert sol.diagnostics["route"] == "generic"


def test_routes_agree_on_default_instance():
    inst = zakai_default(64)
    p = sample_path(TimeGrid(1.0, 128), 1, 2, 0)
    band = solve_transformed(inst.model, p, inst.u0)
    dense = solve_transformed(inst.model, p, inst.u0, SolveConfig(representation="dense"))
    assert band.diagnostics["route"] == "first_order"
    assert np.max(np.abs(band.U - dense.U)) < 1e-8


def test_multiplicative_route_against_generic():
    g = SpatialGrid(1, 2 * np.pi, 64)
    model = CoefficientModel(1, a=lambda t, x: 1 + 0.2 * np.sin(x[0]),
                             generators=(GroupGenerator.multiplicative(lambda x: 0.5 * np.cos(x[0])),))
    u0 = GridFunction.sample(g, lambda x: np.exp(np.sin(x[0])))
    p = sample_path(TimeGrid(1.0, 128), 1, 4, 0)
    a = solve_transformed(model, p, u0)
    b = solve_transformed(model, p, u0, SolveConfig(representation="dense"))
    assert a.diagnostics["route"] == "multiplicative"
    assert np.max(np.abs(a.U - b.U)) < 1e-9


def test_batch_rows_match_single_solves():
    inst = zakai_default(64)
    tg = TimeGrid(1.0, 64)
    paths = sample_paths(tg, 1, 8, range(4))
    batch = solve_transformed_batch(inst.model, stack_values(paths), tg, inst.grid, inst.u0)
    for j, p in enumerate(paths):
        assert np.array_equal(solve_transformed(inst.model, p, inst.u0).U, batch.U[j])


def test_failed_path_is_isolated():
    inst = zakai_default(64)
    tg = TimeGrid(1.0, 64)
    W = stack_values(sample_paths(tg, 1, 8, range(4))).copy()
    W[1, 30:] = np.nan
    sol = solve_transformed_batch(inst.model, W, tg, inst.grid, inst.u0, stride=0)
    rest = solve_transformed_batch(inst.model, np.delete(W, 1, 0), tg, inst.grid, inst.u0, stride=0)
    assert sol.fail_step.tolist() == [-1, 30, -1, -1]
    assert np.isnan(sol.U_T[1]).all()
    assert np.array_equal(np.delete(sol.U_T, 1, 0), rest.U_T)


def test_zero_noise_is_deterministic_heat_flow():
    g = SpatialGrid(1, 2 * np.pi, 32)
    model = CoefficientModel(1, a=lambda t, x: 1.0)
    u0 = GridFunction.sample(g, lambda x: np.sin(x[0]))
    sol = solve_transformed(model, sample_path(TimeGrid(1.0, 512), 1, 0, 0), u0)
    lam = -4 * np.sin(g.h / 2) ** 2 / g.h**2
    assert np.max(np.abs(sol.U[-1] - np.exp(lam) * u0.values)) < 1e-6


def test_rejects_nonfinite_initial_data():
    inst = zakai_default(64)
    with pytest.raises(ValueError):
        solve_transformed(inst.model, sample_path(TimeGrid(1.0, 8), 1, 0, 0), GridFunction(inst.grid, np.full(64, np.nan)))
