import numpy as np
import pytest

from zakai.grid import lp_norm
from zakai.instances import INSTANCES, gbm_exact, make_instance, step_profile, zakai_default
from zakai.operators import assemble_A


def test_registry_builds_every_instance():
    for name in INSTANCES:
        inst = make_instance(name) if name == "gbm_exact" else make_instance(name, n=32)
        assert inst.name == name and np.all(np.isfinite(inst.u0.values))
    with pytest.raises(ValueError):
        make_instance("nope")


def test_gbm_closed_form_at_zero_and_mean():
    inst = gbm_exact(alpha=0.3, b=0.7)
    assert inst.closed_form(0.0, 0.0) == 1.0
    w = np.random.default_rng(0).standard_normal(200_000)
    # E u(1) = e^alpha
    assert abs(np.mean(inst.closed_form(1.0, w)) - np.exp(0.3)) < 0.01


def test_default_coefficients():
    inst = zakai_default(64)
    x = inst.grid.coords
    assert np.allclose(inst.model.a_field(0.0, x)[0, 0], 1 + 0.25 * np.sin(x[0]))
    assert np.allclose(inst.u0.values, np.exp(np.cos(x[0])))
    assert inst.model.nu == 0.1 and inst.model.mu == 1.0
    a = assemble_A(inst.model, 0.0, inst.grid).matrix
    assert np.all(np.isfinite(a.data))


def test_step_profile_mass():
    inst = zakai_default(64)
    s = step_profile(inst.grid)
    assert set(np.unique(s.values)) == {0.0, 1.0}
    assert abs(lp_norm(s.values, inst.grid, 1) - inst.grid.length / 2) < 1e-12
