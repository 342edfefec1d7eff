import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zakai.paths import (
    BrownianPath,
    TimeGrid,
    refine,
    sample_path,
    sample_paths,
    smooth,
    stack_values,
    write_paths_csv,
)


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(-1.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    g = TimeGrid(2.0, 8)
    assert g.dt == 0.25
    assert g.nodes[-1] == 2.0
    with pytest.raises(ValueError):
        g.coarsen(3)


def test_sampling_is_keyed_by_seed_and_index():
    g = TimeGrid(1.0, 64)
    a = sample_path(g, 2, 5, 3)
    b = sample_path(g, 2, 5, 3)
    c = sample_path(g, 2, 5, 4)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    # the index set does not matter: path 3 is path 3
    assert np.array_equal(sample_paths(g, 2, 5, [7, 3])[1].values, a.values)
    assert a.values[0].tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        a.values[1, 0] = 1.0


def test_increment_moments():
    g = TimeGrid(1.0, 16)
    dw = np.concatenate([sample_path(g, 1, 1, i).increments for i in range(4000)])
    # 64000 N(0, 1/16) draws: mean and variance within 5 standard errors
    se_var = g.dt * np.sqrt(2 / dw.size)
    assert abs(dw.mean()) < 5 * np.sqrt(g.dt / dw.size)
    assert abs(dw.var() - g.dt) < 5 * se_var


@given(st.sampled_from([1, 2, 4, 8]), st.integers(0, 1000))
def test_coarse_increments_are_sums(factor, idx):
    p = sample_path(TimeGrid(1.0, 32), 1, 9, idx)
    c = p.coarsen(factor)
    sums = p.increments.reshape(-1, factor, 1).sum(axis=1)
    assert np.allclose(c.increments, sums, atol=1e-15)
    assert c.lineage == (("coarsen", factor),)


def test_refine_keeps_nodes_and_bridge_variance():
    g = TimeGrid(1.0, 8)
    mids = []
    for i in range(3000):
        p = sample_path(g, 1, 2, i)
        r = refine(p)
        assert np.array_equal(r.values[::2], p.values)
        mids.append(r.values[1::2, 0] - 0.5 * (p.values[:-1, 0] + p.values[1:, 0]))
    mids = np.concatenate(mids)
    # conditional variance of a bridge midpoint is dt / 4
    assert abs(mids.var() / (g.dt / 4) - 1) < 0.05
    again = refine(sample_path(g, 1, 2, 0))
    assert np.array_equal(again.values, refine(sample_path(g, 1, 2, 0)).values)


@given(st.sampled_from([1, 2, 4, 8, 16]), st.integers(0, 500))
def test_smoothing_interpolates_knots(m, idx):
    p = sample_path(TimeGrid(1.0, 16), 2, 4, idx)
    s = smooth(p, m)
    assert np.array_equal(s.values[::m], p.values[::m])
    if m == 1:
        assert np.array_equal(s.values, p.values)
    # linear between knots: evaluation at nodes agrees with stored values
    assert np.allclose(s(p.grid.nodes), s.values, atol=1e-14)
    assert s.sup_distance() >= 0.0


def test_smooth_rejects_bad_mesh():
    with pytest.raises(ValueError):
        smooth(sample_path(TimeGrid(1.0, 16), 1, 0, 0), 3)


def test_path_validation_and_stacking():
    g = TimeGrid(1.0, 4)
    with pytest.raises(ValueError):
        BrownianPath(g, np.ones(5))
    with pytest.raises(ValueError):
        BrownianPath(g, np.zeros(4))
    with pytest.raises(ValueError):
        stack_values([sample_path(g, 1, 0, 0), sample_path(TimeGrid(1.0, 8), 1, 0, 0)])
    assert stack_values(sample_paths(g, 3, 0, range(2))).shape == (2, 5, 3)


def test_paths_csv_round_trip():
    ps = sample_paths(TimeGrid(1.0, 4), 2, 0, range(2))
    fh = io.StringIO()
    write_paths_csv(ps, fh)
    rows = fh.getvalue().strip().splitlines()
    assert rows[0] == "path_index,k,t_k,W_1,W_2"
    back = np.array([[float(v) for v in r.split(",")[3:]] for r in rows[1:]])
    assert np.array_equal(back, np.concatenate([p.values for p in ps]))
