"""End-to-end acceptance criteria, one test each, at their stated tolerances."""

import time

import numpy as np
import pytest

from zakai.harness import RunConfig, defaults_for, run
from zakai.suites import regularity_smoke

pytestmark = pytest.mark.slow


def _run(kind, **kw):
    t0 = time.perf_counter()
    rep = run(RunConfig.from_dict({**defaults_for(kind), **kw}), write=False)
    return rep, time.perf_counter() - t0


def _checks(rep):
    return {c["name"]: c for c in rep.checks}


def test_scalar_exactness(verdict):
    exact, t1 = _run("gbm_exact", paths=100, steps=2**10, ladder=[1])
    ladder, t2 = _run("gbm_exact", paths=100, steps=2**12, ladder=[64, 32, 16, 8, 4, 2, 1])
    err = _checks(exact)["exact_stepping_max_rel_error"]["value"]
    order = ladder.orders["theta"]
    ok = err <= 1e-12 and abs(order - 2.0) <= 0.3 and t1 + t2 < 10
    assert verdict(1, "scalar exactness", ok, f"max rel error {err:.3g}, theta order {order:.3f}, {t1 + t2:.1f} s")


def test_transform_direct_equivalence(verdict):
    rep, t = _run("strong_order", paths=200, n=256, steps=2**11, ladder=[16, 8, 4, 2, 1])
    c = _checks(rep)
    ok = rep.passed and c["em_order"]["value"] >= 0.4 and c["milstein_order"]["value"] >= 0.8 and t < 300
    detail = f"EM order {rep.orders['em']:.3f}, Milstein order {rep.orders['milstein']:.3f}, " \
             f"monotone {bool(c['em_monotone']['passed'])}/{bool(c['milstein_monotone']['passed'])}, {t:.1f} s"
    assert verdict(2, "transform vs direct", ok, detail)


def test_constant_coefficient_oracle(verdict):
    rep, t = _run("const_coeff_1d", paths=50, n=256, steps=2**11)
    err = _checks(rep)["max_l2_error_vs_oracle"]["value"]
    order = rep.orders["time"]
    ok = err <= 1e-3 and abs(order - 2.0) <= 0.3 and t < 120
    assert verdict(3, "constant-coefficient oracle", ok, f"max L2 error {err:.3g}, order {order:.3f}, {t:.1f} s")


def test_ito_suite(verdict):
    rep, t = _run("ito_suite", paths=1000, steps=2**14, ladder=[64, 32, 16, 8, 4, 2, 1])
    o = rep.orders
    ok = rep.passed and t < 120
    detail = f"orders {o['ito_ladder']:.3f}/{o['bilinear_ladder']:.3f}/{o['adjoint_ladder']:.3f}, " \
             f"exactness {_checks(rep)['exactness_classes']['value']:.3g}, {t:.1f} s"
    assert verdict(4, "Ito formula suite", ok, detail)


def test_hypothesis_suite(verdict):
    rep, t = _run("hypothesis_suite", n=128)
    ok = rep.passed and t < 60
    detail = ", ".join(f"{c['name']} {c['value']:.3g}" for c in rep.checks) + f", {t:.1f} s"
    assert verdict(5, "hypothesis suite", ok, detail)


def test_wong_zakai(verdict):
    scalar, t1 = _run("wong_zakai_ladder", instance="gbm_exact", paths=100, steps=2**12, meshes=[64, 16, 4, 1])
    field, t2 = _run("wong_zakai_ladder", instance="zakai_default", paths=100, n=128, steps=2**10,
                     meshes=[64, 16, 4, 1], options={"stride": 16})
    cs, cf = _checks(scalar), _checks(field)
    ok = scalar.passed and field.passed and t1 + t2 < 180
    detail = (f"scalar medians {np.round(scalar.summary['wz']['median_dist'], 4).tolist()}, "
              f"field medians {np.round(field.summary['wz']['median_dist'], 4).tolist()}, "
              f"coincidence {max(cs['knot_coincidence']['value'], cf['knot_coincidence']['value']):.3g}, "
              f"gap error {cs['stratonovich_gap_error']['value']:.3g}, {t1 + t2:.1f} s")
    assert verdict(6, "Wong-Zakai", ok, detail)


def test_regularity_smoke(verdict):
    t0 = time.perf_counter()
    res = regularity_smoke(n=128, paths=20)
    t = time.perf_counter() - t0
    ok = res.passed and t < 120
    detail = f"late ratio max {res.check('late_norm_ratio_max').value:.3f}, " \
             f"first-step ratio min {res.check('first_step_norm_ratio_min').value:.3f}, {t:.1f} s"
    assert verdict(7, "regularity smoke", ok, detail)


def test_determinism_and_isolation(verdict, monkeypatch):
    cfg = dict(paths=20, steps=256, n=64)
    a, _ = _run("zakai_default", **cfg)
    b, _ = _run("zakai_default", **cfg)
    monkeypatch.setenv("ZAKAI_WORKERS", "2")
    c, _ = _run("zakai_default", **cfg)
    monkeypatch.delenv("ZAKAI_WORKERS")
    same = a.content_hash() == b.content_hash() == c.content_hash()
    poisoned, _ = _run("zakai_default", inject_nan=[7], **cfg)
    dropped, _ = _run("zakai_default", exclude=[7], **cfg)
    rows = [r for r in poisoned.tables["per_path"].rows if r[0] != 7]
    isolated = (poisoned.summary == dropped.summary and rows == dropped.tables["per_path"].rows
                and [f["path"] for f in poisoned.failures] == [7] and poisoned.passed)
    detail = f"hash {a.content_hash()[:12]} x3 (1 and 2 workers), failed path 7 isolated {isolated}"
    assert verdict(8, "determinism and isolation", same and isolated, detail)
