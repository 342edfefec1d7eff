import json

from zakai.suites import Check, SuiteResult, hypothesis_suite, ito_suite, regularity_smoke


def test_check_line_and_result_helpers():
    c = Check("x", 0.5, "<= 1", True)
    assert c.line().startswith("PASS x")
    r = SuiteResult([c, Check("y", 2.0, ">= 3", False)], {})
    assert not r.passed and r.check("y").value == 2.0
    json.dumps(r.as_dict())


def test_small_ito_suite_passes():
    r = ito_suite(paths=100, steps=2**11, factors=(16, 8, 4, 2, 1), trace_instances=100)
    assert r.passed, [c.line() for c in r.checks]
    assert r.check("exactness_classes").value < 1e-12


def test_small_hypothesis_suite_passes():
    r = hypothesis_suite(n=64)
    assert r.passed, [c.line() for c in r.checks]


def test_hypothesis_suite_strict_threshold_fails():
    # a zero tolerance on the Tanabe exponent cannot be met by an estimate
    r = hypothesis_suite(n=64, mu_tol=0.0)
    assert not r.check("tanabe_mu_deviation").passed


def test_small_regularity_smoke():
    r = regularity_smoke(n=32, paths=3)
    assert r.passed, [c.line() for c in r.checks]
