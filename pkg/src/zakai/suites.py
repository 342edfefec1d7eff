"""Bundled verification suites with pass/fail verdicts.

``ito_suite`` runs the finite-dimensional Itô checks (trace identities,
exactness classes, residual order ladders); ``hypothesis_suite`` runs the
operator checkers on the default Zakai instance and its rough-``c`` control;
``regularity_smoke`` compares discrete ``W^{2,2}`` norms of a solution started
from a step profile under ``h -> h/2``.
Both return a :class:`SuiteResult` whose checks carry the measured value and
the threshold it is held to.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import sobolev_norm
from .hypotheses import check_commutator, check_group_domain, check_parabolicity, check_tanabe
from .instances import rough_control, step_profile, zakai_default
from .ito import (
    BilinearOnPair,
    ItoSystem,
    LinearMap,
    TestFunction,
    bilinear_residual,
    group_adjoint_check,
    ito_residual,
    random_orthonormal,
    residual_ladder,
    trace,
)
from .pathwise import SolveConfig, solve_transformed_batch
from .paths import TimeGrid, sample_paths

__all__ = ["Check", "SuiteResult", "ito_suite", "hypothesis_suite", "regularity_smoke"]


@dataclass
class Check:
    name: str
    value: float
    threshold: str
    passed: bool

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.value:.6g} ({self.threshold})"


@dataclass
class SuiteResult:
    checks: list
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {"checks": [asdict(c) for c in self.checks], "details": self.details, "passed": self.passed}


def _at_most(name, value, bound):
    return Check(name, float(value), f"<= {bound:g}", bool(value <= bound))


def _at_least(name, value, bound):
    return Check(name, float(value), f">= {bound:g}", bool(value >= bound))


# -- Itô calculus ----------------------------------------------------------------


def _trace_checks(count, max_dim, seed):
    rng = np.random.default_rng(seed)
    worst, violations = 0.0, 0
    for _ in range(count):
        n, m1, m2, k = rng.integers(1, max_dim + 1, 4)
        R = LinearMap(rng.standard_normal((m1, n)))
        S = LinearMap(rng.standard_normal((m2, n)))
        T = BilinearOnPair.from_tensor(rng.standard_normal((k, m1, m2)))
        a = trace(R, S, T, random_orthonormal(n, rng))
        b = trace(R, S, T, random_orthonormal(n, rng))
        worst = max(worst, float(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(a)))))
        # T.norm is a lower bound of the operator norm for k > 1, so this is the stricter test
        if np.linalg.norm(a) > T.norm(restarts=3, iters=30) * R.frobenius * S.frobenius * (1 + 1e-12):
            violations += 1
    return worst, violations


def _sq_test(m):
    eye = np.eye(m)
    return TestFunction(
        lambda t, x: np.sum(x**2, -1),
        lambda t, x: 0.0 * np.sum(x, -1),
        lambda t, x: 2 * x,
        lambda t, x: 2 * np.broadcast_to(eye, x.shape + (m,)),
        "square",
    )


def _linear_test(c):
    c = np.asarray(c, dtype=float)
    m = c.size
    return TestFunction(
        lambda t, x: x @ c,
        lambda t, x: 0.0 * (x @ c),
        lambda t, x: np.broadcast_to(c, x.shape),
        lambda t, x: np.zeros(x.shape + (m,)),
        "linear",
    )


def _exp_sin_test():
    return TestFunction(
        lambda t, x: np.exp(t) * np.sin(x[..., 0]),
        lambda t, x: np.exp(t) * np.sin(x[..., 0]),
        lambda t, x: (np.exp(t) * np.cos(x[..., 0]))[..., None],
        lambda t, x: (-np.exp(t) * np.sin(x[..., 0]))[..., None, None],
        "exp_sin",
    )


def _exactness(path1, path2):
    """Largest residual over the classes that telescope with realized increments."""
    out = {}
    lin = ItoSystem.affine(np.ones(3), np.zeros((3, 3)), [0.2, -0.1, 0.4], np.zeros((2, 3, 3)),
                           [[0.3, 0.0, -0.5], [0.1, 0.7, 0.2]], _linear_test([1.0, -2.0, 0.5]))
    out["linear_constant"] = ito_residual(lin, path2, quadrature="realized")
    sq = ItoSystem(2, 2, np.zeros(2), lambda t, z: 0.0 * z, lambda t, z: np.eye(2), _sq_test(2))
    out["quadratic_zero_drift"] = ito_residual(sq, path2, quadrature="realized")
    const = ItoSystem(1, 1, np.zeros(1), lambda t, z: 0.0 * z, lambda t, z: np.ones(z.shape + (1,)))
    out["bilinear_constant"] = bilinear_residual(const, const, None, path1, "realized")
    nil = np.array([[0.0, 1.0], [0.0, 0.0]])
    out["adjoint_nilpotent"] = group_adjoint_check([nil], np.array([1.0, 2.0]), path1)
    return out


def ito_suite(
    seed: int = 4,
    paths: int = 1000,
    steps: int = 2**14,
    factors=(64, 32, 16, 8, 4, 2, 1),
    trace_instances: int = 1000,
    min_order: float = 0.35,
) -> SuiteResult:
    """Trace identities, exactness classes and residual order ladders (dimensions <= 4)."""
    checks, details = [], {}
    worst, violations = _trace_checks(trace_instances, 4, seed)
    checks.append(_at_most("trace_basis_independence", worst, 1e-10))
    checks.append(_at_most("trace_bound_violations", violations, 0))
    tg = TimeGrid(1.0, steps)
    p1 = sample_paths(tg, 1, seed, range(paths))
    p2 = sample_paths(tg, 2, seed, range(paths))
    # round-off in the telescoping sums grows like N eps; the classes are checked on 2^10 steps
    sub = max(1, steps // 2**10)
    exact = _exactness(p1[0].coarsen(sub), p2[0].coarsen(sub))
    details["exactness"] = exact
    checks.append(_at_most("exactness_classes", max(exact.values()), 1e-12))

    gbm = ItoSystem(1, 1, np.ones(1), lambda t, z: 0.3 * z, lambda t, z: 0.7 * z[..., None], _exp_sin_test())
    lad = residual_ladder(lambda pw: ito_residual(gbm, pw), p1, factors)
    details["ito_ladder"] = lad.as_dict()
    checks.append(_at_least("ito_residual_order", lad.order, min_order))

    s1 = ItoSystem.affine([1.0, 0.5], [[-0.2, 0.1], [0.0, 0.3]], [0.0, 0.1],
                          [[[0.4, 0.0], [0.1, 0.2]], [[0.0, 0.3], [0.0, -0.2]]], [[0.1, 0.0], [0.0, 0.2]])
    s2 = ItoSystem.affine([0.5, -1.0], [[0.1, 0.0], [0.2, -0.1]], [0.2, 0.0],
                          [[[0.3, 0.1], [0.0, 0.0]], [[0.0, 0.0], [0.2, 0.5]]], [[0.0, 0.1], [0.3, 0.0]])
    lad = residual_ladder(lambda pw: bilinear_residual(s1, s2, None, pw), p2, factors)
    details["bilinear_ladder"] = lad.as_dict()
    checks.append(_at_least("bilinear_residual_order", lad.order, min_order))

    gens = [np.diag([1.0, 0.5, -0.3]), np.diag([0.2, 0.0, 0.7])]
    lad = residual_ladder(lambda pw: group_adjoint_check(gens, np.ones(3), pw), p2, factors)
    details["adjoint_ladder"] = lad.as_dict()
    checks.append(_at_least("group_adjoint_order", lad.order, min_order))
    return SuiteResult(checks, details)


# -- operator hypotheses ---------------------------------------------------------


def hypothesis_suite(
    n: int = 128,
    horizon: float = 1.0,
    nu: float = 0.1,
    ratio_tol: float = 0.2,
    slope_tol: float = 0.25,
    mu_target: float = 1.0,
    mu_tol: float = 0.1,
    rough_growth: float = 1.5,
) -> SuiteResult:
    """Parabolicity, commutator, Tanabe and group-domain checks under ``h -> h/2``."""
    checks, details = [], {}
    coarse, fine = zakai_default(n), zakai_default(2 * n)
    model = coarse.model
    ts = np.linspace(0.0, horizon, 11)
    par = check_parabolicity(model, ts, coarse.grid)
    details["parabolicity"] = par.as_dict()
    checks.append(_at_least("parabolicity_min_eig", par.min_eig, nu))

    cs = [0.0, 0.5 * horizon]
    c1 = check_commutator(model, cs, coarse.grid)
    c2 = check_commutator(model, cs, fine.grid)
    details["commutator"] = [c1.as_dict(), c2.as_dict()]
    checks.append(_at_most("commutator_ratio_change", abs(c2.sup_ratio / c1.sup_ratio - 1.0), ratio_tol))

    tan = check_tanabe(model, coarse.grid, horizon=horizon)
    details["tanabe"] = tan.as_dict()
    checks.append(_at_most("tanabe_mu_deviation", abs(tan.mu_est - mu_target), mu_tol))

    g1 = check_group_domain(model, 0.0, grid=coarse.grid)
    g2 = check_group_domain(model, 0.0, grid=fine.grid)
    details["group_domain"] = [g1.as_dict(), g2.as_dict()]
    checks.append(_at_most("group_domain_slope_change", abs(g2.slope / g1.slope - 1.0), slope_tol))

    r1 = check_commutator(rough_control(n).model, cs, coarse.grid)
    r2 = check_commutator(rough_control(2 * n).model, cs, fine.grid)
    details["rough_commutator"] = [r1.as_dict(), r2.as_dict()]
    checks.append(_at_least("rough_control_ratio_growth", r2.sup_ratio / r1.sup_ratio, rough_growth))
    return SuiteResult(checks, details)


# -- smoothing from rough initial data ---------------------------------------------


def regularity_smoke(
    n: int = 128,
    paths: int = 20,
    horizon: float = 1.0,
    seed: int = 7,
    stable_ratio: float = 1.5,
    blowup_ratio: float = 2.0,
) -> SuiteResult:
    """``||U(t)||_{2,2,h}`` from a step profile at ``t = dt`` and ``t = eps = T/10``.

    Implicit Euler with ``dt = h^2 / 4`` on grids with ``n`` and ``2n``
    nodes; the coarse run uses every fourth node of the fine paths, so both
    runs see the same Brownian motion.  At ``eps`` the norm should settle as
    ``h`` shrinks; at the first step it should keep growing.
    """
    eps = horizon / 10
    fine_n = 2 * n
    h = 2 * np.pi / fine_n
    steps = int(np.ceil(eps / (h * h / 4)))
    steps += (-steps) % 4
    tg = TimeGrid(eps, steps)
    W = np.stack([p.values for p in sample_paths(tg, 1, seed, range(paths))])
    cfg = SolveConfig(theta=1.0)
    norms = {}
    for nodes, fac in ((n, 4), (fine_n, 1)):
        inst = zakai_default(nodes)
        sol = solve_transformed_batch(inst.model, np.ascontiguousarray(W[:, ::fac]), tg.coarsen(fac), inst.grid,
                                      step_profile(inst.grid), cfg, stride=1)
        norms[nodes] = (sobolev_norm(sol.U[:, 1], inst.grid, 2), sobolev_norm(sol.U[:, -1], inst.grid, 2))
    first = norms[fine_n][0] / norms[n][0]
    late = norms[fine_n][1] / norms[n][1]
    checks = [
        _at_most("late_norm_ratio_max", float(np.max(late)), stable_ratio),
        _at_least("first_step_norm_ratio_min", float(np.min(first)), blowup_ratio),
    ]
    details = {"eps": eps, "steps_fine": steps, "late_ratio": late.tolist(), "first_ratio": first.tolist()}
    return SuiteResult(checks, details)
