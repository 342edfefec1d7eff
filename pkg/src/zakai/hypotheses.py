"""Numerical estimators for the structural hypotheses on ``A``, ``B`` and ``C``.

Each checker returns a small report dataclass; ``as_dict`` gives the JSON
form used by the harness.  Operator norms are estimated by power iteration
on ``M^T M`` with a fixed start vector, so reports are deterministic.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import SpatialGrid, lp_norm, sobolev_norm
from .group import group_matrix
from .operators import CoefficientModel, assemble_B, assemble_C

__all__ = [
    "operator_norm",
    "spectral_shift",
    "ParabolicityReport",
    "CommutatorReport",
    "TanabeReport",
    "GroupDomainReport",
    "ResolventReport",
    "check_parabolicity",
    "check_commutator",
    "check_tanabe",
    "check_group_domain",
    "check_resolvent_ray",
    "trig_test_set",
]


class _Report:
    def as_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            if isinstance(v, np.ndarray):
                v = v.tolist()
            elif isinstance(v, (np.floating, np.integer, np.bool_)):
                v = v.item()
            out[k] = v
        return out


def operator_norm(apply: Callable, apply_T: Callable, size: int, steps: int = 50, seed: int = 0):
    """Largest singular value of ``M`` by power iteration on ``M^T M``.

    Returns ``(estimate, converged)``; ``converged`` is False when the last
    step still moved the estimate by more than ``1e-3`` relative.
    """
    v = np.random.default_rng(seed).standard_normal(size)
    v /= np.linalg.norm(v)
    est = prev = 0.0
    for _ in range(steps):
        w = apply_T(apply(v))
        nrm = np.linalg.norm(w)
        if not np.isfinite(nrm):
            return float("nan"), False
        if nrm == 0.0:
            return 0.0, True
        prev, est = est, np.sqrt(nrm)
        v = w / nrm
    return float(est), bool(abs(est - prev) <= 1e-3 * est)


def _matrix_norm(mat, steps: int = 50, seed: int = 0):
    return operator_norm(lambda v: mat @ v, lambda v: mat.T @ v, mat.shape[0], steps, seed)


def spectral_shift(c_mat) -> float:
    """``2 ||C(0)|| + 1`` with the norm from power iteration."""
    return 2.0 * _matrix_norm(c_mat)[0] + 1.0


class _ShiftedInverse:
    """``(C - lambda)^{-1}`` and its transpose from one sparse LU factorization."""

    def __init__(self, c_mat, lam: float):
        n = c_mat.shape[0]
        self.lu = spla.splu(sp.csc_matrix(c_mat - lam * sp.identity(n)))

    def __call__(self, v):
        return self.lu.solve(v)

    def T(self, v):
        return self.lu.solve(v, trans="T")


# -- parabolicity ---------------------------------------------------------


@dataclass
class ParabolicityReport(_Report):
    min_eig: float
    nu: float
    passed: bool


def check_parabolicity(model: CoefficientModel, t_samples: Sequence[float], grid: SpatialGrid) -> ParabolicityReport:
    """Smallest eigenvalue of ``a(t, x) - 1/2 sum_n b_n b_n^T`` over samples and nodes."""
    x = grid.coords
    bb = np.zeros((model.dim, model.dim) + grid.shape)
    for gen in model.generators:
        if not gen.is_multiplicative:
            b = gen.transport_field(x)
            bb = bb + b[:, None] * b[None, :]
    lo = np.inf
    for t in t_samples:
        m = model.a_field(float(t), x) - 0.5 * bb
        m = np.moveaxis(m.reshape(model.dim, model.dim, -1), -1, 0)
        lo = min(lo, float(np.min(np.linalg.eigvalsh(m))))
    return ParabolicityReport(lo, float(model.nu), bool(lo >= model.nu))


# -- commutator condition --------------------------------------------------


def trig_test_set(count: int = 50, dim: int = 1, length: float = 2 * np.pi, modes: int = 4, seed: int = 0):
    """Random real trigonometric polynomials (callables of ``x``) of degree ``<= modes``."""
    rng = np.random.default_rng(seed)
    k = 2 * np.pi / length
    out = []
    for _ in range(count):
        freqs = rng.integers(-modes, modes + 1, size=(6, dim))
        amps = rng.standard_normal(6)
        phases = rng.uniform(0, 2 * np.pi, 6)

        def f(x, freqs=freqs, amps=amps, phases=phases):
            arg = k * np.tensordot(freqs, x, axes=(1, 0)) + phases.reshape((-1,) + (1,) * (x.ndim - 1))
            return np.tensordot(amps, np.cos(arg), axes=1)

        out.append(f)
    return out


@dataclass
class CommutatorReport(_Report):
    sup_ratio: float
    p: float
    n_tests: int
    per_generator: list = field(default_factory=list)


def check_commutator(
    model: CoefficientModel,
    t_samples: Sequence[float],
    grid: SpatialGrid,
    test_set: Sequence[Callable] | None = None,
    p: float = 8,
) -> CommutatorReport:
    """``sup ||C(t) B f - B C(t) f||_p / ||f||_{2,p}`` over samples, generators and tests."""
    if test_set is None:
        test_set = trig_test_set(50, grid.dim, grid.length)
    if len(test_set) < 50:
        raise ValueError("the commutator estimator needs at least 50 test functions")
    fs = np.stack([np.broadcast_to(f(grid.coords), grid.shape).ravel() for f in test_set], axis=1)
    denom = sobolev_norm(fs.T.reshape((-1,) + grid.shape), grid, p)
    per = []
    for gen in model.generators:
        b = assemble_B(gen, grid).matrix
        worst = 0.0
        for t in t_samples:
            c = assemble_C(model, float(t), grid).matrix
            comm = c @ (b @ fs) - b @ (c @ fs)
            num = lp_norm(comm.T.reshape((-1,) + grid.shape), grid, p)
            worst = max(worst, float(np.max(num / denom)))
        per.append(worst)
    return CommutatorReport(max(per) if per else 0.0, float(p), len(test_set), per)


# -- Tanabe continuity -----------------------------------------------------


@dataclass
class TanabeReport(_Report):
    L_est: float
    mu_est: float
    exact: bool
    lam_shift: float
    deltas: list
    norms: list
    converged: bool


def check_tanabe(
    model: CoefficientModel,
    grid: SpatialGrid,
    lam_shift: float | None = None,
    horizon: float = 1.0,
    deltas: Sequence[float] | None = None,
    bases: Sequence[float] | None = None,
    steps: int = 50,
) -> TanabeReport:
    """Fit ``sup_s ||(C(s + d) - C(s)) (C(0) - lambda)^{-1}|| = L d^mu``.

    The supremum runs over base points ``s`` (including 0) for every
    increment ``d``.  Identically vanishing differences are reported as
    ``exact`` with ``mu_est = nan``.
    """
    if deltas is None:
        deltas = horizon * 2.0 ** -np.arange(3, 11)
    if bases is None:
        bases = np.linspace(0.0, horizon, 9)[:-1]
    c0 = assemble_C(model, 0.0, grid).matrix
    lam = spectral_shift(c0) if lam_shift is None else float(lam_shift)
    inv = _ShiftedInverse(c0, lam)
    norms, conv = [], True
    for d in deltas:
        worst = 0.0
        for s in bases:
            t = min(s + d, horizon)
            diff = (assemble_C(model, float(t), grid).matrix - assemble_C(model, float(s), grid).matrix).tocsr()
            diff.eliminate_zeros()
            if diff.nnz == 0 or np.max(np.abs(diff.data)) == 0.0:
                continue
            est, ok = operator_norm(lambda v: diff @ inv(v), lambda v: inv.T(diff.T @ v), grid.size, steps)
            conv = conv and ok
            worst = max(worst, est)
        norms.append(worst)
    norms = np.asarray(norms)
    deltas = np.asarray(deltas, dtype=float)
    if np.all(norms <= 1e-10):
        return TanabeReport(float(np.max(norms)), float("nan"), True, lam, deltas.tolist(), norms.tolist(), conv)
    keep = norms > 0
    mu, logl = np.polyfit(np.log(deltas[keep]), np.log(norms[keep]), 1)
    return TanabeReport(float(np.exp(logl)), float(mu), False, lam, deltas.tolist(), norms.tolist(), conv)


# -- group invariance of the domain ----------------------------------------


@dataclass
class GroupDomainReport(_Report):
    slope: float
    s_samples: list
    norms: list
    lam_shift: float
    converged: bool
    per_generator: list = field(default_factory=list)


def check_group_domain(
    model: CoefficientModel,
    t: float,
    s_samples: Sequence[float] | None = None,
    grid: SpatialGrid | None = None,
    lam_shift: float | None = None,
    order: int = 3,
    steps: int = 50,
) -> GroupDomainReport:
    """Slope of ``||(C - lambda) G_n(s) (C - lambda)^{-1} - G_n(s)||`` in ``|s|``.

    The slope is the least-squares fit through the origin over the samples,
    maximized over generators.
    """
    if grid is None:
        raise ValueError("a grid is required")
    if s_samples is None:
        s_samples = [-1.0, -0.5, -0.25, -0.125, 0.125, 0.25, 0.5, 1.0]
    s_samples = np.asarray(s_samples, dtype=float)
    if np.any(np.abs(s_samples) > 1):
        raise ValueError("group parameters must lie in [-1, 1]")
    c = assemble_C(model, float(t), grid).matrix
    lam = spectral_shift(c) if lam_shift is None else float(lam_shift)
    inv = _ShiftedInverse(c, lam)
    shifted = (c - lam * sp.identity(grid.size)).tocsr()
    all_norms, slopes, conv = [], [], True
    for n in range(model.n_drivers):
        norms = []
        for s in s_samples:
            if s == 0.0:
                norms.append(0.0)
                continue
            a = np.zeros(model.n_drivers)
            a[n] = s
            g = group_matrix(model.generators, a, grid, order)
            est, ok = operator_norm(
                lambda v: shifted @ (g @ inv(v)) - g @ v,
                lambda v: inv.T(g.T @ (shifted.T @ v)) - g.T @ v,
                grid.size,
                steps,
            )
            conv = conv and ok
            norms.append(est)
        norms = np.asarray(norms)
        a_s = np.abs(s_samples)
        slopes.append(float(np.dot(a_s, norms) / np.dot(a_s, a_s)))
        all_norms.append(norms.tolist())
    slope = max(slopes) if slopes else 0.0
    return GroupDomainReport(slope, s_samples.tolist(), all_norms, lam, conv, slopes)


# -- resolvent bound on the real ray ---------------------------------------


@dataclass
class ResolventReport(_Report):
    lambdas: list
    scaled_norms: list
    sup_scaled: float


def check_resolvent_ray(model: CoefficientModel, t: float, grid: SpatialGrid, powers: Sequence[int] | None = None):
    """``||(lambda - C(t))^{-1}|| (1 + lambda)`` for ``lambda = 2^j``."""
    c = assemble_C(model, float(t), grid).matrix
    if powers is None:
        top = int(np.ceil(np.log2(4 * spectral_shift(c))))
        powers = range(0, max(top, 1) + 1)
    lams, vals = [], []
    for j in powers:
        lam = 2.0**j
        inv = _ShiftedInverse(c, lam)
        # (C - lam)^{-1} = -(lam - C)^{-1}; the norm is the same
        est, _ = operator_norm(inv, inv.T, grid.size)
        lams.append(lam)
        vals.append(est * (1 + lam))
    return ResolventReport(lams, vals, float(np.max(vals)))
