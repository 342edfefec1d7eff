"""Direct time stepping of the Itô SPDE and the transform-vs-direct error ladder.

The direct scheme treats the drift implicitly and the noise explicitly:

    (I - dt A(t_{k+1})) U_{k+1} = U_k + sum_n dW_{n,k} B_n U_k
                                  [+ 1/2 sum_n (dW_{n,k}^2 - dt) B_n^2 U_k].

The Milstein term uses the analytic ``B_n^2`` expansion.  With several
(commuting) drivers it also carries the cross terms
``1/2 (B_n B_m + B_m B_n) dW_n dW_m``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .fitting import fit_order, is_monotone
from .grid import GridFunction, SpatialGrid, lp_norm
from .group import check_commuting
from .operators import CoefficientModel, OperatorCoefficients, assemble_B, expand_B_squared
from .pathwise import (
    BatchSolution,
    SolveConfig,
    Trajectory,
    _as_batch_u0,
    _as_batch_w,
    _failure_messages,
    c_stencils,
    frame_steps,
    solve_transformed_batch,
)
from .paths import BrownianPath, TimeGrid, stack_values

__all__ = [
    "solve_direct",
    "solve_direct_batch",
    "StrongErrorReport",
    "strong_error",
    "strong_error_ladder",
    "strong_distances",
    "summarize_strong",
]


def _b_coefficients(gen, grid: SpatialGrid) -> OperatorCoefficients:
    x = grid.coords
    dim = grid.dim
    zero2 = np.zeros((dim, dim) + grid.shape)
    if gen.is_multiplicative:
        return OperatorCoefficients(zero2, np.zeros((dim,) + grid.shape), gen.potential(x))
    return OperatorCoefficients(zero2, gen.transport_field(x), gen.potential(x))


def _bsq_coefficients(gen, grid: SpatialGrid) -> OperatorCoefficients:
    d = expand_B_squared(gen, grid)
    return OperatorCoefficients(d.second, d.first, d.zeroth)


def _stack_tridiagonal(coeffs, grid):
    if not coeffs:
        z = np.zeros((1, grid.size))
        return z, z.copy(), z.copy()
    parts = [[np.asarray(a, dtype=float).ravel() for a in c.tridiagonal(grid)] for c in coeffs]
    return tuple(np.ascontiguousarray(np.stack([p[i] for p in parts])) for i in range(3))


def _banded_direct(model, W, time_grid, grid, u0, milstein, steps):
    lo, di, up = c_stencils(model, time_grid.nodes, grid, which="A")
    gens = model.generators
    blo, bdi, bup = _stack_tridiagonal([_b_coefficients(g, grid) for g in gens], grid)
    sqlo, sqdi, squp = _stack_tridiagonal([_bsq_coefficients(g, grid) for g in gens], grid)
    if gens:
        dwn = np.ascontiguousarray(np.diff(W, axis=1))
    else:
        dwn = np.zeros((W.shape[0], time_grid.steps, 1))
    m = u0.shape[0]
    stride = steps[1] - steps[0] if len(steps) > 2 else time_grid.steps
    frames = np.full((m, len(steps), grid.size), np.nan)
    fail = np.full(m, -1, dtype=np.int64)
    for j in range(m):
        bad = ~np.isfinite(dwn[j]).all(axis=1)
        if bad.any():
            fail[j] = int(np.argmax(bad)) + 1
    _kernels.direct_batch(
        lo, di, up, blo, bdi, bup, sqlo, sqdi, squp, dwn, u0, time_grid.dt, bool(milstein), int(stride), frames, fail
    )
    return frames, fail


def _sparse_direct(model, W, time_grid, grid, u0, milstein, steps):
    gens = model.generators
    b_mats = [assemble_B(g, grid).matrix for g in gens]
    sq_mats = [_bsq_coefficients(g, grid).to_sparse(grid) for g in gens]
    eye = sp.identity(grid.size, format="csc")
    dt = time_grid.dt
    m = u0.shape[0]
    keep = {int(k): i for i, k in enumerate(steps)}
    frames = np.full((m, len(steps), grid.size), np.nan)
    fail = np.full(m, -1, dtype=np.int64)
    u = u0.T.copy()
    frames[:, 0] = u0
    dwn = np.diff(W, axis=1) if gens else np.zeros((m, time_grid.steps, 0))
    for k in range(time_grid.steps):
        a_next = model.a_coefficients(float(time_grid.nodes[k + 1]), grid).to_sparse(grid)
        rhs = u.copy()
        bu = [b @ u for b in b_mats]
        for s, b in enumerate(bu):
            rhs += dwn[:, k, s] * b
        if milstein:
            for s in range(len(gens)):
                rhs += 0.5 * (dwn[:, k, s] ** 2 - dt) * (sq_mats[s] @ u)
                for s2 in range(s + 1, len(gens)):
                    cross = b_mats[s] @ bu[s2] + b_mats[s2] @ bu[s]
                    rhs += 0.5 * dwn[:, k, s] * dwn[:, k, s2] * cross
        try:
            u = spla.splu((eye - dt * a_next).tocsc()).solve(rhs)
        except RuntimeError:
            fail[fail < 0] = k + 1
            break
        bad = ~np.isfinite(u).all(axis=0)
        newly = bad & (fail < 0)
        fail[newly] = k + 1
        u[:, bad] = np.nan
        if (k + 1) in keep:
            frames[:, keep[k + 1]] = u.T
    return frames, fail


def solve_direct_batch(
    model: CoefficientModel,
    W,
    time_grid: TimeGrid,
    grid: SpatialGrid,
    u0,
    cfg: SolveConfig = SolveConfig(),
    milstein: bool = False,
    stride: int | None = None,
) -> BatchSolution:
    """Semi-implicit Euler-Maruyama (or Milstein) solves for a batch of paths."""
    W = _as_batch_w(W, model.n_drivers or np.shape(W)[-1])
    if W.shape[1] != time_grid.steps + 1:
        raise ValueError("path values do not match the time grid")
    check_commuting(model.generators, grid)
    for g in model.generators:
        g.validate(grid)
    m = W.shape[0]
    v0 = _as_batch_u0(u0, grid, m)
    steps = frame_steps(time_grid.steps, cfg.stride if stride is None else stride)
    if grid.dim == 1:
        frames, fail = _banded_direct(model, W, time_grid, grid, v0, milstein, steps)
    else:
        frames, fail = _sparse_direct(model, W, time_grid, grid, v0, milstein, steps)
    for j in range(m):
        if fail[j] >= 0:
            frames[j, steps >= fail[j]] = np.nan
    U = frames.reshape((m, len(steps)) + grid.shape)
    return BatchSolution(time_grid, grid, steps, U, None, fail, _failure_messages(fail))


def solve_direct(
    model: CoefficientModel,
    path: BrownianPath,
    u0: GridFunction,
    cfg: SolveConfig = SolveConfig(),
    milstein: bool = False,
) -> Trajectory:
    """Direct scheme along one path; the returned trajectory has no ``V`` frames."""
    if not np.all(np.isfinite(u0.values)):
        raise ValueError("initial data must be finite")
    W = path.values[None]
    if not model.generators:
        W = np.zeros((1, path.grid.steps + 1, 1))
    sol = solve_direct_batch(model, W, path.grid, u0.grid, u0, cfg, milstein)
    if sol.fail_step[0] >= 0:
        raise FloatingPointError(f"path {path.path_index}: {sol.errors[0]}")
    diag = {"fail_step": -1, "error": None, "milstein": bool(milstein)}
    return Trajectory(path.grid, u0.grid, sol.steps, sol.U[0], None, None, diag)


# -- transform vs direct -----------------------------------------------------


@dataclass
class StrongErrorReport:
    """Root-mean-square distance of the two solvers at ``T`` along a step ladder."""

    dts: list
    errors: list
    stderr: list
    n_paths: int
    order: float
    intercept: float
    monotone: bool
    milstein: bool
    p: float = 2.0

    def as_dict(self) -> dict:
        return asdict(self)

    def write_csv(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["dt", "n_paths", "e_strong", "stderr"])
        for dt, e, s in zip(self.dts, self.errors, self.stderr):
            w.writerow([f"{dt:.17g}", self.n_paths, f"{e:.17g}", f"{s:.17g}"])

    def write_json(self, fh) -> None:
        json.dump(self.as_dict(), fh, indent=2, sort_keys=True)


def _ladder_inputs(paths, min_paths):
    if isinstance(paths, np.ndarray):
        raise TypeError("pass BrownianPath objects so the time grid is known")
    paths = list(paths)
    if len(paths) < min_paths:
        raise ValueError(f"the strong error needs at least {min_paths} paths, got {len(paths)}")
    return stack_values(paths), paths[0].grid


def strong_distances(
    model: CoefficientModel,
    W_fine: np.ndarray,
    fine: TimeGrid,
    u0: GridFunction,
    cfg_pair: tuple[SolveConfig, SolveConfig] | SolveConfig = SolveConfig(),
    factors=(16, 8, 4, 2, 1),
    milstein=(False, True),
    p: float = 2,
):
    """Per-path ``||U_transform(T) - U_direct(T)||_p^2`` on each ladder level.

    Returns ``(dts, {milstein_flag: array (levels, M)}, failed)``; ``failed``
    marks paths where any solve failed (their distances are NaN).
    """
    W_fine = np.asarray(W_fine, dtype=float)
    cfg_t, cfg_d = (cfg_pair, cfg_pair) if isinstance(cfg_pair, SolveConfig) else cfg_pair
    grid = u0.grid
    flags = [bool(f) for f in np.atleast_1d(milstein)]
    dts = []
    dist = {f: [] for f in flags}
    failed = np.zeros(W_fine.shape[0], dtype=bool)
    for fac in sorted(factors, reverse=True):
        tg = fine.coarsen(fac)
        W = np.ascontiguousarray(W_fine[:, ::fac])
        ut = solve_transformed_batch(model, W, tg, grid, u0, cfg_t, stride=0)
        failed |= ut.failed
        dts.append(tg.dt)
        for f in flags:
            ud = solve_direct_batch(model, W, tg, grid, u0, cfg_d, f, stride=0)
            failed |= ud.failed
            dist[f].append(lp_norm(ut.U_T - ud.U_T, grid, p) ** 2)
    out = {f: np.array(d) for f, d in dist.items()}
    for d in out.values():
        d[:, failed] = np.nan
    return dts, out, failed


def summarize_strong(dts, dist: np.ndarray, milstein: bool, p: float = 2) -> StrongErrorReport:
    """RMS over paths (columns of ``dist``, NaN columns dropped) and the fitted order."""
    dist = np.asarray(dist, dtype=float)
    dist = dist[:, np.all(np.isfinite(dist), axis=0)]
    errs, ses = [], []
    for d in dist:
        e = float(np.sqrt(np.mean(d)))
        # delta method: se(sqrt(mean)) = se(mean) / (2 sqrt(mean))
        se = float(np.std(d, ddof=1) / np.sqrt(d.size) / (2 * e)) if e > 0 and d.size > 1 else 0.0
        errs.append(e)
        ses.append(se)
    order, c = fit_order(dts, errs)
    return StrongErrorReport(list(dts), errs, ses, int(dist.shape[1]), order, c, is_monotone(errs), bool(milstein), float(p))


def strong_error_ladder(
    model: CoefficientModel,
    paths,
    u0: GridFunction,
    cfg_pair: tuple[SolveConfig, SolveConfig] | SolveConfig = SolveConfig(),
    factors=(16, 8, 4, 2, 1),
    milstein=(False, True),
    p: float = 2,
    min_paths: int = 100,
) -> dict:
    """:func:`strong_error` for several direct variants sharing one transform solve.

    Returns ``{milstein_flag: StrongErrorReport}``.
    """
    W_fine, fine = _ladder_inputs(paths, min_paths)
    dts, dist, _ = strong_distances(model, W_fine, fine, u0, cfg_pair, factors, milstein, p)
    return {f: summarize_strong(dts, d, f, p) for f, d in dist.items()}


def strong_error(
    model: CoefficientModel,
    paths,
    u0: GridFunction,
    cfg_pair: tuple[SolveConfig, SolveConfig] | SolveConfig = SolveConfig(),
    factors=(16, 8, 4, 2, 1),
    milstein: bool = False,
    p: float = 2,
    min_paths: int = 100,
) -> StrongErrorReport:
    """``e(dt) = (mean_paths ||U_transform(T) - U_direct(T)||_p^2)^(1/2)`` on a ladder.

    ``paths`` live on the finest grid; coarse levels subsample them by
    ``factors`` so coarse increments are exact sums of fine ones.
    ``cfg_pair`` holds the settings of the transform and of the direct solver.
    """
    rep = strong_error_ladder(model, paths, u0, cfg_pair, factors, (bool(milstein),), p, min_paths)
    return rep[bool(milstein)]
