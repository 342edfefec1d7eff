"""Pathwise solution by the group transformation.

Along a driving path ``W`` the SPDE ``dU = A U dt + sum B_n U dW_n`` is
replaced by the deterministic problem ``V' = C_W(t) V`` with
``C_W(t) = G(-W(t)) C(t) G(W(t))`` and ``C = A - 1/2 sum B_n^2``; the
solution is recovered as ``U = G(W) V``.  ``V`` is advanced with the
theta-scheme

    (I - theta dt C_W(t_{k+1})) V_{k+1} = (I + (1 - theta) dt C_W(t_k)) V_k.

Solvers work on batches of paths (``W`` of shape ``(M, N + 1, N_w)``); each
path's result is independent of the rest of the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .grid import GridFunction, SpatialGrid, lp_norm
from .group import _flow_batch, _lagrange_weights, check_commuting, group_apply_batch, group_matrix, interpolation_stencil
from .operators import CoefficientModel, OperatorCoefficients, conjugate
from .paths import BrownianPath, TimeGrid

__all__ = [
    "SolveConfig",
    "Trajectory",
    "BatchSolution",
    "solve_transformed",
    "solve_transformed_batch",
    "fourier_oracle",
    "frame_steps",
    "c_stencils",
]

_REPRESENTATIONS = ("auto", "banded", "dense", "iterative")


@dataclass(frozen=True)
class SolveConfig:
    """Numerical settings shared by the pathwise, direct and smoothed-noise solvers.

    ``stride`` thins stored frames (``0`` keeps only the first and last);
    ``exact_scalar`` switches single-node problems to exponential stepping.
    """

    theta: float = 0.5
    tol: float = 1e-10
    max_iter: int = 200
    representation: str = "auto"
    exact_scalar: bool = True
    stride: int = 1
    order: int = 3

    def __post_init__(self):
        if not 0.5 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [1/2, 1], got {self.theta}")
        if not self.tol > 0:
            raise ValueError("solver tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.representation not in _REPRESENTATIONS:
            raise ValueError(f"representation must be one of {_REPRESENTATIONS}")
        if self.stride < 0:
            raise ValueError("stride must be non-negative")
        if self.order not in (1, 3):
            raise ValueError("interpolation order must be 1 or 3")


def frame_steps(nsteps: int, stride: int) -> np.ndarray:
    """Step indices of stored frames: multiples of ``stride`` and the last step."""
    if stride <= 0 or stride >= nsteps:
        return np.array([0, nsteps])
    ks = np.arange(0, nsteps + 1, stride)
    if ks[-1] != nsteps:
        ks = np.append(ks, nsteps)
    return ks


@dataclass
class BatchSolution:
    """Frames of a batch of pathwise solves.

    ``U`` and ``V`` have shape ``(M, K, *grid.shape)`` for the ``K`` stored
    steps; ``V`` is ``None`` for the direct scheme.  Failed paths have
    ``fail_step >= 0``, NaN frames from that step on, and a message in
    ``errors``.
    """

    time_grid: TimeGrid
    grid: SpatialGrid
    steps: np.ndarray
    U: np.ndarray
    V: np.ndarray | None
    fail_step: np.ndarray
    errors: list
    residuals: np.ndarray | None = None

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.time_grid.dt

    @property
    def failed(self) -> np.ndarray:
        return self.fail_step >= 0

    @property
    def U_T(self) -> np.ndarray:
        return self.U[:, -1]

    @property
    def n_paths(self) -> int:
        return self.U.shape[0]


@dataclass
class Trajectory:
    """Frames ``V(t_k)`` and ``U(t_k) = G(W(t_k)) V(t_k)`` of one path."""

    time_grid: TimeGrid
    grid: SpatialGrid
    steps: np.ndarray
    U: np.ndarray
    V: np.ndarray | None
    W: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.time_grid.dt

    def frame(self, j: int, which: str = "U") -> GridFunction:
        arr = self.U if which == "U" else self.V
        return GridFunction(self.grid, arr[j])

    @property
    def terminal(self) -> GridFunction:
        return self.frame(-1)

    @property
    def failed(self) -> bool:
        return self.diagnostics.get("fail_step", -1) >= 0

    def norms(self, p: float = 2) -> np.ndarray:
        return lp_norm(self.U, self.grid, p)

    def write_csv(self, fh, x=None) -> None:
        """Rows ``k, t_k, node, x, V, U`` with 17 significant digits."""
        import csv

        writer = csv.writer(fh)
        writer.writerow(["k", "t_k", "node", "x", "V", "U"])
        coords = self.grid.coords.reshape(self.grid.dim, -1)
        for j, k in enumerate(self.steps):
            t = k * self.time_grid.dt
            u = self.U[j].ravel()
            v = self.V[j].ravel() if self.V is not None else np.full(u.shape, np.nan)
            for node in range(u.size):
                xs = ";".join(f"{c:.17g}" for c in coords[:, node])
                writer.writerow([k, f"{t:.17g}", node, xs, f"{v[node]:.17g}", f"{u[node]:.17g}"])

    def check_backtransform(self, generators, order: int = 3) -> float:
        """Max relative deviation of ``U_k`` from ``G(W_k) V_k`` over frames."""
        if self.V is None or self.W is None:
            raise ValueError("trajectory carries no transformed frames")
        shp = (-1,) + self.grid.shape
        again = group_apply_batch(generators, self.W, self.V.reshape(shp), self.grid, order)
        scale = max(float(np.max(np.abs(self.U))), 1e-300)
        return float(np.max(np.abs(again - self.U.reshape(shp)))) / scale


# -- helpers ---------------------------------------------------------------


def _as_batch_w(W, n_drivers: int) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim == 2:
        W = W[None]
    if W.ndim != 3 or W.shape[2] != n_drivers:
        raise ValueError(f"driver values must have shape (M, N + 1, {n_drivers})")
    return W


def _as_batch_u0(u0, grid: SpatialGrid, m: int) -> np.ndarray:
    if isinstance(u0, GridFunction):
        u0 = u0.values
    u0 = np.asarray(u0, dtype=float)
    if u0.shape == grid.shape or u0.shape == (grid.size,):
        return np.broadcast_to(u0.reshape(1, grid.size), (m, grid.size)).copy()
    if u0.shape[0] != m:
        raise ValueError("per-path initial data must have one row per path")
    return u0.reshape(m, grid.size).copy()


def c_stencils(model: CoefficientModel, times: np.ndarray, grid: SpatialGrid, which: str = "C"):
    """Periodic tridiagonal stencils ``(lo, di, up)`` of ``C(t)`` or ``A(t)`` at ``times``."""
    bsq = model.b_squared_coefficients(grid) if (which == "C" and model.generators) else None
    n = grid.size
    lo = np.empty((len(times), n))
    di = np.empty((len(times), n))
    up = np.empty((len(times), n))
    for k, t in enumerate(times):
        if which == "C":
            coeffs = model.c_coefficients(float(t), grid, bsq)
        else:
            coeffs = model.a_coefficients(float(t), grid)
        lo[k], di[k], up[k] = (np.asarray(a, dtype=float).ravel() for a in coeffs.tridiagonal(grid))
    return lo, di, up


def _group_stencils(gen, s: np.ndarray, grid: SpatialGrid, order: int):
    """Relative gather offsets, weights and exponential factors of ``G(s)``.

    Constant transport shifts every node by the same amount, so a single
    stencil row (shape ``(S, 1, ...)``) is returned for it.
    """
    if gen.velocity is not None:
        _, logw, _ = _flow_batch(gen, s, grid)
        u = gen.velocity[0] * np.asarray(s, dtype=float) / grid.h
        base = np.floor(u)
        w, first = _lagrange_weights(u - base, order)
        rel = np.mod(base.astype(np.int64) + first, grid.n)
        rel = np.where(rel > grid.n // 2, rel - grid.n, rel).astype(np.int64)
        return rel[:, None], np.ascontiguousarray(w[:, None, :]), np.exp(logw)
    images, logw, _ = _flow_batch(gen, s, grid)
    idx, w = interpolation_stencil(images, grid, order)
    n = grid.n
    rel = np.mod(idx[..., 0] - np.arange(n), n)
    rel = np.where(rel > n // 2, rel - n, rel).astype(np.int64)
    return rel, np.ascontiguousarray(w), np.exp(logw)


def _finish(model, W, steps, V, grid, time_grid, fail, errors, order, residuals=None, U=None):
    """Build ``U = G(W) V`` on the stored frames and mark failed paths."""
    m, kk = V.shape[:2]
    shp = (m * kk,) + grid.shape
    Wf = W[:, steps].reshape(m * kk, -1)
    Vf = V.reshape(shp)
    bad = ~np.isfinite(Vf).all(axis=tuple(range(1, Vf.ndim)))
    Vf = np.where(bad.reshape((-1,) + (1,) * grid.dim), 0.0, Vf)
    if model.generators:
        Wf = np.where(np.isfinite(Wf), Wf, 0.0)
        Uf = group_apply_batch(model.generators, Wf, Vf, grid, order)
    else:
        Uf = Vf.copy()
    Uf[bad] = np.nan
    Vf = V.reshape(shp)
    out_U = Uf.reshape((m, kk) + grid.shape)
    out_V = Vf.reshape((m, kk) + grid.shape)
    for j in range(m):
        if fail[j] >= 0:
            later = steps >= fail[j]
            out_U[j, later] = np.nan
            out_V[j, later] = np.nan
    return BatchSolution(time_grid, grid, steps, out_U, out_V, fail, errors, residuals)


def _failure_messages(fail: np.ndarray, codes=None) -> list:
    msgs = []
    for j, f in enumerate(fail):
        if f < 0:
            msgs.append(None)
        elif codes is not None and codes[j] == 2:
            msgs.append(f"linear solve failed at step {int(f)}")
        else:
            msgs.append(f"non-finite state at step {int(f)}")
    return msgs


# -- solvers ---------------------------------------------------------------


def _scalar_batch(model, W, time_grid, grid, v0, cfg, steps):
    times = time_grid.nodes
    c = np.array([float(model.c_coefficients(float(t), grid).zeroth.ravel()[0]) for t in times])
    dt = time_grid.dt
    if cfg.exact_scalar:
        incr = 0.5 * dt * (c[:-1] + c[1:])
        logv = np.concatenate([[0.0], np.cumsum(incr)])
        fac = np.exp(logv)
    else:
        th = cfg.theta
        ratio = (1.0 + (1.0 - th) * dt * c[:-1]) / (1.0 - th * dt * c[1:])
        fac = np.concatenate([[1.0], np.cumprod(ratio)])
    V = v0[:, None, :] * fac[steps][None, :, None]
    fail = np.full(V.shape[0], -1, dtype=np.int64)
    for j in range(V.shape[0]):
        bad = ~np.isfinite(V[j]).all(axis=-1)
        if bad.any():
            fail[j] = steps[np.argmax(bad)]
    return V, fail, None, None


def _multiplicative_batch(model, W, time_grid, grid, v0, cfg, steps):
    lo, di, up = c_stencils(model, time_grid.nodes, grid)
    x = grid.coords
    if model.generators:
        mult = np.stack([g.potential(x).ravel() for g in model.generators])
    else:
        mult = np.zeros((1, grid.size))
        W = np.zeros(W.shape[:2] + (1,))
    dwn = np.ascontiguousarray(np.diff(W, axis=1))
    m = v0.shape[0]
    stride = steps[1] - steps[0] if len(steps) > 2 else time_grid.steps
    frames = np.full((m, len(steps), grid.size), np.nan)
    fail = np.full(m, -1, dtype=np.int64)
    _kernels.shared_theta_batch(lo, di, up, mult, dwn, v0, cfg.theta, time_grid.dt, int(stride), frames, fail)
    # back to the transformed variable: V = G(-W) U
    Wf = W[:, steps]
    logd = np.einsum("mkn,ni->mki", Wf, mult)
    V = np.exp(-logd) * frames
    return V, fail, None, None


def _first_order_batch(model, W, time_grid, grid, v0, cfg, steps):
    gen = model.generators[0]
    lo, di, up = c_stencils(model, time_grid.nodes, grid)
    m = v0.shape[0]
    nsteps = time_grid.steps
    stride = steps[1] - steps[0] if len(steps) > 2 else nsteps
    V = np.full((m, len(steps), grid.size), np.nan)
    fail = np.full(m, -1, dtype=np.int64)
    codes = np.zeros(m, dtype=np.int64)
    resid = np.zeros((m, nsteps))
    for j in range(m):
        s = W[j, :, 0]
        if not np.all(np.isfinite(s)):
            fail[j] = int(np.argmax(~np.isfinite(s)))
            codes[j] = 1
            continue
        relp, wp, ep = _group_stencils(gen, s, grid, cfg.order)
        relm, wm, em = _group_stencils(gen, -s, grid, cfg.order)
        frames = np.full((len(steps), grid.size), np.nan)
        f, code = _kernels.transform_path(
            lo, di, up, relp, wp, ep, relm, wm, em, v0[j], cfg.theta, time_grid.dt,
            int(stride), frames, resid[j], cfg.tol,
        )
        V[j] = frames
        fail[j], codes[j] = f, code
    return V, fail, codes, resid


def _generic_batch(model, W, time_grid, grid, v0, cfg, steps):
    """Per-path sparse, dense or Krylov solves; any dimension and generator family."""
    gens = model.generators
    m = v0.shape[0]
    nsteps = time_grid.steps
    dt, th = time_grid.dt, cfg.theta
    times = time_grid.nodes
    bsq = model.b_squared_coefficients(grid) if gens else None
    c_mats = [model.c_coefficients(float(t), grid, bsq).to_sparse(grid) for t in times]
    eye = sp.identity(grid.size, format="csc")
    keep = set(int(k) for k in steps)
    V = np.full((m, len(steps), grid.size), np.nan)
    fail = np.full(m, -1, dtype=np.int64)
    codes = np.zeros(m, dtype=np.int64)
    resid = np.zeros((m, nsteps))

    def conj(k, w):
        if cfg.representation == "iterative":
            return conjugate(model, float(times[k]), w, grid, "composed", cfg.order)
        if not gens or not np.any(w):
            return c_mats[k]
        return (group_matrix(gens, -w, grid, cfg.order) @ c_mats[k] @ group_matrix(gens, w, grid, cfg.order)).tocsr()

    for j in range(m):
        if not np.all(np.isfinite(W[j])):
            fail[j] = int(np.argmax(~np.isfinite(W[j]).all(axis=1)))
            codes[j] = 1
            continue
        v = v0[j].copy()
        V[j, 0] = v
        fi = 1
        cur = conj(0, W[j, 0])
        for k in range(nsteps):
            nxt = conj(k + 1, W[j, k + 1])
            if cfg.representation == "iterative":
                rhs = v + (1 - th) * dt * cur.apply(v)
                op = spla.LinearOperator(
                    (grid.size, grid.size), matvec=lambda y, o=nxt: y - th * dt * o.apply(y), dtype=float
                )
                vn, info = spla.gmres(op, rhs, x0=v, rtol=cfg.tol, atol=0.0,
                                      restart=min(grid.size, 60), maxiter=cfg.max_iter)
                r = np.linalg.norm(op.matvec(vn) - rhs) / max(np.linalg.norm(rhs), 1e-300)
                ok = info == 0 or r <= cfg.tol
            else:
                rhs = v + (1 - th) * dt * (cur @ v)
                kmat = (eye - th * dt * nxt).tocsc()
                if cfg.representation == "dense":
                    vn = sla.lu_solve(sla.lu_factor(kmat.toarray()), rhs)
                else:
                    vn = spla.splu(kmat).solve(rhs)
                r = np.linalg.norm(kmat @ vn - rhs, np.inf) / max(np.linalg.norm(rhs, np.inf), 1e-300)
                ok = r <= cfg.tol
            resid[j, k] = r
            if not np.all(np.isfinite(vn)):
                fail[j], codes[j] = k + 1, 1
                break
            if not ok:
                fail[j], codes[j] = k + 1, 2
                break
            v, cur = vn, nxt
            if (k + 1) in keep:
                V[j, fi] = v
                fi += 1
    return V, fail, codes, resid


def _dispatch(model: CoefficientModel, grid: SpatialGrid, cfg: SolveConfig) -> str:
    if grid.scalar:
        return "scalar"
    if cfg.representation in ("dense", "iterative") or grid.dim != 1:
        return "generic"
    if model.multiplicative_only:
        return "multiplicative"
    if len(model.generators) == 1:
        return "first_order"
    return "generic"


def solve_transformed_batch(
    model: CoefficientModel,
    W,
    time_grid: TimeGrid,
    grid: SpatialGrid,
    u0,
    cfg: SolveConfig = SolveConfig(),
    stride: int | None = None,
) -> BatchSolution:
    """Transform-method solves for a batch of driver paths.

    ``W``: ``(M, N + 1, N_w)`` path values on ``time_grid``; ``u0``: one
    initial grid function or one per path.  ``stride`` overrides
    ``cfg.stride``.
    """
    W = _as_batch_w(W, model.n_drivers or np.shape(W)[-1])
    if W.shape[1] != time_grid.steps + 1:
        raise ValueError("path values do not match the time grid")
    check_commuting(model.generators, grid)
    for g in model.generators:
        g.validate(grid)
    m = W.shape[0]
    v0 = _as_batch_u0(u0, grid, m)
    steps = frame_steps(time_grid.steps, cfg.stride if stride is None else stride)
    route = _dispatch(model, grid, cfg)
    solver = {
        "scalar": _scalar_batch,
        "multiplicative": _multiplicative_batch,
        "first_order": _first_order_batch,
        "generic": _generic_batch,
    }[route]
    V, fail, codes, resid = solver(model, W, time_grid, grid, v0, cfg, steps)
    if model.generators:
        # a non-finite driver fails the path even where V does not depend on it
        wbad = ~np.isfinite(W).all(axis=2)
        for j in np.flatnonzero(wbad.any(axis=1)):
            k = int(np.argmax(wbad[j]))
            if fail[j] < 0 or k < fail[j]:
                fail[j] = k
                if codes is not None:
                    codes[j] = 1
    errors = _failure_messages(fail, codes)
    if not model.generators:
        W = np.zeros(W.shape[:2] + (0,))
    sol = _finish(model, W, steps, V, grid, time_grid, fail, errors, cfg.order, resid)
    return sol


def solve_transformed(
    model: CoefficientModel, path: BrownianPath, u0: GridFunction, cfg: SolveConfig = SolveConfig()
) -> Trajectory:
    """Solve ``V' = C_W(t) V``, ``V(0) = u0`` along one path and return ``U = G(W) V``."""
    if not np.all(np.isfinite(u0.values)):
        raise ValueError("initial data must be finite")
    W = path.values[None]
    if not model.generators:
        W = np.zeros((1, path.grid.steps + 1, 1))
    sol = solve_transformed_batch(model, W, path.grid, u0.grid, u0, cfg)
    shp = (-1,) + u0.grid.shape
    diag = {
        "fail_step": int(sol.fail_step[0]),
        "error": sol.errors[0],
        "route": _dispatch(model, u0.grid, cfg),
    }
    if sol.residuals is not None:
        diag["residuals"] = sol.residuals[0]
        diag["iterations"] = np.ones(path.grid.steps, dtype=int)
    if sol.fail_step[0] >= 0:
        raise FloatingPointError(f"path {path.path_index}: {sol.errors[0]}")
    Wk = path.values[sol.steps] if model.generators else None
    return Trajectory(path.grid, u0.grid, sol.steps, sol.U[0].reshape(shp), sol.V[0].reshape(shp), Wk, diag)


# -- Fourier reference solver for constant coefficients ----------------------


def _constant_in_x(fn, grid, times, what):
    x = grid.coords
    for t in times:
        v = np.asarray(fn(float(t), x), dtype=float)
        if v.ndim and np.ptp(v) > 1e-13 * (1 + np.max(np.abs(v))):
            raise ValueError(f"{what} varies in space; the Fourier oracle needs constant coefficients")
        yield float(np.ravel(v)[0]) if v.ndim else float(v)


def fourier_oracle(
    model: CoefficientModel,
    path,
    u0: GridFunction,
    modes: int | None = None,
    symbol: str = "exact",
    quad_factor: int = 10,
):
    """``U(T)`` of a constant-coefficient 1D problem, mode by mode.

    ``path`` is a :class:`BrownianPath` (returns a :class:`GridFunction`) or a
    sequence of paths on one time grid (returns a list); the time integrals
    are computed once for the whole sequence.

    Each Fourier mode ``xi`` evolves by the scalar ODE with the symbol of
    ``C``; with constant coefficients the conjugation is trivial, so
    ``U_hat(T) = exp(int_0^T C_hat(t) dt + sum_n B_hat_n W_n(T)) u0_hat``.
    ``symbol="exact"`` uses ``-xi^2`` and ``i xi``; ``"discrete"`` uses the
    symbols of the centered differences.  Time integrals use the trapezoid
    rule at ``quad_factor`` times the path resolution.
    """
    single = isinstance(path, BrownianPath)
    paths = [path] if single else list(path)
    path = paths[0]
    if any(p.grid != path.grid for p in paths):
        raise ValueError("paths live on different time grids")
    grid = u0.grid
    if grid.dim != 1:
        raise ValueError("the Fourier oracle is one-dimensional")
    n = grid.n
    modes = n if modes is None else int(modes)
    if modes != n:
        raise ValueError("the oracle works with as many modes as grid nodes")
    nq = quad_factor * path.grid.steps
    tq = np.linspace(0.0, path.grid.horizon, nq + 1)
    scal = lambda f: lambda t, x: np.asarray(f(t, x), dtype=float)
    a = np.array(list(_constant_in_x(lambda t, x: model.a_field(t, x)[0, 0], grid, tq, "a")))
    q = np.array(list(_constant_in_x(lambda t, x: model.q_field(t, x)[0], grid, tq, "q")))
    r = np.array(list(_constant_in_x(scal(lambda t, x: model.r_field(t, x)), grid, tq, "r")))
    k = np.fft.rfftfreq(n, d=1.0 / n)
    xi = 2 * np.pi * k / grid.length
    h = grid.h
    if symbol == "exact":
        d2, d1 = -(xi**2), 1j * xi
    elif symbol == "discrete":
        d2 = -4 * np.sin(xi * h / 2) ** 2 / h**2
        d1 = 1j * np.sin(xi * h) / h
    else:
        raise ValueError("symbol must be 'exact' or 'discrete'")
    x = grid.coords
    bsym = np.zeros((len(model.generators),) + xi.shape, dtype=complex)
    bsq = np.zeros(xi.shape, dtype=complex)
    if model.generators and len(model.generators) != path.n_drivers:
        raise ValueError("one driver per generator is required")
    for i, gen in enumerate(model.generators):
        if gen.is_multiplicative:
            bv = gen.potential(x)
            if np.ptp(bv) > 1e-13 * (1 + np.max(np.abs(bv))):
                raise ValueError("multiplicative field varies in space")
            sym = float(bv.ravel()[0]) + 0j * xi
            sq = sym**2
        else:
            if gen.velocity is None or gen.c_value is None:
                raise ValueError("first-order generators need constant b and c")
            beta, c = gen.velocity[0], gen.c_value
            # the transform solver realizes G exactly up to interpolation: exact shift symbol
            sym = 1j * beta * xi + c
            sq = beta**2 * d2 + 2 * c * beta * d1 + c**2
        bsym[i] = sym
        bsq = bsq + sq
    # int_0^T C_hat(t) dt by the trapezoid rule
    wq = np.full(nq + 1, tq[1] - tq[0])
    wq[0] = wq[-1] = 0.5 * (tq[1] - tq[0])
    expo = (wq @ a) * d2 + (wq @ q) * d1 + (wq @ r) - 0.5 * path.grid.horizon * bsq
    u0hat = np.fft.rfft(u0.values)
    out = []
    for p in paths:
        WT = p.values[-1, : len(model.generators)]
        uhat = u0hat * np.exp(expo + np.tensordot(WT, bsym, axes=1))
        out.append(GridFunction(grid, np.fft.irfft(uhat, n)))
    return out[0] if single else out
