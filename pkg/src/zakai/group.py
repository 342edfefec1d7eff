"""Groups generated by first-order and multiplication operators.

A first-order generator ``B = b(x).D + c(x)`` generates

    (G(s) f)(x) = exp(w_s(x)) f(phi_s(x)),   w_s(x) = int_0^s c(phi_r(x)) dr,

where ``phi`` is the flow of ``b`` on the periodic cell.  A multiplicative
generator ``B = b(x)`` generates ``(G(s) f)(x) = exp(s b(x)) f(x)``.

Off-node values ``f(phi_s(x_j))`` come from periodic Lagrange interpolation,
cubic (fourth order) by default or linear (monotone) on request.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .grid import GridFunction, SpatialGrid, lp_norm

__all__ = [
    "GroupGenerator",
    "FlowMap",
    "integrate_flow",
    "apply_group",
    "compose_check",
    "check_commuting",
    "group_apply_batch",
    "group_matrix",
    "interpolation_stencil",
]

FIRST_ORDER = "first_order"
MULTIPLICATIVE = "multiplicative"


def _const_field(value):
    value = np.asarray(value, dtype=float)

    def fn(x):
        return np.broadcast_to(value.reshape(value.shape + (1,) * (np.ndim(x) - 1)),
                               value.shape + np.shape(x)[1:])

    return fn


@dataclass(frozen=True, eq=False)
class GroupGenerator:
    """Generator of a one-parameter group on periodic grid functions.

    ``b`` and ``c`` are callables of coordinates ``x`` with shape
    ``(dim, ...)``.  For ``first_order`` generators ``b(x)`` returns the
    transport field (shape broadcastable to ``(dim, ...)``); for
    ``multiplicative`` ones it returns the scalar multiplier field.
    ``velocity`` / ``c_value`` record constant fields so that flows can be
    evaluated in closed form.
    """

    kind: str
    b: Callable
    c: Callable | None = None
    velocity: tuple | None = None
    c_value: float | None = None
    name: str = ""
    smooth: bool = True

    def __post_init__(self):
        if self.kind not in (FIRST_ORDER, MULTIPLICATIVE):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.c is None and self.kind == FIRST_ORDER:
            object.__setattr__(self, "c", _const_field(0.0))
            object.__setattr__(self, "c_value", 0.0)

    @classmethod
    def transport(cls, velocity, c=0.0, name: str = "") -> "GroupGenerator":
        """``B = beta.D + c`` with constant ``beta``; ``c`` a number or a field."""
        velocity = tuple(float(v) for v in np.atleast_1d(velocity))
        if callable(c):
            return cls(FIRST_ORDER, _const_field(velocity), c, velocity, None, name)
        return cls(FIRST_ORDER, _const_field(velocity), _const_field(c), velocity, float(c), name)

    @classmethod
    def first_order(cls, b: Callable, c: Callable | float = 0.0, name: str = "") -> "GroupGenerator":
        if callable(c):
            return cls(FIRST_ORDER, b, c, None, None, name)
        return cls(FIRST_ORDER, b, _const_field(c), None, float(c), name)

    @classmethod
    def multiplicative(cls, b: Callable | float, name: str = "") -> "GroupGenerator":
        if callable(b):
            return cls(MULTIPLICATIVE, b, None, None, None, name)
        return cls(MULTIPLICATIVE, _const_field(b), None, None, float(b), name)

    @property
    def is_multiplicative(self) -> bool:
        return self.kind == MULTIPLICATIVE

    def transport_field(self, x: np.ndarray) -> np.ndarray:
        dim = x.shape[0]
        return np.broadcast_to(np.asarray(self.b(x), dtype=float), x.shape).reshape((dim,) + x.shape[1:])

    def potential(self, x: np.ndarray) -> np.ndarray:
        """``c(x)`` for first-order generators, ``b(x)`` for multiplicative ones."""
        fn = self.b if self.is_multiplicative else self.c
        return np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape[1:])

    def validate(self, grid: SpatialGrid) -> None:
        """Reject non-finite coefficient values on the grid."""
        x = grid.coords
        vals = [self.potential(x)]
        if not self.is_multiplicative:
            vals.append(self.transport_field(x))
        for v in vals:
            if not np.all(np.isfinite(v)):
                raise ValueError(f"generator {self.name or self.kind} has non-finite coefficients")


@dataclass(frozen=True)
class FlowMap:
    """Characteristic flow of a first-order generator at parameter ``s``.

    ``images`` holds ``phi_s(x_j)`` wrapped into the cell (shape
    ``(dim, *grid.shape)``), ``weights`` holds ``int_0^s c(phi_r(x_j)) dr``.
    """

    generator: GroupGenerator
    s: float
    grid: SpatialGrid
    images: np.ndarray
    weights: np.ndarray
    substeps: int = field(default=0, compare=False)


def flow_substeps(s_max: float, grid: SpatialGrid) -> int:
    """RK4 substeps for parameter range ``s_max``: at least ``4 ceil(|s|/h)``."""
    s_max = abs(float(s_max))
    if s_max == 0.0:
        return 0
    return int(max(4 * np.ceil(s_max / grid.h), np.ceil(s_max * 256.0), 8))


def _gauss_line_integral(c: Callable, x: np.ndarray, velocity: np.ndarray, s: np.ndarray, dim: int):
    """``int_0^s c(x + r v) dr`` by Gauss-Legendre along straight characteristics.

    ``x``: ``(dim, *pts)``; ``s``: ``(M,)``; returns ``(M, *pts)``.
    """
    reach = float(np.max(np.abs(s))) * float(np.linalg.norm(velocity))
    q = int(16 + 8 * np.ceil(reach))
    nodes, wts = np.polynomial.legendre.leggauss(q)
    pts_shape = x.shape[1:]
    out = np.zeros((s.size,) + pts_shape)
    sb = s.reshape((-1,) + (1,) * len(pts_shape))
    vb = velocity.reshape((dim,) + (1,) * (len(pts_shape) + 1))
    for xi, wi in zip(nodes, wts):
        r = 0.5 * sb * (1.0 + xi)
        y = x[:, None] + r[None] * vb
        out += wi * np.broadcast_to(np.asarray(c(y), dtype=float), out.shape)
    return 0.5 * sb * out


_PRIMITIVE_CACHE: dict = {}
_PRIMITIVE_CELLS = 8192


def _primitive_table(gen: GroupGenerator, length: float):
    """Periodic part of ``P(y) = int_0^y c`` on a fine table, plus the mean of ``c``.

    Cell integrals use 8-point Gauss-Legendre, so the table is exact to
    round-off for smooth ``c``; off-table values use cubic Hermite
    interpolation with ``P' = c``.
    """
    key = (id(gen), float(length))
    hit = _PRIMITIVE_CACHE.get(key)
    if hit is not None and hit[0] is gen:
        return hit[1:]
    nf = _PRIMITIVE_CELLS
    hf = length / nf
    nodes, wts = np.polynomial.legendre.leggauss(8)
    left = np.arange(nf) * hf
    pts = left[:, None] + 0.5 * hf * (1.0 + nodes[None, :])
    cvals = np.asarray(gen.c(pts[None]), dtype=float).reshape(nf, 8)
    cell = 0.5 * hf * cvals @ wts
    prim = np.concatenate([[0.0], np.cumsum(cell)])
    mean = prim[-1] / length
    grid_pts = np.arange(nf + 1) * hf
    q = prim - mean * grid_pts
    dq = np.asarray(gen.c(grid_pts[None]), dtype=float).reshape(nf + 1) - mean
    q[-1], dq[-1] = q[0], dq[0]
    _PRIMITIVE_CACHE[key] = (gen, q, dq, mean, hf)
    return q, dq, mean, hf


def _primitive(gen: GroupGenerator, y: np.ndarray, length: float) -> np.ndarray:
    q, dq, mean, hf = _primitive_table(gen, length)
    u = np.mod(y, length) / hf
    j = np.minimum(np.floor(u).astype(np.intp), len(q) - 2)
    t = u - j
    h00 = (1 + 2 * t) * (1 - t) ** 2
    h10 = t * (1 - t) ** 2
    h01 = t * t * (3 - 2 * t)
    h11 = t * t * (t - 1)
    return h00 * q[j] + h10 * hf * dq[j] + h01 * q[j + 1] + h11 * hf * dq[j + 1] + mean * y


def _periodic_line_integral(gen: GroupGenerator, x: np.ndarray, v: float, s: np.ndarray, length: float):
    """``int_0^s c(x + r v) dr = (P(x + s v) - P(x)) / v`` for constant ``v`` in 1D."""
    sb = s.reshape((-1,) + (1,) * x.ndim)
    return (_primitive(gen, x[None] + sb * v, length) - _primitive(gen, x, length)[None]) / v


def _flow_batch(gen: GroupGenerator, s: np.ndarray, grid: SpatialGrid, substeps: int | None = None):
    """Flow images ``(M, dim, *shape)`` and weights ``(M, *shape)`` for each ``s``."""
    s = np.asarray(s, dtype=float).ravel()
    x = grid.coords
    dim = grid.dim
    if gen.velocity is not None and substeps is None:
        v = np.asarray(gen.velocity, dtype=float)
        if v.size == 1 and dim > 1:
            raise ValueError("transport velocity has the wrong dimension")
        vb = v.reshape((1, dim) + (1,) * dim)
        images = x[None] + s.reshape((-1, 1) + (1,) * dim) * vb
        if gen.c_value is not None:
            weights = np.broadcast_to(
                (gen.c_value * s).reshape((-1,) + (1,) * dim), (s.size,) + grid.shape
            ).copy()
        elif dim == 1 and v[0] != 0.0:
            weights = _periodic_line_integral(gen, x[0], v[0], s, grid.length)
        else:
            weights = _gauss_line_integral(gen.c, x, v, s, dim)
        return np.mod(images, grid.length), weights, 0

    nsub = flow_substeps(np.max(np.abs(s)) if s.size else 0.0, grid) if substeps is None else int(substeps)
    y = np.broadcast_to(x[None], (s.size,) + x.shape).copy()
    w = np.zeros((s.size,) + grid.shape)
    if nsub == 0:
        return y, w, 0
    ds = (s / nsub).reshape((-1,) + (1,) * dim)

    def rhs(pos):
        p = np.moveaxis(pos, 0, 1)  # (dim, M, *shape)
        vel = np.moveaxis(gen.transport_field(p), 0, 1)
        pot = np.broadcast_to(np.asarray(gen.c(p), dtype=float), w.shape)
        return vel, pot

    for _ in range(nsub):
        k1, l1 = rhs(y)
        k2, l2 = rhs(y + 0.5 * ds[:, None] * k1)
        k3, l3 = rhs(y + 0.5 * ds[:, None] * k2)
        k4, l4 = rhs(y + ds[:, None] * k3)
        y = y + ds[:, None] / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        w = w + ds / 6.0 * (l1 + 2 * l2 + 2 * l3 + l4)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise ValueError("flow integration produced non-finite values")
    return np.mod(y, grid.length), w, nsub


_FLOW_CACHE: dict = {}
_FLOW_CACHE_MAX = 256


def integrate_flow(gen: GroupGenerator, s: float, grid: SpatialGrid, substeps: int | None = None) -> FlowMap:
    """Flow map of a first-order generator at parameter ``s``.

    Constant transport fields are advanced in closed form; any other field
    uses classical RK4 with ``max(4 ceil(|s|/h), 256 |s|)`` substeps unless
    ``substeps`` is given.
    """
    if gen.kind != FIRST_ORDER:
        raise ValueError("flow maps exist only for first-order generators")
    key = (id(gen), float(s), grid, substeps)
    hit = _FLOW_CACHE.get(key)
    if hit is not None and hit.generator is gen:
        return hit
    gen.validate(grid)
    images, weights, nsub = _flow_batch(gen, np.array([s]), grid, substeps)
    fm = FlowMap(gen, float(s), grid, images[0], weights[0], nsub)
    if len(_FLOW_CACHE) >= _FLOW_CACHE_MAX:
        _FLOW_CACHE.clear()
    _FLOW_CACHE[key] = fm
    return fm


# -- interpolation ----------------------------------------------------------

def _lagrange_weights(theta: np.ndarray, order: int):
    if order == 3:
        tm, t0, t1, t2 = theta + 1.0, theta, theta - 1.0, theta - 2.0
        return (
            np.stack(
                [
                    -t0 * t1 * t2 / 6.0,
                    tm * t1 * t2 / 2.0,
                    -tm * t0 * t2 / 2.0,
                    tm * t0 * t1 / 6.0,
                ],
                axis=-1,
            ),
            -1,
        )
    if order == 1:
        return np.stack([1.0 - theta, theta], axis=-1), 0
    raise ValueError("interpolation order must be 1 (linear) or 3 (cubic)")


def interpolation_stencil(points: np.ndarray, grid: SpatialGrid, order: int = 3):
    """Flat node indices and weights interpolating at ``points``.

    ``points`` has shape ``(..., dim, *pts)``; returns ``idx``/``w`` of shape
    ``(..., *pts, K)`` with ``K = (order + 1) ** dim``.
    """
    n, dim = grid.n, grid.dim
    if grid.scalar:
        shape = points.shape[:-dim - 1] + points.shape[-dim:] + (1,)
        return np.zeros(shape, dtype=np.intp), np.ones(shape)
    u = np.moveaxis(points, -dim - 1, -1) / grid.h  # (..., *pts, dim)
    base = np.floor(u)
    theta = u - base
    base = base.astype(np.intp)
    idx = None
    wts = None
    for ax in range(dim):
        w_ax, first = _lagrange_weights(theta[..., ax], order)
        offs = np.arange(first, first + order + 1)
        i_ax = np.mod(base[..., ax, None] + offs, n)
        if idx is None:
            idx, wts = i_ax, w_ax
        else:
            idx = (idx[..., :, None] * n + i_ax[..., None, :]).reshape(idx.shape[:-1] + (-1,))
            wts = (wts[..., :, None] * w_ax[..., None, :]).reshape(wts.shape[:-1] + (-1,))
    return idx, wts


def _gather(values: np.ndarray, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Batched ``sum_k w[..., k] values[m, idx[..., k]]`` on flattened grids."""
    m = values.shape[0]
    flat = values.reshape(m, -1)
    rows = np.arange(m).reshape((m,) + (1,) * (idx.ndim - 1))
    return np.einsum("...k,...k->...", flat[rows, idx], w)


def _generator_factors(gen: GroupGenerator, s: np.ndarray, grid: SpatialGrid, order: int):
    """Per-path interpolation stencil and log-factor for ``G(s)``."""
    images, weights, _ = _flow_batch(gen, s, grid)
    idx, w = interpolation_stencil(images, grid, order)
    return idx, w, weights


def group_apply_batch(
    gens: Sequence[GroupGenerator],
    a: np.ndarray,
    values: np.ndarray,
    grid: SpatialGrid,
    order: int = 3,
) -> np.ndarray:
    """Apply ``G(a_m) = prod_n G_n(a_{m,n})`` to ``values[m]`` for every batch row.

    ``a``: ``(M, N_w)``; ``values``: ``(M, *grid.shape)``.  Rows with
    ``a_m = 0`` are returned unchanged.
    """
    a = np.asarray(a, dtype=float)
    out = np.array(values, dtype=float, copy=True)
    if a.ndim == 1:
        a = a[:, None]
    for n in reversed(range(len(gens))):
        gen = gens[n]
        s = a[:, n]
        if not np.any(s):
            continue
        active = s != 0.0
        sub = out[active]
        sa = s[active]
        if gen.is_multiplicative:
            pot = gen.potential(grid.coords)
            sub = np.exp(sa.reshape((-1,) + (1,) * grid.dim) * pot) * sub
        else:
            idx, w, logf = _generator_factors(gen, sa, grid, order)
            sub = np.exp(logf) * _gather(sub, idx, w)
        out[active] = sub
    return out


def group_matrix(gens: Sequence[GroupGenerator], a, grid: SpatialGrid, order: int = 3) -> sp.csr_matrix:
    """Sparse matrix of ``G(a)`` on the flattened grid (single parameter vector)."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    mat = sp.identity(grid.size, format="csr")
    for gen, s in zip(gens, a):
        if s == 0.0:
            continue
        if gen.is_multiplicative:
            g = sp.diags(np.exp(s * gen.potential(grid.coords)).ravel())
        else:
            idx, w, logf = _generator_factors(gen, np.array([s]), grid, order)
            idx = idx[0].reshape(grid.size, -1)
            w = (w[0] * np.exp(logf[0])[..., None]).reshape(grid.size, -1)
            rows = np.repeat(np.arange(grid.size), idx.shape[1])
            g = sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(grid.size, grid.size))
        mat = (mat @ g).tocsr()
    return mat


def apply_group(gen: GroupGenerator | Sequence[GroupGenerator], s, f: GridFunction, order: int = 3) -> GridFunction:
    """``G(s) f`` for one generator (or a commuting family with ``s`` a vector)."""
    gens = [gen] if isinstance(gen, GroupGenerator) else list(gen)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.size != len(gens):
        raise ValueError("need one group parameter per generator")
    if not np.any(s):
        return GridFunction(f.grid, f.values.copy())
    out = group_apply_batch(gens, s[None], f.values[None], f.grid, order)[0]
    return GridFunction(f.grid, out)


def compose_check(gen: GroupGenerator, s: float, t: float, f: GridFunction, order: int = 3) -> float:
    """``||G(s) G(t) f - G(s + t) f||_{2,h}``."""
    lhs = apply_group(gen, s, apply_group(gen, t, f, order), order)
    rhs = apply_group(gen, s + t, f, order)
    return float(lp_norm(lhs.values - rhs.values, f.grid, 2))


def _directional(fn: Callable, x: np.ndarray, v: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """``v . grad fn`` at the nodes by a fourth-order centered difference."""
    eps = 1e-3 * grid.h if not grid.scalar else 1e-4
    out = np.zeros(grid.shape)
    for i in range(grid.dim):
        e = np.zeros((grid.dim,) + (1,) * grid.dim)
        e[i] = eps
        d = (
            -np.asarray(fn(x + 2 * e)) + 8 * np.asarray(fn(x + e))
            - 8 * np.asarray(fn(x - e)) + np.asarray(fn(x - 2 * e))
        ) / (12 * eps)
        out = out + v[i] * d
    return out


def check_commuting(gens: Sequence[GroupGenerator], grid: SpatialGrid, tol: float = 1e-9) -> None:
    """Refuse generator families whose groups cannot be certified to commute.

    Accepted: any number of multiplicative generators; first-order generators
    sharing one transport field whose potentials differ by a function
    constant along it; multiplicative fields constant along a shared
    transport field.
    """
    first = [g for g in gens if not g.is_multiplicative]
    mult = [g for g in gens if g.is_multiplicative]
    if not first:
        return
    x = grid.coords
    v0 = first[0].transport_field(x)
    for g in first[1:]:
        if not np.allclose(g.transport_field(x), v0, rtol=0, atol=tol):
            raise ValueError("first-order generators with different transport fields do not commute")
        diff = lambda y, g=g: np.asarray(g.c(y)) - np.asarray(first[0].c(y))
        if np.max(np.abs(_directional(diff, x, v0, grid))) > 1e-6:
            raise ValueError("first-order generators whose potentials vary along the flow do not commute")
    for g in mult:
        if np.max(np.abs(_directional(g.b, x, v0, grid))) > 1e-6:
            raise ValueError("multiplicative field varies along the transport flow; groups do not commute")
