"""Discrete second-order operators ``A(t)``, ``B^2`` and ``C(t) = A(t) - 1/2 sum B_n^2``.

Coefficient fields are plain callables of ``(t, x)`` (or ``x`` for the
generators) with ``x`` of shape ``(dim, ...)``, so the same model can be
sampled on any grid.  Operators are assembled with centered differences on
the periodic grid; ``B^2`` is expanded analytically into second-, first- and
zeroth-order coefficients rather than by squaring a discrete ``B``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import SpatialGrid
from .group import GroupGenerator, check_commuting, group_matrix, group_apply_batch

__all__ = [
    "CoefficientModel",
    "DerivedBSquared",
    "OperatorCoefficients",
    "DiscreteOperator",
    "ParabolicityError",
    "assemble_A",
    "assemble_B",
    "assemble_C",
    "expand_B_squared",
    "conjugate",
    "field_gradient",
]


class ParabolicityError(ValueError):
    """``a - 1/2 b b^T`` is not uniformly positive definite."""


def _zero(t, x):
    return 0.0


@dataclass(frozen=True, eq=False)
class CoefficientModel:
    """Coefficients of ``A(t) = a_ij D_i D_j + q_i D_i + r`` and the noise generators.

    ``a(t, x)`` returns a field broadcastable to ``(dim, dim, ...)`` (a scalar
    field in 1D), ``q(t, x)`` one broadcastable to ``(dim, ...)``, ``r(t, x)``
    a scalar field.  ``nu`` is the claimed ellipticity constant of
    ``a - 1/2 b b^T`` and ``mu`` the claimed Hölder exponent in time.
    """

    dim: int = 1
    a: Callable = _zero
    q: Callable = _zero
    r: Callable = _zero
    generators: tuple = ()
    nu: float = 0.0
    mu: float = 1.0
    name: str = ""
    constant: dict = field(default_factory=dict)
    ito_correction: bool = True

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        if self.dim not in (1, 2):
            raise ValueError("models live in one or two space dimensions")

    @property
    def n_drivers(self) -> int:
        return len(self.generators)

    @property
    def multiplicative_only(self) -> bool:
        return all(g.is_multiplicative for g in self.generators)

    def a_field(self, t: float, x: np.ndarray) -> np.ndarray:
        pts = x.shape[1:]
        val = np.asarray(self.a(t, x), dtype=float)
        if self.dim == 1 and val.ndim <= len(pts):
            val = np.broadcast_to(val, pts)[None, None]
        val = np.broadcast_to(val, (self.dim, self.dim) + pts)
        if not np.allclose(val, np.swapaxes(val, 0, 1), rtol=0, atol=1e-14):
            raise ValueError("diffusion matrix a(t, x) is not symmetric")
        return val

    def q_field(self, t: float, x: np.ndarray) -> np.ndarray:
        pts = x.shape[1:]
        val = np.asarray(self.q(t, x), dtype=float)
        if self.dim == 1 and val.ndim <= len(pts):
            val = np.broadcast_to(val, pts)[None]
        return np.broadcast_to(val, (self.dim,) + pts)

    def r_field(self, t: float, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.r(t, x), dtype=float), x.shape[1:])

    def with_generators(self, generators: Sequence[GroupGenerator]) -> "CoefficientModel":
        return CoefficientModel(
            self.dim, self.a, self.q, self.r, tuple(generators), self.nu, self.mu,
            self.name, dict(self.constant), self.ito_correction,
        )

    def with_time(self, a=None, q=None, r=None) -> "CoefficientModel":
        return CoefficientModel(
            self.dim, a or self.a, q or self.q, r or self.r, self.generators,
            self.nu, self.mu, self.name, dict(self.constant), self.ito_correction,
        )

    def without_correction(self) -> "CoefficientModel":
        return CoefficientModel(
            self.dim, self.a, self.q, self.r, self.generators, self.nu, self.mu,
            self.name, dict(self.constant), False,
        )

    # -- coefficients of the operators -------------------------------------

    def a_coefficients(self, t: float, grid: SpatialGrid) -> "OperatorCoefficients":
        x = grid.coords
        return OperatorCoefficients(self.a_field(t, x), self.q_field(t, x), self.r_field(t, x))

    def b_squared_coefficients(self, grid: SpatialGrid) -> "OperatorCoefficients":
        """``1/2 sum_n B_n^2`` as operator coefficients (time independent)."""
        second = np.zeros((self.dim, self.dim) + grid.shape)
        first = np.zeros((self.dim,) + grid.shape)
        zeroth = np.zeros(grid.shape)
        for gen in self.generators:
            d = expand_B_squared(gen, grid)
            second = second + 0.5 * d.second
            first = first + 0.5 * d.first
            zeroth = zeroth + 0.5 * d.zeroth
        return OperatorCoefficients(second, first, zeroth)

    def c_coefficients(self, t: float, grid: SpatialGrid, bsq: "OperatorCoefficients | None" = None):
        a = self.a_coefficients(t, grid)
        if not self.generators or not self.ito_correction:
            return a
        bsq = self.b_squared_coefficients(grid) if bsq is None else bsq
        return OperatorCoefficients(a.second - bsq.second, a.first - bsq.first, a.zeroth - bsq.zeroth)


def field_gradient(fn: Callable, grid: SpatialGrid, tol: float = 1e-5) -> np.ndarray:
    """Gradient of a field at the nodes, shape ``(dim, *shape)``.

    Fourth-order centered differences at two step sizes; raises if the two
    estimates disagree (the field is not differentiable at the nodes).
    """
    x = grid.coords
    out = np.zeros((grid.dim,) + grid.shape)
    base = 1e-3 * grid.h
    for i in range(grid.dim):
        ests = []
        for eps in (base, base / 2):
            e = np.zeros((grid.dim,) + (1,) * grid.dim)
            e[i] = eps
            f = lambda y: np.broadcast_to(np.asarray(fn(y), dtype=float), grid.shape)
            ests.append((-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * eps))
        lo, hi = ests
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("field derivative is not finite")
        if np.max(np.abs(lo - hi) / (1.0 + np.abs(hi))) > tol:
            raise ValueError("finite-difference derivative does not converge; field is not differentiable")
        out[i] = hi
    return out


@dataclass(frozen=True)
class DerivedBSquared:
    """Coefficients of ``B^2`` for ``B = b.D + c``.

    ``B^2 = b_i b_j D_i D_j + ((b.grad) b_j + 2 c b_j) D_j + (b.grad c + c^2)``.
    """

    second: np.ndarray
    first: np.ndarray
    zeroth: np.ndarray


def expand_B_squared(gen: GroupGenerator, grid: SpatialGrid) -> DerivedBSquared:
    dim = grid.dim
    x = grid.coords
    gen.validate(grid)
    if gen.is_multiplicative:
        pot = gen.potential(x)
        return DerivedBSquared(
            np.zeros((dim, dim) + grid.shape), np.zeros((dim,) + grid.shape), pot**2
        )
    b = gen.transport_field(x)
    c = gen.potential(x)
    second = b[:, None] * b[None, :]
    if gen.velocity is not None:
        db = np.zeros((dim, dim) + grid.shape)
    else:
        db = np.stack([field_gradient(lambda y, j=j: gen.transport_field(y)[j], grid) for j in range(dim)])
    if gen.c_value is not None:
        dc = np.zeros((dim,) + grid.shape)
    else:
        dc = field_gradient(gen.c, grid)
    # db[j, i] = d_i b_j
    first = np.einsum("i...,ji...->j...", b, db) + 2 * c * b
    zeroth = np.einsum("i...,i...->...", b, dc) + c**2
    return DerivedBSquared(second, first, zeroth)


@dataclass(frozen=True)
class OperatorCoefficients:
    """``second_ij D_i D_j + first_i D_i + zeroth`` sampled at the nodes."""

    second: np.ndarray
    first: np.ndarray
    zeroth: np.ndarray

    def tridiagonal(self, grid: SpatialGrid):
        """Periodic three-point stencil ``(lower, diag, upper)`` of a 1D operator."""
        if grid.dim != 1:
            raise ValueError("tridiagonal stencils exist only in 1D")
        s, q, r = self.second[0, 0], self.first[0], self.zeroth
        if grid.scalar:
            z = np.zeros_like(r)
            return z, np.array(r, dtype=float), z
        h = grid.h
        return s / h**2 - q / (2 * h), -2 * s / h**2 + r, s / h**2 + q / (2 * h)

    def to_sparse(self, grid: SpatialGrid) -> sp.csr_matrix:
        mat = sp.diags(np.ravel(self.zeroth)).tocsr()
        if grid.scalar:
            return mat
        for i in range(grid.dim):
            mat = mat + sp.diags(self.second[i, i].ravel()) @ grid.second_difference(i)
            mat = mat + sp.diags(self.first[i].ravel()) @ grid.first_difference(i)
        if grid.dim == 2:
            mat = mat + sp.diags(2 * self.second[0, 1].ravel()) @ grid.mixed_difference()
        return mat.tocsr()


class DiscreteOperator:
    """Linear map on flattened grid functions.

    ``representation`` is ``"banded"`` (sparse periodic stencil), ``"dense"``
    or ``"composed"`` (only an application rule, optionally with a
    transpose).  ``apply`` accepts arrays of shape ``(size,)``,
    ``grid.shape`` or ``(M, size)``.
    """

    def __init__(self, grid: SpatialGrid, matrix=None, apply=None, representation=None, apply_T=None):
        if matrix is None and apply is None:
            raise ValueError("need a matrix or an application rule")
        self.grid = grid
        self.matrix = matrix
        self._apply = apply
        self._apply_T = apply_T
        if representation is None:
            representation = "composed" if matrix is None else ("dense" if isinstance(matrix, np.ndarray) else "banded")
        self.representation = representation
        self._lu_cache = {}

    @property
    def size(self) -> int:
        return self.grid.size

    def _rows(self, f):
        f = np.asarray(f, dtype=float)
        if f.shape == self.grid.shape or f.shape == (self.size,):
            return f.reshape(1, self.size), f.shape
        return f.reshape(f.shape[0], self.size), f.shape

    def apply(self, f) -> np.ndarray:
        rows, shape = self._rows(f)
        if self.matrix is not None:
            out = (self.matrix @ rows.T).T
        else:
            out = self._apply(rows)
        return np.asarray(out).reshape(shape)

    def apply_T(self, f) -> np.ndarray:
        rows, shape = self._rows(f)
        if self.matrix is not None:
            out = (self.matrix.T @ rows.T).T
        elif self._apply_T is not None:
            out = self._apply_T(rows)
        else:
            raise NotImplementedError("operator has no transpose rule")
        return np.asarray(out).reshape(shape)

    def to_matrix(self):
        if self.matrix is not None:
            return self.matrix
        return sp.csr_matrix(self.apply(np.eye(self.size)).T)

    @property
    def bandwidth(self) -> int:
        """Largest periodic offset ``|j - i|`` with a nonzero entry."""
        m = sp.coo_matrix(self.to_matrix())
        off = np.mod(m.col - m.row, self.size)
        off = np.minimum(off, self.size - off)
        return int(off.max()) if off.size else 0

    def shifted_solve(self, alpha: float, beta: float, g, tol: float = 1e-10, maxiter: int = 200):
        """Solve ``(alpha I - beta M) x = g``.

        Banded and dense operators use a sparse LU factorization (cached per
        shift); composed ones use GMRES on operator applications.
        """
        rows, shape = self._rows(g)
        if self.matrix is not None:
            key = (float(alpha), float(beta))
            lu = self._lu_cache.get(key)
            if lu is None:
                mat = alpha * sp.identity(self.size, format="csc") - beta * sp.csc_matrix(self.matrix)
                lu = spla.splu(sp.csc_matrix(mat))
                self._lu_cache[key] = lu
            x = lu.solve(np.ascontiguousarray(rows.T))
            return x.T.reshape(shape)
        op = spla.LinearOperator(
            (self.size, self.size),
            matvec=lambda v: alpha * v - beta * self._apply(v[None])[0],
            dtype=float,
        )
        out = np.empty_like(rows)
        for i, b in enumerate(rows):
            x, info = spla.gmres(op, b, rtol=tol, atol=0.0, restart=min(self.size, 100), maxiter=maxiter)
            if info != 0:
                raise RuntimeError(f"GMRES did not converge (info={info})")
            out[i] = x
        return out.reshape(shape)


def _banded(coeffs: OperatorCoefficients, grid: SpatialGrid) -> DiscreteOperator:
    return DiscreteOperator(grid, coeffs.to_sparse(grid), representation="banded")


def assemble_A(model: CoefficientModel, t: float, grid: SpatialGrid) -> DiscreteOperator:
    """``A(t)`` with centered second and first differences and diagonal ``r``."""
    return _banded(model.a_coefficients(t, grid), grid)


def assemble_B(gen: GroupGenerator, grid: SpatialGrid) -> DiscreteOperator:
    """Centered-difference discretization of ``B = b.D + c`` (or ``B = b``)."""
    x = grid.coords
    if gen.is_multiplicative:
        return DiscreteOperator(grid, sp.diags(gen.potential(x).ravel()).tocsr(), representation="banded")
    b = gen.transport_field(x)
    coeffs = OperatorCoefficients(np.zeros((grid.dim, grid.dim) + grid.shape), b, gen.potential(x))
    return _banded(coeffs, grid)


def assemble_C(model: CoefficientModel, t: float, grid: SpatialGrid, strict: bool = False) -> DiscreteOperator:
    """``C(t) = A(t) - 1/2 sum B_n^2`` assembled as one banded operator."""
    if strict:
        from .hypotheses import check_parabolicity

        rep = check_parabolicity(model, [t], grid)
        if not rep.passed:
            raise ParabolicityError(
                f"min eigenvalue of a - b b^T/2 is {rep.min_eig:.6g} < nu = {model.nu}"
            )
    return _banded(model.c_coefficients(t, grid), grid)


def conjugate(
    model: CoefficientModel,
    t: float,
    W_t,
    grid: SpatialGrid,
    representation: str = "composed",
    order: int = 3,
) -> DiscreteOperator:
    """``C_W(t) = G(-W_t) C(t) G(W_t)``.

    ``representation="composed"`` applies the three factors in turn;
    ``"banded"`` multiplies them out as sparse matrices (for multiplicative
    generators this is the diagonal similarity ``D^{-1} C D``).
    """
    gens = model.generators
    W_t = np.atleast_1d(np.asarray(W_t, dtype=float))
    if W_t.size != len(gens):
        raise ValueError("need one driver value per generator")
    check_commuting(gens, grid)
    c_op = assemble_C(model, t, grid)
    if not np.any(W_t):
        return c_op
    if representation == "banded":
        if model.multiplicative_only:
            logd = sum(w * g.potential(grid.coords).ravel() for w, g in zip(W_t, gens))
            mat = sp.diags(np.exp(-logd)) @ c_op.matrix @ sp.diags(np.exp(logd))
        else:
            mat = group_matrix(gens, -W_t, grid, order) @ c_op.matrix @ group_matrix(gens, W_t, grid, order)
        return DiscreteOperator(grid, sp.csr_matrix(mat), representation="banded")
    if representation != "composed":
        raise ValueError(f"unknown representation {representation!r}")

    def apply(rows):
        m = rows.shape[0]
        shp = (m,) + grid.shape
        fw = group_apply_batch(gens, np.broadcast_to(W_t, (m, W_t.size)), rows.reshape(shp), grid, order)
        cf = c_op.apply(fw.reshape(m, -1)).reshape(shp)
        return group_apply_batch(gens, np.broadcast_to(-W_t, (m, W_t.size)), cf, grid, order).reshape(m, -1)

    gm = group_matrix(gens, W_t, grid, order)
    gi = group_matrix(gens, -W_t, grid, order)

    def apply_T(rows):
        return (gm.T @ (c_op.matrix.T @ (gi.T @ rows.T))).T

    return DiscreteOperator(grid, apply=apply, apply_T=apply_T, representation="composed")
