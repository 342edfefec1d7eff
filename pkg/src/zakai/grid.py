"""Periodic spatial grids, grid functions and discrete norms."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SpatialGrid",
    "GridFunction",
    "lp_norm",
    "sobolev_norm",
    "centered_derivative",
]


@dataclass(frozen=True)
class SpatialGrid:
    """Nodes ``x_j = j h`` on the periodic cell ``[0, L)^d``, ``h = L / n``.

    ``n = 1`` is accepted as the degenerate single-node grid used by scalar
    models; every difference operator vanishes on it.
    """

    dim: int = 1
    length: float = 2 * np.pi
    n: int = 64

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dim}")
        if not (self.length > 0 and np.isfinite(self.length)):
            raise ValueError(f"cell length must be positive, got {self.length}")
        if self.n != 1 and self.n < 8:
            raise ValueError(f"need at least 8 nodes per axis, got {self.n}")

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def scalar(self) -> bool:
        return self.n == 1

    @cached_property
    def axis(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    @cached_property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(dim, *shape)``."""
        return np.stack(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    def refined(self) -> "SpatialGrid":
        return SpatialGrid(self.dim, self.length, 2 * self.n)

    # -- sparse periodic stencils on the flattened grid ---------------------

    def _shift(self, offsets: dict[int, int]) -> sp.csr_matrix:
        """Matrix of ``f -> f(x + sum_i offsets[i] h e_i)`` (periodic)."""
        idx = np.arange(self.size).reshape(self.shape)
        for ax, off in offsets.items():
            idx = np.roll(idx, -off, axis=ax)
        rows = np.arange(self.size)
        return sp.csr_matrix(
            (np.ones(self.size), (rows, idx.ravel())), shape=(self.size, self.size)
        )

    def first_difference(self, axis: int) -> sp.csr_matrix:
        if self.scalar:
            return sp.csr_matrix((self.size, self.size))
        return ((self._shift({axis: 1}) - self._shift({axis: -1})) / (2 * self.h)).tocsr()

    def second_difference(self, axis: int) -> sp.csr_matrix:
        if self.scalar:
            return sp.csr_matrix((self.size, self.size))
        eye = sp.identity(self.size, format="csr")
        return (
            (self._shift({axis: 1}) - 2 * eye + self._shift({axis: -1})) / self.h**2
        ).tocsr()

    def mixed_difference(self) -> sp.csr_matrix:
        """Centered ``D_1 D_2`` on the four diagonal neighbours (2D only)."""
        if self.dim != 2:
            raise ValueError("mixed derivative needs a 2D grid")
        if self.scalar:
            return sp.csr_matrix((self.size, self.size))
        s = self._shift
        return (
            (s({0: 1, 1: 1}) - s({0: 1, 1: -1}) - s({0: -1, 1: 1}) + s({0: -1, 1: -1}))
            / (4 * self.h**2)
        ).tocsr()


def centered_derivative(values: np.ndarray, grid: SpatialGrid, axis: int, order: int = 1):
    """Centered periodic difference along a grid axis of (batched) values."""
    if grid.scalar:
        return np.zeros_like(values)
    ax = values.ndim - grid.dim + axis
    plus, minus = np.roll(values, -1, axis=ax), np.roll(values, 1, axis=ax)
    if order == 1:
        return (plus - minus) / (2 * grid.h)
    if order == 2:
        return (plus - 2 * values + minus) / grid.h**2
    raise ValueError("order must be 1 or 2")


def lp_norm(values: np.ndarray, grid: SpatialGrid, p: float = 2) -> np.ndarray:
    """Discrete ``L^p`` norm over the trailing grid axes; leading axes are batch."""
    axes = tuple(range(values.ndim - grid.dim, values.ndim))
    a = np.abs(values)
    if np.isinf(p):
        return np.max(a, axis=axes)
    return (grid.h**grid.dim * np.sum(a**p, axis=axes)) ** (1.0 / p)


def sobolev_norm(values: np.ndarray, grid: SpatialGrid, p: float = 2) -> np.ndarray:
    """Discrete ``W^{2,p}`` norm: ``L^p`` norms of ``f``, ``D_i f`` and ``D_i D_j f``."""
    total = lp_norm(values, grid, p)
    for i in range(grid.dim):
        di = centered_derivative(values, grid, i, 1)
        total = total + lp_norm(di, grid, p)
        total = total + lp_norm(centered_derivative(values, grid, i, 2), grid, p)
        for j in range(grid.dim):
            if j != i:
                total = total + lp_norm(centered_derivative(di, grid, j, 1), grid, p)
    return total


@dataclass(frozen=True)
class GridFunction:
    """Real values over the nodes of a :class:`SpatialGrid`."""

    grid: SpatialGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape == (self.grid.size,) and self.grid.dim > 1:
            values = values.reshape(self.grid.shape)
        if values.shape != self.grid.shape:
            raise ValueError(f"values of shape {values.shape} do not fit grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function has non-finite values")
        object.__setattr__(self, "values", values)

    @classmethod
    def sample(cls, grid: SpatialGrid, fn) -> "GridFunction":
        """Evaluate ``fn(x)`` with ``x`` of shape ``(dim, *shape)``."""
        return cls(grid, np.broadcast_to(fn(grid.coords), grid.shape).astype(float))

    def norm(self, p: float = 2) -> float:
        return float(lp_norm(self.values, self.grid, p))

    def sobolev_norm(self, p: float = 2) -> float:
        return float(sobolev_norm(self.values, self.grid, p))

    def flat(self) -> np.ndarray:
        return self.values.ravel()
