"""Brownian driving paths on uniform time grids.

Every path is reproducible from ``(master_seed, path_index)`` alone: the
random stream of path ``i`` is derived by hashing the pair through
:class:`numpy.random.SeedSequence`, so paths can be generated in any order
and by any number of workers without changing their values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "TimeGrid",
    "BrownianPath",
    "SmoothedPath",
    "path_stream",
    "sample_path",
    "sample_paths",
    "stack_values",
    "refine",
    "smooth",
    "write_paths_csv",
]

# stream tags; part of the seed derivation, never change them
_TAG_SAMPLE = 0
_TAG_REFINE = 1


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition ``t_k = k T / N`` of ``[0, T]``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon!r}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps!r}")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def coarsen(self, factor: int) -> "TimeGrid":
        if factor < 1 or self.steps % factor:
            raise ValueError(f"factor {factor} does not divide {self.steps} steps")
        return TimeGrid(self.horizon, self.steps // factor)


@dataclass(frozen=True)
class BrownianPath:
    """Sampled values ``W(t_k)`` of an ``n_drivers``-dimensional Brownian motion.

    ``values`` has shape ``(steps + 1, n_drivers)``.
    """

    grid: TimeGrid
    values: np.ndarray
    master_seed: int = 0
    path_index: int = 0
    lineage: tuple = field(default=(), compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != self.grid.steps + 1:
            raise ValueError(
                f"expected {self.grid.steps + 1} samples, got {values.shape[0]}"
            )
        if values.shape[1] < 1:
            raise ValueError("a path needs at least one driver")
        if np.any(values[0] != 0.0):
            raise ValueError("a Brownian path must start at 0")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_drivers(self) -> int:
        return self.values.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def coarsen(self, factor: int) -> "BrownianPath":
        """Subsample every ``factor``-th node.

        Coarse increments are exact sums of the fine ones; nothing is resampled.
        """
        grid = self.grid.coarsen(factor)
        return BrownianPath(
            grid,
            self.values[::factor],
            self.master_seed,
            self.path_index,
            self.lineage + (("coarsen", factor),),
        )


def path_stream(master_seed: int, path_index: int, *tags: int) -> np.random.Generator:
    """Independent generator for one path, keyed by seed, index and tags."""
    if master_seed < 0 or path_index < 0:
        raise ValueError("seeds and path indices must be non-negative")
    return np.random.default_rng(
        np.random.SeedSequence([int(master_seed), int(path_index), *map(int, tags)])
    )


def sample_path(
    grid: TimeGrid, n_drivers: int, master_seed: int, path_index: int
) -> BrownianPath:
    """Draw one path with independent ``N(0, dt I)`` increments."""
    if int(n_drivers) != n_drivers or n_drivers < 1:
        raise ValueError(f"n_drivers must be >= 1, got {n_drivers!r}")
    rng = path_stream(master_seed, path_index, _TAG_SAMPLE, grid.steps, n_drivers)
    dw = rng.standard_normal((grid.steps, int(n_drivers))) * np.sqrt(grid.dt)
    values = np.zeros((grid.steps + 1, int(n_drivers)))
    np.cumsum(dw, axis=0, out=values[1:])
    return BrownianPath(grid, values, master_seed, path_index)


def sample_paths(
    grid: TimeGrid, n_drivers: int, master_seed: int, indices: Iterable[int]
) -> list[BrownianPath]:
    return [sample_path(grid, n_drivers, master_seed, i) for i in indices]


def stack_values(paths: Sequence[BrownianPath]) -> np.ndarray:
    """Stack path values into an array of shape ``(M, steps + 1, n_drivers)``."""
    if not paths:
        raise ValueError("no paths given")
    grid = paths[0].grid
    for p in paths:
        if p.grid != grid:
            raise ValueError("paths live on different time grids")
    return np.stack([p.values for p in paths])


def refine(
    path: BrownianPath, master_seed: int | None = None, variance_scale: float = 1.0
) -> BrownianPath:
    """Halve the step by Brownian-bridge sampling of every midpoint.

    Midpoints are drawn from ``N((W_k + W_{k+1}) / 2, variance_scale * dt / 4)``;
    coarse nodes are copied bit for bit.
    """
    seed = path.master_seed if master_seed is None else master_seed
    grid = path.grid
    rng = path_stream(seed, path.path_index, _TAG_REFINE, grid.steps, path.n_drivers)
    z = rng.standard_normal((grid.steps, path.n_drivers))
    w = path.values
    mid = 0.5 * (w[:-1] + w[1:]) + np.sqrt(variance_scale * grid.dt / 4.0) * z
    values = np.empty((2 * grid.steps + 1, path.n_drivers))
    values[0::2] = w
    values[1::2] = mid
    return BrownianPath(
        TimeGrid(grid.horizon, 2 * grid.steps),
        values,
        path.master_seed,
        path.path_index,
        path.lineage + (("refine", seed),),
    )


@dataclass(frozen=True)
class SmoothedPath:
    """Piecewise-linear interpolation of a base path through every ``m``-th node."""

    base: BrownianPath
    m: int
    values: np.ndarray
    slopes: np.ndarray

    @property
    def grid(self) -> TimeGrid:
        return self.base.grid

    @property
    def knots(self) -> np.ndarray:
        return self.base.values[:: self.m]

    def sup_distance(self) -> float:
        """``max_k |W_m(t_k) - W(t_k)|`` over base nodes and drivers."""
        return float(np.max(np.abs(self.values - self.base.values)))

    def __call__(self, t):
        """Evaluate the interpolant at arbitrary times in ``[0, T]``."""
        t = np.asarray(t, dtype=float)
        span = self.m * self.grid.dt
        j = np.clip((t // span).astype(int), 0, len(self.slopes) - 1)
        return self.knots[j] + (t - j * span)[..., None] * self.slopes[j]

    def as_path(self) -> BrownianPath:
        """The smoothed values as a path object on the base grid."""
        return BrownianPath(
            self.grid,
            self.values,
            self.base.master_seed,
            self.base.path_index,
            self.base.lineage + (("smooth", self.m),),
        )


def smooth(path: BrownianPath, m: int) -> SmoothedPath:
    if int(m) != m or m < 1 or path.grid.steps % m:
        raise ValueError(f"smoothing mesh {m} does not divide {path.grid.steps} steps")
    m = int(m)
    knots = path.values[::m]
    slopes = np.diff(knots, axis=0) / (m * path.grid.dt)
    frac = (np.arange(m) / m)[:, None, None]
    inner = knots[:-1][None] + frac * np.diff(knots, axis=0)[None]
    values = np.empty_like(path.values)
    # inner has shape (m, n_knots - 1, drivers); node k = j*m + i
    values[:-1] = inner.transpose(1, 0, 2).reshape(-1, path.n_drivers)
    values[-1] = knots[-1]
    values[::m] = knots
    values.setflags(write=False)
    slopes.setflags(write=False)
    return SmoothedPath(path, m, values, slopes)


def write_paths_csv(paths: Sequence[BrownianPath], fh) -> None:
    """Write ``path_index, k, t_k, W_1 ... W_N`` rows, 17 significant digits."""
    if not paths:
        return
    n_w = paths[0].n_drivers
    writer = csv.writer(fh)
    writer.writerow(["path_index", "k", "t_k"] + [f"W_{i + 1}" for i in range(n_w)])
    for p in paths:
        for k, (t, w) in enumerate(zip(p.grid.nodes, p.values)):
            writer.writerow([p.path_index, k, f"{t:.17g}"] + [f"{x:.17g}" for x in w])
