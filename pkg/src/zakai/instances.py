"""Fixture problems used by tests, acceptance checks and the harness.

* ``gbm_exact``: single-node equation ``dU = alpha U dt + b U dW`` with the
  closed form ``exp((alpha - b^2/2) t + b W(t))``.
* ``const_coeff_1d``: ``a = 1`` and ``B = 0.8 D + 0.3`` on the circle, solvable
  mode by mode.
* ``zakai_default``: ``a = 1 + 0.25 sin(x) cos(t)``, ``q = 0.1 cos(x)``,
  ``r = -0.2``, ``B = 0.8 D + 0.3 sin(x)`` on ``[0, 2 pi)``; the parabolicity
  margin is ``1 - 0.25 - 0.8^2 / 2 = 0.43 >= nu = 0.1``.
* ``rough_control``: ``zakai_default`` with the Lipschitz-only ``c = 0.3 |sin x|``,
  which should fail the commutator estimator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import GridFunction, SpatialGrid
from .group import GroupGenerator
from .operators import CoefficientModel

__all__ = [
    "Instance",
    "gbm_exact",
    "const_coeff_1d",
    "zakai_default",
    "rough_control",
    "step_profile",
    "INSTANCES",
    "make_instance",
]


@dataclass(frozen=True)
class Instance:
    """A model with its grid, initial data and (when known) the exact ``U(T)``."""

    name: str
    model: CoefficientModel
    grid: SpatialGrid
    u0: GridFunction
    closed_form: Callable | None = None


def gbm_exact(alpha: float = 0.3, b: float = 0.7, u0: float = 1.0) -> Instance:
    model = CoefficientModel(
        1, r=lambda t, x: alpha, generators=(GroupGenerator.multiplicative(b, "b"),),
        name="gbm_exact", constant={"alpha": alpha, "b": b},
    )
    grid = SpatialGrid(1, 1.0, 1)

    def exact(t, W):
        return u0 * np.exp((alpha - 0.5 * b * b) * t + b * np.asarray(W, dtype=float))

    return Instance("gbm_exact", model, grid, GridFunction(grid, np.full(1, float(u0))), exact)


def const_coeff_1d(n: int = 256, a: float = 1.0, beta: float = 0.8, c: float = 0.3, nu: float = 0.1) -> Instance:
    model = CoefficientModel(
        1, a=lambda t, x: a, generators=(GroupGenerator.transport(beta, c, "B"),),
        nu=nu, name="const_coeff_1d", constant={"a": a, "beta": beta, "c": c},
    )
    grid = SpatialGrid(1, 2 * np.pi, n)
    u0 = GridFunction.sample(grid, lambda x: np.exp(np.cos(x[0])))
    return Instance("const_coeff_1d", model, grid, u0)


def _zakai_model(c: Callable, name: str) -> CoefficientModel:
    return CoefficientModel(
        1,
        a=lambda t, x: 1.0 + 0.25 * np.sin(x[0]) * np.cos(t),
        q=lambda t, x: 0.1 * np.cos(x[0]),
        r=lambda t, x: -0.2 + 0.0 * x[0],
        generators=(GroupGenerator.transport(0.8, c, "B"),),
        nu=0.1,
        mu=1.0,
        name=name,
    )


def zakai_default(n: int = 256) -> Instance:
    model = _zakai_model(lambda x: 0.3 * np.sin(x[0]), "zakai_default")
    grid = SpatialGrid(1, 2 * np.pi, n)
    u0 = GridFunction.sample(grid, lambda x: np.exp(np.cos(x[0])))
    return Instance("zakai_default", model, grid, u0)


def rough_control(n: int = 256) -> Instance:
    model = _zakai_model(lambda x: 0.3 * np.abs(np.sin(x[0])), "rough_control")
    grid = SpatialGrid(1, 2 * np.pi, n)
    u0 = GridFunction.sample(grid, lambda x: np.exp(np.cos(x[0])))
    return Instance("rough_control", model, grid, u0)


def step_profile(grid: SpatialGrid) -> GridFunction:
    """Indicator of the middle half of the period (in ``L^p``, not in ``W^{2,p}``)."""
    lo, hi = 0.25 * grid.length, 0.75 * grid.length
    return GridFunction.sample(grid, lambda x: ((x[0] >= lo) & (x[0] < hi)).astype(float))


INSTANCES = {
    "gbm_exact": gbm_exact,
    "const_coeff_1d": const_coeff_1d,
    "zakai_default": zakai_default,
    "rough_control": rough_control,
}


def make_instance(name: str, **params) -> Instance:
    try:
        factory = INSTANCES[name]
    except KeyError:
        raise ValueError(f"unknown instance {name!r}; choose from {sorted(INSTANCES)}") from None
    return factory(**params)
