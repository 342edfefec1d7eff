"""Least-squares convergence-order fits."""

from __future__ import annotations

import numpy as np

__all__ = ["fit_order", "is_monotone"]


def fit_order(steps, errors) -> tuple[float, float]:
    """Slope and intercept of ``log(error) = order * log(step) + c``.

    Non-positive errors are dropped; fewer than two usable points give
    ``(nan, nan)``.
    """
    steps = np.asarray(steps, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = (errors > 0) & np.isfinite(errors) & (steps > 0)
    if keep.sum() < 2:
        return float("nan"), float("nan")
    order, c = np.polyfit(np.log(steps[keep]), np.log(errors[keep]), 1)
    return float(order), float(c)


def is_monotone(values, increasing: bool = False, slack: float = 0.0) -> bool:
    """Whether successive values never rise (or fall) by more than ``slack`` relative."""
    v = np.asarray(values, dtype=float)
    if increasing:
        return bool(np.all(v[1:] >= v[:-1] * (1 - slack)))
    return bool(np.all(v[1:] <= v[:-1] * (1 + slack)))
