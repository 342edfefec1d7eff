"""Pathwise solvers for linear SPDEs driven by commuting group generators.

The Itô equation ``dU = A(t) U dt + sum_n B_n U dW_n`` is solved through the
substitution ``U = G(W) V`` with ``V' = C_W(t) V`` and ``C = A - 1/2 sum B_n^2``.
Alongside the transform solver the package ships a direct SPDE integrator,
Fourier oracles, finite-dimensional Itô checks, estimators for the structural
hypotheses, Wong-Zakai ladders and an experiment harness.
"""

from .direct import StrongErrorReport, solve_direct, solve_direct_batch, strong_error, strong_error_ladder
from .grid import GridFunction, SpatialGrid, lp_norm, sobolev_norm
from .group import GroupGenerator, apply_group, check_commuting
from .instances import Instance, const_coeff_1d, gbm_exact, rough_control, step_profile, zakai_default
from .operators import CoefficientModel, ParabolicityError, assemble_A, assemble_B, assemble_C
from .pathwise import BatchSolution, SolveConfig, Trajectory, fourier_oracle, solve_transformed, solve_transformed_batch
from .paths import BrownianPath, TimeGrid, refine, sample_path, sample_paths, smooth
from .wong_zakai import WZReport, solve_wz, stratonovich_gap, wz_convergence

__version__ = "0.1.0"

__all__ = [
    "StrongErrorReport",
    "solve_direct",
    "solve_direct_batch",
    "strong_error",
    "strong_error_ladder",
    "GridFunction",
    "SpatialGrid",
    "lp_norm",
    "sobolev_norm",
    "GroupGenerator",
    "apply_group",
    "check_commuting",
    "Instance",
    "const_coeff_1d",
    "gbm_exact",
    "rough_control",
    "step_profile",
    "zakai_default",
    "CoefficientModel",
    "ParabolicityError",
    "assemble_A",
    "assemble_B",
    "assemble_C",
    "BatchSolution",
    "SolveConfig",
    "Trajectory",
    "fourier_oracle",
    "solve_transformed",
    "solve_transformed_batch",
    "BrownianPath",
    "TimeGrid",
    "refine",
    "sample_path",
    "sample_paths",
    "smooth",
    "WZReport",
    "solve_wz",
    "stratonovich_gap",
    "wz_convergence",
]
