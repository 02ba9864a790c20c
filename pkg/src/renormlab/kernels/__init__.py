"""Grid solvers, Gaussian smoothing, rescaled Hölder norms and cutoffs."""

from .bounds import heat_defect_bound, localization_envelope
from .duality import DualityReport, bump, duality_check, heat_solution_bump, refinement_slope
from .gaussian import defect_field, gaussian_cells, gaussian_step, gaussian_weights
from .grid import GridField, common_crop, grid_points
from .norms import cutoff_field, cutoff_like, holder_parts, pair_offsets, scaled_holder_norm
from .solver import (
    BudgetError,
    QuenchedOperator,
    SolverParams,
    StabilityError,
    ball_mask,
    box_margin,
    interior_mask,
    margin_cells,
    max_stable_dt,
    solve_localized,
    solve_quenched,
    stencil_weights,
)

__all__ = [
    "BudgetError",
    "DualityReport",
    "GridField",
    "QuenchedOperator",
    "SolverParams",
    "StabilityError",
    "ball_mask",
    "box_margin",
    "bump",
    "common_crop",
    "cutoff_field",
    "cutoff_like",
    "defect_field",
    "duality_check",
    "gaussian_cells",
    "gaussian_step",
    "gaussian_weights",
    "grid_points",
    "heat_defect_bound",
    "heat_solution_bump",
    "holder_parts",
    "interior_mask",
    "localization_envelope",
    "margin_cells",
    "max_stable_dt",
    "pair_offsets",
    "refinement_slope",
    "scaled_holder_norm",
    "solve_localized",
    "solve_quenched",
    "stencil_weights",
]
