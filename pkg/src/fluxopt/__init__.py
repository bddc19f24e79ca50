"""Optimal flux fields under balance constraints on structured grids.

Fluxes of minimal L^a norm or minimal dissipation that carry a prescribed
density rate and boundary flux, with duality certificates, and the capacity
of a grid region for such data.
"""

from .capacity import CapacityReport, admissible, capacity_l2, input_norm, sensitivity
from .grid import Grid, GridError, build_grid
from .kernels import BACKEND
from .problem import BalanceProblem, IncompatibleDataError, manufacture
from .solver_dissipation import (
    el_residual,
    solve_dissipation_classical,
    solve_dissipation_dual,
    w22_dual_objective,
)
from .solver_l2 import l2_orthogonality_certificate, solve_l2
from .solver_lq import lq_dual_objective, solve_lq

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BalanceProblem",
    "CapacityReport",
    "Grid",
    "GridError",
    "IncompatibleDataError",
    "admissible",
    "build_grid",
    "capacity_l2",
    "el_residual",
    "input_norm",
    "l2_orthogonality_certificate",
    "lq_dual_objective",
    "manufacture",
    "sensitivity",
    "solve_dissipation_classical",
    "solve_dissipation_dual",
    "solve_l2",
    "solve_lq",
    "w22_dual_objective",
]
