"""Balance-problem data, solvability and residuals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import operators as ops
from .grid import Grid

__all__ = [
    "BalanceProblem",
    "IncompatibleDataError",
    "assemble_load",
    "balance_residual",
    "check_compatible",
    "compatibility_residual",
    "compatibility_scale",
    "flux_from_interior",
    "manufacture",
    "relative_balance_residual",
    "weak_balance_residual",
]

DEFAULT_RTOL = 1e-10


class IncompatibleDataError(ValueError):
    """Total production does not balance the boundary flux."""

    def __init__(self, residual: float, scale: float, rtol: float) -> None:
        self.residual = residual
        self.scale = scale
        self.rtol = rtol
        super().__init__(
            f"incompatible data: int(beta) + int(tau) - int(s) = {residual:.6g} "
            f"exceeds {rtol:g} * {scale:.6g}"
        )


def _field(values, n: int, name: str) -> NDArray[np.float64]:
    arr = np.array(values, dtype=float).ravel()
    if arr.shape != (n,):
        raise ValueError(f"{name} has {arr.size} values, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BalanceProblem:
    """Density rate ``beta`` (per cell), boundary flux ``tau`` (per boundary
    face, positive outward) and an optional source ``source`` (per cell)."""

    grid: Grid
    beta: NDArray[np.float64]
    tau: NDArray[np.float64]
    source: NDArray[np.float64] | None = field(default=None)

    def __post_init__(self) -> None:
        g = self.grid
        object.__setattr__(self, "beta", _field(self.beta, g.n_cells, "beta"))
        object.__setattr__(self, "tau", _field(self.tau, g.n_boundary, "tau"))
        src = np.zeros(g.n_cells) if self.source is None else self.source
        object.__setattr__(self, "source", _field(src, g.n_cells, "source"))

    @property
    def has_source(self) -> bool:
        return bool(np.any(self.source != 0))

    def scaled(self, factor: float) -> "BalanceProblem":
        return BalanceProblem(
            self.grid, factor * self.beta, factor * self.tau, factor * self.source
        )


def compatibility_residual(problem: BalanceProblem) -> float:
    g = problem.grid
    return (
        ops.integrate_cells(g, problem.beta)
        + ops.integrate_boundary(g, problem.tau)
        - ops.integrate_cells(g, problem.source)
    )


def compatibility_scale(problem: BalanceProblem) -> float:
    g = problem.grid
    return (
        ops.integrate_cells(g, np.abs(problem.beta))
        + ops.integrate_boundary(g, np.abs(problem.tau))
        + ops.integrate_cells(g, np.abs(problem.source))
    )


def check_compatible(problem: BalanceProblem, rtol: float = DEFAULT_RTOL) -> None:
    """Raise unless the data admit a flux field.

    Optimization solvers also reject a nonzero source.
    """
    if problem.has_source:
        raise ValueError("optimization solvers require a zero source term")
    res = compatibility_residual(problem)
    scale = compatibility_scale(problem)
    if abs(res) > rtol * scale:
        raise IncompatibleDataError(res, scale, rtol)


def assemble_load(problem: BalanceProblem) -> NDArray[np.float64]:
    """Cell coefficients of ``F(psi) = int psi beta dV + int psi tau dA``.

    A point mass ``m`` at a cell (boundary face) is encoded as a ``beta``
    (``tau``) value of ``m / volume`` (``m / area``).
    """
    g = problem.grid
    load = problem.beta * g.volume
    np.add.at(load, g.boundary.owner, problem.tau * g.boundary.area)
    return load


def balance_residual(
    problem: BalanceProblem, w: NDArray[np.float64]
) -> tuple[NDArray[np.float64], float]:
    """Cellwise ``beta + div(w, tau) - s`` and its volume-weighted 2-norm."""
    g = problem.grid
    r = problem.beta + ops.divergence(g, w, problem.tau) - problem.source
    return r, float(np.sqrt(ops.integrate_cells(g, r * r)))


def relative_balance_residual(problem: BalanceProblem, w: NDArray[np.float64]) -> float:
    """Load-norm balance defect relative to the load and the interior fluxes."""
    g = problem.grid
    r, _ = balance_residual(problem, w)
    d, _ = ops.divergence_matrices(g)
    scale = np.linalg.norm(assemble_load(problem)) + np.linalg.norm(g.volume * (d @ w))
    num = np.linalg.norm(g.volume * r)
    return float(num / scale) if scale > 0 else float(num)


def weak_balance_residual(
    problem: BalanceProblem, w: NDArray[np.float64], psi: NDArray[np.float64]
) -> float:
    """``F(psi) - <grad psi, w>_W``; equals ``<psi, beta + div(w, tau)>_V``."""
    g = problem.grid
    return float(
        np.dot(assemble_load(problem), psi) - ops.face_inner(g, ops.gradient(g, psi), w)
    )


def flux_from_interior(grid: Grid, w_interior: NDArray[np.float64], tau) -> NDArray[np.float64]:
    """Full face field: given interior values, boundary faces carry ``sign * tau``."""
    w = np.zeros(grid.n_faces)
    w[grid.interior_faces] = w_interior
    w[grid.boundary.face] = grid.boundary.sign * np.asarray(tau, dtype=float)
    return w


def manufacture(
    grid: Grid, psi_ref: NDArray[np.float64]
) -> tuple[BalanceProblem, NDArray[np.float64]]:
    """Problem whose data are generated by the flux ``grad(psi_ref)``.

    ``tau`` vanishes (the gradient is zero on boundary faces) and
    ``beta = -div(grad psi_ref)``, so the reference flux balances exactly.
    """
    psi = ops.zero_mean_project(grid, psi_ref)
    w = ops.gradient(grid, psi)
    tau = np.zeros(grid.n_boundary)
    beta = -ops.divergence(grid, w, tau)
    return BalanceProblem(grid, beta, tau), w
