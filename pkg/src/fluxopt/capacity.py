"""Capacity of a grid region for the L2 setting.

For data ``c = (beta, tau)`` with the product norm
``||c||^2 = int beta^2 dV + int tau^2 dA`` the optimal flux norm satisfies
``omega(c) <= K ||c||`` with

    K^2 = max over zero-mean psi of (||psi||^2 + ||trace psi||^2) / ||grad psi||^2,

the squared norm of ``psi -> (psi, trace psi)``. ``K`` is the largest
eigenvalue of ``B psi = mu L psi`` on zero-mean potentials, with ``B`` the
cell-plus-boundary mass matrix and ``L`` the stiffness matrix. The capacity
is ``C = 1 / K``: data with ``||c|| <= C M`` admit a flux of norm ``<= M``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from numpy.typing import NDArray

from . import operators as ops
from .grid import Grid
from .krylov import projected_cg
from .problem import BalanceProblem
from .solver_l2 import stiffness_matrix

__all__ = [
    "Admissibility",
    "CapacityReport",
    "NORM_CONVENTION",
    "admissible",
    "capacity_dense",
    "capacity_l2",
    "input_norm",
    "mass_matrix",
    "sensitivity",
]

NORM_CONVENTION = "||c|| = (int beta^2 dV + int tau^2 dA)^(1/2); ||grad psi|| face-weighted L2"

_INNER_TOL = 1e-13


class CapacityConvergenceError(RuntimeError):
    pass


@dataclass
class CapacityReport:
    K: float
    C: float
    psi_star: NDArray[np.float64]
    iterations: int
    oracle_gap: float
    converged: bool = True
    norm_convention: str = NORM_CONVENTION


@dataclass(frozen=True)
class Admissibility:
    admissible: bool
    certified_bound: float


def mass_matrix(grid: Grid) -> sp.csr_matrix:
    """``diag(V) + T^T diag(A) T``: the squared norm of ``(psi, trace psi)``."""

    def build():
        t = ops.trace_matrix(grid)
        return (sp.diags(grid.cell_volumes) + t.T @ sp.diags(grid.boundary.area) @ t).tocsr()

    return ops._cached(grid, "capacity_mass", build)


def _rayleigh(bmat, lap, psi):
    return float(np.dot(psi, bmat @ psi) / np.dot(psi, lap @ psi))


def capacity_l2(
    grid: Grid,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    seed: int = 0,
    oracle: bool = False,
) -> CapacityReport:
    """Operator norm ``K`` and capacity ``C = 1 / K`` by power iteration.

    Each sweep applies the mass matrix and solves the stiffness system on
    zero-mean potentials by CG. Stops once the Rayleigh quotient changes by
    at most ``tol`` relatively between sweeps. With ``oracle`` the dense
    generalized eigensolve is run as well and its relative difference is
    stored in ``oracle_gap`` (NaN otherwise).

    Raises:
        ValueError: the grid has a single cell (no nonconstant potential).
        CapacityConvergenceError: no convergence within ``max_iter`` sweeps.
    """
    if grid.n_cells < 2:
        raise ValueError("capacity needs at least two active cells")
    bmat = mass_matrix(grid)
    lap = stiffness_matrix(grid)
    project = lambda v: ops.zero_mean_project(grid, v)  # noqa: E731
    psi = project(np.random.default_rng(seed).standard_normal(grid.n_cells))
    psi /= np.linalg.norm(psi)
    mu = _rayleigh(bmat, lap, psi)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        res = projected_cg(lambda x: lap @ x, bmat @ psi, project, tol=_INNER_TOL, x0=psi * mu)
        psi = res.x / np.linalg.norm(res.x)
        mu_new = _rayleigh(bmat, lap, psi)
        change = abs(mu_new - mu) / mu_new
        mu = mu_new
        if change <= tol:
            converged = True
            break
    if not converged:
        raise CapacityConvergenceError(
            f"power iteration did not reach relative change {tol:g} in {max_iter} sweeps"
        )
    k = float(np.sqrt(mu))
    # fix the sign so reruns are comparable
    psi = psi * np.sign(psi[np.argmax(np.abs(psi))])
    gap = float("nan")
    if oracle:
        kd = capacity_dense(grid)
        gap = abs(k - kd) / kd
    return CapacityReport(K=k, C=1.0 / k, psi_star=psi, iterations=it, oracle_gap=gap)


def capacity_dense(grid: Grid) -> float:
    """``K`` from a dense generalized eigensolve on a zero-mean basis."""
    z = sla.null_space(np.ones((1, grid.n_cells)))
    b = z.T @ mass_matrix(grid).toarray() @ z
    lap = z.T @ stiffness_matrix(grid).toarray() @ z
    return float(np.sqrt(sla.eigh(b, lap, eigvals_only=True)[-1]))


def input_norm(problem: BalanceProblem) -> float:
    """Product 2-norm ``(int beta^2 dV + int tau^2 dA)^(1/2)`` of the data."""
    g = problem.grid
    return float(
        np.sqrt(ops.integrate_cells(g, problem.beta**2) + ops.integrate_boundary(g, problem.tau**2))
    )


def sensitivity(c_norm: float, omega: float) -> float:
    """Normalized optimum ``omega(c) / ||c||``.

    Raises:
        ValueError: ``c_norm`` is not positive.
    """
    if not c_norm > 0:
        raise ValueError("sensitivity needs data of positive norm")
    return float(omega) / float(c_norm)


def admissible(report: CapacityReport, c_norm: float, M: float) -> Admissibility:
    """Whether ``||c|| <= C M``, with the certified bound ``omega(c) <= K ||c||``.

    Raises:
        ValueError: ``M`` is not positive.
    """
    if not M > 0:
        raise ValueError("the flux bound M must be positive")
    # relative slack absorbs the rounding in C * M when c_norm was scaled to it
    ok = c_norm <= report.C * M * (1.0 + 1e-12)
    return Admissibility(bool(ok), report.K * float(c_norm))
