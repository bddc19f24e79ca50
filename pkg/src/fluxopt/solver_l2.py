"""Minimal L2-norm flux via the Neumann-type Poisson problem.

The optimal flux is the gradient of the potential solving
``<grad phi, grad psi>_W = F(psi)`` for every potential ``psi``; the
optimal value equals the dual norm of the load, ``sqrt(F(phi))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from . import operators as ops
from .grid import Grid
from .krylov import projected_cg
from .problem import (
    BalanceProblem,
    assemble_load,
    check_compatible,
    flux_from_interior,
    relative_balance_residual,
)

__all__ = [
    "L2Solution",
    "SolveReport",
    "kernel_fields",
    "l2_orthogonality_certificate",
    "poisson_pinv",
    "potential_from_load",
    "solve_l2",
    "stiffness_matrix",
]


@dataclass
class SolveReport:
    objective: float
    dual_value: float
    gap: float
    constraint_residual: float
    iterations: int
    converged: bool


@dataclass
class L2Solution:
    """``omega`` is the optimal value of the weak-balance problem (the norm
    over faces where potential gradients live); ``flux_norm`` additionally
    counts the prescribed boundary-face fluxes stored in ``w_opt``."""

    w_opt: NDArray[np.float64]
    phi: NDArray[np.float64]
    omega: float
    flux_norm: float
    report: SolveReport


def stiffness_matrix(grid: Grid) -> sp.csr_matrix:
    """``G^T W G``: the weighted graph Laplacian of the active cells."""

    def build():
        g = ops.gradient_matrix(grid)
        return (g.T @ sp.diags(grid.face_weights) @ g).tocsr()

    return ops._cached(grid, "stiffness", build)


def poisson_pinv(grid: Grid):
    """Cached direct solver ``r -> L^+ r`` for the stiffness matrix ``L``.

    Factorizes ``L`` with the first cell pinned; for a zero-mean ``r`` the
    pinned solution differs from the minimum-norm one by a constant only,
    which the final projection removes.
    """

    def build():
        lap = stiffness_matrix(grid)
        n = grid.n_cells
        if n == 1:
            return lambda r: np.zeros(1)
        solve = spla.factorized(lap[1:, 1:].tocsc())

        def apply(r):
            r = _mean_free(np.asarray(r, dtype=float))
            x = np.zeros(n)
            x[1:] = solve(r[1:])
            return _mean_free(x)

        return apply

    return ops._cached(grid, "poisson_pinv", build)


def _mean_free(v: NDArray[np.float64]) -> NDArray[np.float64]:
    # cell volumes are uniform: zero mean in both the weighted and Euclidean sense
    return v - v.mean()


def potential_from_load(
    grid: Grid,
    load: NDArray[np.float64],
    tol: float = 1e-10,
    max_iter: int = 10_000,
    x0: NDArray[np.float64] | None = None,
    diagonal_precond: bool = False,
):
    """Zero-mean ``phi`` with ``G^T W G phi = P load``; returns a ``CGResult``."""
    lap = stiffness_matrix(grid)
    precond = None
    if diagonal_precond:
        d = lap.diagonal()
        inv = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 0.0)
        precond = lambda r: inv * r  # noqa: E731
    return projected_cg(
        lambda x: lap @ x, load, _mean_free, tol=tol, max_iter=max_iter, x0=x0, precond=precond
    )


def solve_l2(
    problem: BalanceProblem,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    diagonal_precond: bool = False,
) -> L2Solution:
    """Minimal L2-norm flux satisfying the balance constraints.

    Raises:
        IncompatibleDataError: the data admit no flux.
    """
    check_compatible(problem)
    grid = problem.grid
    load = assemble_load(problem)
    res = potential_from_load(grid, load, tol, max_iter, diagonal_precond=diagonal_precond)
    phi = res.x
    grad = ops.gradient(grid, phi)
    w = flux_from_interior(grid, grad[grid.interior_faces], problem.tau)
    omega = ops.face_norm(grid, grad)
    dual = float(np.dot(load, phi)) / omega if omega > 0 else 0.0
    report = SolveReport(
        objective=omega,
        dual_value=dual,
        gap=omega - dual,
        constraint_residual=relative_balance_residual(problem, w),
        iterations=res.iterations,
        converged=res.converged,
    )
    return L2Solution(w, phi, omega, ops.face_norm(grid, w), report)


# -- optimality certificate ----------------------------------------------------


def kernel_fields(grid: Grid, rng: np.random.Generator, count: int = 1) -> list[NDArray[np.float64]]:
    """Random divergence-free face fields with zero flux through every boundary face.

    Built as discrete curls of random potentials living on grid nodes (2D) or
    edges (3D) that vanish wherever they touch an inactive cell or the exterior.
    """
    return [_curl_field(grid, rng) for _ in range(count)]


def _interior_nodes(grid: Grid, axes: tuple[int, ...]) -> NDArray[np.bool_]:
    """Lattice sites (nodes/edges) all of whose surrounding cells are active.

    ``axes`` are the axes along which the site sits on a cell boundary;
    along the remaining axes the site is cell-centred.
    """
    padded = np.pad(grid.mask, 1, constant_values=False)
    ok = None
    for corner in np.ndindex(*(2,) * len(axes)):
        sl = []
        for j in range(grid.ndim):
            n = grid.dims[j]
            if j in axes:
                c = corner[axes.index(j)]
                sl.append(slice(c, c + n + 1))
            else:
                sl.append(slice(1, n + 1))
        piece = padded[tuple(sl)]
        ok = piece if ok is None else ok & piece
    return ok


def _curl_field(grid: Grid, rng: np.random.Generator) -> NDArray[np.float64]:
    h = grid.spacing
    w = np.zeros(grid.n_faces)
    if grid.ndim == 2:
        zeta = rng.standard_normal((grid.dims[0] + 1, grid.dims[1] + 1))
        zeta[~_interior_nodes(grid, (0, 1))] = 0.0
        wx = grid.face_lattice(w, 0)
        wy = grid.face_lattice(w, 1)
        wx[...] = (zeta[:, 1:] - zeta[:, :-1]) / h[1]
        wy[...] = -(zeta[1:, :] - zeta[:-1, :]) / h[0]
        return w
    # edge potentials: a[k] lives on edges parallel to axis k
    pot = []
    for k in range(3):
        others = tuple(j for j in range(3) if j != k)
        shape = tuple(grid.dims[j] if j == k else grid.dims[j] + 1 for j in range(3))
        a = rng.standard_normal(shape)
        a[~_interior_nodes(grid, others)] = 0.0
        pot.append(a)
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        # circulation around a face normal to k, oriented by (i, j)
        ai, aj = pot[i] * h[i], pot[j] * h[j]
        circ = (
            np.diff(aj, axis=i)
            - np.diff(ai, axis=j)
        )
        grid.face_lattice(w, k)[...] = circ / grid.face_area[k]
    return w


def l2_orthogonality_certificate(
    grid: Grid, solution: L2Solution, trials: int = 100, seed: int = 0
) -> float:
    """Largest normalized W-inner product of ``w_opt`` with random kernel fields.

    The minimal-norm feasible flux is orthogonal to every divergence-free
    field with zero boundary flux, so the value vanishes at the optimum.
    """
    w = solution.w_opt
    wn = ops.face_norm(grid, w)
    if wn == 0.0:
        return 0.0
    rng = np.random.default_rng(seed)
    worst = 0.0
    for v in kernel_fields(grid, rng, trials):
        vn = ops.face_norm(grid, v)
        if vn > 0:
            worst = max(worst, abs(ops.face_inner(grid, w, v)) / (wn * vn))
    return worst
