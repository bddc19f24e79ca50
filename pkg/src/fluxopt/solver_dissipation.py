"""Minimal-dissipation fluxes.

Two different problems share this module.

Classical branch: minimize ``sum Wd |D w|^2`` over face fields obeying the
pointwise balance, where ``D`` collects first differences of every face
component (normal differences across cells, tangential differences between
neighbouring faces of the same lattice). The boundary faces are fixed to the
prescribed normal flux; differences that would reach a dead face are simply
absent, which is the discrete natural boundary condition. The saddle system

    [ A   -K^T ] [ x      ]   [ c ]
    [ -K   0   ] [ lambda ] = [-F ]

(``A = D^T Wd D`` on interior faces, ``K = G^T W``) is solved by MINRES.

Dual branch: the Riesz representer of the load in the Hessian inner product
``<H phi, H psi>`` on potentials modulo affine functions, solved by conjugate
gradients with affine re-projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from . import operators as ops
from .grid import Grid
from .krylov import projected_cg
from .problem import BalanceProblem, assemble_load, check_compatible, flux_from_interior, relative_balance_residual
from .solver_l2 import SolveReport

__all__ = [
    "ClassicalDissipationSolution",
    "DualDissipationSolution",
    "ELReport",
    "biharmonic_matrix",
    "dissipation",
    "el_residual",
    "face_difference_matrix",
    "kkt_matrix",
    "kkt_rhs",
    "solve_dissipation_classical",
    "solve_dissipation_dual",
    "w22_dual_objective",
]

_MAX_REFINEMENTS = 5


# -- classical branch ---------------------------------------------------------------


def face_difference_matrix(grid: Grid) -> tuple[sp.csr_matrix, NDArray[np.float64]]:
    """First differences of every face component and their quadrature weights.

    Returns ``(D, weights)`` with ``D`` of shape ``(n_rows, n_faces)``. Rows
    come lattice by lattice (axis ``k``), then by difference direction
    ``j``. Normal rows (``j == k``) difference the two faces of an active
    cell and carry the cell volume; tangential rows (``j != k``) difference
    two live neighbouring faces and carry the mean of their face weights.
    """

    def build():
        rows, cols, vals, weights = [], [], [], []
        nrow = 0
        live_all = grid.face_weights > 0
        for k in range(grid.ndim):
            shape = grid.face_shapes[k]
            off = grid.face_offsets[k]
            ids = off + np.arange(int(np.prod(shape))).reshape(shape)
            live = live_all[ids]
            fw = grid.face_weights[ids]
            for j in range(grid.ndim):
                lo = [slice(None)] * grid.ndim
                hi = [slice(None)] * grid.ndim
                lo[j] = slice(0, shape[j] - 1)
                hi[j] = slice(1, shape[j])
                lo, hi = tuple(lo), tuple(hi)
                if j == k:
                    ok = grid.mask
                    wt = np.full(ok.shape, grid.volume)
                else:
                    ok = live[lo] & live[hi]
                    wt = 0.5 * (fw[lo] + fw[hi])
                a, b = ids[lo][ok], ids[hi][ok]
                m = a.size
                r = nrow + np.arange(m)
                inv_h = 1.0 / grid.spacing[j]
                rows += [r, r]
                cols += [b, a]
                vals += [np.full(m, inv_h), np.full(m, -inv_h)]
                weights.append(wt[ok])
                nrow += m
        mat = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nrow, grid.n_faces),
        )
        wts = np.concatenate(weights)
        wts.setflags(write=False)
        return mat, wts

    return ops._cached(grid, "face_difference", build)


def dissipation(grid: Grid, w: NDArray[np.float64]) -> float:
    """``sum Wd |D w|^2``, the discrete ``int |grad w|^2 dV``."""
    d, wts = face_difference_matrix(grid)
    dw = d @ np.asarray(w, dtype=float)
    return float(np.dot(wts * dw, dw))


def _blocks(grid: Grid):
    def build():
        d, wts = face_difference_matrix(grid)
        interior = grid.interior_faces
        dint = d[:, interior]
        a = (dint.T @ sp.diags(wts) @ dint).tocsc()
        k = (ops.gradient_matrix(grid)[interior].T @ sp.diags(grid.face_weights[interior])).tocsr()
        return a, k, dint.tocsr(), d[:, grid.boundary.face].tocsr()

    return ops._cached(grid, "kkt_blocks", build)


def kkt_matrix(grid: Grid) -> sp.csr_matrix:
    """The symmetric indefinite saddle matrix ``[[A, -K^T], [-K, 0]]``."""
    a, k, _, _ = _blocks(grid)
    return sp.bmat([[a, -k.T], [-k, None]], format="csr")


def kkt_rhs(problem: BalanceProblem) -> NDArray[np.float64]:
    grid = problem.grid
    _, wts = face_difference_matrix(grid)
    _, _, dint, dbnd = _blocks(grid)
    wb = grid.boundary.sign * problem.tau
    c = -(dint.T @ (wts * (dbnd @ wb)))
    return np.concatenate([c, -assemble_load(problem)])


@dataclass
class ClassicalDissipationSolution:
    w: NDArray[np.float64]
    lam: NDArray[np.float64]
    dissipation: float
    report: SolveReport
    kkt_residual: float


@dataclass
class ELReport:
    """Discrete Euler-Lagrange defects of a classical solution.

    ``interior_residual`` is the weighted norm of ``w_{i,jj} + lambda_{,i}``
    over interior faces with a full tangential stencil, and
    ``boundary_tangential_traction`` the same quantity over interior faces
    whose stencil is cut by the boundary, where it measures the tangential
    traction. Both are relative to the size of the two terms. ``sigma``
    holds ``w_{i,j}`` per difference row (see ``face_difference_matrix``);
    ``b`` is the body-force term, identically zero for this Lagrangian.
    """

    interior_residual: float
    boundary_tangential_traction: float
    sigma: NDArray[np.float64]
    b: NDArray[np.float64] = field(repr=False)


def _kkt_solve(grid, rhs, tol, max_iter):
    a, k, _, _ = _blocks(grid)
    n = a.shape[0]
    mat = kkt_matrix(grid)
    lu = spla.splu(a)
    inv_v = 1.0 / grid.volume

    def precond(r):
        return np.concatenate([lu.solve(r[:n]), inv_v * r[n:]])

    m = spla.LinearOperator(mat.shape, matvec=precond, dtype=float)
    bnorm = np.linalg.norm(rhs)
    sol = np.zeros_like(rhs)
    iterations = 0
    relres = 0.0
    if bnorm == 0.0:
        return sol, 0, 0.0
    for _ in range(_MAX_REFINEMENTS):
        r = rhs - mat @ sol
        relres = np.linalg.norm(r) / bnorm
        if relres <= tol or iterations >= max_iter:
            break
        counter = [0]

        def cb(_x, counter=counter):
            counter[0] += 1

        dx, _ = spla.minres(
            mat, r, rtol=0.1 * tol * bnorm / np.linalg.norm(r), maxiter=max_iter - iterations, M=m, callback=cb
        )
        sol = sol + dx
        iterations += counter[0]
    return sol, iterations, float(relres)


def solve_dissipation_classical(
    problem: BalanceProblem, tol: float = 1e-9, max_iter: int = 10_000
) -> ClassicalDissipationSolution:
    """Minimal-dissipation flux under pointwise balance and fixed normal boundary flux.

    ``tol`` bounds the relative residual of the full saddle system.

    Raises:
        IncompatibleDataError: the data admit no flux.
    """
    check_compatible(problem)
    grid = problem.grid
    n = grid.interior_faces.size
    rhs = kkt_rhs(problem)
    if n == 0:
        sol, iterations, relres = np.zeros(grid.n_cells), 0, 0.0
    else:
        sol, iterations, relres = _kkt_solve(grid, rhs, tol, max_iter)
    x, lam = sol[:n], ops.zero_mean_project(grid, sol[n:])
    w = flux_from_interior(grid, x, problem.tau)
    diss = dissipation(grid, w)

    # Lagrangian dual bound evaluated at (x, lam); exact at a KKT point
    a, _, _, dbnd = _blocks(grid)
    _, wts = face_difference_matrix(grid)
    dwb = dbnd @ (grid.boundary.sign * problem.tau)
    dual = 2.0 * np.dot(lam, assemble_load(problem)) - np.dot(x, a @ x) + np.dot(wts * dwb, dwb)
    balance = relative_balance_residual(problem, w)
    report = SolveReport(
        objective=diss,
        dual_value=float(dual),
        gap=float(diss - dual),
        constraint_residual=balance,
        iterations=iterations,
        converged=bool(relres <= tol and balance <= tol),
    )
    return ClassicalDissipationSolution(w, lam, diss, report, relres)


def el_residual(grid: Grid, solution: ClassicalDissipationSolution) -> ELReport:
    """Euler-Lagrange defects ``w_{i,jj} + lambda_{,i}`` of a classical solution.

    These are the stationarity rows of the saddle system divided by the
    face weights, so a converged solve makes them small.
    """
    d, wts = face_difference_matrix(grid)
    w = np.asarray(solution.w, dtype=float)
    lam = np.asarray(solution.lam, dtype=float)
    interior = grid.interior_faces
    fw = grid.face_weights[interior]
    sigma = d @ w
    # minus the discrete vector Laplacian, and the multiplier gradient
    lap = (d.T @ (wts * sigma))[interior] / fw
    grad = ops.gradient(grid, lam)[interior]
    res = lap - grad

    # faces whose tangential stencil is cut by the boundary
    rows_per_face = np.diff(d[:, interior].tocsc().indptr)
    full = rows_per_face == 2 * grid.ndim

    def rel(sel):
        scale = np.sqrt(np.dot(fw[sel], lap[sel] ** 2)) + np.sqrt(np.dot(fw[sel], grad[sel] ** 2))
        num = np.sqrt(np.dot(fw[sel], res[sel] ** 2))
        return float(num / scale) if scale > 0 else float(num)

    return ELReport(
        interior_residual=rel(full),
        boundary_tangential_traction=rel(~full),
        sigma=sigma,
        b=np.zeros(grid.n_faces),
    )


# -- dual (Hessian) branch -----------------------------------------------------------


@dataclass
class DualDissipationSolution:
    """``phi`` generates the representer; ``affine_moments`` are the
    components of the load along the orthonormal affine basis, removed
    before solving."""

    phi: NDArray[np.float64]
    w_bar: NDArray[np.float64]
    omega: float
    report: SolveReport
    affine_moments: NDArray[np.float64]


def biharmonic_matrix(grid: Grid) -> sp.csr_matrix:
    """``H^T Wh H``, the Gram operator of the Hessian inner product."""

    def build():
        h, wts = ops.hessian_matrix(grid)
        return (h.T @ sp.diags(wts) @ h).tocsr()

    return ops._cached(grid, "biharmonic", build)


def solve_dissipation_dual(
    problem: BalanceProblem, tol: float = 1e-10, max_iter: int = 100_000, seed: int = 0
) -> DualDissipationSolution:
    """Riesz representer of the load in the Hessian inner product.

    Solves ``H^T Wh H phi = P F`` on affine-free potentials, ``P`` being the
    projection removing the load's affine components. The CG start is a
    random affine-free field drawn from ``seed``.

    Raises:
        IncompatibleDataError: the data admit no flux.
    """
    check_compatible(problem)
    grid = problem.grid
    q = ops.affine_basis(grid)
    load = assemble_load(problem)
    moments = q.T @ load
    mat = biharmonic_matrix(grid)
    x0 = np.random.default_rng(seed).standard_normal(grid.n_cells)
    res = projected_cg(
        lambda x: mat @ x,
        load,
        lambda v: ops.affine_project(grid, v),
        tol=tol,
        max_iter=max_iter,
        x0=x0,
    )
    phi = res.x
    omega = ops.hessian_norm(grid, phi)
    dual = float(np.dot(load, phi)) / omega if omega > 0 else 0.0
    report = SolveReport(
        objective=omega,
        dual_value=dual,
        gap=omega - dual,
        constraint_residual=res.relres,
        iterations=res.iterations,
        converged=res.converged,
    )
    return DualDissipationSolution(phi, ops.gradient(grid, phi), omega, report, moments)


def w22_dual_objective(problem: BalanceProblem, psi: NDArray[np.float64]) -> float:
    """``F(psi) / ||H psi||`` with ``F`` restricted to the affine quotient.

    Raises:
        ValueError: ``psi`` is affine on the grid.
    """
    grid = problem.grid
    psi = np.asarray(psi, dtype=float)
    hn = ops.hessian_norm(grid, psi)
    scale = np.linalg.norm(psi) * np.sqrt(grid.volume) / min(grid.spacing) ** 2
    if scale == 0.0 or hn <= 1e-12 * scale:
        raise ValueError("dual objective undefined for an affine potential")
    return float(np.dot(assemble_load(problem), ops.affine_project(grid, psi))) / hn
