"""Minimal L^a-norm flux for ``1 < a <= inf`` by a primal-dual method.

The problem is restricted to the interior faces, where fluxes are free;
boundary faces carry the prescribed ``tau`` and do not enter the objective.
With ``K w = G^T W w`` the constraint reads ``K w = F`` (the load vector),
and the Lagrangian ``f(w) + <psi, K w - F>`` is attacked by primal-dual
hybrid gradients with the dual step measured in the Poisson metric
``L = K G``. Every ``check_every`` iterations two certificates are built:

* primal: the exact projection of ``w`` onto ``{K w = F}``, whose norm
  bounds ``omega`` from above;
* dual: ``F(psi) / ||grad psi||_{a'}`` at candidate potentials, a lower
  bound by Hoelder's inequality.

Iteration stops when the relative gap of the best bounds drops below
``tol_gap``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from . import kernels
from . import operators as ops
from .problem import BalanceProblem, assemble_load, check_compatible, flux_from_interior, relative_balance_residual
from .solver_l2 import SolveReport, poisson_pinv, stiffness_matrix

__all__ = ["LqSolution", "dual_exponent", "lq_dual_objective", "solve_lq"]

POWER_ITERATIONS = 50


@dataclass
class LqSolution:
    w_opt: NDArray[np.float64]
    psi_dual: NDArray[np.float64]
    omega_primal: float
    omega_dual: float
    report: SolveReport
    a: float
    a_dual: float

    @property
    def relative_gap(self) -> float:
        if self.omega_primal == 0.0:
            return 0.0
        return (self.omega_primal - self.omega_dual) / self.omega_primal


def dual_exponent(a: float) -> float:
    """Conjugate exponent ``a / (a - 1)``; 1 for ``a = inf``.

    Raises:
        ValueError: ``a <= 1`` (or not a number).
    """
    a = float(a)
    if not a > 1.0:
        raise ValueError(f"exponent a must satisfy 1 < a <= inf, got {a}")
    return 1.0 if np.isinf(a) else a / (a - 1.0)


def _norm(w, weights, a):
    if np.isinf(a):
        return float(np.max(np.abs(w), initial=0.0))
    return float(np.dot(weights, np.abs(w) ** a) ** (1.0 / a))


def lq_dual_objective(problem: BalanceProblem, psi: NDArray[np.float64], a_dual: float) -> float:
    """``F(psi) / ||grad psi||_{a'}``, a lower bound on the optimal L^a norm.

    Raises:
        ValueError: ``psi`` is constant on the grid.
    """
    g = problem.grid
    psi = np.asarray(psi, dtype=float)
    grad = ops.gradient(g, psi)
    scale = np.max(np.abs(psi), initial=0.0) / min(g.spacing)
    if np.max(np.abs(grad), initial=0.0) <= 1e-13 * scale or scale == 0.0:
        raise ValueError("dual objective undefined for a constant potential")
    return float(np.dot(assemble_load(problem), psi)) / ops.face_norm(g, grad, a_dual)


def _lipschitz_sq(lap, n: int, seed: int) -> float:
    # largest eigenvalue of the stiffness matrix, i.e. ||K||^2
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    lam = 0.0
    for _ in range(POWER_ITERATIONS):
        y = lap @ x
        lam = float(np.linalg.norm(y) / np.linalg.norm(x))
        x = y / np.linalg.norm(y)
    # power iteration approaches from below; pad so the step stays safe
    return 1.01 * lam


def solve_lq(
    problem: BalanceProblem,
    a: float,
    tol_gap: float = 1e-6,
    max_iter: int = 50_000,
    preconditioner: str = "poisson",
    step: float | None = None,
    check_every: int = 50,
    seed: int = 0,
) -> LqSolution:
    """Minimal face-weighted L^a-norm flux satisfying the balance constraints.

    Args:
        problem: compatible data with zero source.
        a: flux exponent, ``1 < a <= inf``.
        tol_gap: target relative duality gap.
        max_iter: iteration budget; on exhaustion the best certified pair is
            returned with ``converged = False``.
        preconditioner: ``"poisson"`` (dual step through ``L^+``) or
            ``"none"`` (scalar steps from a power-iteration estimate of
            ``||grad||``).
        step: primal step; defaults to 1 (0.1 for ``a = inf``) with the
            Poisson metric and to ``1 / ||grad||`` otherwise.
        check_every: iterations between certificate evaluations.
        seed: seed of the power iteration.

    Raises:
        ValueError: ``a <= 1`` or an unknown preconditioner.
        IncompatibleDataError: the data admit no flux.
    """
    a = float(a)
    a_dual = dual_exponent(a)
    if preconditioner not in ("poisson", "none"):
        raise ValueError(f"unknown preconditioner {preconditioner!r}")
    check_compatible(problem)
    grid = problem.grid
    load = assemble_load(problem)
    interior = grid.interior_faces
    om = grid.face_weights[interior]
    gmat = ops.gradient_matrix(grid)[interior]
    pinv = poisson_pinv(grid)
    kmap = lambda w: gmat.T @ (om * w)  # noqa: E731
    inf = np.isinf(a)

    phi2 = pinv(load)
    w2 = gmat @ phi2
    omega2 = np.sqrt(np.dot(om * w2, w2))
    if omega2 == 0.0 or interior.size == 0:
        w = flux_from_interior(grid, np.zeros(interior.size), problem.tau)
        report = SolveReport(0.0, 0.0, 0.0, relative_balance_residual(problem, w), 0, True)
        return LqSolution(w, np.zeros(grid.n_cells), 0.0, 0.0, report, a, a_dual)

    # normalize so the warm start has unit mean magnitude; the iteration is
    # then identical for every positive multiple of the data
    s0 = omega2 / np.sqrt(om.sum())
    fh = load / s0
    w = w2 / s0

    def feasible(v):
        return v - gmat @ pinv(kmap(v) - fh)

    def power_grad(v):
        return np.abs(v) ** (a - 1.0) * np.sign(v)

    if preconditioner == "poisson":
        tau_p = step if step is not None else (0.1 if inf else 1.0)
        sigma = 1.0 / tau_p
        dual_step = lambda r: sigma * pinv(r)  # noqa: E731
    else:
        lnorm = np.sqrt(_lipschitz_sq(stiffness_matrix(grid), grid.n_cells, seed))
        tau_p = step if step is not None else 1.0 / lnorm
        sigma = 1.0 / (tau_p * lnorm**2)
        dual_step = lambda r: sigma * ops.zero_mean_project(grid, r)  # noqa: E731

    psi = np.zeros(grid.n_cells) if inf else -pinv(kmap(power_grad(w)))
    best_p, best_w = np.inf, w
    best_d, best_psi = -np.inf, phi2
    gap = np.inf
    it = 0
    while it < max_iter:
        it += 1
        v = w - tau_p * (gmat @ psi)
        w_new = kernels.prox_linf(v, tau_p, om) if inf else kernels.prox_power(v, tau_p, a)
        psi = psi + dual_step(kmap(2.0 * w_new - w) - fh)
        w = w_new
        if it % check_every and it < max_iter:
            continue
        wf = feasible(w)
        p = _norm(wf, om, a)
        if p < best_p:
            best_p, best_w = p, wf
        cands = [-psi] if inf else [-psi, pinv(kmap(power_grad(w)))]
        for c in cands:
            gn = _norm(gmat @ c, om, a_dual)
            if gn > 0:
                d = float(np.dot(fh, c)) / gn
                if d > best_d:
                    best_d, best_psi = d, c
        gap = (best_p - best_d) / best_p
        if gap <= tol_gap:
            break

    w_int = best_w * s0
    w_opt = flux_from_interior(grid, w_int, problem.tau)
    psi_dual = ops.zero_mean_project(grid, best_psi)
    psi_dual = psi_dual / ops.face_norm(grid, ops.gradient(grid, psi_dual), a_dual)
    omega_p = _norm(w_int, om, a)
    omega_d = lq_dual_objective(problem, psi_dual, a_dual)
    report = SolveReport(
        objective=omega_p,
        dual_value=omega_d,
        gap=omega_p - omega_d,
        constraint_residual=relative_balance_residual(problem, w_opt),
        iterations=it,
        converged=bool(gap <= tol_gap),
    )
    return LqSolution(w_opt, psi_dual, omega_p, omega_d, report, a, a_dual)
