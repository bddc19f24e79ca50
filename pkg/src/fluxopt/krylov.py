"""Projected conjugate gradients for semidefinite systems with a known kernel."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

Vector = NDArray[np.float64]

_MAX_RESTARTS = 8


@dataclass
class CGResult:
    x: Vector
    iterations: int
    relres: float
    converged: bool


def projected_cg(
    matvec: Callable[[Vector], Vector],
    b: Vector,
    project: Callable[[Vector], Vector],
    tol: float = 1e-10,
    max_iter: int = 10_000,
    x0: Vector | None = None,
    precond: Callable[[Vector], Vector] | None = None,
) -> CGResult:
    """Solve ``A x = b`` on the complement of ``ker A``.

    ``project`` is the orthogonal projector onto that complement; it is
    applied to the right-hand side, to every iterate and to every residual
    so rounding cannot drift the iterates into the kernel. Stops when
    ``||r|| <= tol * ||P b||``.
    """
    b = project(np.asarray(b, dtype=float))
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else project(np.array(x0, dtype=float))
    if bnorm == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0, True)
    it = 0
    relres = np.inf
    for _ in range(_MAX_RESTARTS):
        # (re)start from the true residual; the recursive one drifts
        r = project(b - matvec(x))
        relres = np.linalg.norm(r) / bnorm
        if relres <= tol or it >= max_iter:
            break
        z = project(precond(r)) if precond else r
        p = z.copy()
        rz = np.dot(r, z)
        while relres > tol and it < max_iter:
            ap = project(matvec(p))
            pap = np.dot(p, ap)
            if pap <= 0.0:
                break
            alpha = rz / pap
            x = project(x + alpha * p)
            r = project(r - alpha * ap)
            it += 1
            relres = np.linalg.norm(r) / bnorm
            z = project(precond(r)) if precond else r
            rz_new = np.dot(r, z)
            p = z + (rz_new / rz) * p
            rz = rz_new
    return CGResult(x, it, float(relres), bool(relres <= tol))
