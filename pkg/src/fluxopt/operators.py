"""Discrete gradient, divergence, trace and Hessian on a MAC grid.

The pairings used throughout:

* cells: ``<f, g>_V = sum(V * f * g)``
* faces: ``<u, v>_W = sum(W_f * u * v)`` with ``W_f`` the volume share of
  face ``f`` (half a cell from every adjacent active cell)
* boundary: ``<g, t>_A = sum(A_f * g * t)``

With these the gradient and divergence satisfy summation by parts exactly::

    <psi, div(w, tau)>_V + <grad psi, w>_W = <trace psi, tau>_A
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray

from .grid import Grid

__all__ = [
    "affine_basis",
    "affine_project",
    "delta_map",
    "divergence",
    "divergence_matrices",
    "face_inner",
    "face_norm",
    "gradient",
    "gradient_matrix",
    "hessian",
    "hessian_matrix",
    "hessian_norm",
    "integrate_boundary",
    "integrate_cells",
    "pairing_residual",
    "trace",
    "trace_matrix",
    "zero_mean_project",
]


def _cached(grid: Grid, key: str, build):
    try:
        return grid._cache[key]
    except KeyError:
        value = grid._cache[key] = build()
        return value


# -- assembled operators -----------------------------------------------------


def gradient_matrix(grid: Grid) -> sp.csr_matrix:
    """Sparse ``(n_faces, n_cells)`` matrix of the interior-face gradient."""

    def build():
        f = grid.interior_faces
        inv_h = 1.0 / np.asarray(grid.spacing)[grid.face_axis[f]]
        rows = np.concatenate([f, f])
        cols = np.concatenate([grid.face_right[f], grid.face_left[f]])
        vals = np.concatenate([inv_h, -inv_h])
        return sp.csr_matrix((vals, (rows, cols)), shape=(grid.n_faces, grid.n_cells))

    return _cached(grid, "gradient", build)


def divergence_matrices(grid: Grid) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Matrices ``(D, B)`` with ``div(w, tau) = D @ w + B @ tau``."""

    def build():
        f = grid.interior_faces
        s = grid.face_areas[f] / grid.volume
        rows = np.concatenate([grid.face_left[f], grid.face_right[f]])
        cols = np.concatenate([f, f])
        d = sp.csr_matrix(
            (np.concatenate([s, -s]), (rows, cols)), shape=(grid.n_cells, grid.n_faces)
        )
        bnd = grid.boundary
        b = sp.csr_matrix(
            (bnd.area / grid.volume, (bnd.owner, np.arange(len(bnd)))),
            shape=(grid.n_cells, len(bnd)),
        )
        return d, b

    return _cached(grid, "divergence", build)


def trace_matrix(grid: Grid) -> sp.csr_matrix:
    def build():
        n = grid.n_boundary
        return sp.csr_matrix(
            (np.ones(n), (np.arange(n), grid.boundary.owner)), shape=(n, grid.n_cells)
        )

    return _cached(grid, "trace", build)


# -- pointwise operators -------------------------------------------------------


def gradient(grid: Grid, psi: NDArray[np.float64]) -> NDArray[np.float64]:
    """Face field of differences of ``psi`` across interior faces.

    Faces on the boundary or next to inactive cells carry zero.
    """
    return gradient_matrix(grid) @ np.asarray(psi, dtype=float)


def divergence(
    grid: Grid, w: NDArray[np.float64], tau: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Net outflow per unit volume of every active cell.

    Interior faces contribute ``w``; boundary faces contribute the prescribed
    outward normal flux ``tau`` (positive is outflow). The values of ``w``
    stored on boundary faces are ignored.
    """
    d, b = divergence_matrices(grid)
    return d @ np.asarray(w, dtype=float) + b @ np.asarray(tau, dtype=float)


def trace(grid: Grid, psi: NDArray[np.float64]) -> NDArray[np.float64]:
    """Boundary values taken from the owning cell (piecewise-constant trace)."""
    return np.asarray(psi, dtype=float)[grid.boundary.owner]


def delta_map(
    grid: Grid, psi: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    psi = np.asarray(psi, dtype=float)
    return psi.copy(), trace(grid, psi)


def integrate_cells(grid: Grid, f: NDArray[np.float64]) -> float:
    return float(np.dot(grid.cell_volumes, f))


def integrate_boundary(grid: Grid, g: NDArray[np.float64]) -> float:
    return float(np.dot(grid.boundary.area, g))


def face_inner(grid: Grid, u: NDArray[np.float64], v: NDArray[np.float64]) -> float:
    return float(np.dot(grid.face_weights * u, v))


def face_norm(grid: Grid, w: NDArray[np.float64], a: float = 2.0) -> float:
    """Face-weighted ``a``-norm; ``a = inf`` is the max over live faces."""
    w = np.asarray(w, dtype=float)
    live = grid.face_weights > 0
    if np.isinf(a):
        return float(np.max(np.abs(w[live]), initial=0.0))
    return float(np.sum(grid.face_weights[live] * np.abs(w[live]) ** a) ** (1.0 / a))


# -- projections -----------------------------------------------------------------


def zero_mean_project(grid: Grid, psi: NDArray[np.float64]) -> NDArray[np.float64]:
    psi = np.asarray(psi, dtype=float)
    mean = integrate_cells(grid, psi) / grid.total_volume
    return psi - mean


def affine_basis(grid: Grid) -> NDArray[np.float64]:
    """Orthonormal (Euclidean) basis of affine functions sampled at active cells.

    Cell volumes are uniform, so Euclidean orthogonality coincides with the
    volume-weighted one. Directions along which every active cell has the
    same coordinate are dropped.
    """

    def build():
        x = grid.cell_centers - grid.cell_centers.mean(axis=0)
        raw = np.column_stack([np.ones(grid.n_cells), x])
        u, s, _ = np.linalg.svd(raw, full_matrices=False)
        rank = int(np.sum(s > s[0] * 1e-12))
        basis = u[:, :rank].copy()
        basis.setflags(write=False)
        return basis

    return _cached(grid, "affine_basis", build)


def affine_project(grid: Grid, psi: NDArray[np.float64]) -> NDArray[np.float64]:
    """Remove the volume-weighted least-squares affine fit of ``psi``."""
    psi = np.asarray(psi, dtype=float)
    q = affine_basis(grid)
    return psi - q @ (q.T @ psi)


# -- second derivatives ------------------------------------------------------------


def _hessian_components(ndim: int) -> list[tuple[int, int]]:
    return [(k, k) for k in range(ndim)] + [
        (k, l) for k in range(ndim) for l in range(k + 1, ndim)
    ]


def hessian_matrix(grid: Grid) -> tuple[sp.csr_matrix, NDArray[np.float64]]:
    """Stacked Hessian entries and their quadrature weights.

    Rows are ordered component-major (see ``_hessian_components``), then by
    active cell. Off-diagonal rows carry weight ``2 V`` so that the weighted
    sum of squares is the Frobenius norm of the symmetric Hessian.

    Second differences fall back to one-sided stencils when a neighbour is
    missing and are dropped when no stencil fits; cross differences average
    every fully active unit square having the cell as a corner. Each stencil
    annihilates affine functions.
    """

    def build():
        n, nd = grid.n_cells, grid.ndim
        h = grid.spacing
        ids = np.arange(n)
        rows, cols, vals = [], [], []
        comps = _hessian_components(nd)

        def unit(k, step):
            e = [0] * nd
            e[k] = step
            return e

        for c, (k, l) in enumerate(comps):
            base = c * n
            if k == l:
                m, p = grid.neighbor(unit(k, -1)), grid.neighbor(unit(k, 1))
                mm, pp = grid.neighbor(unit(k, -2)), grid.neighbor(unit(k, 2))
                central = (m >= 0) & (p >= 0)
                forward = ~central & (p >= 0) & (pp >= 0)
                backward = ~central & ~forward & (m >= 0) & (mm >= 0)
                s = 1.0 / h[k] ** 2
                for sel, pts in (
                    (central, (m, ids, p)),
                    (forward, (ids, p, pp)),
                    (backward, (mm, m, ids)),
                ):
                    r = base + ids[sel]
                    for pt, coef in zip(pts, (1.0, -2.0, 1.0)):
                        rows.append(r)
                        cols.append(pt[sel])
                        vals.append(np.full(r.size, coef * s))
            else:
                squares = []
                for a in (-1, 1):
                    for b in (-1, 1):
                        ca = grid.neighbor(unit(k, a))
                        cb = grid.neighbor(unit(l, b))
                        off = [0] * nd
                        off[k], off[l] = a, b
                        cab = grid.neighbor(off)
                        ok = (ca >= 0) & (cb >= 0) & (cab >= 0)
                        squares.append((a * b, ok, ca, cb, cab))
                count = sum(sq[1].astype(int) for sq in squares)
                s = 1.0 / (h[k] * h[l])
                for ab, ok, ca, cb, cab in squares:
                    weight = np.zeros(n)
                    weight[ok] = ab * s / count[ok]
                    r = base + ids[ok]
                    for pt, coef in ((cab, 1.0), (ca, -1.0), (cb, -1.0), (ids, 1.0)):
                        rows.append(r)
                        cols.append(pt[ok])
                        vals.append(coef * weight[ok])
        mat = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(len(comps) * n, n),
        )
        weights = np.concatenate(
            [np.full(n, grid.volume * (1.0 if k == l else 2.0)) for k, l in comps]
        )
        weights.setflags(write=False)
        return mat, weights

    return _cached(grid, "hessian", build)


def hessian(grid: Grid, psi: NDArray[np.float64]) -> NDArray[np.float64]:
    """Per-cell symmetric ``(ndim, ndim)`` Hessian of ``psi``; shape ``(n_cells, d, d)``."""
    mat, _ = hessian_matrix(grid)
    flat = (mat @ np.asarray(psi, dtype=float)).reshape(-1, grid.n_cells)
    out = np.zeros((grid.n_cells, grid.ndim, grid.ndim))
    for c, (k, l) in enumerate(_hessian_components(grid.ndim)):
        out[:, k, l] = flat[c]
        out[:, l, k] = flat[c]
    return out


def hessian_norm(grid: Grid, psi: NDArray[np.float64]) -> float:
    """Volume-weighted Frobenius norm of the Hessian."""
    mat, weights = hessian_matrix(grid)
    hp = mat @ np.asarray(psi, dtype=float)
    return float(np.sqrt(np.dot(weights * hp, hp)))


# -- summation by parts ---------------------------------------------------------------


def pairing_residual(
    grid: Grid,
    psi: NDArray[np.float64],
    w: NDArray[np.float64],
    tau: NDArray[np.float64],
    relative: bool = True,
) -> float:
    """Defect of the discrete Gauss identity.

    Returns ``|<psi, div(w, tau)>_V + <grad psi, w>_W - <trace psi, tau>_A|``,
    divided by the sum of the magnitudes of the three terms when ``relative``.
    """
    t1 = integrate_cells(grid, np.asarray(psi) * divergence(grid, w, tau))
    t2 = face_inner(grid, gradient(grid, psi), w)
    t3 = integrate_boundary(grid, trace(grid, psi) * np.asarray(tau))
    defect = abs(t1 + t2 - t3)
    if not relative:
        return defect
    scale = abs(t1) + abs(t2) + abs(t3)
    return defect / scale if scale > 0 else 0.0
