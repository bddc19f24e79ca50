"""Masked structured grids with a staggered (MAC) layout.

Scalars live at active cell centers, vector fields are stored as their
normal component on the faces of each axis lattice. For axis ``k`` the
face lattice has ``dims[k] + 1`` entries along ``k`` and ``dims[j]`` along
every other axis. Face fields are flat vectors: the lattices are
concatenated in ascending axis order, each raveled in C order (last axis
fastest). The same order defines the canonical boundary-face ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage

__all__ = [
    "BoundaryFaceSet",
    "DisconnectedGridError",
    "EmptyGridError",
    "Grid",
    "GridError",
    "InvalidSpacingError",
    "boundary_faces",
    "build_grid",
    "measures",
]

DEAD, BOUNDARY, INTERIOR = 0, 1, 2


class GridError(ValueError):
    """Invalid grid description."""


class InvalidSpacingError(GridError):
    pass


class EmptyGridError(GridError):
    pass


class DisconnectedGridError(GridError):
    pass


@dataclass(frozen=True)
class BoundaryFaceSet:
    """Faces separating an active cell from an inactive cell or the exterior.

    All arrays share the canonical ordering (ascending axis, then the face
    lattice index with the last axis fastest).
    """

    face: NDArray[np.intp]  # flat face ids
    axis: NDArray[np.intp]
    index: NDArray[np.intp]  # (n, ndim) lattice coordinates
    sign: NDArray[np.int8]  # outward normal sign along ``axis``
    area: NDArray[np.float64]
    owner: NDArray[np.intp]  # active cell id on the inside

    def __len__(self) -> int:
        return len(self.face)

    def normal_area_sum(self) -> NDArray[np.float64]:
        """Sum of sign * area * unit axis vector; zero for a closed surface."""
        ndim = self.index.shape[1]
        out = np.zeros(ndim)
        np.add.at(out, self.axis, self.sign * self.area)
        return out


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class Grid:
    """Axis-aligned structured grid with an optional activity mask.

    Instances are immutable once built; use :func:`build_grid` to create one.
    """

    def __init__(
        self,
        dims: Sequence[int],
        spacing: Sequence[float],
        mask: NDArray[np.bool_] | None = None,
    ) -> None:
        dims = tuple(int(n) for n in dims)
        spacing = tuple(float(h) for h in spacing)
        if len(dims) not in (2, 3):
            raise GridError(f"grid must have 2 or 3 axes, got {len(dims)}")
        if len(spacing) != len(dims):
            raise GridError(
                f"spacing has {len(spacing)} entries but dims has {len(dims)}"
            )
        if any(n < 1 for n in dims):
            raise GridError(f"every axis needs at least one cell, got dims={dims}")
        if any(not np.isfinite(h) or h <= 0 for h in spacing):
            raise InvalidSpacingError(f"spacing must be strictly positive, got {spacing}")

        if mask is None:
            mask = np.ones(dims, dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != dims:
                raise GridError(f"mask shape {mask.shape} does not match dims {dims}")
            mask = mask.copy()
        if not mask.any():
            raise EmptyGridError("mask leaves no active cell")
        _, n_components = ndimage.label(mask)
        if n_components != 1:
            raise DisconnectedGridError(
                f"active cells form {n_components} face-connected components"
            )

        self.dims = dims
        self.spacing = spacing
        self.ndim = len(dims)
        self.mask = _readonly(mask)
        self.volume = float(np.prod(spacing))
        self.face_area = tuple(self.volume / h for h in spacing)

        cell_ids = np.full(dims, -1, dtype=np.intp)
        cell_ids[mask] = np.arange(int(mask.sum()))
        self.cell_ids = _readonly(cell_ids)
        self.n_cells = int(mask.sum())
        self.cell_index = _readonly(np.argwhere(mask))
        self.cell_centers = _readonly(
            (self.cell_index + 0.5) * np.asarray(spacing)[None, :]
        )
        self.cell_volumes = _readonly(np.full(self.n_cells, self.volume))

        shapes, lefts, rights, axes, areas, indices = [], [], [], [], [], []
        for k in range(self.ndim):
            shape = tuple(n + 1 if j == k else n for j, n in enumerate(dims))
            pad = [(1, 1) if j == k else (0, 0) for j in range(self.ndim)]
            padded = np.pad(cell_ids, pad, constant_values=-1)
            left = np.take(padded, np.arange(dims[k] + 1), axis=k)
            right = np.take(padded, np.arange(1, dims[k] + 2), axis=k)
            shapes.append(shape)
            lefts.append(left.ravel())
            rights.append(right.ravel())
            size = int(np.prod(shape))
            axes.append(np.full(size, k, dtype=np.intp))
            areas.append(np.full(size, self.face_area[k]))
            indices.append(np.indices(shape).reshape(self.ndim, -1).T)

        self.face_shapes = tuple(shapes)
        sizes = [int(np.prod(s)) for s in shapes]
        self.face_offsets = tuple(int(o) for o in np.concatenate([[0], np.cumsum(sizes)]))
        self.n_faces = self.face_offsets[-1]
        self.face_axis = _readonly(np.concatenate(axes))
        self.face_left = _readonly(np.concatenate(lefts))
        self.face_right = _readonly(np.concatenate(rights))
        self.face_areas = _readonly(np.concatenate(areas))
        self.face_index = _readonly(np.concatenate(indices).astype(np.intp))

        n_adjacent = (self.face_left >= 0).astype(int) + (self.face_right >= 0)
        kind = np.where(n_adjacent == 2, INTERIOR, np.where(n_adjacent == 1, BOUNDARY, DEAD))
        self.face_kind = _readonly(kind.astype(np.int8))
        self.interior_faces = _readonly(np.flatnonzero(kind == INTERIOR))
        # volume share: half a cell from every adjacent active cell
        self.face_weights = _readonly(n_adjacent * (0.5 * self.volume))

        h = np.asarray(spacing)
        centers = self.face_index.astype(float) * h[None, :]
        offset = np.full((self.n_faces, self.ndim), 0.5) * h[None, :]
        offset[np.arange(self.n_faces), self.face_axis] = 0.0
        self.face_centers = _readonly(centers + offset)

        bface = np.flatnonzero(kind == BOUNDARY)
        owner_left = self.face_left[bface] >= 0
        self.boundary = BoundaryFaceSet(
            face=_readonly(bface),
            axis=_readonly(self.face_axis[bface].copy()),
            index=_readonly(self.face_index[bface].copy()),
            sign=_readonly(np.where(owner_left, 1, -1).astype(np.int8)),
            area=_readonly(self.face_areas[bface].copy()),
            owner=_readonly(np.where(owner_left, self.face_left[bface], self.face_right[bface])),
        )
        self.n_boundary = len(bface)
        self._cache: dict = {}

    # -- geometry helpers -------------------------------------------------

    @property
    def lengths(self) -> tuple[float, ...]:
        return tuple(n * h for n, h in zip(self.dims, self.spacing))

    @property
    def total_volume(self) -> float:
        return self.n_cells * self.volume

    def face_id(self, axis: int, index: Sequence[int]) -> int:
        """Flat id of the face of ``axis`` at lattice coordinates ``index``."""
        return self.face_offsets[axis] + int(np.ravel_multi_index(tuple(index), self.face_shapes[axis]))

    def face_location(self, fid: int) -> tuple[int, tuple[int, ...]]:
        return int(self.face_axis[fid]), tuple(int(i) for i in self.face_index[fid])

    def face_lattice(self, w: NDArray[np.float64], axis: int) -> NDArray[np.float64]:
        """View of the values of ``w`` on the face lattice of ``axis``."""
        lo, hi = self.face_offsets[axis], self.face_offsets[axis + 1]
        return w[lo:hi].reshape(self.face_shapes[axis])

    def cell_array(self, f: NDArray[np.float64], fill: float = 0.0) -> NDArray[np.float64]:
        """Scatter an active-cell field onto the full ``dims`` array."""
        out = np.full(self.dims, fill, dtype=float)
        out[self.mask] = f
        return out

    def neighbor(self, offset: Sequence[int]) -> NDArray[np.intp]:
        """Id of the active cell at ``cell_index + offset`` for every active cell (-1 if none)."""
        offset = np.asarray(offset, dtype=np.intp)
        target = self.cell_index + offset[None, :]
        inside = np.all((target >= 0) & (target < np.asarray(self.dims)), axis=1)
        out = np.full(self.n_cells, -1, dtype=np.intp)
        t = target[inside]
        out[inside] = self.cell_ids[tuple(t.T)]
        return out

    def __repr__(self) -> str:
        return (
            f"Grid(dims={self.dims}, spacing={self.spacing}, "
            f"active={self.n_cells}/{int(np.prod(self.dims))})"
        )


def build_grid(
    dims: Sequence[int],
    spacing: Sequence[float],
    mask: NDArray[np.bool_] | None = None,
) -> Grid:
    """Build and validate a grid.

    Raises:
        InvalidSpacingError: a spacing entry is not strictly positive.
        EmptyGridError: the mask deactivates every cell.
        DisconnectedGridError: active cells are not face-connected.
    """
    return Grid(dims, spacing, mask)


def boundary_faces(grid: Grid) -> BoundaryFaceSet:
    return grid.boundary


def measures(grid: Grid) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Cell volumes (per active cell) and face areas (per face, all lattices)."""
    return grid.cell_volumes, grid.face_areas
