"""Problem files, field CSVs and deterministic JSON reports.

A problem file is a JSON document::

    {
      "grid": {"dims": [nx, ny], "spacing": [hx, hy], "mask": [[1, 0], ...]},
      "beta": [...] | "beta.csv",
      "tau": [...] | {"sides": {"x-": -1.0, "x+": 1.0}},
      "objective": "l2" | {"type": "lp", "a": 3} | "dissipation-classical" | ...,
      "solver": {"tol": 1e-8, "max_iter": 50000, "seed": 0}
    }

``beta`` lists either every cell of the box (row-major, inactive entries
ignored) or only the active cells. ``tau`` follows the canonical boundary
face order of the grid; the ``sides`` shorthand assigns a constant to all
boundary faces with the given outward normal.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
from numpy.typing import NDArray

from .grid import Grid, GridError, build_grid
from .problem import BalanceProblem

__all__ = [
    "DEFAULT_SOLVER",
    "OBJECTIVES",
    "PROBLEM_SCHEMA",
    "FieldTable",
    "Objective",
    "ProblemFile",
    "ProblemFileError",
    "dumps",
    "export_fields",
    "format_float",
    "grid_from_spec",
    "parse_fields",
    "parse_grid",
    "parse_problem",
    "problem_document",
]

OBJECTIVES = ("l2", "lp", "dissipation-classical", "dissipation-dual")
DEFAULT_SOLVER = {"tol": 1e-8, "max_iter": 50_000, "seed": 0}
AXIS_NAMES = "xyz"

_number_array = {"type": "array", "items": {"type": "number"}}
_nested = {"type": "array", "items": {"anyOf": [{"type": ["number", "boolean"]}, {"$ref": "#/$defs/nested"}]}}

GRID_SCHEMA = {
    "type": "object",
    "required": ["dims", "spacing"],
    "additionalProperties": False,
    "properties": {
        "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 3},
        "spacing": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2, "maxItems": 3},
        "mask": {"anyOf": [{"$ref": "#/$defs/nested"}, {"type": "string"}]},
    },
}

PROBLEM_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["grid", "beta", "tau", "objective"],
    "additionalProperties": False,
    "$defs": {"nested": _nested},
    "properties": {
        "grid": GRID_SCHEMA,
        "beta": {"anyOf": [{"$ref": "#/$defs/nested"}, {"type": "string"}]},
        "tau": {
            "anyOf": [
                _number_array,
                {
                    "type": "object",
                    "required": ["sides"],
                    "additionalProperties": False,
                    "properties": {
                        "sides": {
                            "type": "object",
                            "propertyNames": {"pattern": "^[xyz][+-]$"},
                            "additionalProperties": {"type": "number"},
                        }
                    },
                },
            ]
        },
        "objective": {"type": ["string", "object"]},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
    },
}


class ProblemFileError(ValueError):
    """Invalid problem or field file; the CLI maps it to exit code 2."""


@dataclass(frozen=True)
class Objective:
    kind: str
    a: float | None = None

    def to_json(self) -> Any:
        if self.kind != "lp":
            return self.kind
        return {"type": "lp", "a": "inf" if math.isinf(self.a) else self.a}


@dataclass
class ProblemFile:
    grid: Grid
    problem: BalanceProblem
    objective: Objective
    solver: dict = field(default_factory=lambda: dict(DEFAULT_SOLVER))
    grid_spec: dict = field(default_factory=dict)


# -- parsing ------------------------------------------------------------------------------


def _schema_check(doc, schema, what: str) -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "(root)"
        raise ProblemFileError(f"{what} schema violation at '{where}': {err.message}")


def _resolve(path: str, base: Path | None) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base is None else base / p


def _load_numbers(path: str, base: Path | None, what: str) -> NDArray[np.float64]:
    p = _resolve(path, base)
    try:
        if p.suffix == ".json":
            return np.asarray(json.loads(p.read_text()), dtype=float).ravel()
        return np.loadtxt(p, delimiter=",", ndmin=1, dtype=float).ravel()
    except (OSError, ValueError) as exc:
        raise ProblemFileError(f"cannot read {what} from '{p}': {exc}") from exc


def grid_from_spec(spec: dict, base: Path | None = None) -> Grid:
    dims = spec["dims"]
    spacing = spec["spacing"]
    if len(dims) != len(spacing):
        raise ProblemFileError(f"grid: spacing has {len(spacing)} entries but dims has {len(dims)}")
    mask = spec.get("mask")
    if isinstance(mask, str):
        mask = _load_numbers(mask, base, "mask")
    if mask is not None:
        arr = np.asarray(mask, dtype=float)
        if arr.size != int(np.prod(dims)):
            raise ProblemFileError(f"grid: mask has {arr.size} entries, expected {int(np.prod(dims))}")
        mask = arr.reshape(dims) != 0
    try:
        return build_grid(dims, spacing, mask)
    except GridError as exc:
        raise ProblemFileError(f"grid: {exc}") from exc


def parse_grid(text: str, base: Path | None = None) -> tuple[Grid, dict]:
    """Grid from a JSON document that is either a grid spec or holds one under ``grid``."""
    doc = _json(text)
    spec = doc.get("grid", doc) if isinstance(doc, dict) else doc
    _schema_check(spec, {"$defs": {"nested": _nested}, **GRID_SCHEMA}, "grid")
    return grid_from_spec(spec, base), spec


def _json(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"not valid JSON: {exc}") from exc


def _objective(value) -> Objective:
    if isinstance(value, str):
        kind, a = value, None
    else:
        kind, a = value.get("type"), value.get("a")
        extra = set(value) - {"type", "a"}
        if extra:
            raise ProblemFileError(f"objective: unexpected keys {sorted(extra)}")
    if kind not in OBJECTIVES:
        raise ProblemFileError(f"unknown objective {kind!r}; expected one of {', '.join(OBJECTIVES)}")
    if kind != "lp":
        if a is not None:
            raise ProblemFileError(f"objective {kind}: takes no exponent")
        return Objective(kind)
    if a is None:
        raise ProblemFileError("objective lp: missing exponent 'a'")
    if a == "inf":
        a = math.inf
    elif isinstance(a, bool) or not isinstance(a, (int, float)):
        raise ProblemFileError(f"objective lp: exponent must be a number or 'inf', got {a!r}")
    if not a > 1:
        raise ProblemFileError(f"objective lp: unsupported exponent a = {a}; need 1 < a <= inf")
    return Objective("lp", float(a))


def _beta(value, grid: Grid, base: Path | None) -> NDArray[np.float64]:
    arr = _load_numbers(value, base, "beta") if isinstance(value, str) else np.asarray(value, dtype=float).ravel()
    full = int(np.prod(grid.dims))
    if arr.size == full:
        return arr.reshape(grid.dims)[grid.mask]
    if arr.size == grid.n_cells:
        return arr
    if full == grid.n_cells:
        raise ProblemFileError(f"beta has {arr.size} values, expected {full}")
    raise ProblemFileError(
        f"beta has {arr.size} values, expected {full} (full grid) or {grid.n_cells} (active cells)"
    )


def _tau(value, grid: Grid) -> NDArray[np.float64]:
    if isinstance(value, dict):
        b = grid.boundary
        tau = np.zeros(grid.n_boundary)
        for side, v in value["sides"].items():
            axis = AXIS_NAMES.index(side[0])
            if axis >= grid.ndim:
                raise ProblemFileError(f"tau: side {side!r} does not exist on a {grid.ndim}D grid")
            sign = 1 if side[1] == "+" else -1
            tau[(b.axis == axis) & (b.sign == sign)] = v
        return tau
    arr = np.asarray(value, dtype=float)
    if arr.size != grid.n_boundary:
        raise ProblemFileError(f"tau has {arr.size} values, expected {grid.n_boundary}")
    return arr


def parse_problem(text: str, base: Path | None = None) -> ProblemFile:
    """Validated problem file with all defaults filled in.

    Relative paths inside the document resolve against ``base``.

    Raises:
        ProblemFileError: schema violation, length mismatch, unknown
            objective or unsupported exponent.
    """
    doc = _json(text)
    _schema_check(doc, PROBLEM_SCHEMA, "problem")
    grid = grid_from_spec(doc["grid"], base)
    objective = _objective(doc["objective"])
    beta = _beta(doc["beta"], grid, base)
    tau = _tau(doc["tau"], grid)
    if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(tau))):
        raise ProblemFileError("beta and tau must be finite")
    solver = dict(DEFAULT_SOLVER)
    solver.update(doc.get("solver", {}))
    solver["tol"] = float(solver["tol"])
    return ProblemFile(grid, BalanceProblem(grid, beta, tau), objective, solver, dict(doc["grid"]))


def problem_document(pf: ProblemFile) -> dict:
    """Expanded document for ``pf``: explicit arrays, explicit solver block."""
    g = pf.grid
    grid = {"dims": list(g.dims), "spacing": list(g.spacing)}
    if not g.mask.all():
        grid["mask"] = g.mask.astype(int).tolist()
    return {
        "grid": grid,
        "beta": pf.problem.beta.tolist(),
        "tau": pf.problem.tau.tolist(),
        "objective": pf.objective.to_json(),
        "solver": {k: pf.solver[k] for k in ("tol", "max_iter", "seed")},
    }


# -- deterministic output -----------------------------------------------------------------


def format_float(x: float) -> str:
    """17 significant digits; negative zero prints as zero."""
    return "%.16e" % (float(x) + 0.0)


def dumps(obj: Any, indent: int = 2, _level: int = 0) -> str:
    """JSON text with keys in insertion order and floats at 17 significant digits.

    Non-finite floats become ``null``.
    """
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj) if math.isfinite(obj) else "null"
    return json.dumps(str(obj))


# -- field CSV -----------------------------------------------------------------------------


@dataclass
class FieldTable:
    cell_values: NDArray[np.float64]
    face_values: NDArray[np.float64]


def _header(ndim: int) -> list[str]:
    return ["kind", "axis"] + list("ijk"[:ndim]) + list(AXIS_NAMES[:ndim]) + ["value"]


def export_fields(
    grid: Grid,
    cell_values: NDArray[np.float64] | None = None,
    face_values: NDArray[np.float64] | None = None,
) -> str:
    """CSV text with one row per active cell, then one per live face.

    Columns: kind, axis (faces only), integer indices, center coordinates,
    value. Cells come in canonical (C) order, faces by face id; dead faces
    are skipped.
    """
    cells = np.zeros(grid.n_cells) if cell_values is None else np.asarray(cell_values, dtype=float)
    faces = np.zeros(grid.n_faces) if face_values is None else np.asarray(face_values, dtype=float)
    if cells.shape != (grid.n_cells,) or faces.shape != (grid.n_faces,):
        raise ValueError("field sizes do not match the grid")
    out = io.StringIO()
    out.write(",".join(_header(grid.ndim)) + "\n")
    for c in range(grid.n_cells):
        idx = ",".join(str(int(i)) for i in grid.cell_index[c])
        xyz = ",".join(format_float(x) for x in grid.cell_centers[c])
        out.write(f"cell,,{idx},{xyz},{format_float(cells[c])}\n")
    for f in np.flatnonzero(grid.face_weights > 0):
        idx = ",".join(str(int(i)) for i in grid.face_index[f])
        xyz = ",".join(format_float(x) for x in grid.face_centers[f])
        out.write(f"face,{int(grid.face_axis[f])},{idx},{xyz},{format_float(faces[f])}\n")
    return out.getvalue()


def parse_fields(text: str, grid: Grid) -> FieldTable:
    """Inverse of :func:`export_fields`; rows must match the grid's entities.

    Raises:
        ProblemFileError: malformed header, unknown entity or bad number.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != _header(grid.ndim):
        raise ProblemFileError("field CSV: header does not match the grid dimension")
    cells = np.zeros(grid.n_cells)
    faces = np.zeros(grid.n_faces)
    seen_c = np.zeros(grid.n_cells, dtype=bool)
    seen_f = np.zeros(grid.n_faces, dtype=bool)
    nd = grid.ndim
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3 + 2 * nd:
            raise ProblemFileError(f"field CSV line {lineno}: expected {3 + 2 * nd} columns")
        try:
            idx = tuple(int(v) for v in row[2 : 2 + nd])
            value = float(row[-1])
            if row[0] == "cell":
                if not all(0 <= i < n for i, n in zip(idx, grid.dims)):
                    raise IndexError
                c = int(grid.cell_ids[idx])
                if c < 0:
                    raise IndexError
                cells[c] = value
                seen_c[c] = True
            elif row[0] == "face":
                f = grid.face_id(int(row[1]), idx)
                if grid.face_weights[f] == 0:
                    raise IndexError
                faces[f] = value
                seen_f[f] = True
            else:
                raise ProblemFileError(f"field CSV line {lineno}: unknown kind {row[0]!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, ProblemFileError):
                raise
            raise ProblemFileError(f"field CSV line {lineno}: invalid entry {row}") from exc
    if not seen_f[grid.face_weights > 0].all():
        raise ProblemFileError("field CSV: some live faces are missing")
    return FieldTable(cells, faces)
