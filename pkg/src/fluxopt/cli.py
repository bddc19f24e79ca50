"""Command-line interface.

Exit codes: 0 success, 2 invalid input, 3 incompatible data, 4 no
convergence. ``FLUXOPT_SEED`` overrides every seed.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import operators as ops
from .capacity import NORM_CONVENTION, CapacityConvergenceError, admissible, capacity_l2
from .grid import Grid, GridError
from .problem import (
    IncompatibleDataError,
    assemble_load,
    check_compatible,
    compatibility_residual,
    manufacture,
    relative_balance_residual,
)
from .serialization import (
    DEFAULT_SOLVER,
    FieldTable,
    Objective,
    ProblemFile,
    ProblemFileError,
    dumps,
    export_fields,
    grid_from_spec,
    parse_fields,
    parse_grid,
    parse_problem,
    problem_document,
)
from .solver_dissipation import (
    ClassicalDissipationSolution,
    biharmonic_matrix,
    dissipation,
    el_residual,
    solve_dissipation_classical,
    solve_dissipation_dual,
    w22_dual_objective,
)
from .solver_l2 import SolveReport, solve_l2
from .solver_lq import dual_exponent, lq_dual_objective, solve_lq

__all__ = ["EXIT_INCOMPATIBLE", "EXIT_INVALID", "EXIT_NOT_CONVERGED", "EXIT_OK", "main", "run", "solve_problem"]

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INCOMPATIBLE = 3
EXIT_NOT_CONVERGED = 4

CASES = ("trig", "polynomial", "random-smooth")

FACE_WEIGHTS = "face weight = (number of adjacent active cells) * cell volume / 2"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed(default: int) -> int:
    env = os.environ.get("FLUXOPT_SEED")
    if env is None or env == "":
        return default
    try:
        seed = int(env)
    except ValueError:
        raise UsageError(f"FLUXOPT_SEED must be a non-negative integer, got {env!r}") from None
    if seed < 0:
        raise UsageError(f"FLUXOPT_SEED must be a non-negative integer, got {env!r}")
    return seed


def _conventions(objective: Objective) -> dict:
    out = {"face_weights": FACE_WEIGHTS, "cell_weights": "cell volume"}
    if objective.kind == "l2":
        out["omega"] = "face-weighted 2-norm over interior faces; flux_norm adds boundary faces"
    elif objective.kind == "lp":
        out["omega"] = "face-weighted a-norm over interior faces (max for a = inf)"
    elif objective.kind == "dissipation-classical":
        out["omega"] = "sum over difference rows of weight * (difference of face values)^2"
    else:
        out["omega"] = "volume-weighted Frobenius norm of the cell Hessian, load projected off affine functions"
    out["product_norm"] = NORM_CONVENTION
    return out


# -- solving ----------------------------------------------------------------------------------


def solve_problem(pf: ProblemFile) -> tuple[dict, FieldTable]:
    """Run the objective's solver; returns the report and the exported fields.

    Cells carry the potential (``phi``, the dual potential or the
    multiplier); faces carry the flux (for the dual dissipation branch, the
    representer ``grad phi``).
    """
    p, obj, s = pf.problem, pf.objective, pf.solver
    tol, max_iter, seed = s["tol"], s["max_iter"], s["seed"]
    extra: dict = {}
    if obj.kind == "l2":
        sol = solve_l2(p, tol=tol, max_iter=max_iter)
        rep, cells, faces = sol.report, sol.phi, sol.w_opt
        extra["flux_norm"] = sol.flux_norm
    elif obj.kind == "lp":
        sol = solve_lq(p, obj.a, tol_gap=tol, max_iter=max_iter, seed=seed)
        rep, cells, faces = sol.report, sol.psi_dual, sol.w_opt
        extra["relative_gap"] = sol.relative_gap
    elif obj.kind == "dissipation-classical":
        sol = solve_dissipation_classical(p, tol=tol, max_iter=max_iter)
        rep, cells, faces = sol.report, sol.lam, sol.w
        el = el_residual(p.grid, sol)
        extra["el_interior_residual"] = el.interior_residual
        extra["el_boundary_tangential_traction"] = el.boundary_tangential_traction
    else:
        sol = solve_dissipation_dual(p, tol=tol, max_iter=max_iter, seed=seed)
        rep, cells, faces = sol.report, sol.phi, sol.w_bar
        extra["affine_moments"] = [float(m) for m in sol.affine_moments]
    report = _report(pf, rep)
    report.update(extra)
    report["norm_conventions"] = _conventions(obj)
    return report, FieldTable(np.asarray(cells, dtype=float), np.asarray(faces, dtype=float))


def _report(pf: ProblemFile, rep: SolveReport) -> dict:
    out = {"objective": pf.objective.to_json()}
    if pf.objective.kind == "lp":
        a = pf.objective.a
        out["a_dual"] = dual_exponent(a)
    out.update(
        omega=rep.objective,
        dual_value=rep.dual_value,
        gap=rep.gap,
        compatibility_residual=compatibility_residual(pf.problem),
        balance_residual=rep.constraint_residual,
        iterations=rep.iterations,
        converged=rep.converged,
    )
    return out


def _verify(pf: ProblemFile, table: FieldTable) -> dict:
    """Re-evaluate feasibility and duality of a field table against ``pf``."""
    p, g, obj = pf.problem, pf.grid, pf.objective
    tol = pf.solver["tol"]
    w, cells = table.face_values, table.cell_values
    out: dict = {"objective": obj.to_json()}
    b = g.boundary
    bscale = max(float(np.max(np.abs(p.tau), initial=0.0)), 1.0)
    boundary_defect = float(np.max(np.abs(w[b.face] - b.sign * p.tau), initial=0.0)) / bscale
    if obj.kind == "dissipation-dual":
        # the representer solves H^T W H phi = P F; w holds grad phi
        mat = biharmonic_matrix(g)
        load = ops.affine_project(g, assemble_load(p))
        r = ops.affine_project(g, load - mat @ cells)
        lnorm = np.linalg.norm(load)
        residual = float(np.linalg.norm(r) / lnorm) if lnorm > 0 else float(np.linalg.norm(r))
        grad_defect = float(np.max(np.abs(w - ops.gradient(g, cells)), initial=0.0))
        out["representer_residual"] = residual
        out["gradient_defect"] = grad_defect
        feasible = residual <= tol and grad_defect <= tol * max(1.0, float(np.max(np.abs(w), initial=0.0)))
        omega = ops.hessian_norm(g, cells)
        out["omega"] = omega
        out["dual_value"] = _safe(lambda: w22_dual_objective(p, cells))
    else:
        residual = relative_balance_residual(p, w)
        out["balance_residual"] = residual
        out["boundary_defect"] = boundary_defect
        feasible = residual <= tol and boundary_defect <= tol
        interior = g.interior_faces
        om = g.face_weights[interior]
        if obj.kind in ("l2", "lp"):
            a = 2.0 if obj.kind == "l2" else obj.a
            wi = w[interior]
            if math.isinf(a):
                omega = float(np.max(np.abs(wi), initial=0.0))
            else:
                omega = float(np.dot(om, np.abs(wi) ** a) ** (1.0 / a))
            out["omega"] = omega
            out["dual_value"] = _safe(lambda: lq_dual_objective(p, cells, dual_exponent(a)))
        else:
            sol = ClassicalDissipationSolution(w, cells, dissipation(g, w), None, 0.0)
            el = el_residual(g, sol)
            out["omega"] = sol.dissipation
            out["el_interior_residual"] = el.interior_residual
            out["el_boundary_tangential_traction"] = el.boundary_tangential_traction
    out["feasible"] = bool(feasible)
    out["tolerance"] = tol
    return out


def _safe(fn):
    try:
        return fn()
    except ValueError:
        return None


# -- manufactured problems ------------------------------------------------------------------


def manufactured_potential(grid: Grid, case: str, seed: int = 0) -> np.ndarray:
    """Smooth reference potential of the named family at the active cells."""
    x = grid.cell_centers / np.asarray(grid.lengths)[None, :]
    if case == "trig":
        return np.prod(np.cos(np.pi * x), axis=1)
    if case == "polynomial":
        return np.sum(x**3 - 1.5 * x**2, axis=1) + np.prod(x, axis=1)
    if case == "random-smooth":
        rng = np.random.default_rng(seed)
        psi = np.zeros(grid.n_cells)
        for freq in np.ndindex(*(3,) * grid.ndim):
            psi += rng.standard_normal() * np.prod(np.cos(np.pi * np.asarray(freq) * x), axis=1)
        return psi
    raise UsageError(f"unknown case {case!r}; expected one of {', '.join(CASES)}")


# -- commands -------------------------------------------------------------------------------


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ProblemFileError(f"cannot read '{path}': {exc}") from exc


def _load_problem(path: str) -> ProblemFile:
    pf = parse_problem(_read(path), base=Path(path).parent)
    pf.solver["seed"] = _seed(pf.solver["seed"])
    return pf


def _cmd_solve(args) -> int:
    pf = _load_problem(args.problem)
    check_compatible(pf.problem)
    t0 = time.perf_counter()
    report, table = solve_problem(pf)
    if args.timing:
        report["wall_time"] = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "flux.csv").write_text(export_fields(pf.grid, table.cell_values, table.face_values))
    (out / "report.json").write_text(dumps(report) + "\n")
    print(dumps(report))
    return EXIT_OK if report["converged"] else EXIT_NOT_CONVERGED


def _cmd_verify(args) -> int:
    pf = _load_problem(args.problem)
    table = parse_fields(_read(args.flux), pf.grid)
    out = _verify(pf, table)
    print(dumps(out))
    return EXIT_OK


def _cmd_capacity(args) -> int:
    grid, _ = parse_grid(_read(args.grid), base=Path(args.grid).parent)
    if args.M is not None and not args.M > 0:
        raise UsageError("--M must be positive")
    if grid.n_cells < 2:
        raise UsageError("capacity needs at least two active cells")
    rep = capacity_l2(grid, tol=args.tol, max_iter=args.max_iter, seed=_seed(args.seed), oracle=args.oracle)
    out = {
        "K": rep.K,
        "C": rep.C,
        "iterations": rep.iterations,
        "oracle_gap": rep.oracle_gap,
        "converged": rep.converged,
        "norm_convention": rep.norm_convention,
    }
    if args.M is not None:
        out["M"] = args.M
        out["max_admissible_data_norm"] = rep.C * args.M
        out["certified_bound_at_max"] = admissible(rep, rep.C * args.M, args.M).certified_bound
    text = dumps(out)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_manufacture(args) -> int:
    spec = {"dims": args.dims, "spacing": args.spacing or [1.0 / n for n in args.dims]}
    if args.mask:
        spec["mask"] = args.mask
    grid = grid_from_spec(spec, base=Path.cwd())
    seed = _seed(args.seed)
    psi = manufactured_potential(grid, args.case, seed)
    problem, w_ref = manufacture(grid, psi)
    objective = Objective(args.objective) if args.objective != "lp" else None
    if objective is None:
        a = math.inf if args.a == "inf" else float(args.a)
        if not a > 1:
            raise UsageError(f"unsupported exponent a = {args.a}; need 1 < a <= inf")
        objective = Objective("lp", a)
    solver = dict(DEFAULT_SOLVER)
    solver["seed"] = seed
    pf = ProblemFile(grid, problem, objective, solver)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps(problem_document(pf)) + "\n")
    ref = out.with_name(out.stem + ".flux.csv")
    ref.write_text(export_fields(grid, ops.zero_mean_project(grid, psi), w_ref))
    print(dumps({"problem": str(out), "reference_flux": str(ref), "case": args.case}))
    return EXIT_OK


def _cmd_gauss_check(args) -> int:
    spec = {"dims": args.dims, "spacing": args.spacing or [1.0] * len(args.dims)}
    if args.mask:
        spec["mask"] = args.mask
    grid = grid_from_spec(spec, base=Path.cwd())
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    rng = np.random.default_rng(_seed(args.seed))
    worst = 0.0
    for _ in range(args.trials):
        psi = rng.standard_normal(grid.n_cells)
        w = rng.standard_normal(grid.n_faces)
        tau = rng.standard_normal(grid.n_boundary)
        worst = max(worst, ops.pairing_residual(grid, psi, w, tau))
    print(dumps({"trials": args.trials, "max_defect": worst}))
    return EXIT_OK


def _dims(text: str) -> list[int]:
    try:
        dims = [int(v) for v in text.replace("x", ",").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid dims {text!r}") from None
    return dims


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid spacing {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fluxopt", description="Optimal balance-constrained flux fields on structured grids.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve a problem file")
    p.add_argument("problem")
    p.add_argument("--out", required=True, help="output directory for flux.csv and report.json")
    p.add_argument("--timing", action="store_true", help="add wall_time to the report (breaks byte-determinism)")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("verify", help="check a flux CSV against a problem file")
    p.add_argument("problem")
    p.add_argument("flux")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("capacity", help="capacity of a grid")
    p.add_argument("grid", help="grid JSON (or a problem file)")
    p.add_argument("--M", type=float, default=None, help="flux bound for the admissibility threshold")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle", action="store_true", help="also run the dense eigensolve")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_capacity)

    p = sub.add_parser("manufacture", help="write a manufactured problem and its reference flux")
    p.add_argument("--dims", type=_dims, required=True)
    p.add_argument("--spacing", type=_floats, default=None)
    p.add_argument("--mask", default=None)
    p.add_argument("--case", choices=CASES, default="trig")
    p.add_argument("--objective", choices=("l2", "lp", "dissipation-classical", "dissipation-dual"), default="l2")
    p.add_argument("--a", default="2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_manufacture)

    p = sub.add_parser("gauss-check", help="random summation-by-parts battery")
    p.add_argument("--dims", type=_dims, required=True)
    p.add_argument("--spacing", type=_floats, default=None)
    p.add_argument("--mask", default=None)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gauss_check)
    return parser


def run(command: str, args: Sequence[str] = ()) -> int:
    """Run one subcommand; returns the exit code."""
    return main([command, *args])


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = build_parser().parse_args(argv)
        return ns.func(ns)
    except IncompatibleDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except CapacityConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (UsageError, ProblemFileError, GridError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:
        # --help and friends
        return EXIT_OK if not exc.code else EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
