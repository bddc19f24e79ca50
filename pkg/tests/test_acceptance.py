"""Acceptance battery: one test per criterion, each printing a PASS/FAIL line.

The lines are repeated in the terminal summary of every pytest run.
"""

import contextlib
import io
import json
import subprocess
import sys
import time

import numpy as np
import pytest
import scipy.linalg as sla

from fluxopt import cli
from fluxopt import operators as ops
from fluxopt.capacity import admissible, capacity_dense, capacity_l2, input_norm
from fluxopt.grid import build_grid
from fluxopt.problem import BalanceProblem, assemble_load, manufacture
from fluxopt.solver_dissipation import (
    biharmonic_matrix,
    dissipation,
    el_residual,
    face_difference_matrix,
    solve_dissipation_classical,
    solve_dissipation_dual,
    w22_dual_objective,
)
from fluxopt.solver_l2 import solve_l2
from fluxopt.solver_lq import dual_exponent, lq_dual_objective, solve_lq

from conftest import ACCEPTANCE_LINES, l_shape, random_compatible, smooth_potential


def verdict(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def l_shape_3d(n, h):
    mask = np.ones((n, n, n), dtype=bool)
    mask[n // 2 :, n // 2 :, :] = False
    return build_grid([n, n, n], [h, h, h], mask)


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


# -- dense oracles -------------------------------------------------------------------------


def dense_l2(problem):
    """Minimum weighted norm over interior faces subject to K w = F by a dense KKT solve."""
    g = problem.grid
    interior = g.interior_faces
    om = g.face_weights[interior]
    k = ops.gradient_matrix(g)[interior].toarray().T * om
    load = assemble_load(problem)
    # the constraint rows sum to zero; drop one
    k, load = k[1:], load[1:]
    n, m = len(interior), k.shape[0]
    kkt = np.block([[np.diag(om), k.T], [k, np.zeros((m, m))]])
    w = sla.solve(kkt, np.concatenate([np.zeros(n), load]))[:n]
    return np.sqrt(np.dot(om, w * w)), w


def dense_classical(problem):
    """Null-space minimizer of the dissipation over fluxes satisfying K w = F."""
    g = problem.grid
    d, wts = face_difference_matrix(g)
    d = d.toarray()
    interior = g.interior_faces
    om = g.face_weights[interior]
    k = ops.gradient_matrix(g)[interior].toarray().T * om
    wb = np.zeros(g.n_faces)
    wb[g.boundary.face] = g.boundary.sign * problem.tau
    x0 = np.linalg.lstsq(k, assemble_load(problem), rcond=None)[0]
    z = sla.null_space(k)
    dint = d[:, interior]
    r0 = dint @ x0 + d @ wb
    y = sla.solve(z.T @ (dint.T * wts) @ dint @ z, -(z.T @ (dint.T @ (wts * r0))))
    w = wb.copy()
    w[interior] = x0 + z @ y
    return dissipation(g, w)


# -- criteria --------------------------------------------------------------------------------


def test_criterion_1_gauss_identity():
    rng = np.random.default_rng(1)
    grids = [
        build_grid([32, 32], [1 / 32, 1 / 32]),
        build_grid([8, 8, 8], [0.125, 0.2, 0.5]),
        build_grid([17, 5], [0.3, 2.0]),
        build_grid([1, 9], [1.0, 1.0]),
        l_shape(32),
        l_shape(10, 0.7),
        l_shape_3d(8, 0.125),
    ]
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(1000):
        g = grids[trial % len(grids)]
        psi = rng.standard_normal(g.n_cells)
        w = rng.standard_normal(g.n_faces)
        tau = rng.standard_normal(g.n_boundary)
        worst = max(worst, ops.pairing_residual(g, psi, w, tau))
    elapsed = time.perf_counter() - t0
    verdict(1, worst <= 1e-12 and elapsed < 10, f"max relative defect {worst:.1e}, {elapsed:.2f} s")


def test_criterion_2_l2():
    rng = np.random.default_rng(2)
    g = build_grid([16, 16], [1 / 16, 1 / 16])
    rec, dual = 0.0, 0.0
    for _ in range(20):
        p, w_ref = manufacture(g, smooth_potential(g, rng, modes=4))
        sol = solve_l2(p)
        rec = max(rec, np.linalg.norm(sol.w_opt - w_ref) / np.linalg.norm(w_ref))
        phi_dual = float(np.dot(assemble_load(p), sol.phi)) / ops.face_norm(g, ops.gradient(g, sol.phi))
        dual = max(dual, rel(sol.omega, phi_dual))
    oracle = 0.0
    for grid in (build_grid([4, 4], [0.25, 0.25]), l_shape(4), build_grid([4, 4], [1.0, 0.3])):
        p = random_compatible(grid, rng)
        sol = solve_l2(p)
        om_dense, w_dense = dense_l2(p)
        oracle = max(oracle, rel(sol.omega, om_dense))
        oracle = max(oracle, np.linalg.norm(sol.w_opt[grid.interior_faces] - w_dense) / np.linalg.norm(w_dense))
    ok = rec <= 1e-7 and dual <= 1e-9 and oracle <= 1e-10
    verdict(2, ok, f"recovery {rec:.1e}, dual equality {dual:.1e}, dense KKT {oracle:.1e}")


def test_criterion_3_lq():
    rng = np.random.default_rng(3)
    g = build_grid([32, 32], [1 / 32, 1 / 32])
    p, _ = manufacture(g, smooth_potential(g, rng, modes=4))
    t0 = time.perf_counter()
    gaps, iters, violations = {}, {}, 0
    sols = {}
    for a in (1.5, 2.0, 3.0, np.inf):
        sol = solve_lq(p, a, tol_gap=1e-6, max_iter=50_000)
        sols[a] = sol
        gaps[a] = sol.relative_gap if sol.report.converged else np.inf
        iters[a] = sol.report.iterations
        ad = dual_exponent(a)
        for _ in range(250):
            psi = rng.standard_normal(g.n_cells) if rng.random() < 0.5 else smooth_potential(g, rng)
            if lq_dual_objective(p, psi, ad) > sol.omega_primal:
                violations += 1
    match = rel(sols[2.0].omega_primal, solve_l2(p).omega)
    elapsed = time.perf_counter() - t0
    ok = max(gaps.values()) <= 1e-6 and match <= 1e-6 and violations == 0 and elapsed < 120
    detail = ", ".join(f"a={a}: gap {gaps[a]:.1e} in {iters[a]} it" for a in gaps)
    verdict(3, ok, f"{detail}; a=2 vs l2 {match:.1e}; {violations} violations in 1000; {elapsed:.1f} s")


def test_criterion_4_classical_dissipation():
    rng = np.random.default_rng(4)
    tol = 1e-9
    g = build_grid([16, 16], [1 / 16, 1 / 16])
    worst = 0.0
    for _ in range(20):
        sol = solve_dissipation_classical(random_compatible(g, rng), tol=tol)
        el = el_residual(g, sol)
        worst = max(worst, el.interior_residual, el.boundary_tangential_traction)
    oracle = 0.0
    for grid in (build_grid([4, 4], [0.25, 0.25]), l_shape(4), build_grid([4, 4], [1.0, 0.5])):
        p = random_compatible(grid, rng)
        oracle = max(oracle, rel(solve_dissipation_classical(p, tol=tol).dissipation, dense_classical(p)))
    ok = worst <= 10 * tol and oracle <= 1e-9
    verdict(4, ok, f"max EL residual {worst:.1e} (limit {10 * tol:.0e}), dense agreement {oracle:.1e}")


def test_criterion_5_dual_dissipation():
    rng = np.random.default_rng(5)
    g = build_grid([16, 16], [1 / 16, 1 / 16])
    p = random_compatible(g, rng)
    s1 = solve_dissipation_dual(p, seed=1)
    s2 = solve_dissipation_dual(p, seed=2)
    unique = np.linalg.norm(s1.phi - s2.phi) / np.linalg.norm(s1.phi)
    sup = rel(w22_dual_objective(p, s1.phi), s1.omega)
    exceed = 0
    for _ in range(1000):
        psi = rng.standard_normal(g.n_cells) if rng.random() < 0.5 else smooth_potential(g, rng)
        if w22_dual_objective(p, psi) > s1.omega * (1 + 1e-9):
            exceed += 1
    tol = 1e-8
    inverse = 0.0
    for grid in (build_grid([12, 10], [1 / 12, 0.1]), l_shape(12)):
        psi_star = ops.affine_project(grid, rng.standard_normal(grid.n_cells))
        load = biharmonic_matrix(grid) @ psi_star
        q = BalanceProblem(grid, load / grid.volume, np.zeros(grid.n_boundary))
        sol = solve_dissipation_dual(q, tol=tol)
        inverse = max(inverse, np.linalg.norm(sol.phi - psi_star) / np.linalg.norm(psi_star))
    ok = unique <= 1e-8 and sup <= 1e-9 and exceed == 0 and inverse <= 10 * tol
    verdict(5, ok, f"uniqueness {unique:.1e}, sup equality {sup:.1e}, {exceed} exceedances, inverse {inverse:.1e}")


def test_criterion_6_capacity():
    grids = [
        build_grid([2, 2], [1, 1]),
        build_grid([8, 8], [1 / 8, 1 / 8]),
        build_grid([8, 5], [0.3, 1.2]),
        l_shape(8),
        build_grid([4, 4, 4], [0.25, 0.25, 0.25]),
        l_shape_3d(4, 0.5),
    ]
    agree = max(rel(capacity_l2(g).K, capacity_dense(g)) for g in grids)
    rng = np.random.default_rng(6)
    g = l_shape(8)
    rep = capacity_l2(g)
    m = 1.7
    fails = 0
    chain = 0.0
    for _ in range(100):
        p = random_compatible(g, rng, boundary=rng.random() < 0.7)
        p = p.scaled(rep.C * m / input_norm(p))
        c_norm = input_norm(p)
        sol = solve_l2(p)
        decision = admissible(rep, c_norm, m)
        # omega = sup F(psi)/|grad psi| <= K |c| <= K C M = M
        terms = [sol.omega, sol.report.dual_value, decision.certified_bound, rep.K * rep.C * m, m]
        ok = (
            decision.admissible
            and rel(terms[0], terms[1]) <= 1e-9
            and terms[1] <= terms[2] * (1 + 1e-9)
            and terms[2] <= terms[3] * (1 + 1e-12)
            and rel(terms[3], terms[4]) <= 1e-12
            and sol.omega <= m * (1 + 1e-8)
        )
        chain = max(chain, sol.omega / m)
        fails += not ok
    verdict(6, agree <= 1e-8 and fails == 0, f"K vs dense {agree:.1e}, {fails} chain failures, max omega/M {chain:.4f}")


def test_criterion_7_homogeneity():
    rng = np.random.default_rng(7)
    g = build_grid([12, 12], [1 / 12, 1 / 12])
    p = random_compatible(g, rng)
    base_l2 = solve_l2(p).omega
    base_dual = solve_dissipation_dual(p).omega
    base_lq = {a: solve_lq(p, a).omega_primal for a in (1.5, 3.0, np.inf)}
    worst_exact, worst_lq = 0.0, 0.0
    for lam in (0.5, 2.0, 10.0):
        q = p.scaled(lam)
        worst_exact = max(worst_exact, rel(solve_l2(q).omega, lam * base_l2))
        worst_exact = max(worst_exact, rel(solve_dissipation_dual(q).omega, lam * base_dual))
        for a, base in base_lq.items():
            worst_lq = max(worst_lq, rel(solve_lq(q, a).omega_primal, lam * base))
    ok = worst_exact <= 1e-9 and worst_lq <= 1e-6
    verdict(7, ok, f"l2 and dissipation-dual {worst_exact:.1e}, lq {worst_lq:.1e}")


OBJECTIVES = ["l2", {"type": "lp", "a": 1.5}, {"type": "lp", "a": 3}, {"type": "lp", "a": "inf"},
              "dissipation-classical", "dissipation-dual"]


def main(*args):
    with contextlib.redirect_stdout(io.StringIO()), contextlib.redirect_stderr(io.StringIO()):
        return cli.main([str(a) for a in args])


def run_cli(*args, env=None):
    proc = subprocess.run([sys.executable, "-m", "fluxopt.cli", *map(str, args)], capture_output=True, text=True, env=env)
    return proc.returncode, proc.stdout


def test_criterion_8_cli(tmp_path):
    problems = []
    assert main("manufacture", "--dims", "10,8", "--case", "trig", "--out", tmp_path / "base.json") == 0
    base = json.loads((tmp_path / "base.json").read_text())
    for i, obj in enumerate(OBJECTIVES):
        path = tmp_path / f"p{i}.json"
        path.write_text(json.dumps(dict(base, objective=obj)))
        problems.append(path)
    problems_l = tmp_path / "lshape.json"
    (tmp_path / "mask.csv").write_text("\n".join(",".join("1" if i < 3 or j < 3 else "0" for j in range(6)) for i in range(6)))
    assert main("manufacture", "--dims", "6,6", "--mask", tmp_path / "mask.csv", "--case", "polynomial",
                "--objective", "dissipation-classical", "--out", problems_l) == 0
    problems.append(problems_l)

    identical, feasible = True, True
    for path in problems:
        outs = []
        for k in range(2):
            out = tmp_path / f"{path.stem}_out{k}"
            code, _ = run_cli("solve", path, "--out", out) if k == 0 else (main("solve", path, "--out", out), "")
            assert code == 0, path
            outs.append(((out / "flux.csv").read_bytes(), (out / "report.json").read_bytes()))
        identical &= outs[0] == outs[1]
        code, text = run_cli("verify", path, tmp_path / f"{path.stem}_out0" / "flux.csv")
        feasible &= code == 0 and json.loads(text)["feasible"] is True

    doc = json.loads(problems[0].read_text())
    battery = {
        0: [["solve", problems[0], "--out", tmp_path / "o"], ["capacity", problems[0], "--M", "1"],
            ["gauss-check", "--dims", "4,3,2", "--trials", "5"], ["--help"]],
        2: [["solve", tmp_path / "missing.json", "--out", tmp_path / "o"], ["bogus"], [],
            ["capacity", problems[0], "--M", "0"], ["manufacture", "--dims", "4,4", "--case", "nope", "--out", tmp_path / "x.json"]],
        3: [], 4: [],
    }
    bad = dict(doc, tau={"sides": {"x-": 1.0}})
    (tmp_path / "incompatible.json").write_text(json.dumps(bad))
    battery[3].append(["solve", tmp_path / "incompatible.json", "--out", tmp_path / "o"])
    (tmp_path / "short.json").write_text(json.dumps(dict(doc, tau=[0.0, 1.0])))
    battery[2].append(["solve", tmp_path / "short.json", "--out", tmp_path / "o"])
    (tmp_path / "budget.json").write_text(json.dumps(dict(doc, objective={"type": "lp", "a": "inf"}, solver={"max_iter": 10})))
    battery[4].append(["solve", tmp_path / "budget.json", "--out", tmp_path / "o"])
    battery[4].append(["capacity", problems[0], "--max-iter", "1", "--tol", "1e-15"])
    codes_ok = True
    for expected, cases in battery.items():
        for args in cases:
            got = main(*args)
            if got != expected:
                codes_ok = False
                print(f"  exit {got} (expected {expected}) for {' '.join(map(str, args))}")
    ok = identical and feasible and codes_ok
    verdict(8, ok, f"byte-identical {identical}, verify feasible {feasible}, exit codes {codes_ok}")
