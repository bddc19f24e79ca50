"""Randomized invariants over grids, operators, problems and solvers."""

import numpy as np
import scipy.ndimage as ndi
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from fluxopt import operators as ops
from fluxopt.grid import build_grid
from fluxopt.problem import (
    BalanceProblem,
    assemble_load,
    compatibility_residual,
    weak_balance_residual,
)
from fluxopt.solver_lq import dual_exponent, lq_dual_objective, solve_lq

SETTINGS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def grids(draw, max_side=6):
    ndim = draw(st.sampled_from([2, 2, 3]))
    dims = [draw(st.integers(1, max_side if ndim == 2 else 4)) for _ in range(ndim)]
    spacing = [draw(st.floats(0.1, 3.0)) for _ in range(ndim)]
    seed = draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(seed)
    mask = rng.random(dims) < draw(st.floats(0.5, 1.0))
    mask.flat[rng.integers(mask.size)] = True
    labels, count = ndi.label(mask)
    sizes = np.bincount(labels.ravel())[1:]
    mask = labels == 1 + int(np.argmax(sizes))
    return build_grid(dims, spacing, mask), rng


@SETTINGS
@given(grids())
def test_closed_surface_identity(data):
    # with psi = 1 the Gauss identity says total outflow equals the boundary flux
    g, rng = data
    w = rng.standard_normal(g.n_faces)
    tau = rng.standard_normal(g.n_boundary)
    lhs = ops.integrate_cells(g, ops.divergence(g, w, tau))
    rhs = ops.integrate_boundary(g, tau)
    assert abs(lhs - rhs) <= 1e-12 * (1 + np.sum(g.boundary.area * np.abs(tau)))


@SETTINGS
@given(grids())
def test_pairing_residual(data):
    g, rng = data
    psi = rng.standard_normal(g.n_cells)
    w = rng.standard_normal(g.n_faces)
    tau = rng.standard_normal(g.n_boundary)
    assert ops.pairing_residual(g, psi, w, tau) <= 1e-13


@SETTINGS
@given(grids())
def test_projections_idempotent(data):
    g, rng = data
    psi = rng.standard_normal(g.n_cells)
    z = ops.zero_mean_project(g, psi)
    assert np.allclose(ops.zero_mean_project(g, z), z, atol=1e-13)
    assert abs(ops.integrate_cells(g, z)) <= 1e-12 * g.total_volume * (1 + np.abs(psi).max())
    p = ops.affine_project(g, psi)
    assert np.allclose(ops.affine_project(g, p), p, atol=1e-12)


@SETTINGS
@given(grids(), st.floats(-5, 5))
def test_load_shift(data, c):
    g, rng = data
    prob = BalanceProblem(g, rng.standard_normal(g.n_cells), rng.standard_normal(g.n_boundary))
    psi = rng.standard_normal(g.n_cells)
    load = assemble_load(prob)
    shift = np.dot(load, psi + c) - np.dot(load, psi)
    assert np.isclose(shift, c * compatibility_residual(prob), rtol=1e-9, atol=1e-9 * (1 + abs(c)) * np.abs(load).sum())


@SETTINGS
@given(grids())
def test_weak_balance_identity(data):
    g, rng = data
    prob = BalanceProblem(g, rng.standard_normal(g.n_cells), rng.standard_normal(g.n_boundary))
    w = rng.standard_normal(g.n_faces)
    psi = rng.standard_normal(g.n_cells)
    r = prob.beta + ops.divergence(g, w, prob.tau)
    expected = ops.integrate_cells(g, psi * r)
    got = weak_balance_residual(prob, w, psi)
    assert np.isclose(got, expected, rtol=1e-10, atol=1e-10 * (1 + np.abs(assemble_load(prob)).sum()))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1.5, 2.0, 3.0, np.inf]))
def test_lq_weak_duality(seed, a):
    rng = np.random.default_rng(seed)
    g = build_grid([5, 4], [0.25, 0.3])
    beta = rng.standard_normal(g.n_cells)
    tau = rng.standard_normal(g.n_boundary)
    beta -= (ops.integrate_cells(g, beta) + ops.integrate_boundary(g, tau)) / g.total_volume
    prob = BalanceProblem(g, beta, tau)
    sol = solve_lq(prob, a, tol_gap=1e-4)
    ad = dual_exponent(a)
    for _ in range(20):
        psi = rng.standard_normal(g.n_cells)
        assert lq_dual_objective(prob, psi, ad) <= sol.omega_primal * (1 + 1e-10)
