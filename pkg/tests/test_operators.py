import numpy as np
import pytest

from fluxopt import operators as ops
from fluxopt.grid import build_grid

from conftest import l_shape


def test_gradient_constant_is_zero():
    g = build_grid([3, 4], [0.3, 0.2])
    assert np.all(ops.gradient(g, np.full(g.n_cells, 7.0)) == 0)


def test_gradient_channel():
    g = build_grid([2, 1], [1, 1])
    w = ops.gradient(g, np.array([0.0, 1.0]))
    assert w.tolist() == [0, 1, 0, 0, 0, 0, 0]


def test_gradient_linear_x():
    g = build_grid([4, 4], [1, 1])
    w = ops.gradient(g, g.cell_centers[:, 0])
    interior = np.zeros(g.n_faces, dtype=bool)
    interior[g.interior_faces] = True
    assert np.allclose(w[interior & (g.face_axis == 0)], 1.0)
    assert np.allclose(w[g.face_axis == 1], 0.0)
    assert np.all(w[~interior] == 0)


def test_divergence_zero():
    g = build_grid([3, 3], [1, 1])
    assert np.all(ops.divergence(g, np.zeros(g.n_faces), np.zeros(g.n_boundary)) == 0)


def test_divergence_single_cell():
    g = build_grid([1, 1], [1, 1])
    b = g.boundary
    through = np.where(b.axis == 0, b.sign * 1.0, 0.0)
    assert ops.divergence(g, np.zeros(g.n_faces), through) == pytest.approx([0.0])
    assert ops.divergence(g, np.zeros(g.n_faces), np.ones(4)) == pytest.approx([4.0])


def test_trace_and_delta():
    g = build_grid([2, 1], [1, 1])
    psi = np.array([0.0, 1.0])
    assert ops.trace(g, psi).tolist() == [0, 1, 0, 0, 1, 1]
    assert np.all(ops.trace(g, np.full(2, 3.0)) == 3.0)
    cells, bnd = ops.delta_map(g, np.ones(2))
    assert cells.tolist() == [1, 1] and bnd.tolist() == [1] * 6
    cells, bnd = ops.delta_map(g, np.zeros(2))
    assert not cells.any() and not bnd.any()


def test_trace_l_shape_owner():
    g = build_grid([2, 2], [1, 1], np.array([[1, 1], [1, 0]], dtype=bool))
    psi = np.array([1.0, 2.0, 3.0])
    t = ops.trace(g, psi)
    assert len(t) == 8
    for f, val in zip(g.boundary.face, t):
        owner = g.face_left[f] if g.face_left[f] >= 0 else g.face_right[f]
        assert val == psi[owner]


def test_integrals():
    g = build_grid([2, 2], [0.5, 0.5])
    assert ops.integrate_cells(g, np.ones(4)) == pytest.approx(1.0)
    g1 = build_grid([1, 1], [1, 1])
    assert ops.integrate_boundary(g1, np.ones(4)) == pytest.approx(4.0)
    g2 = build_grid([2, 1], [1, 1])
    assert ops.integrate_cells(g2, np.array([1.0, 2.0])) == pytest.approx(3.0)


def test_zero_mean_project():
    g = build_grid([2, 1], [1, 1])
    assert np.allclose(ops.zero_mean_project(g, np.full(2, 5.0)), 0)
    assert ops.zero_mean_project(g, np.array([0.0, 1.0])).tolist() == [-0.5, 0.5]
    v = np.array([-2.0, 2.0])
    assert np.array_equal(ops.zero_mean_project(g, v), v)


def test_affine_project():
    g = build_grid([5, 4], [0.5, 1.0])
    x, y = g.cell_centers.T
    assert np.allclose(ops.affine_project(g, 3 + 2 * x), 0, atol=1e-13)
    assert np.allclose(ops.affine_project(g, np.zeros(g.n_cells)), 0)
    # x^2 on a symmetric grid: the residual matches a dense least-squares fit
    psi = x**2
    basis = np.column_stack([np.ones_like(x), x, y])
    coef, *_ = np.linalg.lstsq(basis, psi, rcond=None)
    r = ops.affine_project(g, psi)
    assert np.allclose(r, psi - basis @ coef, atol=1e-13)
    assert np.allclose(basis.T @ r, 0, atol=1e-12)


def test_hessian_examples():
    g = build_grid([4, 3], [1, 1])
    x, y = g.cell_centers.T
    assert np.allclose(ops.hessian(g, 1 + 2 * x - y), 0, atol=1e-12)
    hxx = ops.hessian(g, x**2)[:, 0, 0]
    inner = (g.cell_index[:, 0] > 0) & (g.cell_index[:, 0] < 3)
    assert np.allclose(hxx[inner], 2.0)
    g3 = build_grid([3, 3], [1, 1])
    x, y = g3.cell_centers.T
    hess = ops.hessian(g3, x * y)
    centre = g3.cell_ids[1, 1]
    assert hess[centre, 0, 1] == pytest.approx(1.0)
    assert np.allclose(hess, hess.transpose(0, 2, 1))


@pytest.mark.parametrize("grid", [build_grid([5, 6], [0.2, 0.3]), l_shape(6), build_grid([3, 4, 3], [1, 0.5, 2])])
def test_hessian_kernel_is_affine(grid, rng):
    h, _ = ops.hessian_matrix(grid)
    kernel_dim = grid.n_cells - np.linalg.matrix_rank(h.toarray())
    assert kernel_dim == grid.ndim + 1
    x = grid.cell_centers
    for k in range(grid.ndim):
        assert ops.hessian_norm(grid, x[:, k]) < 1e-10
    assert ops.hessian_norm(grid, rng.standard_normal(grid.n_cells)) > 1e-3


def test_pairing_residual_zero_inputs():
    g = build_grid([3, 3], [1, 1])
    assert ops.pairing_residual(g, np.zeros(9), np.zeros(g.n_faces), np.zeros(g.n_boundary)) == 0.0


@pytest.mark.parametrize("grid", [build_grid([8, 8], [0.125, 0.125]), l_shape(8), build_grid([4, 3, 5], [0.3, 0.2, 0.1])])
def test_pairing_residual_random(grid, rng):
    for _ in range(20):
        psi = rng.standard_normal(grid.n_cells)
        w = rng.standard_normal(grid.n_faces)
        tau = rng.standard_normal(grid.n_boundary)
        assert ops.pairing_residual(grid, psi, w, tau) <= 1e-12


def test_adjointness_without_boundary(rng):
    g = l_shape(6)
    psi = rng.standard_normal(g.n_cells)
    w = rng.standard_normal(g.n_faces)
    lhs = ops.integrate_cells(g, psi * ops.divergence(g, w, np.zeros(g.n_boundary)))
    rhs = -ops.face_inner(g, w, ops.gradient(g, psi))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_face_norm_inf_ignores_dead_faces():
    g = l_shape(4)
    w = np.zeros(g.n_faces)
    w[g.face_weights == 0] = 100.0
    assert ops.face_norm(g, w, np.inf) == 0.0
