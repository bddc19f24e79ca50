import numpy as np
import pytest

from fluxopt import operators as ops
from fluxopt.grid import build_grid
from fluxopt.problem import BalanceProblem


def channel():
    """2x1 unit grid with unit flow entering left and leaving right."""
    g = build_grid([2, 1], [1.0, 1.0])
    b = g.boundary
    tau = np.where(b.axis == 0, b.sign * 1.0, 0.0)
    return BalanceProblem(g, np.zeros(2), tau)


def l_shape(n=4, h=None):
    mask = np.ones((n, n), dtype=bool)
    mask[n // 2 :, n // 2 :] = False
    h = 1.0 / n if h is None else h
    return build_grid([n, n], [h, h], mask)


def random_compatible(grid, rng, boundary=True):
    beta = rng.standard_normal(grid.n_cells)
    tau = rng.standard_normal(grid.n_boundary) if boundary else np.zeros(grid.n_boundary)
    total = ops.integrate_cells(grid, beta) + ops.integrate_boundary(grid, tau)
    beta -= total / grid.total_volume
    return BalanceProblem(grid, beta, tau)


def smooth_potential(grid, rng, modes=3):
    x = grid.cell_centers / np.asarray(grid.lengths)[None, :]
    psi = np.zeros(grid.n_cells)
    for freq in np.ndindex(*(modes,) * grid.ndim):
        psi += rng.standard_normal() * np.prod(np.cos(np.pi * np.asarray(freq) * x), axis=1)
    return psi


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion lines recorded by the acceptance battery, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
