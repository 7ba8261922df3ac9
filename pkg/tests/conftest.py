"""Shared fixtures: small grids reused across the unit tests.

Session scope matters here; kernel tables and linearized operators are
the dominant cost, so every test that can share a config should.
"""

import numpy as np
import pytest

from phonheat.collision import CollisionConfig
from phonheat.lattice import Dispersion, Regularization, build_grid


@pytest.fixture(scope="session")
def d1_grid():
    return build_grid(1, 16, N=4)


@pytest.fixture(scope="session")
def d1_disp(d1_grid):
    return Dispersion(d1_grid, m_sq=1.0)


@pytest.fixture(scope="session")
def d1_cfg(d1_grid, d1_disp):
    reg = Regularization.from_dispersion(d1_disp)
    return CollisionConfig(grid=d1_grid, dispersion=d1_disp, regularization=reg)


@pytest.fixture(scope="session")
def d2_cfg():
    grid = build_grid(2, 8, N=2)
    disp = Dispersion(grid, m_sq=0.5)
    reg = Regularization.from_dispersion(disp)
    return CollisionConfig(grid=grid, dispersion=disp, regularization=reg)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
