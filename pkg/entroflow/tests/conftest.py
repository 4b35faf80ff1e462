import numpy as np
import pytest

from entroflow.grid import DensityField, Grid
from entroflow.nonlinearity import Nonlinearity
from entroflow.pde import plan_steps, solve, stable_dt


def cosine_density(grid: Grid, amplitude: float = 0.5) -> DensityField:
    return DensityField.from_function(grid, lambda x: 1.0 + amplitude * np.cos(np.pi * x))


@pytest.fixture
def cosine():
    return cosine_density


@pytest.fixture
def unit_grid():
    return Grid.interval(0.0, 1.0, 200)


@pytest.fixture
def coarse_grid():
    return Grid.interval(0.0, 1.0, 100)


@pytest.fixture
def pm2():
    return Nonlinearity.porous_medium(2.0)


@pytest.fixture
def linear():
    return Nonlinearity.linear()


@pytest.fixture
def p0(unit_grid):
    """Benchmark density 1 + 0.5 cos(pi x)."""
    return cosine_density(unit_grid)


@pytest.fixture
def make_run():
    """PDE runs with one snapshot every `interval`."""

    def _make(p, nl, beta=None, t_end=0.01, interval=1e-4):
        dt, every = plan_steps(t_end - p.time_tag, stable_dt(p, nl, beta), interval)
        return solve(p, nl, beta, t_end, dt=dt, snapshot_every=every)

    return _make


@pytest.fixture
def short_run(coarse_grid, pm2, make_run):
    return make_run(cosine_density(coarse_grid), pm2)
