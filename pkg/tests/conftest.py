import numpy as np
import pytest

from fpa.grid import make_grids


@pytest.fixture(scope="session")
def desk():
    """Default desk-scale grids: L=1, Nx=64, vmax=8, Nv=257, sigma=1."""
    return make_grids(1.0, 64, 8.0, 257, 1.0)


def random_density(grid, rng, floor=0.05):
    """Strictly positive smooth probability density on the x-grid."""
    amps = rng.normal(size=4) * np.array([1.0, 0.7, 0.4, 0.2])
    phases = rng.uniform(0, 2 * np.pi, 4)
    xs = 2 * np.pi * grid.x / grid.L
    rho = floor + (1.0 + sum(a * np.cos((k + 1) * xs + p)
                             for k, (a, p) in enumerate(zip(amps, phases)))) ** 2
    return rho / (np.sum(rho) * grid.dx)


def random_momentum(grid, rho, rng, vscale=2.0):
    """Momentum field with |m| <= vscale * rho pointwise."""
    xs = 2 * np.pi * grid.x / grid.L
    prof = sum(a * np.cos((k + 1) * xs + p) for k, (a, p) in enumerate(
        zip(rng.normal(size=3), rng.uniform(0, 2 * np.pi, 3))))
    return rho * vscale * prof / max(1.0, float(np.max(np.abs(prof))))
