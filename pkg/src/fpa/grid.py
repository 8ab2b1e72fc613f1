"""Periodic spatial grid, truncated velocity grid, quadrature and convolution.

Conventions used throughout the package:

* x-integrals are midpoint sums, ``sum(g) * dx``, on the uniform periodic grid;
* v-integrals are trapezoid sums on the symmetric truncated grid;
* kernel samples carry physical units of the kernel, and ``periodic_convolve``
  multiplies by ``dx`` internally, so callers never manage quadrature weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid on the torus [0, L) with Nx cells, nodes x_i = i*dx."""

    L: float
    Nx: int
    dx: float = field(init=False, repr=False)
    x: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not _is_power_of_two(self.Nx) or self.Nx < 8:
            raise ValueError(f"Nx must be a power of two >= 8, got {self.Nx}")
        if self.L <= 0:
            raise ValueError(f"L must be positive, got {self.L}")
        object.__setattr__(self, "dx", self.L / self.Nx)
        object.__setattr__(self, "x", np.arange(self.Nx) * self.dx)

    def torus_distance(self, offsets: np.ndarray) -> np.ndarray:
        """Shortest distance on the torus for signed offsets."""
        d = np.abs(np.asarray(offsets, dtype=float)) % self.L
        return np.minimum(d, self.L - d)


@dataclass(frozen=True)
class VelocityGrid:
    """Symmetric velocity grid on [-vmax, vmax] with Nv nodes."""

    vmax: float
    Nv: int
    dv: float = field(init=False, repr=False)
    v: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.Nv < 16:
            raise ValueError(f"Nv must be >= 16, got {self.Nv}")
        if self.vmax <= 0:
            raise ValueError(f"vmax must be positive, got {self.vmax}")
        object.__setattr__(self, "dv", 2.0 * self.vmax / (self.Nv - 1))
        object.__setattr__(self, "v", np.linspace(-self.vmax, self.vmax, self.Nv))
        # trapezoid quadrature: half weight at the two endpoints
        w = np.full(self.Nv, self.dv)
        w[0] *= 0.5
        w[-1] *= 0.5
        object.__setattr__(self, "weights", w)


@dataclass
class KineticState:
    """Phase-space density f(x_i, v_j) >= 0 with the simulation clock.

    Value type: solver steps return new states and never mutate `f` in place.
    """

    grid: PeriodicGrid
    vgrid: VelocityGrid
    f: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        if self.f.shape != (self.grid.Nx, self.vgrid.Nv):
            raise ValueError(
                f"f has shape {self.f.shape}, expected ({self.grid.Nx}, {self.vgrid.Nv})"
            )

    @property
    def mass(self) -> float:
        rho, _ = moments(self)
        return float(np.sum(rho) * self.grid.dx)

    @property
    def momentum(self) -> float:
        _, m = moments(self)
        return float(np.sum(m) * self.grid.dx)

    def copy(self) -> "KineticState":
        return replace(self, f=self.f.copy())


def maxwellian_tail_mass(vmax: float, sigma: float) -> float:
    """Two-sided mass of the unit Maxwellian with variance sigma beyond |v|=vmax."""
    return math.erfc(vmax / math.sqrt(2.0 * sigma))


def make_grids(L: float, Nx: int, vmax: float, Nv: int, sigma: float):
    """Construct the (PeriodicGrid, VelocityGrid) pair, checking the tail contract.

    Rejects velocity boxes too small for the target equilibrium: the Maxwellian
    of variance sigma must carry less than 1e-10 mass beyond vmax.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    grid = PeriodicGrid(L=L, Nx=Nx)
    vgrid = VelocityGrid(vmax=vmax, Nv=Nv)
    tail = maxwellian_tail_mass(vmax, sigma)
    if tail > 1e-10:
        raise ValueError(
            f"vmax={vmax} too small for sigma={sigma}: "
            f"Maxwellian tail mass {tail:.3e} exceeds 1e-10"
        )
    return grid, vgrid


def _bump_normalization() -> float:
    val, _ = quad(lambda y: math.exp(-1.0 / (1.0 - y * y)), -1.0, 1.0,
                  epsabs=1e-14, epsrel=1e-14)
    return 1.0 / val


_CHI_NORM = _bump_normalization()


def mollifier_chi(y):
    """Standard even bump on [-1, 1], unit mass: c * exp(-1/(1-y^2)) for |y|<1.

    All derivatives vanish at the support boundary, so equispaced quadrature
    of chi converges faster than any power of the spacing.
    """
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = np.abs(y) < 1.0
    yi = y[inside]
    out[inside] = _CHI_NORM * np.exp(-1.0 / (1.0 - yi * yi))
    if out.ndim == 0:
        return float(out)
    return out


def periodic_convolve(g: np.ndarray, kernel: np.ndarray, dx: float) -> np.ndarray:
    """Periodic convolution (g * kernel)(x_i) = sum_k g(x_k) kernel(x_i - x_k) dx.

    Fast real-transform path; agrees with the direct O(Nx^2) sum to rounding.
    """
    g = np.asarray(g, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    if g.shape != kernel.shape or g.ndim != 1:
        raise ValueError(f"length mismatch: g {g.shape} vs kernel {kernel.shape}")
    return np.fft.irfft(np.fft.rfft(g) * np.fft.rfft(kernel), n=g.size) * dx


def periodic_convolve_direct(g: np.ndarray, kernel: np.ndarray, dx: float) -> np.ndarray:
    """O(Nx^2) reference implementation of `periodic_convolve` (test oracle)."""
    g = np.asarray(g, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    if g.shape != kernel.shape or g.ndim != 1:
        raise ValueError(f"length mismatch: g {g.shape} vs kernel {kernel.shape}")
    n = g.size
    out = np.zeros(n)
    for i in range(n):
        for k in range(n):
            out[i] += g[k] * kernel[(i - k) % n]
    return out * dx


def moments(state: KineticState):
    """Density rho(x_i) = int f dv and momentum m(x_i) = int v f dv (trapezoid)."""
    w = state.vgrid.weights
    v = state.vgrid.v
    rho = state.f @ w
    m = state.f @ (w * v)
    return rho, m


def maxwellian(grid: PeriodicGrid, vgrid: VelocityGrid, sigma: float,
               ubar: float = 0.0, mass: float = 1.0) -> np.ndarray:
    """Spatially uniform Gaussian-in-v equilibrium, normalized to the given
    discrete mass under the package quadrature."""
    v = vgrid.v
    prof = np.exp(-((v - ubar) ** 2) / (2.0 * sigma)) / math.sqrt(2.0 * math.pi * sigma)
    f = np.tile(prof / grid.L, (grid.Nx, 1))
    got = float(np.sum(f @ vgrid.weights) * grid.dx)
    return f * (mass / got)
