"""Environmental-averaging model registry and operator analysis.

Each model is a pair (strength s_rho, averaging operator <.>_rho) acting on
macroscopic fields over a probability density rho.  The weighted average
w_rho(u) = s_rho * <u>_rho is an integral operator with a nonnegative kernel
phi_rho(x, y) whose rho-row sums reproduce s_rho.  Five core models:

    cs          s = rho*phi,        w = (u rho)*phi                 (Cucker-Smale)
    mt          s = 1,              <u> = (u rho)*phi / rho*phi     (Motsch-Tadmor)
    beta        s = (rho*phi)^beta, <u> as mt                       (interpolation)
    filtered    s = 1,              <u> = ((u rho)*phi / rho*phi)*phi
    seg         s = 1,              <u> = sum_l g_l <u>_{g_l rho}   (partitioned)

Dense Nx x Nx kernel matrices are analysis/test artifacts only (Nx <= 512);
the solver path goes through `weighted_average`, which uses convolutions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .grid import PeriodicGrid, mollifier_chi, periodic_convolve

KINDS = ("cs", "mt", "beta", "filtered", "seg")

# Floor scale for the rho-a.e. denominators (rho*phi, int rho g_l); relative
# to the mean density so vacuum stays finite without touching supported nodes.
EPS_DEN_REL = 1e-12
_TINY = 1e-300


class VacuumPartitionWarning(UserWarning):
    """A partition cell carries zero mass; its term is dropped (0/0 -> 0)."""


def eps_den(rho: np.ndarray, grid: PeriodicGrid) -> float:
    mass = float(np.sum(rho) * grid.dx)
    return EPS_DEN_REL * mass / grid.L


@dataclass(frozen=True)
class KernelSpec:
    """Communication kernel phi on the torus, sampled at the grid nodes.

    shape: 'bump' (compact radius `radius`), 'bochner' (self-convolution of a
    bump of radius `radius`, so the discrete Fourier coefficients are >= 0),
    or 'uniform' (phi == 1, global coupling).  Samples of bump/bochner kernels
    are normalized to unit discrete mass, sum(samples)*dx == 1.
    """

    shape: str
    radius: float
    grid: PeriodicGrid
    samples: np.ndarray
    r0: float
    c0: float

    def eval(self, distances: np.ndarray) -> np.ndarray:
        """Kernel value at arbitrary torus distances (agent-based path).

        Matches the grid samples at the nodes; bochner kernels interpolate
        their sampled profile linearly.
        """
        d = self.grid.torus_distance(distances)
        if self.shape == "uniform":
            return np.ones_like(d)
        if self.shape == "bump":
            scale = self.samples[0] / mollifier_chi(0.0)
            return scale * mollifier_chi(d / self.radius)
        half = self.grid.Nx // 2
        dist_nodes = self.grid.x[: half + 1]
        return np.interp(d, dist_nodes, self.samples[: half + 1])


def make_kernel(grid: PeriodicGrid, shape: str = "bump", radius: float | None = None,
                r0: float | None = None) -> KernelSpec:
    """Build a kernel spec; default radii are 0.35 L (bump) and 0.25 L (bochner)."""
    if shape not in ("bump", "bochner", "uniform"):
        raise ValueError(f"unknown kernel shape {shape!r}")
    dist = grid.torus_distance(grid.x)
    if shape == "uniform":
        samples = np.ones(grid.Nx)
        radius = grid.L
        r0 = grid.L / 2 if r0 is None else r0
    elif shape == "bump":
        radius = 0.35 * grid.L if radius is None else radius
        samples = mollifier_chi(dist / radius) / radius
        r0 = radius / 2 if r0 is None else r0
    else:
        radius = 0.25 * grid.L if radius is None else radius
        psi = mollifier_chi(dist / radius) / radius
        samples = periodic_convolve(psi, psi, grid.dx)
        samples = np.maximum(samples, 0.0)  # clip convolution rounding at the support edge
        r0 = radius / 2 if r0 is None else r0
    if not 0 < r0 < grid.L / 2 + 1e-12:
        raise ValueError(f"r0={r0} outside (0, L/2]")
    if shape != "uniform":
        samples = samples / (np.sum(samples) * grid.dx)
    c0 = float(np.min(samples[dist < r0]))
    if c0 <= 0:
        raise ValueError(f"kernel not positive on |x| < r0={r0}")
    return KernelSpec(shape=shape, radius=float(radius), grid=grid,
                      samples=samples, r0=float(r0), c0=c0)


def make_partition(grid: PeriodicGrid, spec="pair") -> np.ndarray:
    """Partition of unity on the x-grid, one row per community.

    `spec` is either a preset name ('pair' = raised-cosine pair vanishing at
    two antipodal points; 'pair-full' = same mixed with 10% uniform so every
    g_l is strictly positive) or a list of (center, radius) bump descriptors,
    which are normalized by their sum (the bumps must cover the torus).
    """
    x = grid.x
    if isinstance(spec, str):
        if spec == "pair":
            g0 = np.cos(np.pi * x / grid.L) ** 2
            return np.stack([g0, 1.0 - g0])
        if spec == "pair-full":
            g0 = np.cos(np.pi * x / grid.L) ** 2
            alpha = 0.1
            g0 = (1 - alpha) * g0 + alpha / 2
            return np.stack([g0, 1.0 - g0])
        raise ValueError(f"unknown partition preset {spec!r}")
    bumps = []
    for center, radius in spec:
        d = grid.torus_distance(x - center)
        bumps.append(mollifier_chi(d / radius))
    g = np.stack(bumps)
    total = g.sum(axis=0)
    if np.any(total <= 0):
        raise ValueError("partition bumps do not cover the torus")
    return g / total


@dataclass(frozen=True)
class ModelSpec:
    """A concrete environmental-averaging model bound to a grid."""

    kind: str
    kernel: KernelSpec
    grid: PeriodicGrid
    beta: float = 1.0
    partition: np.ndarray | None = None

    @property
    def r0(self) -> float:
        return self.kernel.r0

    def s_bound(self, mass: float = 1.0) -> float:
        """Uniform upper bound on the strength over densities of given mass."""
        if self.kind == "cs":
            return float(np.max(self.kernel.samples)) * mass
        if self.kind == "beta":
            return float(np.max(self.kernel.samples) * mass) ** self.beta
        return 1.0


def make_model(grid: PeriodicGrid, kind: str, kernel: KernelSpec | None = None,
               beta: float = 1.0, partition="pair") -> ModelSpec:
    kind = kind.lower()
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    if kernel is None:
        kernel = make_kernel(grid)
    part = None
    if kind == "seg":
        part = spec = partition
        if not isinstance(spec, np.ndarray):
            part = make_partition(grid, spec)
        colsum = part.sum(axis=0)
        if np.any(part < 0) or np.max(np.abs(colsum - 1.0)) > 1e-12:
            raise ValueError("partition rows must be nonnegative and sum to 1")
    if kind == "beta" and not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return ModelSpec(kind=kind, kernel=kernel, grid=grid, beta=beta, partition=part)


@dataclass
class MacroFields:
    """Macroscopic fields of a state under a model: density, momentum,
    strength, weighted average w = s<u>, average <u>, and thickness.

    <u> is only constrained where the strength exceeds the denominator floor;
    on vacuum it is reported but carries no information (w is assembled from
    the momentum directly, so no 0/0 ever enters the dynamics).
    """

    rho: np.ndarray
    m: np.ndarray
    s: np.ndarray
    w: np.ndarray
    avg: np.ndarray
    theta: np.ndarray
    theta_min: float


def strength(model: ModelSpec, rho: np.ndarray) -> np.ndarray:
    """Communication strength s_rho on the x-grid."""
    if model.kind == "cs":
        return periodic_convolve(rho, model.kernel.samples, model.grid.dx)
    if model.kind == "beta":
        conv = periodic_convolve(rho, model.kernel.samples, model.grid.dx)
        return np.power(conv, model.beta)
    return np.ones(model.grid.Nx)


def _phi_matrix(model: ModelSpec) -> np.ndarray:
    """Circulant matrix phi(x_i - x_k) from the kernel samples."""
    idx = (np.arange(model.grid.Nx)[:, None] - np.arange(model.grid.Nx)[None, :]) % model.grid.Nx
    return model.kernel.samples[idx]


def kernel_phi_rho(model: ModelSpec, rho: np.ndarray) -> np.ndarray:
    """Dense kernel matrix phi_rho(x_i, y_k) of the weighted average.

    Analysis path only; w_rho(u)(x_i) = sum_k phi_rho[i, k] m_k dx.
    """
    grid = model.grid
    eps = max(eps_den(rho, grid), _TINY)
    if model.kind == "cs":
        return _phi_matrix(model)
    if model.kind in ("mt", "beta"):
        conv = np.maximum(periodic_convolve(rho, model.kernel.samples, grid.dx), eps)
        expo = 1.0 if model.kind == "mt" else 1.0 - model.beta
        return _phi_matrix(model) / np.power(conv, expo)[:, None]
    if model.kind == "filtered":
        conv = np.maximum(periodic_convolve(rho, model.kernel.samples, grid.dx), eps)
        P = _phi_matrix(model)
        return (P / conv[None, :]) @ P * grid.dx
    # partitioned model: Gram-type sum over communities
    out = np.zeros((grid.Nx, grid.Nx))
    dropped = False
    for g in model.partition:
        mass_l = float(np.sum(rho * g) * grid.dx)
        if mass_l <= 0.0:
            dropped = True
            continue
        out += np.outer(g, g) / mass_l
    if dropped:
        warnings.warn("partition cell with zero mass dropped from the kernel",
                      VacuumPartitionWarning, stacklevel=2)
    return out


def weighted_average(model: ModelSpec, rho: np.ndarray, m: np.ndarray) -> np.ndarray:
    """w_rho(u)(x) = int phi_rho(x, y) m(y) dy, via fast convolutions.

    Assembled from the momentum m = rho u, never from u itself, so vacuum
    regions are well defined.
    """
    grid = model.grid
    eps = max(eps_den(rho, grid), _TINY)
    phi = model.kernel.samples
    if model.kind == "cs":
        return periodic_convolve(m, phi, grid.dx)
    if model.kind in ("mt", "beta"):
        conv = np.maximum(periodic_convolve(rho, phi, grid.dx), eps)
        expo = 1.0 if model.kind == "mt" else 1.0 - model.beta
        return periodic_convolve(m, phi, grid.dx) / np.power(conv, expo)
    if model.kind == "filtered":
        conv = np.maximum(periodic_convolve(rho, phi, grid.dx), eps)
        favre = periodic_convolve(m, phi, grid.dx) / conv
        return periodic_convolve(favre, phi, grid.dx)
    out = np.zeros(grid.Nx)
    dropped = False
    for g in model.partition:
        mass_l = float(np.sum(rho * g) * grid.dx)
        if mass_l <= 0.0:
            dropped = True
            continue
        out += g * (float(np.sum(m * g) * grid.dx) / mass_l)
    if dropped:
        warnings.warn("partition cell with zero mass dropped from the average",
                      VacuumPartitionWarning, stacklevel=2)
    return out


def average(model: ModelSpec, rho: np.ndarray, m: np.ndarray) -> np.ndarray:
    """<u>_rho = w_rho(u) / s_rho with the strength floored at eps_den."""
    eps = max(eps_den(rho, model.grid), _TINY)
    s = np.maximum(strength(model, rho), eps)
    return weighted_average(model, rho, m) / s


def thickness(rho: np.ndarray, r0: float, grid: PeriodicGrid):
    """Mollified local mass theta(x) = int rho(x - r0 y) chi(y) dy and its
    global minimum.

    The rescaled mollifier is renormalized to unit discrete mass so constants
    are reproduced exactly on the grid.
    """
    if not 0 < r0 < grid.L / 2:
        raise ValueError(f"r0={r0} outside (0, L/2)")
    kern = _thickness_kernel(grid, r0)
    theta = periodic_convolve(rho, kern, grid.dx)
    return theta, float(np.min(theta))


def _thickness_kernel(grid: PeriodicGrid, r0: float) -> np.ndarray:
    dist = grid.torus_distance(grid.x)
    kern = mollifier_chi(dist / r0) / r0
    return kern / (np.sum(kern) * grid.dx)


def macro_fields(model: ModelSpec, rho: np.ndarray, m: np.ndarray) -> MacroFields:
    s = strength(model, rho)
    w = weighted_average(model, rho, m)
    eps = max(eps_den(rho, model.grid), _TINY)
    avg = w / np.maximum(s, eps)
    theta, theta_min = thickness(rho, model.r0, model.grid)
    return MacroFields(rho=rho, m=m, s=s, w=w, avg=avg, theta=theta,
                       theta_min=theta_min)


def schur_constants(model: ModelSpec, rho: np.ndarray):
    """Max rho-weighted row and column sums of the kernel matrix.

    The row estimate equals max s_rho by the reproducing identity; the column
    estimate bounds the adjoint and the pair controls the L^2_rho norm of the
    weighted average.
    """
    phi = kernel_phi_rho(model, rho)
    dx = model.grid.dx
    row = phi @ rho * dx
    col = phi.T @ rho * dx
    return float(np.max(row)), float(np.max(col))


def energy_bound_check(model: ModelSpec, rho: np.ndarray, m: np.ndarray) -> float:
    """||w||_{L2_rho} / (sqrt(Sbar*Srbar) ||u||_{L2_rho}) on supp rho; <= 1."""
    dx = model.grid.dx
    sbar, srbar = schur_constants(model, rho)
    w = weighted_average(model, rho, m)
    supp = rho > 0
    norm_w2 = float(np.sum(w[supp] ** 2 * rho[supp]) * dx)
    norm_u2 = float(np.sum(m[supp] ** 2 / rho[supp]) * dx)
    if norm_u2 == 0.0:
        return 0.0
    return float(np.sqrt(norm_w2 / (sbar * srbar * norm_u2)))


def spectral_gap(model: ModelSpec, rho: np.ndarray) -> float:
    """Gap eps0 = 1 - sup of the symmetrized Rayleigh quotient of <.>_rho over
    rho-mean-zero fields in L^2(kappa), kappa = s_rho rho.

    The quadratic form (u, <u>)_kappa equals (u rho)^T phi_rho (u rho) dx^2, so
    only the symmetric part of the kernel enters.  The grid is restricted to
    nodes with kappa above the denominator floor.
    """
    grid = model.grid
    dx = grid.dx
    s = strength(model, rho)
    kappa = s * rho
    eps = max(eps_den(rho, grid), _TINY)
    supp = kappa > eps
    if np.count_nonzero(supp) < 2:
        raise ValueError("kappa = s_rho * rho supported on fewer than 2 nodes")
    phi = kernel_phi_rho(model, rho)[np.ix_(supp, supp)]
    rho_s = rho[supp]
    kappa_s = kappa[supp]
    # numerator matrix in u-coordinates: B[i,k] = rho_i sym(phi)[i,k] rho_k dx^2
    B = (rho_s[:, None] * 0.5 * (phi + phi.T) * rho_s[None, :]) * dx * dx
    d = np.sqrt(kappa_s * dx)
    M = B / d[:, None] / d[None, :]
    # constraint sum(u rho dx) = 0 becomes z . c = 0, c_i = rho_i dx / d_i
    c = rho_s * dx / d
    Q = null_space(c[None, :])
    lam_max = float(np.linalg.eigvalsh(Q.T @ M @ Q)[-1])
    return 1.0 - lam_max


def spectral_gap_fourier(model: ModelSpec) -> float:
    """Gap at the uniform density from the kernel's Fourier coefficients:
    1 - max_{k != 0} phihat(k)/phihat(0).  Valid for convolution kernels (cs)."""
    coeff = np.fft.rfft(model.kernel.samples).real
    return 1.0 - float(np.max(coeff[1:]) / coeff[0])


def conservative_residual(model: ModelSpec, rho: np.ndarray) -> float:
    """max_y |int phi_rho(x, y) rho(x) dx - s_rho(y)|; zero for models that
    conserve momentum exactly (symmetric kernels)."""
    phi = kernel_phi_rho(model, rho)
    col = phi.T @ rho * model.grid.dx
    return float(np.max(np.abs(col - strength(model, rho))))


def l2_linf_constant(model: ModelSpec, rho: np.ndarray) -> float:
    """max_x (int phi_rho^2(x, y) rho(y) dy)^(1/2): the L2->Linf operator bound."""
    phi = kernel_phi_rho(model, rho)
    return float(np.sqrt(np.max((phi ** 2) @ rho * model.grid.dx)))
