"""Kinetic alignment dynamics on the 1-D torus.

Deterministic kinetic solver, stochastic agent-based counterpart, and
analysis tools for the density-weighted averaging operators that drive
alignment (Cucker-Smale, Motsch-Tadmor and related variants).
"""

from .grid import (
    KineticState,
    PeriodicGrid,
    VelocityGrid,
    make_grids,
    maxwellian,
    mollifier_chi,
    moments,
    periodic_convolve,
)
from .models import (
    KernelSpec,
    MacroFields,
    ModelSpec,
    average,
    conservative_residual,
    energy_bound_check,
    kernel_phi_rho,
    l2_linf_constant,
    macro_fields,
    make_kernel,
    make_model,
    schur_constants,
    spectral_gap,
    strength,
    thickness,
    weighted_average,
)
from .solver import SolverConfig, fp_velocity_step, run, step, transport_step

__all__ = [
    "KineticState",
    "PeriodicGrid",
    "VelocityGrid",
    "make_grids",
    "maxwellian",
    "mollifier_chi",
    "moments",
    "periodic_convolve",
    "KernelSpec",
    "MacroFields",
    "ModelSpec",
    "average",
    "conservative_residual",
    "energy_bound_check",
    "kernel_phi_rho",
    "l2_linf_constant",
    "macro_fields",
    "make_kernel",
    "make_model",
    "schur_constants",
    "spectral_gap",
    "strength",
    "thickness",
    "weighted_average",
    "SolverConfig",
    "fp_velocity_step",
    "run",
    "step",
    "transport_step",
]
