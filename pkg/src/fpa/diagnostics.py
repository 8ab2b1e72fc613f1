"""Tracked functionals: entropy, energy, Fisher information, distance to the
Maxwellian, moments, weighted Sobolev seminorms, and the balance residuals of
the entropy and energy laws.

Integrands weighted by 1/f use a hard floor (cells below 1e-30 are skipped):
every functional here is absolutely continuous with respect to f, so vacuum
cells contribute nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import KineticState, maxwellian
from .models import ModelSpec, macro_fields, thickness

F_FLOOR = 1e-30


def _grad_v(f: np.ndarray, dv: float) -> np.ndarray:
    """d/dv along axis 1: fourth-order central interior, second-order edges.

    The tail rows sit at the Maxwellian floor, so the lower-order edge stencils
    contribute nothing measurable.
    """
    g = np.empty_like(f)
    g[:, 2:-2] = (-f[:, 4:] + 8 * f[:, 3:-1] - 8 * f[:, 1:-3] + f[:, :-4]) / (12 * dv)
    g[:, 0] = (-3 * f[:, 0] + 4 * f[:, 1] - f[:, 2]) / (2 * dv)
    g[:, 1] = (f[:, 2] - f[:, 0]) / (2 * dv)
    g[:, -2] = (f[:, -1] - f[:, -3]) / (2 * dv)
    g[:, -1] = (3 * f[:, -1] - 4 * f[:, -2] + f[:, -3]) / (2 * dv)
    return g


def _grad_x(f: np.ndarray, dx: float) -> np.ndarray:
    """d/dx along axis 0, fourth-order central with periodic wrap."""
    return (-np.roll(f, -2, axis=0) + 8 * np.roll(f, -1, axis=0)
            - 8 * np.roll(f, 1, axis=0) + np.roll(f, 2, axis=0)) / (12 * dx)


def _phase_integral(state: KineticState, integrand: np.ndarray) -> float:
    return float(np.sum(integrand @ state.vgrid.weights) * state.grid.dx)


def entropy(state: KineticState) -> float:
    """Boltzmann entropy H_B = int f log f, with the 0 log 0 = 0 convention."""
    f = state.f
    terms = np.zeros_like(f)
    mask = f > F_FLOOR
    terms[mask] = f[mask] * np.log(f[mask])
    return _phase_integral(state, terms)


def kinetic_energy(state: KineticState) -> float:
    """E = (1/2) int |v|^2 f."""
    v2 = state.vgrid.v ** 2
    return 0.5 * _phase_integral(state, state.f * v2[None, :])


def _flux_sq_over_f(state: KineticState, sigma: float) -> np.ndarray:
    """|sigma d_v f + v f|^2 / f with sub-floor cells excluded."""
    f = state.f
    flux = sigma * _grad_v(f, state.vgrid.dv) + state.vgrid.v[None, :] * f
    out = np.zeros_like(f)
    mask = f > F_FLOOR
    out[mask] = flux[mask] ** 2 / f[mask]
    return out


def fisher_vv(state: KineticState, sigma: float) -> float:
    """I_vv = int |sigma d_v f + v f|^2 / f."""
    return _phase_integral(state, _flux_sq_over_f(state, sigma))


def fisher_vv_oracle(state: KineticState, sigma: float) -> float:
    """Independent I_vv evaluation with one-sided differences (test oracle)."""
    f = state.f
    dv = state.vgrid.dv
    grad = np.empty_like(f)
    grad[:, :-1] = (f[:, 1:] - f[:, :-1]) / dv
    grad[:, -1] = (f[:, -1] - f[:, -2]) / dv
    flux = sigma * grad + state.vgrid.v[None, :] * f
    out = np.zeros_like(f)
    mask = f > F_FLOOR
    out[mask] = flux[mask] ** 2 / f[mask]
    return _phase_integral(state, out)


def fisher_xx(state: KineticState, sigma: float) -> float:
    """I_xx = sigma int |d_x f|^2 / f."""
    f = state.f
    grad = _grad_x(f, state.grid.dx)
    out = np.zeros_like(f)
    mask = f > F_FLOOR
    out[mask] = grad[mask] ** 2 / f[mask]
    return sigma * _phase_integral(state, out)


def dissipation_and_alignment(state: KineticState, model: ModelSpec, sigma: float,
                              fields=None):
    """The two power terms of the entropy balance:

    dissipation D  = int s_rho |sigma d_v f + v f|^2 / f,
    alignment (w_rho(u), u)_rho = int w . m dx.

    D is evaluated on the velocity faces with the solver's exponential-fitting
    flux (drift reference at 0): D = sum_x s(x) sum_faces F0 * [sigma dlog f +
    dv v_half].  This is a consistent quadrature of the continuum functional
    that vanishes identically at the sampled Maxwellian and matches the
    implicit step's entropy production exactly, so the recorded balance
    residual measures the transport and splitting error alone.  Per face both
    factors vanish together at the local Maxwellian ratio and increase with
    f_{j+1}/f_j, so every summand is nonnegative.
    """
    if fields is None:
        rho, m = _state_moments(state)
        fields = macro_fields(model, rho, m)
    from .solver import _flux_coefficients

    vg = state.vgrid
    f = state.f
    cp, cm = _flux_coefficients(np.zeros(1), sigma, vg)
    flux = cp * f[:, 1:] + cm * f[:, :-1]
    lf = np.log(np.maximum(f, F_FLOOR))
    vhalf = 0.5 * (vg.v[:-1] + vg.v[1:])
    bracket = sigma * (lf[:, 1:] - lf[:, :-1]) + vg.dv * vhalf[None, :]
    live = (f[:, 1:] > F_FLOOR) & (f[:, :-1] > F_FLOOR)
    per_x = np.sum(flux * bracket * live, axis=1)
    diss = float(np.sum(per_x * fields.s) * state.grid.dx)
    align = float(np.sum(fields.w * fields.m) * state.grid.dx)
    return diss, align


def _state_moments(state: KineticState):
    from .grid import moments

    return moments(state)


def dist_to_maxwellian(state: KineticState, sigma: float) -> float:
    """L1 distance to the Maxwellian with the state's mass and mean velocity."""
    mass = state.mass
    ubar = state.momentum / mass if mass > 0 else 0.0
    mu = maxwellian(state.grid, state.vgrid, sigma, ubar=ubar, mass=mass)
    return _phase_integral(state, np.abs(state.f - mu))


def kl_divergence(state: KineticState, sigma: float) -> float:
    """KL(f || mu) against the same Maxwellian used by `dist_to_maxwellian`."""
    mass = state.mass
    ubar = state.momentum / mass if mass > 0 else 0.0
    mu = maxwellian(state.grid, state.vgrid, sigma, ubar=ubar, mass=mass)
    f = state.f
    terms = np.zeros_like(f)
    mask = (f > F_FLOOR) & (mu > F_FLOOR)
    terms[mask] = f[mask] * np.log(f[mask] / mu[mask])
    return _phase_integral(state, terms)


def rate_fit(ts, ys, window):
    """Least-squares exponential rate over a time window.

    Fits log y = c - rate * t on points with window[0] <= t <= window[1];
    returns (rate, r2).  Needs at least 10 points, all positive; a constant
    series returns (0, 0) rather than dividing by zero variance.
    """
    ts = np.asarray(ts, dtype=float)
    ys = np.asarray(ys, dtype=float)
    sel = (ts >= window[0]) & (ts <= window[1])
    t = ts[sel]
    y = ys[sel]
    if t.size < 10:
        raise ValueError(f"rate_fit window holds {t.size} points, need >= 10")
    if np.any(y <= 0):
        raise ValueError("rate_fit requires positive values in the window")
    ly = np.log(y)
    tc = t - t.mean()
    var_t = float(np.sum(tc * tc))
    slope = float(np.sum(tc * ly) / var_t)
    resid = ly - (ly.mean() + slope * tc)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    if ss_tot <= 1e-300:
        return 0.0, 0.0
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return -slope, r2


@dataclass
class GaussianTailFit:
    success: bool
    a: float = float("nan")
    b: float = float("nan")
    min_margin: float = float("nan")


def gaussian_tail_fit(state: KineticState, v_fit: float | None = None,
                      sigma: float = 1.0) -> GaussianTailFit:
    """Fit a Gaussian lower barrier b * exp(-a v^2) over |v| <= v_fit.

    Succeeds only when f is strictly positive on the whole fit window (any
    vacuum there returns the failure flag).  The decay rate a is the
    least-squares slope of log min_x f against v^2; b is the largest prefactor
    for which the barrier stays below f on the window, so min_margin, the
    slack min f e^{a v^2} - b, is nonnegative with equality at the contact
    point.
    """
    if v_fit is None:
        v_fit = 3.0 * math.sqrt(sigma)
    v = state.vgrid.v
    win = np.abs(v) <= v_fit
    fwin = state.f[:, win]
    if np.min(fwin) <= 0.0:
        return GaussianTailFit(success=False)
    vwin = v[win]
    fmin = np.min(fwin, axis=0)
    v2 = vwin ** 2
    A = np.stack([np.ones_like(v2), -v2], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(fmin), rcond=None)
    a = float(coef[1])
    prof = fwin * np.exp(a * v2[None, :])
    b = float(np.min(prof))
    min_margin = float(np.min(prof) - b)
    return GaussianTailFit(success=True, a=a, b=b, min_margin=min_margin)


def tapered_weight(v: np.ndarray, q: float, R: float) -> np.ndarray:
    """omega_{q,R}(v) = <v>^q <v/R>^{-Q} with Q = q + n + 2 (n = 1 here), a
    bounded surrogate that increases to <v>^q as R grows."""
    Q = q + 3.0
    jv = np.sqrt(1.0 + v * v)
    jvr = np.sqrt(1.0 + (v / R) ** 2)
    return jv ** q * jvr ** (-Q)


def tapered_moment(state: KineticState, q: float, R: float) -> float:
    return _phase_integral(state, state.f * tapered_weight(state.vgrid.v, q, R)[None, :])


def moment_q(state: KineticState, q: float) -> float:
    """m_q = int <v>^q f."""
    jv = (1.0 + state.vgrid.v ** 2) ** (q / 2.0)
    return _phase_integral(state, state.f * jv[None, :])


def sobolev_seminorm(state: KineticState, k: int, l: int, q: float) -> float:
    """h^{k,l}_q = int <v>^q |d_x^k d_v^l f|^2, central differences, k<=1, l<=2."""
    if k not in (0, 1) or l not in (0, 1, 2):
        raise ValueError(f"seminorm implemented for k <= 1, l <= 2, got ({k}, {l})")
    f = state.f
    dx, dv = state.grid.dx, state.vgrid.dv
    if k == 1:
        f = (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2 * dx)
    if l == 1:
        g = np.empty_like(f)
        g[:, 1:-1] = (f[:, 2:] - f[:, :-2]) / (2 * dv)
        g[:, 0] = (f[:, 1] - f[:, 0]) / dv
        g[:, -1] = (f[:, -1] - f[:, -2]) / dv
        f = g
    elif l == 2:
        g = np.zeros_like(f)
        g[:, 1:-1] = (f[:, 2:] - 2 * f[:, 1:-1] + f[:, :-2]) / (dv * dv)
        f = g
    jv = (1.0 + state.vgrid.v ** 2) ** (q / 2.0)
    return _phase_integral(state, f ** 2 * jv[None, :])


# CSV schema of the time series (column order is part of the format).
SERIES_COLUMNS = (
    "t", "mass", "momentum", "E", "H_B", "H", "I_vv", "I_xx", "theta_min",
    "dist_maxwellian", "m2", "m4", "m8", "dissipation", "alignment_term",
    "entropy_residual", "energy_residual", "h00", "h01", "h02", "h10",
)


@dataclass
class DiagnosticsRecord:
    """One timestamped row of every tracked functional."""

    t: float
    mass: float
    momentum: float
    E: float
    H_B: float
    H: float
    I_vv: float
    I_xx: float
    theta_min: float
    dist_maxwellian: float
    m2: float
    m4: float
    m8: float
    dissipation: float
    alignment_term: float
    entropy_residual: float
    energy_residual: float
    h00: float
    h01: float
    h02: float
    h10: float
    # not part of the CSV schema
    H_sigma: float = 0.0
    energy_rate: float = 0.0

    def row(self):
        return [getattr(self, name) for name in SERIES_COLUMNS]


class SeriesTracker:
    """Computes DiagnosticsRecords and accumulates the running balance
    residuals of the entropy and energy laws.

    With H_sigma = sigma * H_B + E the exact balance reads

        d/dt H_sigma = -int s_rho |sigma d_v f + v f|^2 / f + (w_rho(u), u)_rho,

    and the energy law, in integrated-by-parts form,

        d/dt E = sigma int s_rho rho dx - int s_rho |v|^2 f + (w_rho(u), u)_rho.

    Residuals are the recorded functionals minus trapezoid time integrals of
    the power terms; they vanish under refinement for the continuum dynamics,
    so their size measures the scheme error.  `accumulate` may be called every
    step to refine the time quadrature between full records; the solver's run
    loop does this automatically.
    """

    def __init__(self, model: ModelSpec, sigma: float, q: float = 2.0):
        self.model = model
        self.sigma = sigma
        self.q = q
        self._baseline = None
        self._last = None      # (t, dissipation, alignment, energy_rate)
        self._int_diss = 0.0
        self._int_align = 0.0
        self._int_erate = 0.0

    def _powers(self, state, fields, rho):
        diss, align = dissipation_and_alignment(state, self.model, self.sigma, fields)
        v2f_per_x = (state.f * (state.vgrid.v ** 2)[None, :]) @ state.vgrid.weights
        energy_rate = (self.sigma * float(np.sum(fields.s * rho) * state.grid.dx)
                       - float(np.sum(v2f_per_x * fields.s) * state.grid.dx)
                       + align)
        return diss, align, energy_rate

    def _advance(self, state, fields, rho):
        diss, align, erate = self._powers(state, fields, rho)
        if self._last is not None:
            dt = state.t - self._last[0]
            self._int_diss += 0.5 * dt * (self._last[1] + diss)
            self._int_align += 0.5 * dt * (self._last[2] + align)
            self._int_erate += 0.5 * dt * (self._last[3] + erate)
        self._last = (state.t, diss, align, erate)
        return diss, align

    def accumulate(self, state: KineticState):
        """Fold one state into the running power integrals (cheap; no record)."""
        rho, m = _state_moments(state)
        fields = macro_fields(self.model, rho, m)
        self._advance(state, fields, rho)

    def record(self, state: KineticState) -> DiagnosticsRecord:
        sigma = self.sigma
        rho, m = _state_moments(state)
        fields = macro_fields(self.model, rho, m)
        E = kinetic_energy(state)
        H_B = entropy(state)
        h_sigma = sigma * H_B + E
        diss, align = self._advance(state, fields, rho)
        if self._baseline is None:
            self._baseline = (h_sigma, E)
        rec = DiagnosticsRecord(
            t=state.t,
            mass=float(np.sum(rho) * state.grid.dx),
            momentum=float(np.sum(m) * state.grid.dx),
            E=E,
            H_B=H_B,
            H=H_B + E,
            I_vv=fisher_vv(state, sigma),
            I_xx=fisher_xx(state, sigma),
            theta_min=fields.theta_min,
            dist_maxwellian=dist_to_maxwellian(state, sigma),
            m2=moment_q(state, 2),
            m4=moment_q(state, 4),
            m8=moment_q(state, 8),
            dissipation=diss,
            alignment_term=align,
            entropy_residual=(h_sigma - self._baseline[0]
                              + self._int_diss - self._int_align),
            energy_residual=E - self._baseline[1] - self._int_erate,
            h00=sobolev_seminorm(state, 0, 0, self.q),
            h01=sobolev_seminorm(state, 0, 1, self.q - 1),
            h02=sobolev_seminorm(state, 0, 2, self.q - 2),
            h10=sobolev_seminorm(state, 1, 0, self.q - 2),
            H_sigma=h_sigma,
            energy_rate=self._last[3],
        )
        return rec


def balance_residuals(series):
    """Recompute the entropy and energy residual curves from a finished series
    (independent of the tracker's running sums)."""
    ts = np.array([r.t for r in series])
    h_sigma = np.array([r.H_sigma for r in series])
    E = np.array([r.E for r in series])
    diss = np.array([r.dissipation for r in series])
    align = np.array([r.alignment_term for r in series])
    erate = np.array([r.energy_rate for r in series])

    def cumtrapz(y):
        out = np.zeros_like(y)
        out[1:] = np.cumsum(0.5 * np.diff(ts) * (y[1:] + y[:-1]))
        return out

    entropy_res = h_sigma - h_sigma[0] + cumtrapz(diss) - cumtrapz(align)
    energy_res = E - E[0] - cumtrapz(erate)
    return entropy_res, energy_res
