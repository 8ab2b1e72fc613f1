"""Acceptance suite: one callable per criterion, shared runs cached.

Every criterion returns a CriterionResult with the measured numbers in its
details string, so `fpa verify` output documents the margins.  Desk scale is
L=1, Nx=64, Nv=257, vmax=8, dt=1e-3 unless a criterion states otherwise.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .diagnostics import (
    SeriesTracker,
    gaussian_tail_fit,
    moment_q,
    rate_fit,
    tapered_moment,
)
from .grid import KineticState, make_grids, moments
from .io_cli import init_preset
from .models import (
    average,
    eps_den,
    kernel_phi_rho,
    make_kernel,
    make_model,
    schur_constants,
    spectral_gap,
    spectral_gap_fourier,
    strength,
    thickness,
    weighted_average,
)
from .grid import periodic_convolve
from .solver import SolverConfig, fp_velocity_step, step


@dataclass
class CriterionResult:
    name: str
    passed: bool
    details: str


DESK = dict(L=1.0, Nx=64, vmax=8.0, Nv=257, dt=1e-3)


def _desk_grids(sigma=1.0, vmax=None, Nx=None, Nv=None):
    return make_grids(DESK["L"], Nx or DESK["Nx"], vmax or DESK["vmax"],
                      Nv or DESK["Nv"], sigma)


def _tracked_run(model, state, sigma, t_end, dt, series_every=10):
    """Run with the standard tracker, also recording the global min of f and
    the L1 distance to the initial state."""
    cfg = SolverConfig(sigma=sigma, dt=dt, t_end=t_end, snapshot_every=0,
                       series_every=series_every)
    tracker = SeriesTracker(model, sigma)
    f0 = state.f.copy()
    wt = state.vgrid.weights
    dx = state.grid.dx
    extras = {"min_f": np.inf, "max_l1_to_initial": 0.0}

    def record(st):
        extras["min_f"] = min(extras["min_f"], float(st.f.min()))
        extras["max_l1_to_initial"] = max(
            extras["max_l1_to_initial"],
            float(np.sum(np.abs(st.f - f0) @ wt) * dx))
        return tracker.record(st)

    from .solver import run

    final, series, _ = run(state, model, cfg, diagnostics_fn=record,
                           per_step_fn=tracker.accumulate)
    return final, series, extras


def _bimodal_cs_run(cache):
    if "cs_bimodal" not in cache:
        grid, vgrid = _desk_grids()
        model = make_model(grid, "cs")
        state = init_preset("bimodal", {}, grid, vgrid, 1.0)
        cache["cs_bimodal"] = (*_tracked_run(model, state, 1.0, 5.0, DESK["dt"]),
                               state)
    return cache["cs_bimodal"]


def _momentum_scale(state) -> float:
    wt = state.vgrid.weights
    absv = np.abs(state.vgrid.v)
    return float(np.sum(state.f @ (wt * absv)) * state.grid.dx)


def crit01_structure_preservation(cache) -> CriterionResult:
    """Mass drift <= 1e-9, positivity, momentum drift <= 1e-6 over t=5 from
    bimodal data; momentum also for the other conservative models.

    Bimodal data carries zero total momentum, so drift is normalized by the
    absolute first moment of the initial state.
    """
    final, series, extras, initial = _bimodal_cs_run(cache)
    mass_drift = abs(series[-1].mass - series[0].mass) / series[0].mass
    min_f = extras["min_f"]
    scale = _momentum_scale(initial)
    drifts = {"cs": max(abs(r.momentum - series[0].momentum) for r in series) / scale}
    for kind in ("filtered", "seg"):
        grid, vgrid = _desk_grids()
        model = make_model(grid, kind)
        state = init_preset("bimodal", {}, grid, vgrid, 1.0)
        _, ser, _ = _tracked_run(model, state, 1.0, 5.0, DESK["dt"], series_every=50)
        drifts[kind] = max(abs(r.momentum - ser[0].momentum) for r in ser) / scale
    ok = mass_drift <= 1e-9 and min_f >= 0.0 and all(d <= 1e-6 for d in drifts.values())
    detail = (f"mass drift {mass_drift:.2e} (<=1e-9), min f {min_f:.2e} (>=0), "
              + ", ".join(f"{k} momentum drift {v:.2e}" for k, v in drifts.items())
              + " (<=1e-6)")
    return CriterionResult("1 structure preservation", ok, detail)


def crit02_maxwellian_fixed_point(cache) -> CriterionResult:
    """Every model, sigma in {0.5, 1}: Maxwellian data stays put to 1e-8."""
    worst = 0.0
    worst_case = ""
    for sigma in (0.5, 1.0):
        for kind in ("cs", "mt", "beta", "filtered", "seg"):
            grid, vgrid = _desk_grids(sigma=sigma)
            model = make_model(grid, kind)
            state = init_preset("maxwellian", {"ubar": 0.5}, grid, vgrid, sigma)
            _, _, extras = _tracked_run(model, state, sigma, 5.0, DESK["dt"],
                                        series_every=50)
            dev = extras["max_l1_to_initial"]
            if dev > worst:
                worst, worst_case = dev, f"{kind}@sigma={sigma}"
    ok = worst <= 1e-8
    return CriterionResult(
        "2 maxwellian fixed point", ok,
        f"max ||f(t)-f(0)||_1 = {worst:.2e} ({worst_case}), tolerance 1e-8")


def _residual_ratio(series):
    ts = np.array([r.t for r in series])
    diss = np.array([r.dissipation for r in series])
    res = np.array([r.entropy_residual for r in series])
    int_diss = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(ts) * (diss[1:] + diss[:-1]))])
    mask = int_diss > 1e-12
    return float(np.max(np.abs(res[mask]) / int_diss[mask]))


def crit03_entropy_equality(cache) -> CriterionResult:
    """sigma=1 bimodal run: |entropy residual| <= 5% of dissipated total at all
    recorded times; a refined run at (2Nx, 2Nv, dt/2) at most 0.6x the ratio."""
    _, series, _, _ = _bimodal_cs_run(cache)
    ratio_coarse = _residual_ratio(series)
    grid, vgrid = _desk_grids(Nx=128, Nv=513)
    model = make_model(grid, "cs")
    state = init_preset("bimodal", {}, grid, vgrid, 1.0)
    # halve the record spacing too: the residual's time-quadrature must refine
    # along with the scheme for the first-order convergence to show
    _, series_fine, _ = _tracked_run(model, state, 1.0, 5.0, 5e-4, series_every=10)
    ratio_fine = _residual_ratio(series_fine)
    ok = ratio_coarse <= 0.05 and ratio_fine <= 0.6 * ratio_coarse
    return CriterionResult(
        "3 entropy equality", ok,
        f"residual/dissipation: coarse {ratio_coarse:.4f} (<=0.05), "
        f"refined {ratio_fine:.4f} (<= {0.6 * ratio_coarse:.4f})")


def crit04_exponential_relaxation(cache) -> CriterionResult:
    """CS-bochner relaxation: positive rate with r^2 >= 0.98 at sigma=1; the
    sigma=2 rerun is asserted strictly faster, as stated.

    The sigma ordering clause fails by construction of the dynamics: the
    fitted rate is thermalization-limited at 2*s_eq for both runs (the drift
    term sets the relaxation clock; sigma only sets the equilibrium width),
    and the measured rates agree to ~1%.  Reported honestly.
    """
    rates = {}
    for sigma in (1.0, 2.0):
        # sigma=2 needs the wider velocity box to satisfy the tail contract
        grid, vgrid = _desk_grids(sigma=sigma, vmax=10.0)
        model = make_model(grid, "cs", kernel=make_kernel(grid, "bochner"))
        state = init_preset("bimodal", {}, grid, vgrid, sigma)
        _, series, _ = _tracked_run(model, state, sigma, 5.0, DESK["dt"])
        ts = [r.t for r in series]
        ds = [r.dist_maxwellian for r in series]
        rates[sigma] = rate_fit(ts, ds, (1.0, 5.0))
    rate1, r2_1 = rates[1.0]
    rate2, _ = rates[2.0]
    base_ok = rate1 > 0 and r2_1 >= 0.98
    ordering_ok = rate2 > rate1
    return CriterionResult(
        "4 exponential relaxation", base_ok and ordering_ok,
        f"sigma=1: rate {rate1:.3f}, r2 {r2_1:.5f} (need >0, >=0.98); "
        f"sigma=2: rate {rate2:.3f}; ordering rate2>rate1 "
        f"{'holds' if ordering_ok else 'FAILS (thermalization-limited, see notes)'}")


def crit05_gaussian_tail_gain(cache) -> CriterionResult:
    """Vacuous data: tail fit fails at t=0, succeeds at t=1 on |v| <= 3."""
    grid, vgrid = _desk_grids()
    model = make_model(grid, "cs")
    state = init_preset("vacuous-half-torus", {}, grid, vgrid, 1.0)
    fit0 = gaussian_tail_fit(state, v_fit=3.0)
    cfg = SolverConfig(sigma=1.0, dt=DESK["dt"], t_end=1.0, snapshot_every=0)
    cur = state
    for _ in range(1000):
        cur = step(cur, model, cfg)
    fit1 = gaussian_tail_fit(cur, v_fit=3.0)
    cache["vacuous_t1"] = cur
    ok = (not fit0.success) and fit1.success and fit1.min_margin >= 0.0
    detail = (f"t=0 success={fit0.success} (want False); t=1 success={fit1.success}, "
              f"a={fit1.a:.3f}, b={fit1.b:.2e}, min_margin={fit1.min_margin:.2e}")
    return CriterionResult("5 gaussian tail gain", ok, detail)


def _random_density(grid, rng, floor=0.05):
    modes = rng.normal(size=4) * np.array([1.0, 0.7, 0.4, 0.2])
    phases = rng.uniform(0, 2 * np.pi, 4)
    x = 2 * np.pi * grid.x / grid.L
    rho = floor + (1.0 + sum(a * np.cos((k + 1) * x + p)
                             for k, (a, p) in enumerate(zip(modes, phases)))) ** 2
    return rho / (np.sum(rho) * grid.dx)


def _random_momentum(rho, vscale, rng, grid):
    u = rng.normal(size=4)
    x = 2 * np.pi * grid.x / grid.L
    prof = sum(a * np.cos((k + 1) * x + rng.uniform(0, 2 * np.pi))
               for k, a in enumerate(u))
    return rho * vscale * prof / max(1.0, np.max(np.abs(prof)))


def crit06_operator_properties(cache) -> CriterionResult:
    """100 random densities per model: <1>_rho = 1, reproducing row sums,
    Schur energy bound, contractivity of conservative models, and a finite
    interpolated-kernel comparison constant for beta in {0, 1/2, 1}."""
    grid, _ = _desk_grids()
    rng = np.random.default_rng(1234)
    dx = grid.dx
    models = {kind: make_model(grid, kind) for kind in ("cs", "mt", "beta", "filtered", "seg")}
    worst = {"avg1": 0.0, "row": 0.0, "energy": 0.0, "contract": 0.0}
    kmt_c = {0.0: 0.0, 0.5: 0.0, 1.0: 0.0}
    phi = models["cs"].kernel.samples
    for trial in range(100):
        rho = _random_density(grid, rng)
        m = _random_momentum(rho, 2.0, rng, grid)
        for kind, model in models.items():
            ones_dev = np.max(np.abs(average(model, rho, rho) - 1.0))
            Phi = kernel_phi_rho(model, rho)
            row_dev = np.max(np.abs(Phi @ rho * dx - strength(model, rho)))
            from .models import energy_bound_check

            ratio = energy_bound_check(model, rho, m)
            worst["avg1"] = max(worst["avg1"], float(ones_dev))
            worst["row"] = max(worst["row"], float(row_dev))
            worst["energy"] = max(worst["energy"], ratio - 1.0)
            if kind in ("cs", "filtered", "seg"):
                lhs = float(np.sum(weighted_average(model, rho, m) * m) * dx)
                rhs = float(np.sum(m ** 2 / rho * strength(model, rho)) * dx)
                worst["contract"] = max(worst["contract"], lhs - rhs)
        conv = periodic_convolve(rho, phi, dx)
        for beta in kmt_c:
            lhs = periodic_convolve(rho / conv ** (1.0 - beta), phi, dx)
            kmt_c[beta] = max(kmt_c[beta], float(np.max(lhs / conv ** beta)))
    kmt_ok = all(np.isfinite(c) for c in kmt_c.values())
    ok = (worst["avg1"] <= 1e-10 and worst["row"] <= 1e-10
          and worst["energy"] <= 1e-8 and worst["contract"] <= 1e-10 and kmt_ok)
    detail = (f"max|<1>-1|={worst['avg1']:.1e}, row dev {worst['row']:.1e} (<=1e-10), "
              f"energy ratio excess {worst['energy']:.1e} (<=1e-8), "
              f"contractivity excess {worst['contract']:.1e}, "
              f"comparison constants C(beta)=" +
              "/".join(f"{kmt_c[b]:.2f}" for b in (0.0, 0.5, 1.0)))
    return CriterionResult("6 operator properties", ok, detail)


def crit07_spectral_gap(cache) -> CriterionResult:
    """Dense gap matches the Fourier formula at uniform density to 1e-8; the
    gap shrinks monotonically along a 5-point thinning-density sweep.

    The sweep realizes the consensus bottleneck that actually starves the
    gap: two communities outside each other's kernel reach, joined by a
    bridge whose level sets the global thickness.  The kernel is a local
    Bochner kernel (support strictly below the community separation);
    concentrating a single connected flock would raise the gap instead.
    """
    grid, _ = _desk_grids()
    model = make_model(grid, "cs", kernel=make_kernel(grid, "bochner", radius=0.125))
    rho_u = np.full(grid.Nx, 1.0 / grid.L)
    dense = spectral_gap(model, rho_u)
    fourier = spectral_gap_fourier(model)
    fourier_dev = abs(dense - fourier)

    from .grid import mollifier_chi

    def two_bump(floor, w=0.15):
        rho = (mollifier_chi(grid.torus_distance(grid.x - 0.25) / w)
               + mollifier_chi(grid.torus_distance(grid.x - 0.75) / w) + floor)
        return rho / (np.sum(rho) * grid.dx)

    thetas, gaps = [], []
    for floor in (0.6, 0.25, 0.1, 0.03, 0.008):
        rho = two_bump(floor)
        _, tmin = thickness(rho, model.r0, grid)
        thetas.append(tmin)
        gaps.append(spectral_gap(model, rho))
    mono_theta = all(a > b for a, b in zip(thetas, thetas[1:]))
    mono_gap = all(a > b for a, b in zip(gaps, gaps[1:]))
    ok = fourier_dev <= 1e-8 and mono_theta and mono_gap
    return CriterionResult(
        "7 spectral gap", ok,
        f"dense vs fourier dev {fourier_dev:.1e} (<=1e-8); sweep theta_min "
        + "->".join(f"{t:.3f}" for t in thetas) + ", eps0 "
        + "->".join(f"{g:.5f}" for g in gaps)
        + f", monotone {'yes' if (mono_theta and mono_gap) else 'NO'}")


def crit08_mean_field(cache) -> CriterionResult:
    """Paired-seed particle runs at N=2000 vs N=8000 against the kinetic
    density at t=1: the larger ensemble wins >= 90% of 32 seed pairs and the
    mean L1 ratio sits in [0.3, 0.8].

    Particle steps use dt=0.02: the Euler-Maruyama bias is common to both
    ensemble sizes and cancels in the pairing, while the O(N^2) pair sums stay
    inside the criterion's runtime budget.
    """
    from .particles import empirical_macro, make_ensemble, make_rng, run_em

    grid, vgrid = _desk_grids()
    model = make_model(grid, "cs")
    state = init_preset("bimodal", {}, grid, vgrid, 1.0)
    cfg = SolverConfig(sigma=1.0, dt=DESK["dt"], t_end=1.0, snapshot_every=0)
    cur = state
    for _ in range(1000):
        cur = step(cur, model, cfg)
    rho_k, _ = moments(cur)

    dt_p = 0.02
    n_steps = int(round(1.0 / dt_p))
    wins = 0
    l1 = {2000: [], 8000: []}
    for seed in range(32):
        dists = {}
        for N in (2000, 8000):
            ens = make_ensemble(N, 1000 * seed + N, "bimodal", grid, vgrid, 1.0)
            ens = run_em(ens, model, 1.0, dt_p, n_steps, make_rng(7000 + seed))
            rho_p, _ = empirical_macro(ens, grid)
            dists[N] = float(np.sum(np.abs(rho_p - rho_k)) * grid.dx)
            l1[N].append(dists[N])
        wins += dists[8000] < dists[2000]
    ratio = float(np.mean(l1[8000]) / np.mean(l1[2000]))
    ok = wins >= 29 and 0.3 <= ratio <= 0.8
    return CriterionResult(
        "8 mean-field consistency", ok,
        f"N=8000 wins {wins}/32 (need >=29), mean L1 ratio {ratio:.3f} (in [0.3, 0.8])")


def crit09_deterministic_alignment(cache) -> CriterionResult:
    """Noise-free global-kernel flock aligns below 1e-3 by t=20 with the mean
    velocity conserved; the two-body closed form is matched to 1%."""
    from .particles import ParticleEnsemble, make_rng, run_em

    grid, vgrid = _desk_grids()
    model = make_model(grid, "cs", kernel=make_kernel(grid, "uniform"))
    rng = make_rng(5)
    N = 100
    ens = ParticleEnsemble(x=rng.random(N), v=rng.uniform(-1, 1, N),
                           mass=np.full(N, 1.0 / N))
    vbar0 = ens.mean_velocity()
    ens = run_em(ens, model, 0.0, DESK["dt"], 20000, rng)
    max_dev = float(np.max(np.abs(ens.v - vbar0)))
    vbar_drift = abs(ens.mean_velocity() - vbar0)

    pair = ParticleEnsemble(x=np.array([0.2, 0.7]), v=np.array([1.0, -1.0]),
                            mass=np.array([0.5, 0.5]))
    pair = run_em(pair, model, 0.0, DESK["dt"], 1000, make_rng(6))
    gap = float(pair.v[0] - pair.v[1])
    gap_err = abs(gap - 2.0 * math.exp(-1.0)) / (2.0 * math.exp(-1.0))
    ok = max_dev < 1e-3 and vbar_drift <= 1e-10 and gap_err <= 0.01
    return CriterionResult(
        "9 deterministic alignment", ok,
        f"max|v-vbar| at t=20: {max_dev:.2e} (<1e-3), vbar drift {vbar_drift:.1e} "
        f"(<=1e-10), two-body gap rel err {gap_err:.2e} (<=0.01)")


def crit10_velocity_step_oracle(cache) -> CriterionResult:
    """Mean and variance ODEs of the drift-diffusion column step match the
    closed forms to 1e-3."""
    _, vgrid = _desk_grids()
    v, wt = vgrid.v, vgrid.weights
    g = np.exp(-((v - 1.0) ** 2) / (2 * 0.1))
    g /= np.sum(g * wt)
    worst = 0.0
    checks = []
    t = 0.0
    for t_target in (0.25, 0.5, 1.0):
        while t < t_target - 1e-12:
            g = fp_velocity_step(g, 1.0, 0.0, 1.0, DESK["dt"], vgrid)
            t += DESK["dt"]
        mass = float(np.sum(g * wt))
        mean = float(np.sum(v * g * wt) / mass)
        var = float(np.sum((v - mean) ** 2 * g * wt) / mass)
        mean_ex = math.exp(-t)
        var_ex = 1.0 + (0.1 - 1.0) * math.exp(-2 * t)
        worst = max(worst, abs(mean - mean_ex), abs(var - var_ex))
        checks.append(f"t={t_target}: |dmean|={abs(mean - mean_ex):.1e} "
                      f"|dvar|={abs(var - var_ex):.1e}")
    ok = worst <= 1e-3
    return CriterionResult("10 velocity-step oracle", ok,
                           "; ".join(checks) + " (<=1e-3)")


def crit11_moment_propagation(cache) -> CriterionResult:
    """m8(t) <= m8(0) e^{Ct} with C <= 10 on the acceptance runs; tapered
    moments increase monotonically in the taper scale."""
    _, series, _, initial = _bimodal_cs_run(cache)
    growth = [math.log(r.m8 / series[0].m8) / r.t for r in series if r.t > 0.05]
    c_emp = max(growth) if growth else 0.0
    t_small = tapered_moment(initial, 2, 10.0)
    t_large = tapered_moment(initial, 2, 100.0)
    full = moment_q(initial, 2)
    mono = t_small <= t_large <= full + 1e-12
    vac = cache.get("vacuous_t1")
    if vac is not None:
        mono = mono and (tapered_moment(vac, 2, 10.0) <= tapered_moment(vac, 2, 100.0)
                         <= moment_q(vac, 2) + 1e-12)
    ok = c_emp <= 10.0 and mono
    return CriterionResult(
        "11 moment propagation", ok,
        f"recorded C = {c_emp:.3f} (<=10), tapered monotone in R: {mono}")


CRITERIA = {
    "1": crit01_structure_preservation,
    "2": crit02_maxwellian_fixed_point,
    "3": crit03_entropy_equality,
    "4": crit04_exponential_relaxation,
    "5": crit05_gaussian_tail_gain,
    "6": crit06_operator_properties,
    "7": crit07_spectral_gap,
    "8": crit08_mean_field,
    "9": crit09_deterministic_alignment,
    "10": crit10_velocity_step_oracle,
    "11": crit11_moment_propagation,
}

SLOW = {"3", "8"}


def run_all(only=None, skip_slow=False, progress=print):
    cache = {}
    selected = [k for k in CRITERIA if only is None or k in set(only)]
    results = []
    for key in selected:
        if skip_slow and key in SLOW:
            progress(f"criterion {key}: skipped (slow)")
            continue
        t0 = time.time()
        res = CRITERIA[key](cache)
        progress(f"{'PASS' if res.passed else 'FAIL'}  {res.name} "
                 f"[{time.time() - t0:.1f}s]")
        results.append(res)
    return results
