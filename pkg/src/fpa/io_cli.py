"""Configuration parsing, initial-data presets, snapshot/series formats, and
the `fpa` command-line entry points.

Config grammar: INI-style text with `[section]` headers and `key = value`
lines; `#` or `;` start a comment.  Unknown sections or keys are hard errors
reported with their line number.  Every key has a default, so the empty file
is a valid config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from .grid import KineticState, PeriodicGrid, VelocityGrid, make_grids, maxwellian, mollifier_chi
from .models import ModelSpec, make_kernel, make_model
from .solver import SolverConfig, run
from .diagnostics import SERIES_COLUMNS, SeriesTracker

SERIES_SCHEMA = "fpa-series-1"
COMPARE_SCHEMA = "fpa-compare-1"
PARTICLES_SCHEMA = "fpa-particles-1"
GAP_SCHEMA = "fpa-gap-1"


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    kind: str = "cs"
    beta: float = 0.5
    kernel: str = "bump"
    radius: float = 0.0          # 0 -> shape default (0.35 L bump, 0.25 L bochner)
    r0: float = 0.0              # 0 -> half the kernel radius
    partition: str = "pair"


@dataclass
class GridSection:
    L: float = 1.0
    Nx: int = 64
    vmax: float = 8.0
    Nv: int = 257


@dataclass
class SimSection:
    sigma: float = 1.0
    dt: float = 1e-3
    t_end: float = 5.0
    splitting: str = "strang"


@dataclass
class InitSection:
    preset: str = "bimodal"
    u0: float = 1.0
    amplitude: float = 0.2
    ubar: float = 0.0
    v0: float = 2.0
    path: str = ""


@dataclass
class ParticlesSection:
    enabled: bool = False
    N: int = 2000
    seed: int = 0
    dt: float = 0.0              # 0 -> use sim.dt


@dataclass
class OutputSection:
    directory: str = "out"
    snapshot_every: int = 1000
    series_every: int = 10
    q_moment: float = 2.0


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    sim: SimSection = field(default_factory=SimSection)
    init: InitSection = field(default_factory=InitSection)
    particles: ParticlesSection = field(default_factory=ParticlesSection)
    output: OutputSection = field(default_factory=OutputSection)


_SECTIONS = {
    "model": ModelSection,
    "grid": GridSection,
    "sim": SimSection,
    "init": InitSection,
    "particles": ParticlesSection,
    "output": OutputSection,
}


def _convert(raw: str, target_type, where: str):
    if target_type is bool:
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    try:
        return target_type(raw)
    except ValueError:
        raise ConfigError(f"{where}: expected {target_type.__name__}, got {raw!r}") from None


def _validate(cfg: RunConfig):
    checks = [
        (cfg.model.kind.lower() in ("cs", "mt", "beta", "filtered", "seg"),
         f"model.kind: unknown model {cfg.model.kind!r}"),
        (cfg.model.kernel in ("bump", "bochner", "uniform"),
         f"model.kernel: unknown shape {cfg.model.kernel!r}"),
        (0.0 <= cfg.model.beta <= 1.0, f"model.beta: must lie in [0, 1], got {cfg.model.beta}"),
        (cfg.sim.sigma > 0, f"sim.sigma: must be > 0, got {cfg.sim.sigma}"),
        (cfg.sim.dt > 0, f"sim.dt: must be > 0, got {cfg.sim.dt}"),
        (cfg.sim.t_end >= 0, f"sim.t_end: must be >= 0, got {cfg.sim.t_end}"),
        (cfg.sim.splitting in ("strang", "lie"),
         f"sim.splitting: must be strang or lie, got {cfg.sim.splitting!r}"),
        (cfg.grid.L > 0, f"grid.L: must be > 0, got {cfg.grid.L}"),
        (cfg.grid.vmax > 0, f"grid.vmax: must be > 0, got {cfg.grid.vmax}"),
        (cfg.init.preset in ("maxwellian", "shifted-maxwellian", "bimodal",
                             "vacuous-half-torus", "file"),
         f"init.preset: unknown preset {cfg.init.preset!r}"),
        (cfg.particles.N > 0, f"particles.N: must be > 0, got {cfg.particles.N}"),
        (cfg.particles.dt >= 0, f"particles.dt: must be >= 0, got {cfg.particles.dt}"),
        (cfg.output.series_every > 0,
         f"output.series_every: must be > 0, got {cfg.output.series_every}"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


def parse_config(text: str) -> RunConfig:
    """Parse and validate config text; errors carry the offending line number."""
    cfg = RunConfig()
    section = None
    section_name = ""
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section_name = line[1:-1].strip().lower()
            if section_name not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section_name}]")
            section = getattr(cfg, section_name)
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {rawline!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside of any [section]")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        legal = {f.name: f.type for f in fields(section)}
        if key not in legal:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section_name}]")
        current = getattr(section, key)
        setattr(section, key, _convert(raw, type(current), f"line {lineno}: {section_name}.{key}"))
    _validate(cfg)
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for name in _SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in fields(section):
            lines.append(f"{f.name} = {getattr(section, f.name)}")
        lines.append("")
    return "\n".join(lines)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def build_grids(cfg: RunConfig):
    return make_grids(cfg.grid.L, cfg.grid.Nx, cfg.grid.vmax, cfg.grid.Nv,
                      cfg.sim.sigma)


def _parse_partition(spec: str):
    if spec in ("pair", "pair-full"):
        return spec
    pairs = []
    for chunk in spec.split(","):
        center, _, radius = chunk.partition(":")
        pairs.append((float(center), float(radius)))
    return pairs


def build_model(cfg: RunConfig, grid: PeriodicGrid) -> ModelSpec:
    radius = cfg.model.radius if cfg.model.radius > 0 else None
    r0 = cfg.model.r0 if cfg.model.r0 > 0 else None
    kernel = make_kernel(grid, cfg.model.kernel, radius=radius, r0=r0)
    return make_model(grid, cfg.model.kind.lower(), kernel=kernel,
                      beta=cfg.model.beta,
                      partition=_parse_partition(cfg.model.partition))


def init_preset(name: str, params: dict, grid: PeriodicGrid, vgrid: VelocityGrid,
                sigma: float) -> KineticState:
    """Initial phase-space densities, each normalized to unit mass."""
    v = vgrid.v
    x = grid.x
    if name == "maxwellian":
        f = maxwellian(grid, vgrid, sigma, ubar=params.get("ubar", 0.0))
        return KineticState(grid, vgrid, f)
    if name == "shifted-maxwellian":
        f = maxwellian(grid, vgrid, sigma, ubar=params.get("u0", 1.0))
        return KineticState(grid, vgrid, f)
    if name == "bimodal":
        u0 = params.get("u0", 1.0)
        amp = params.get("amplitude", 0.2)
        s4 = sigma / 4.0
        gp = np.exp(-((v - u0) ** 2) / (2 * s4))
        gm = np.exp(-((v + u0) ** 2) / (2 * s4))
        two_pi = 2.0 * np.pi / grid.L
        wp = 1.0 + amp * np.cos(two_pi * x)
        wm = 1.0 + amp * np.sin(two_pi * x)
        f = wp[:, None] * gp[None, :] + wm[:, None] * gm[None, :]
    elif name == "vacuous-half-torus":
        v0 = params.get("v0", 2.0)
        quarter = grid.L / 4.0
        fx = mollifier_chi((x - quarter) / quarter)
        fv = mollifier_chi(v / v0)
        f = fx[:, None] * fv[None, :]
    elif name == "file":
        state, _ = read_snapshot(params["path"])
        return state
    else:
        raise ConfigError(f"unknown preset {name!r}")
    state = KineticState(grid, vgrid, f)
    return KineticState(grid, vgrid, f / state.mass)


def build_initial(cfg: RunConfig, grid: PeriodicGrid, vgrid: VelocityGrid) -> KineticState:
    params = {"u0": cfg.init.u0, "amplitude": cfg.init.amplitude,
              "ubar": cfg.init.ubar, "v0": cfg.init.v0, "path": cfg.init.path}
    return init_preset(cfg.init.preset, params, grid, vgrid, cfg.sim.sigma)


def write_snapshot(state: KineticState, path: str, sigma: float):
    """One-line JSON header + raw little-endian float64 payload, row-major
    with x outer and v inner.  Round trips bit-exactly."""
    header = {
        "Nx": state.grid.Nx, "Nv": state.vgrid.Nv, "L": state.grid.L,
        "vmax": state.vgrid.vmax, "sigma": sigma, "t": state.t,
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("ascii"))
        fh.write(state.f.astype("<f8", copy=False).tobytes())


def read_snapshot(path: str):
    """Inverse of `write_snapshot`; returns (state, sigma).

    The format is little-endian by definition; big-endian hosts byte-swap on
    read and write.
    """
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("ascii"))
            Nx, Nv = int(header["Nx"]), int(header["Nv"])
            L, vmax = float(header["L"]), float(header["vmax"])
            sigma, t = float(header["sigma"]), float(header["t"])
        except (ValueError, KeyError) as exc:
            raise ValueError(f"bad snapshot header in {path}: {exc}") from None
        payload = fh.read()
    expected = Nx * Nv * 8
    if len(payload) != expected:
        raise ValueError(
            f"snapshot payload is {len(payload)} bytes, header implies {expected}"
        )
    f = np.frombuffer(payload, dtype="<f8").reshape(Nx, Nv).copy()
    grid = PeriodicGrid(L=L, Nx=Nx)
    vgrid = VelocityGrid(vmax=vmax, Nv=Nv)
    return KineticState(grid, vgrid, f, t=t), sigma


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_series_csv(series, path: str):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# schema: {SERIES_SCHEMA}\n")
        fh.write(",".join(SERIES_COLUMNS) + "\n")
        for rec in series:
            fh.write(",".join(_fmt(v) for v in rec.row()) + "\n")


def write_rows_csv(path: str, schema: str, header, rows):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# schema: {schema}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# subcommands

def _ensure_outdir(cfg: RunConfig) -> str:
    outdir = cfg.output.directory
    os.makedirs(outdir, exist_ok=True)
    return outdir


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    grid, vgrid = build_grids(cfg)
    model = build_model(cfg, grid)
    state = build_initial(cfg, grid, vgrid)
    outdir = _ensure_outdir(cfg)

    solver_cfg = SolverConfig(sigma=cfg.sim.sigma, dt=cfg.sim.dt,
                              t_end=cfg.sim.t_end, splitting=cfg.sim.splitting,
                              snapshot_every=cfg.output.snapshot_every,
                              series_every=cfg.output.series_every)
    tracker = SeriesTracker(model, cfg.sim.sigma, q=cfg.output.q_moment)
    final, series, snapshots = run(state, model, solver_cfg,
                                   diagnostics_fn=tracker.record)
    write_series_csv(series, os.path.join(outdir, "series.csv"))
    for step_idx, snap in snapshots:
        write_snapshot(snap, os.path.join(outdir, f"snap_{step_idx:08d}.bin"),
                       cfg.sim.sigma)
    last = series[-1]
    print(f"run finished: t={final.t:.6g} mass={last.mass:.12f} "
          f"dist_maxwellian={last.dist_maxwellian:.3e}")
    print(f"series: {os.path.join(outdir, 'series.csv')} ({len(series)} rows), "
          f"{len(snapshots)} snapshots")
    return 0


def cmd_particles(args) -> int:
    from .particles import em_step, empirical_macro, make_ensemble, make_rng

    cfg = load_config(args.config)
    grid, vgrid = build_grids(cfg)
    model = build_model(cfg, grid)
    outdir = _ensure_outdir(cfg)
    dt = cfg.particles.dt if cfg.particles.dt > 0 else cfg.sim.dt
    ens = make_ensemble(cfg.particles.N, cfg.particles.seed, cfg.init.preset,
                        grid, vgrid, cfg.sim.sigma,
                        u0=cfg.init.u0, amplitude=cfg.init.amplitude,
                        ubar=cfg.init.ubar, v0=cfg.init.v0)
    rng = make_rng(cfg.particles.seed + 1)
    n_steps = int(round(cfg.sim.t_end / dt))

    def stats_row(e):
        vbar = e.mean_velocity()
        var = float(np.sum(e.mass * (e.v - vbar) ** 2))
        rho, _ = empirical_macro(e, grid)
        l1_unif = float(np.sum(np.abs(rho - 1.0 / grid.L)) * grid.dx)
        return [e.t, vbar, var, float(np.max(np.abs(e.v - vbar))), l1_unif]

    rows = [stats_row(ens)]
    for k in range(1, n_steps + 1):
        ens = em_step(ens, model, cfg.sim.sigma, dt, rng)
        if k % cfg.output.series_every == 0 or k == n_steps:
            rows.append(stats_row(ens))
    path = os.path.join(outdir, "particles.csv")
    write_rows_csv(path, PARTICLES_SCHEMA,
                   ["t", "mean_v", "var_v", "max_dev", "l1_to_uniform"], rows)
    print(f"particles finished: t={ens.t:.6g} N={ens.N} -> {path}")
    return 0


def cmd_compare(args) -> int:
    from .particles import em_step, empirical_macro, make_ensemble, make_rng
    from .grid import moments

    cfg = load_config(args.config)
    grid, vgrid = build_grids(cfg)
    model = build_model(cfg, grid)
    outdir = _ensure_outdir(cfg)

    solver_cfg = SolverConfig(sigma=cfg.sim.sigma, dt=cfg.sim.dt,
                              t_end=cfg.sim.t_end, splitting=cfg.sim.splitting,
                              snapshot_every=0, series_every=cfg.output.series_every)
    state = build_initial(cfg, grid, vgrid)
    dt_p = cfg.particles.dt if cfg.particles.dt > 0 else cfg.sim.dt
    ens = make_ensemble(cfg.particles.N, cfg.particles.seed, cfg.init.preset,
                        grid, vgrid, cfg.sim.sigma,
                        u0=cfg.init.u0, amplitude=cfg.init.amplitude,
                        ubar=cfg.init.ubar, v0=cfg.init.v0)
    rng = make_rng(cfg.particles.seed + 1)

    from .solver import step as kinetic_step

    n_steps = int(round(cfg.sim.t_end / cfg.sim.dt))
    ratio = max(1, int(round(cfg.sim.dt / dt_p))) if dt_p < cfg.sim.dt else 1
    stride = max(1, int(round(dt_p / cfg.sim.dt)))

    def l1_row():
        rho_k, _ = moments(state)
        rho_p, _ = empirical_macro(ens, grid)
        return [state.t, float(np.sum(np.abs(rho_k - rho_p)) * grid.dx)]

    rows = [l1_row()]
    for k in range(1, n_steps + 1):
        state = kinetic_step(state, model, solver_cfg)
        if k % stride == 0:
            for _ in range(ratio):
                ens = em_step(ens, model, cfg.sim.sigma, dt_p, rng)
        if k % cfg.output.series_every == 0 or k == n_steps:
            rows.append(l1_row())
    path = os.path.join(outdir, "compare.csv")
    write_rows_csv(path, COMPARE_SCHEMA, ["t", "l1_density_distance"], rows)
    print(f"compare finished: t={state.t:.6g} final L1 distance {rows[-1][1]:.4f} -> {path}")
    return 0


def _density_from_spec(spec: str, grid: PeriodicGrid) -> np.ndarray:
    if spec == "uniform":
        return np.full(grid.Nx, 1.0 / grid.L)
    if spec.startswith("bump"):
        width = float(spec.partition(":")[2]) if ":" in spec else 0.25 * grid.L
        rho = mollifier_chi(grid.torus_distance(grid.x - grid.L / 2) / width) + 1e-6
        return rho / (np.sum(rho) * grid.dx)
    rho = np.loadtxt(spec, delimiter=",", dtype=float).ravel()
    if rho.size != grid.Nx:
        raise ConfigError(f"density file has {rho.size} values, grid needs {grid.Nx}")
    if np.any(rho < 0):
        raise ConfigError("density file contains negative values")
    return rho / (np.sum(rho) * grid.dx)


def cmd_gap(args) -> int:
    from .models import conservative_residual, schur_constants, spectral_gap

    cfg = load_config(args.config)
    if args.model:
        cfg.model.kind = args.model
        _validate(cfg)
    grid, _ = build_grids(cfg)
    model = build_model(cfg, grid)
    rho = _density_from_spec(args.density, grid)
    eps0 = spectral_gap(model, rho)
    sbar, srbar = schur_constants(model, rho)
    resid = conservative_residual(model, rho)
    header = ["model", "kernel", "density", "eps0", "sbar", "srbar", "cons_residual"]
    row = [model.kind, cfg.model.kernel, args.density, eps0, sbar, srbar, resid]
    print(",".join(header))
    print(",".join(_fmt(v) for v in row))
    if args.out:
        write_rows_csv(args.out, GAP_SCHEMA, header, [row])
    return 0


def cmd_verify(args) -> int:
    from . import acceptance

    only = args.only.split(",") if args.only else None
    results = acceptance.run_all(only=only, skip_slow=args.skip_slow)
    failed = [r for r in results if not r.passed]
    print()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.details}")
    print(f"\n{len(results) - len(failed)}/{len(results)} criteria passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fpa",
        description="Kinetic alignment dynamics: solver, agents, operator analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="kinetic run: series CSV + snapshots")
    p_run.add_argument("config", nargs="?", default=None)
    p_run.set_defaults(func=cmd_run)

    p_part = sub.add_parser("particles", help="agent-based run: statistics CSV")
    p_part.add_argument("config", nargs="?", default=None)
    p_part.set_defaults(func=cmd_particles)

    p_cmp = sub.add_parser("compare", help="kinetic vs particles L1 density series")
    p_cmp.add_argument("config", nargs="?", default=None)
    p_cmp.set_defaults(func=cmd_compare)

    p_gap = sub.add_parser("gap", help="averaging-operator analysis table")
    p_gap.add_argument("config", nargs="?", default=None)
    p_gap.add_argument("--model", default=None,
                       help="override model kind (cs, mt, beta, filtered, seg)")
    p_gap.add_argument("--density", default="uniform",
                       help="uniform | bump[:width] | <csv file with Nx values>")
    p_gap.add_argument("--out", default=None, help="also write the row to this CSV")
    p_gap.set_defaults(func=cmd_gap)

    p_ver = sub.add_parser("verify", help="run the acceptance suite")
    p_ver.add_argument("config", nargs="?", default=None)
    p_ver.add_argument("--only", default=None,
                       help="comma-separated criterion numbers, e.g. 1,6,7")
    p_ver.add_argument("--skip-slow", action="store_true",
                       help="skip criteria with multi-minute runtimes")
    p_ver.set_defaults(func=cmd_verify)

    args = parser.parse_args(argv)
    threads = os.environ.get("FPA_THREADS", "0")
    try:
        int(threads)
    except ValueError:
        print(f"warning: FPA_THREADS={threads!r} is not an integer; ignoring",
              file=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
