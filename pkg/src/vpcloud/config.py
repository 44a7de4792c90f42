"""Run configuration: flat key-value text with one section per subsystem.

Unknown sections or keys are hard errors (fail fast against typos), reported
with the offending line.  A config serializes canonically, and that text is
embedded in every artifact the run produces.
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import SimulationError, SamplerSpec
from .dynamics import TimeSchedule
from .field import ProbeSpec

FORMAT_VERSION = "vpcloud-1"

CHECK_NAMES = (
    "virial",
    "interpolation",
    "lrho",
    "em",
    "le",
    "l2",
    "small-data",
    "bootstrap",
    "scattering",
    "profiles",
)

# checks that only monitor a ratio with an implicit constant never gate the
# process exit status
MONITORED_CHECKS = ("lrho", "em")


class ConfigError(SimulationError):
    pass


@dataclass(frozen=True)
class GridConfig:
    """Deposit-grid parameters.

    density_* controls the self-similar density grid (spatial bounds grow
    like (t + alpha)); profile_* controls the fixed grid in the profile
    variable u = x/(t + alpha), shared with velocity space.
    """

    density_radius_factor: float = 3.0
    density_cells: int = 8
    profile_radius: float = 3.0
    profile_cells: int = 12

    def __post_init__(self):
        if self.density_radius_factor <= 0 or self.profile_radius <= 0:
            raise ValueError("grid radii must be positive")
        if self.density_cells < 2 or self.profile_cells < 2:
            raise ValueError("grids need at least 2 cells per axis")


@dataclass(frozen=True)
class RunConfig:
    """Full experiment description; serializable and embedded in artifacts."""

    d: int
    alpha: float
    seed: int
    field_enabled: bool
    moment_orders: tuple[float, float, float]
    sampler: SamplerSpec
    softening: float | str
    softening_auto_factor: float
    schedule: TimeSchedule
    probes: ProbeSpec
    grids: GridConfig
    outdir: str
    basename: str
    checks: tuple[str, ...]
    fit_window: tuple[float, float]
    small_data_epsilon: float
    source_text: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("dimension must be >= 2")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if len(self.moment_orders) != 3 or self.moment_orders[0] != 0.0 or self.moment_orders[1] != 2.0:
            raise ValueError("moment_orders must be (0, 2, n)")
        if self.moment_orders[2] <= 0:
            raise ValueError("check moment order n must be positive")
        if isinstance(self.softening, str):
            if self.softening != "auto":
                raise ValueError("softening must be a number or 'auto'")
        elif not (self.softening >= 0 and math.isfinite(self.softening)):
            raise ValueError("softening must be finite and >= 0")
        for c in self.checks:
            if c not in CHECK_NAMES:
                raise ValueError(f"unknown check {c!r}")
        lo, hi = self.fit_window
        if not (0 <= lo < hi):
            raise ValueError("fit window must satisfy 0 <= lo < hi")

    @property
    def n_order(self) -> float:
        return self.moment_orders[2]

    def canonical_text(self) -> str:
        return self.source_text if self.source_text is not None else to_ini(self)


def default_n_order(d: int) -> float:
    return float(d * (d - 1) + 1)


def make_config(
    *,
    d: int = 4,
    alpha: float = 1.0,
    seed: int = 1,
    field_enabled: bool = True,
    kind: str = "gaussian",
    n_particles: int = 4096,
    total_charge: float = 1.0,
    sigma_z: float = 1.0,
    sigma_v: float = 1.0,
    center_z=None,
    center_v=None,
    tail_index: float | None = None,
    n_order: float | None = None,
    softening: float | str = "auto",
    softening_auto_factor: float = 0.5,
    schedule: TimeSchedule | None = None,
    probes: ProbeSpec | None = None,
    grids: GridConfig | None = None,
    outdir: str = "out",
    basename: str = "run",
    checks: tuple[str, ...] = (),
    fit_window: tuple[float, float] = (10.0, 100.0),
    small_data_epsilon: float = 1e-2,
) -> RunConfig:
    """Assemble a RunConfig from keyword arguments with spec defaults."""
    n = default_n_order(d) if n_order is None else float(n_order)
    sampler = SamplerSpec(
        kind=kind,
        d=d,
        n_particles=n_particles,
        total_charge=total_charge,
        alpha=alpha,
        sigma_z=sigma_z,
        sigma_v=sigma_v,
        center_z=center_z,
        center_v=center_v,
        tail_index=tail_index,
        moment_order=n if kind == "heavy_tail" else None,
    )
    return RunConfig(
        d=d,
        alpha=alpha,
        seed=seed,
        field_enabled=field_enabled,
        moment_orders=(0.0, 2.0, n),
        sampler=sampler,
        softening=softening,
        softening_auto_factor=softening_auto_factor,
        schedule=schedule if schedule is not None else TimeSchedule(),
        probes=probes if probes is not None else ProbeSpec(),
        grids=grids if grids is not None else GridConfig(),
        outdir=outdir,
        basename=basename,
        checks=checks,
        fit_window=fit_window,
        small_data_epsilon=small_data_epsilon,
    )


_SCHEMA: dict[str, tuple[str, ...]] = {
    "run": ("dimension", "alpha", "seed", "field_enabled", "moment_orders"),
    "sampler": (
        "kind",
        "n_particles",
        "total_charge",
        "sigma_z",
        "sigma_v",
        "center_z",
        "center_v",
        "tail_index",
    ),
    "softening": ("epsilon", "auto_factor"),
    "schedule": (
        "mode",
        "dt0",
        "growth",
        "dt_max",
        "dt_max_rel",
        "t_end",
        "record_every",
        "record_first",
        "record_factor",
    ),
    "probes": ("radius_factor", "cells_per_axis", "include_particles"),
    "grids": (
        "density_radius_factor",
        "density_cells",
        "profile_radius",
        "profile_cells",
    ),
    "output": ("directory", "basename"),
    "checks": ("selection", "fit_window_lo", "fit_window_hi", "small_data_epsilon"),
}


def _line_of(text: str, needle: str) -> int:
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and needle == s:
            return i
        if "=" in s and s.split("=", 1)[0].strip() == needle:
            return i
    return 0


def _fail(text: str, needle: str, msg: str):
    ln = _line_of(text, needle)
    where = f"line {ln}: " if ln else ""
    raise ConfigError(where + msg)


def _vector(raw: str | None, d: int, name: str):
    if raw is None or raw.strip() == "":
        return None
    parts = [float(p) for p in raw.split(",")]
    if len(parts) != d:
        raise ConfigError(f"{name} needs {d} components, got {len(parts)}")
    return np.array(parts)


def from_ini(text: str) -> RunConfig:
    """Parse and validate a config; every key is checked against the schema."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for section in cp.sections():
        if section not in _SCHEMA:
            _fail(text, f"[{section}]", f"unknown section [{section}]")
        for key in cp[section]:
            if key not in _SCHEMA[section]:
                _fail(text, key, f"unknown key {key!r} in [{section}]")

    def get(section, key, conv, default):
        if not cp.has_option(section, key):
            return default
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            _fail(text, key, f"bad value for {section}.{key}: {exc}")

    as_bool = lambda s: {"true": True, "false": False}[s.strip().lower()]
    d = get("run", "dimension", int, 4)
    alpha = get("run", "alpha", float, 1.0)
    orders_raw = get("run", "moment_orders", str, None)
    if orders_raw is None:
        orders = (0.0, 2.0, default_n_order(d))
    else:
        parts = tuple(float(p) for p in orders_raw.split(","))
        if len(parts) != 3:
            _fail(text, "moment_orders", "moment_orders must list exactly three orders")
        orders = parts

    kind = get("sampler", "kind", str, "gaussian")
    tail = get("sampler", "tail_index", float, None)
    sampler = SamplerSpec(
        kind=kind,
        d=d,
        n_particles=get("sampler", "n_particles", int, 4096),
        total_charge=get("sampler", "total_charge", float, 1.0),
        alpha=alpha,
        sigma_z=get("sampler", "sigma_z", float, 1.0),
        sigma_v=get("sampler", "sigma_v", float, 1.0),
        center_z=_vector(get("sampler", "center_z", str, None), d, "center_z"),
        center_v=_vector(get("sampler", "center_v", str, None), d, "center_v"),
        tail_index=tail,
        moment_order=orders[2] if kind == "heavy_tail" else None,
    )

    eps_raw = get("softening", "epsilon", str, "auto")
    softening: float | str = "auto" if eps_raw.strip() == "auto" else float(eps_raw)

    schedule = TimeSchedule(
        mode=get("schedule", "mode", str, "geometric"),
        dt0=get("schedule", "dt0", float, 0.01),
        growth=get("schedule", "growth", float, 1.02),
        dt_max=get("schedule", "dt_max", float, 5.0),
        dt_max_rel=get("schedule", "dt_max_rel", float, 0.05),
        t_end=get("schedule", "t_end", float, 100.0),
        record_every=get("schedule", "record_every", int, 10),
        record_first=get("schedule", "record_first", float, 0.25),
        record_factor=get("schedule", "record_factor", float, 1.25),
    )
    if schedule.mode == "fixed" and not cp.has_option("schedule", "growth"):
        schedule = replace(schedule, growth=1.0)

    probes = ProbeSpec(
        radius_factor=get("probes", "radius_factor", float, 3.0),
        cells_per_axis=get("probes", "cells_per_axis", int, 7),
        include_particles=get("probes", "include_particles", as_bool, True),
    )
    grids = GridConfig(
        density_radius_factor=get("grids", "density_radius_factor", float, 3.0),
        density_cells=get("grids", "density_cells", int, 8),
        profile_radius=get("grids", "profile_radius", float, 3.0),
        profile_cells=get("grids", "profile_cells", int, 12),
    )
    checks_raw = get("checks", "selection", str, "")
    checks = tuple(c.strip() for c in checks_raw.split(",") if c.strip())
    for c in checks:
        if c not in CHECK_NAMES:
            _fail(text, "selection", f"unknown check {c!r}")

    try:
        return RunConfig(
            d=d,
            alpha=alpha,
            seed=get("run", "seed", int, 1),
            field_enabled=get("run", "field_enabled", as_bool, True),
            moment_orders=orders,
            sampler=sampler,
            softening=softening,
            softening_auto_factor=get("softening", "auto_factor", float, 0.5),
            schedule=schedule,
            probes=probes,
            grids=grids,
            outdir=get("output", "directory", str, "out"),
            basename=get("output", "basename", str, "run"),
            checks=checks,
            fit_window=(
                get("checks", "fit_window_lo", float, 10.0),
                get("checks", "fit_window_hi", float, 100.0),
            ),
            small_data_epsilon=get("checks", "small_data_epsilon", float, 1e-2),
            source_text=text,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_ini(cfg: RunConfig) -> str:
    """Canonical serialization; stable key order, float repr round-trips."""
    out = io.StringIO()

    def section(name, pairs):
        out.write(f"[{name}]\n")
        for k, v in pairs:
            if v is None:
                continue
            out.write(f"{k} = {_fmt(v)}\n")
        out.write("\n")

    s = cfg.sampler
    section(
        "run",
        [
            ("dimension", cfg.d),
            ("alpha", cfg.alpha),
            ("seed", cfg.seed),
            ("field_enabled", cfg.field_enabled),
            ("moment_orders", ", ".join(repr(o) for o in cfg.moment_orders)),
        ],
    )
    section(
        "sampler",
        [
            ("kind", s.kind),
            ("n_particles", s.n_particles),
            ("total_charge", s.total_charge),
            ("sigma_z", s.sigma_z),
            ("sigma_v", s.sigma_v),
            ("center_z", None if s.center_z is None else ", ".join(repr(c) for c in s.center_z)),
            ("center_v", None if s.center_v is None else ", ".join(repr(c) for c in s.center_v)),
            ("tail_index", s.tail_index),
        ],
    )
    section(
        "softening",
        [("epsilon", cfg.softening), ("auto_factor", cfg.softening_auto_factor)],
    )
    sch = cfg.schedule
    section(
        "schedule",
        [
            ("mode", sch.mode),
            ("dt0", sch.dt0),
            ("growth", sch.growth),
            ("dt_max", sch.dt_max),
            ("dt_max_rel", sch.dt_max_rel),
            ("t_end", sch.t_end),
            ("record_every", sch.record_every),
            ("record_first", sch.record_first),
            ("record_factor", sch.record_factor),
        ],
    )
    section(
        "probes",
        [
            ("radius_factor", cfg.probes.radius_factor),
            ("cells_per_axis", cfg.probes.cells_per_axis),
            ("include_particles", cfg.probes.include_particles),
        ],
    )
    section(
        "grids",
        [
            ("density_radius_factor", cfg.grids.density_radius_factor),
            ("density_cells", cfg.grids.density_cells),
            ("profile_radius", cfg.grids.profile_radius),
            ("profile_cells", cfg.grids.profile_cells),
        ],
    )
    section("output", [("directory", cfg.outdir), ("basename", cfg.basename)])
    section(
        "checks",
        [
            ("selection", ", ".join(cfg.checks)),
            ("fit_window_lo", cfg.fit_window[0]),
            ("fit_window_hi", cfg.fit_window[1]),
            ("small_data_epsilon", cfg.small_data_epsilon),
        ],
    )
    return out.getvalue()
