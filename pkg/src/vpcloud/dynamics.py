"""Leapfrog integration of the characteristic system and run orchestration.

The working state lives in the translated coordinates (y, v) with
y = x - (t + alpha) v.  A kick changes v and compensates y so the position
is untouched; a drift is then just the time update, since x = y + (t+a) v.
This makes free transport an exact fixed point: with the field disabled the
state arrays are never written, so translated moments and the scattering
residual are bitwise constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from typing import TYPE_CHECKING

import numpy as np

from . import diagnostics
from .core import Ensemble, SimulationError, moment_of_radii, sample_initial
from .field import (
    ProbeSpec,
    Softening,
    accelerations,
    kinetic_energy,
    mean_nn_distance,
    pair_energy_terms,
    sup_field_estimate,
)

if TYPE_CHECKING:
    from .config import RunConfig


class BlowUpError(SimulationError):
    """Non-finite coordinate produced by a step; the repulsive system should
    never do this, so it indicates a numerical fault.

    When raised from run(), the partial series recorded so far is attached
    as .partial so callers can flush it before aborting.
    """

    partial: "RunResult | None" = None


@dataclass(frozen=True)
class TimeSchedule:
    """Step-size and diagnostic cadence control.

    growth = 1 reproduces fixed-step integration exactly.  In geometric mode
    the step is capped both by dt_max and by dt_max_rel * (t + alpha), and
    records are emitted at geometrically spaced target times; in fixed mode
    every record_every-th step is recorded.
    """

    mode: str = "geometric"
    dt0: float = 0.01
    growth: float = 1.02
    dt_max: float = 5.0
    dt_max_rel: float = 0.05
    t_end: float = 100.0
    record_every: int = 10
    record_first: float = 0.25
    record_factor: float = 1.25

    def __post_init__(self):
        if self.mode not in ("fixed", "geometric"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.dt0 <= 0:
            raise ValueError("dt0 must be positive")
        if self.growth < 1.0:
            raise ValueError("growth factor must be >= 1")
        if self.t_end < 0:
            raise ValueError("t_end must be >= 0")
        if self.mode == "fixed" and self.growth != 1.0:
            raise ValueError("fixed mode requires growth = 1")
        if self.record_every < 1 or self.record_factor <= 1.0 or self.record_first <= 0:
            raise ValueError("invalid diagnostic cadence")

    def step_size(self, k: int, t: float, alpha: float) -> float:
        dt = self.dt0 * self.growth**k
        dt = min(dt, self.dt_max)
        if self.mode == "geometric":
            dt = min(dt, self.dt_max_rel * (t + alpha))
        return min(dt, self.t_end - t)


@dataclass
class TrajectoryState:
    """Mutable integrator state in translated coordinates."""

    d: int
    alpha: float
    t: float
    y: np.ndarray
    v: np.ndarray
    w: np.ndarray
    n_steps: int = 0
    field_enabled: bool = True
    accel: np.ndarray | None = None
    threads: int = 1

    @classmethod
    def from_ensemble(
        cls, ens: Ensemble, *, field_enabled: bool = True, threads: int = 1
    ) -> "TrajectoryState":
        return cls(
            d=ens.d,
            alpha=ens.alpha,
            t=ens.t,
            y=ens.translated().copy(),
            v=ens.v.copy(),
            w=ens.w.copy(),
            field_enabled=field_enabled,
            threads=threads,
        )

    def positions(self) -> np.ndarray:
        return self.y + (self.t + self.alpha) * self.v

    def ensemble(self) -> Ensemble:
        return Ensemble(
            d=self.d, alpha=self.alpha, t=self.t, x=self.positions(), v=self.v, w=self.w
        )


def translated_positions(ens: Ensemble) -> np.ndarray:
    """y_i = x_i - (t + alpha) v_i, the free-transport frame coordinates."""
    return ens.translated()


def max_translated_radius(ens: Ensemble) -> float:
    y = ens.translated()
    return float(np.sqrt(np.einsum("ij,ij->i", y, y)).max())


def _kick(state: TrajectoryState, half_dt: float, a: np.ndarray):
    # position is invariant under a kick: dy = -(t + alpha) dv
    dv = half_dt * a
    state.v += dv
    state.y -= (state.t + state.alpha) * dv


def step_leapfrog(state: TrajectoryState, dt: float, soft: Softening) -> TrajectoryState:
    """One kick-drift-kick step; mutates and returns the state."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.field_enabled:
        if state.accel is None:
            state.accel = accelerations(
                state.positions(), state.w, state.d, soft, threads=state.threads
            )
        _kick(state, 0.5 * dt, state.accel)
        state.t += dt
        state.accel = accelerations(
            state.positions(), state.w, state.d, soft, threads=state.threads
        )
        _kick(state, 0.5 * dt, state.accel)
        if not (np.isfinite(state.y).all() and np.isfinite(state.v).all()):
            raise BlowUpError(
                f"non-finite coordinate after step {state.n_steps} at t = {state.t}"
            )
    else:
        state.t += dt
    state.n_steps += 1
    return state


@dataclass
class DiagnosticsRecord:
    """One time slice of the measured functionals."""

    t: float
    moments: dict[float, float]
    sup_e: float
    pe: float
    ke: float
    r_max: float
    rho_sup: float
    escaped_frac: float
    scatter_resid: float = math.nan


@dataclass(frozen=True)
class Snapshot:
    t: float
    y: np.ndarray
    v: np.ndarray


@dataclass
class RunResult:
    """Recorded series plus the snapshots the verification checks need."""

    d: int
    alpha: float
    w: np.ndarray
    softening: Softening
    schedule: TimeSchedule
    records: list[DiagnosticsRecord]
    snapshots: list[Snapshot]
    config: "RunConfig | None" = None

    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def moment_series(self, k: float) -> np.ndarray:
        return np.array([r.moments[k] for r in self.records])

    def ensemble_at(self, idx: int) -> Ensemble:
        s = self.snapshots[idx]
        x = s.y + (s.t + self.alpha) * s.v
        return Ensemble(d=self.d, alpha=self.alpha, t=s.t, x=x, v=s.v, w=self.w)

    def final_ensemble(self) -> Ensemble:
        return self.ensemble_at(len(self.snapshots) - 1)


def resolve_softening(config: "RunConfig", ens0: Ensemble) -> Softening:
    if config.softening == "auto":
        if ens0.n < 2:
            return Softening(0.0)
        return Softening(config.softening_auto_factor * mean_nn_distance(ens0))
    return Softening(float(config.softening))


def _diagnose(
    state: TrajectoryState,
    soft: Softening,
    moment_orders: tuple[float, ...],
    probe: ProbeSpec,
    grid_radius_factor: float,
    grid_cells: int,
) -> DiagnosticsRecord:
    radii = np.sqrt(np.einsum("ij,ij->i", state.y, state.y))
    moments = {k: moment_of_radii(radii, state.w, k) for k in moment_orders}
    ke = 0.5 * float(np.sum(state.w * np.einsum("ij,ij->i", state.v, state.v)))
    r_max = float(radii.max())
    ens = state.ensemble()
    if state.field_enabled:
        sup_e = sup_field_estimate(ens, soft, probe, threads=state.threads)
        pe, _ = pair_energy_terms(ens, soft, threads=state.threads)
    else:
        sup_e = 0.0
        pe = 0.0
    radius = grid_radius_factor * (state.t + state.alpha)
    grid = diagnostics.GridSpec.cube(radius, grid_cells, state.d)
    dep = diagnostics.deposit_density(ens, grid)
    charge = float(np.sum(state.w))
    return DiagnosticsRecord(
        t=state.t,
        moments=moments,
        sup_e=sup_e,
        pe=pe,
        ke=ke,
        r_max=r_max,
        rho_sup=dep.sup(),
        escaped_frac=dep.escaped_mass / charge,
    )


def run(config: "RunConfig", *, initial: Ensemble | None = None, threads: int = 1) -> RunResult:
    """Sample, integrate under the schedule, and record diagnostics.

    Deterministic in (config, initial): the step sequence, record times and
    every recorded value depend only on the configuration and the initial
    ensemble, never on the thread count.
    """
    ens0 = initial if initial is not None else sample_initial(config.sampler, config.seed)
    if ens0.d != config.d or ens0.alpha != config.alpha:
        raise ValueError("initial ensemble does not match the run dimension/alpha")
    soft = resolve_softening(config, ens0)
    sched = config.schedule
    state = TrajectoryState.from_ensemble(
        ens0, field_enabled=config.field_enabled, threads=threads
    )

    records: list[DiagnosticsRecord] = []
    snapshots: list[Snapshot] = []

    def emit():
        records.append(
            _diagnose(
                state,
                soft,
                config.moment_orders,
                config.probes,
                config.grids.density_radius_factor,
                config.grids.density_cells,
            )
        )
        snapshots.append(Snapshot(t=state.t, y=state.y.copy(), v=state.v.copy()))

    emit()
    next_target = sched.record_first
    k = 0
    try:
        while state.t < sched.t_end - 1e-12 * max(1.0, sched.t_end):
            dt = sched.step_size(k, state.t, state.alpha)
            step_leapfrog(state, dt, soft)
            k += 1
            at_end = state.t >= sched.t_end - 1e-12 * max(1.0, sched.t_end)
            if sched.mode == "fixed":
                due = state.n_steps % sched.record_every == 0
            else:
                due = state.t >= next_target
                if due:
                    while next_target <= state.t:
                        next_target *= sched.record_factor
            if due or at_end:
                emit()
    except BlowUpError as exc:
        exc.partial = RunResult(
            d=config.d,
            alpha=config.alpha,
            w=state.w.copy(),
            softening=soft,
            schedule=sched,
            records=records,
            snapshots=snapshots,
            config=config,
        )
        raise

    if len(snapshots) >= 2:
        resid = diagnostics.scattering_residual([s.y for s in snapshots])
    else:
        resid = np.zeros(len(snapshots))
    for rec, r in zip(records, resid):
        rec.scatter_resid = float(r)
    return RunResult(
        d=config.d,
        alpha=config.alpha,
        w=state.w.copy(),
        softening=soft,
        schedule=sched,
        records=records,
        snapshots=snapshots,
        config=config,
    )
