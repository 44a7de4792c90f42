"""Gridded density estimates, asymptotic-profile residuals, and rate fits.

Densities are estimated by cloud-in-cell (multilinear) deposition.  Spatial
grids zoom out self-similarly, with bounds proportional to (t + alpha), so a
cell of the density grid at time t matches a fixed cell in the profile
variable u = x / (t + alpha).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import DimensionConstants, Ensemble, SimulationError
from .field import Softening, field_values


class DepositError(SimulationError):
    """Deposition failed, e.g. most of the charge missed the grid."""


@dataclass(frozen=True)
class GridSpec:
    """Regular rectangular grid: per-axis bounds and a common cell count."""

    lo: np.ndarray
    hi: np.ndarray
    cells: int

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=np.float64))
        if lo.shape != hi.shape or not (hi > lo).all():
            raise ValueError("grid bounds must satisfy lo < hi per axis")
        if self.cells < 1:
            raise ValueError("cells must be >= 1")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, radius: float, cells: int, d: int) -> "GridSpec":
        return cls(lo=np.full(d, -radius), hi=np.full(d, radius), cells=cells)

    @property
    def d(self) -> int:
        return self.lo.shape[0]

    @property
    def h(self) -> np.ndarray:
        return (self.hi - self.lo) / self.cells

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))


@dataclass(frozen=True)
class DepositGrid:
    """Deposited density values on a GridSpec, plus the charge that missed it."""

    spec: GridSpec
    values: np.ndarray
    deposited_mass: float
    escaped_mass: float

    def integral(self) -> float:
        return float(self.values.sum() * self.spec.cell_volume)

    def sup(self) -> float:
        if self.values.ndim == self.spec.d + 1:  # vector-valued
            norms = np.sqrt(np.einsum("...i,...i->...", self.values, self.values))
            return float(norms.max())
        return float(np.abs(self.values).max())

    def lp_norm(self, p: float) -> float:
        if p == math.inf:
            return self.sup()
        if p <= 0:
            raise ValueError("p must be positive")
        v = np.abs(self.values)
        return float((np.sum(v**p) * self.spec.cell_volume) ** (1.0 / p))


def _cic_masses(points: np.ndarray, weights: np.ndarray, spec: GridSpec):
    """Multilinear deposition; returns (flat cell masses, escaped mass)."""
    n, d = points.shape
    cells = spec.cells
    s = (points - spec.lo) / spec.h - 0.5
    i0 = np.floor(s).astype(np.int64)
    frac = s - i0
    total = np.zeros(cells**d)
    for corner in range(1 << d):
        idx = np.zeros(n, dtype=np.int64)
        wt = weights.copy()
        ok = np.ones(n, dtype=bool)
        for axis in range(d):
            ia = i0[:, axis] + ((corner >> axis) & 1)
            ok &= (ia >= 0) & (ia < cells)
            idx = idx * cells + np.clip(ia, 0, cells - 1)
            wt = wt * (frac[:, axis] if (corner >> axis) & 1 else 1.0 - frac[:, axis])
        total += np.bincount(idx[ok], weights=wt[ok], minlength=total.size)
    deposited = float(total.sum())
    escaped = max(float(np.sum(weights)) - deposited, 0.0)
    return total, escaped


def _deposit(points, weights, spec: GridSpec, *, max_escape_frac: float = 0.5):
    masses, escaped = _cic_masses(points, weights, spec)
    charge = float(np.sum(weights))
    if charge > 0 and escaped > max_escape_frac * charge:
        raise DepositError(
            f"{escaped / charge:.1%} of the charge fell outside the grid"
        )
    values = masses.reshape((spec.cells,) * spec.d) / spec.cell_volume
    return DepositGrid(
        spec=spec, values=values, deposited_mass=charge - escaped, escaped_mass=escaped
    )


def deposit_density(ens: Ensemble, spec: GridSpec) -> DepositGrid:
    """Charge density on the grid (weights per cell over cell volume)."""
    return _deposit(ens.x, ens.w, spec)


def current_density(ens: Ensemble, spec: GridSpec) -> DepositGrid:
    """Current density: w_i v_i deposited per component."""
    cells, d = spec.cells, spec.d
    comps = np.empty((cells,) * d + (d,))
    for c in range(d):
        masses, _ = _cic_masses(ens.x, ens.w * ens.v[:, c], spec)
        comps[..., c] = masses.reshape((cells,) * d)
    _, escaped = _cic_masses(ens.x, ens.w, spec)
    charge = float(np.sum(ens.w))
    if charge > 0 and escaped > 0.5 * charge:
        raise DepositError(f"{escaped / charge:.1%} of the charge fell outside the grid")
    return DepositGrid(
        spec=spec,
        values=comps / spec.cell_volume,
        deposited_mass=charge - escaped,
        escaped_mass=escaped,
    )


def auto_velocity_grid(velocities: np.ndarray, cells: int) -> GridSpec:
    """Grid sized so every velocity sits strictly inside the deposit stencil."""
    vmin = velocities.min(axis=0)
    vmax = velocities.max(axis=0)
    span = np.maximum(vmax - vmin, 1e-6)
    pad = 1e-9 * np.maximum(1.0, span)
    h = (span + 2 * pad) / max(cells - 1, 1)
    lo = vmin - pad - 0.5 * h
    return GridSpec(lo=lo, hi=lo + cells * h, cells=cells)


def velocity_marginal(ens: Ensemble, spec: GridSpec | None = None, *, cells: int = 12) -> DepositGrid:
    """Estimator of the spatial average F(t, v): weights deposited in velocity space."""
    if spec is None:
        spec = auto_velocity_grid(ens.v, cells)
    return _deposit(ens.v, ens.w, spec, max_escape_frac=1.0)


@dataclass(frozen=True)
class LimitingProfiles:
    """Late-time reference data: frozen velocities and weights at t_ref.

    The empirical measure of these velocities stands in for the limiting
    velocity marginal; its induced field is evaluated with a velocity-space
    softening eps_v (default: one profile-grid cell width).
    """

    d: int
    t_ref: float
    alpha: float
    velocities: np.ndarray
    weights: np.ndarray
    eps_v: float

    @classmethod
    def from_final_state(cls, ens: Ensemble, eps_v: float) -> "LimitingProfiles":
        return cls(
            d=ens.d,
            t_ref=ens.t,
            alpha=ens.alpha,
            velocities=np.ascontiguousarray(ens.v),
            weights=np.ascontiguousarray(ens.w),
            eps_v=float(eps_v),
        )


def limiting_field(
    profiles: LimitingProfiles, v_points: np.ndarray, *, threads: int = 1
) -> np.ndarray:
    """Field induced in velocity space by the frozen limiting marginal."""
    if profiles.eps_v <= 0:
        raise ValueError("velocity softening must be positive")
    consts = DimensionConstants(profiles.d)
    pts = np.ascontiguousarray(np.atleast_2d(v_points), dtype=np.float64)
    out = np.empty_like(pts)
    _kernels.field_kernel(
        pts, profiles.velocities, profiles.weights, profiles.eps_v**2, -1, out
    )
    return consts.field_coefficient * out


def profile_residual_field(
    ens: Ensemble,
    profiles: LimitingProfiles,
    probe_units: np.ndarray,
    *,
    soft: Softening | None = None,
    threads: int = 1,
) -> float:
    """sup over probes u of |(t+a)^(d-1) E(t, (t+a) u) - E_inf(u)|.

    The physical field is estimated with the scale-matched softening
    eps_v * (t + alpha) unless an explicit softening is given, so both sides
    of the comparison carry the same regularization in profile variables.
    """
    tau = ens.t + ens.alpha
    if soft is None:
        soft = Softening(profiles.eps_v * tau)
    pts = np.ascontiguousarray(np.atleast_2d(probe_units) * tau)
    e_now = field_values(ens, pts, soft, threads=threads) * tau ** (ens.d - 1)
    e_inf = limiting_field(profiles, probe_units, threads=threads)
    diff = e_now - e_inf
    return float(np.sqrt(np.einsum("ij,ij->i", diff, diff)).max())


def _profile_grids(profiles: LimitingProfiles, tau: float, radius: float, cells: int):
    unit = GridSpec.cube(radius, cells, profiles.d)
    scaled = GridSpec.cube(radius * tau, cells, profiles.d)
    return unit, scaled


def profile_residual_density(
    ens: Ensemble,
    profiles: LimitingProfiles,
    *,
    radius: float = 3.0,
    cells: int = 12,
) -> float:
    """sup over matched cells of |(t+a)^d rho(t, x) - F_inf(x/(t+a))|.

    Both terms are cell averages: rho on the grid with bounds scaled by
    (t + alpha), F_inf on the unit grid, so the comparison is exact cellwise.
    """
    tau = ens.t + ens.alpha
    unit, scaled = _profile_grids(profiles, tau, radius, cells)
    rho_masses, _ = _cic_masses(ens.x, ens.w, scaled)
    f_masses, _ = _cic_masses(profiles.velocities, profiles.weights, unit)
    return float(np.abs(rho_masses - f_masses).max() / unit.cell_volume)


def current_profile_residual(
    ens: Ensemble,
    profiles: LimitingProfiles,
    *,
    radius: float = 3.0,
    cells: int = 12,
) -> float:
    """sup over |u| <= 1 of |(t+a)^d j(t, x) - u F_inf(u)|, u = x/(t+a)."""
    tau = ens.t + ens.alpha
    unit, scaled = _profile_grids(profiles, tau, radius, cells)
    d = profiles.d
    j_cells = np.empty((unit.cells,) * d + (d,))
    for c in range(d):
        masses, _ = _cic_masses(ens.x, ens.w * ens.v[:, c], scaled)
        j_cells[..., c] = masses.reshape((unit.cells,) * d)
    f_masses, _ = _cic_masses(profiles.velocities, profiles.weights, unit)
    f_cells = f_masses.reshape((unit.cells,) * d)

    centers_1d = unit.lo[0] + (np.arange(unit.cells) + 0.5) * unit.h[0]
    grids = np.meshgrid(*([centers_1d] * d), indexing="ij")
    u = np.stack(grids, axis=-1)
    inside = np.einsum("...i,...i->...", u, u) <= 1.0
    diff = j_cells - u * f_cells[..., None]
    norms = np.sqrt(np.einsum("...i,...i->...", diff, diff))
    if not inside.any():
        return 0.0
    return float(norms[inside].max() / unit.cell_volume)


def scattering_residual(y_series: list[np.ndarray]) -> np.ndarray:
    """r(t_k) = max_i |y_i(t_k) - y_i(t_end)| over a recorded series."""
    if len(y_series) < 2:
        raise ValueError("need at least two recorded times")
    y_end = y_series[-1]
    out = np.empty(len(y_series))
    for k, y in enumerate(y_series):
        diff = y - y_end
        out[k] = np.sqrt(np.einsum("ij,ij->i", diff, diff)).max()
    return out


@dataclass(frozen=True)
class RateFit:
    """Power-law fit value ~ C (t + alpha)^exponent on a log-log window."""

    exponent: float
    log_intercept: float
    window: tuple[float, float]
    r_squared: float
    n_samples: int


def fit_rate(
    ts: np.ndarray,
    values: np.ndarray,
    window: tuple[float, float],
    alpha: float,
) -> RateFit:
    """Least-squares line through (log(t + alpha), log value) inside the window."""
    ts = np.asarray(ts, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    t_lo, t_hi = window
    mask = (ts >= t_lo) & (ts <= t_hi)
    if mask.sum() < 5:
        raise ValueError(f"need >= 5 samples in window [{t_lo}, {t_hi}], got {mask.sum()}")
    tw, vw = ts[mask], values[mask]
    bad = vw <= 0
    if bad.any():
        raise ValueError(f"nonpositive value in fit window, first at t = {tw[bad][0]}")
    lx = np.log(tw + alpha)
    ly = np.log(vw)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return RateFit(
        exponent=float(slope),
        log_intercept=float(intercept),
        window=(float(t_lo), float(t_hi)),
        r_squared=r2,
        n_samples=int(mask.sum()),
    )
