"""Exact pairwise evaluation of the repulsive Riesz-kernel field and energies.

Direct O(N^2) summation with Plummer softening (r^2 + eps^2)^(d/2).  Work is
split over fixed-size chunks of evaluation points; every chunk sums its
sources in index order, so results are bit-identical for any thread count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import DimensionConstants, Ensemble, SimulationError

CHUNK = 256


class SingularKernelError(SimulationError):
    """Unsoftened kernel evaluated at zero separation."""


@dataclass(frozen=True)
class Softening:
    """Plummer softening length; eps = 0 only away from all sources."""

    epsilon: float = 0.0

    def __post_init__(self):
        if not (self.epsilon >= 0.0 and math.isfinite(self.epsilon)):
            raise ValueError(f"softening must be finite and >= 0, got {self.epsilon}")

    @property
    def eps2(self) -> float:
        return self.epsilon * self.epsilon


@dataclass(frozen=True)
class FieldSample:
    point: np.ndarray
    e: np.ndarray
    grad: np.ndarray | None = None


@dataclass(frozen=True)
class ProbeSpec:
    """Finite probe set: particle positions plus a regular grid on a ball.

    The grid covers |x| <= radius_factor * (t + alpha) with cells_per_axis
    lattice points per axis, keeping only points inside the ball.  Any finite
    probe set under-estimates the true sup-norm; this is the measurement
    convention used throughout.
    """

    radius_factor: float = 3.0
    cells_per_axis: int = 7
    include_particles: bool = True

    def grid_points(self, d: int, radius: float) -> np.ndarray:
        g = self.cells_per_axis
        axis = np.linspace(-radius, radius, g)
        pts = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        keep = np.einsum("ij,ij->i", pts, pts) <= radius * radius * (1 + 1e-12)
        return np.ascontiguousarray(pts[keep])


def _run_chunked(work, n_points: int, threads: int):
    spans = [(lo, min(lo + CHUNK, n_points)) for lo in range(0, n_points, CHUNK)]
    if threads <= 1 or len(spans) == 1:
        for lo, hi in spans:
            work(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda s: work(*s), spans))


def _check_singular(pts, src_x, eps: float, self0: int):
    if eps > 0.0:
        return
    a, j = _kernels.first_coincident(pts, src_x, self0)
    if a >= 0:
        raise SingularKernelError(
            f"unsoftened kernel is singular: evaluation point {a} coincides "
            f"with source {j}"
        )


def field_values(
    ens: Ensemble,
    points: np.ndarray,
    soft: Softening,
    *,
    exclude_self: bool = False,
    threads: int = 1,
) -> np.ndarray:
    """Field vectors at the given points, shape (npts, d)."""
    consts = DimensionConstants(ens.d)
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    if pts.shape[1] != ens.d:
        raise ValueError(f"points must have {ens.d} columns, got {pts.shape[1]}")
    self0 = 0 if exclude_self else -1
    _check_singular(pts, ens.x, soft.epsilon, self0)
    out = np.empty_like(pts)

    def work(lo, hi):
        s0 = lo if exclude_self else -1
        _kernels.field_kernel(pts[lo:hi], ens.x, ens.w, soft.eps2, s0, out[lo:hi])

    _run_chunked(work, pts.shape[0], threads)
    out *= consts.field_coefficient
    return out


def gradient_values(
    ens: Ensemble,
    points: np.ndarray,
    soft: Softening,
    *,
    exclude_self: bool = False,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Field and its Jacobian at the given points, shapes (npts, d) and (npts, d, d)."""
    consts = DimensionConstants(ens.d)
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    self0 = 0 if exclude_self else -1
    _check_singular(pts, ens.x, soft.epsilon, self0)
    e = np.empty_like(pts)
    g = np.empty((pts.shape[0], ens.d, ens.d))

    def work(lo, hi):
        s0 = lo if exclude_self else -1
        _kernels.field_gradient_kernel(
            pts[lo:hi], ens.x, ens.w, soft.eps2, s0, e[lo:hi], g[lo:hi]
        )

    _run_chunked(work, pts.shape[0], threads)
    e *= consts.field_coefficient
    g *= consts.field_coefficient
    return e, g


def field_at_points(
    ens: Ensemble, points: np.ndarray, soft: Softening, *, threads: int = 1
) -> list[FieldSample]:
    e = field_values(ens, points, soft, threads=threads)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return [FieldSample(point=pts[i], e=e[i]) for i in range(pts.shape[0])]


def self_consistent_field(
    ens: Ensemble, soft: Softening, *, threads: int = 1
) -> list[FieldSample]:
    """Field at every particle with the self-term omitted (the acceleration)."""
    e = field_values(ens, ens.x, soft, exclude_self=True, threads=threads)
    return [FieldSample(point=ens.x[i], e=e[i]) for i in range(ens.n)]


def accelerations(ens_x, ens_w, d: int, soft: Softening, *, threads: int = 1) -> np.ndarray:
    """Array-valued self-consistent field used by the integrator."""
    consts = DimensionConstants(d)
    x = np.ascontiguousarray(ens_x)
    out = np.empty_like(x)

    def work(lo, hi):
        _kernels.field_kernel(x[lo:hi], x, ens_w, soft.eps2, lo, out[lo:hi])

    _run_chunked(work, x.shape[0], threads)
    out *= consts.field_coefficient
    return out


def pair_energy_terms(ens: Ensemble, soft: Softening, *, threads: int = 1) -> tuple[float, float]:
    """Potential energy and softening trace term.

    Returns (PE, T) with
      PE = 2/(d(d-2)om_d) sum_{i<j} w_i w_j (r_ij^2 + eps^2)^((2-d)/2)
      T  =     1/(d om_d) sum_{i<j} w_i w_j eps^2 (r_ij^2 + eps^2)^(-d/2)
    PE is the discrete stand-in for the field energy integral |E|^2; T enters
    the softened virial balance.
    """
    consts = DimensionConstants(ens.d)
    if ens.n < 2:
        return 0.0, 0.0
    if soft.epsilon == 0.0 and _kernels.min_pair_distance2(ens.x) == 0.0:
        raise SingularKernelError("coincident particle pair with eps = 0")
    spans = [(lo, min(lo + CHUNK, ens.n)) for lo in range(0, ens.n, CHUNK)]
    parts = [None] * len(spans)

    def work(idx):
        lo, hi = spans[idx]
        parts[idx] = _kernels.pair_sums(ens.x, ens.w, soft.eps2, lo, hi)

    if threads <= 1 or len(spans) == 1:
        for i in range(len(spans)):
            work(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(len(spans))))
    pe_raw = 0.0
    tr_raw = 0.0
    for pe_c, tr_c in parts:  # fixed combine order, independent of threads
        pe_raw += pe_c
        tr_raw += tr_c
    return 2.0 * consts.potential_coefficient * pe_raw, consts.field_coefficient * tr_raw


def potential_energy(ens: Ensemble, soft: Softening, *, threads: int = 1) -> float:
    return pair_energy_terms(ens, soft, threads=threads)[0]


def kinetic_energy(ens: Ensemble) -> float:
    return 0.5 * float(np.sum(ens.w * np.einsum("ij,ij->i", ens.v, ens.v)))


def conserved_energy(ens: Ensemble, soft: Softening, *, threads: int = 1) -> float:
    """Hamiltonian of the particle system, KE + PE/2.

    PE sums ordered pairs (it mirrors the field energy integral), so the pair
    interaction Hamiltonian that the dynamics conserves is half of it.
    """
    return kinetic_energy(ens) + 0.5 * potential_energy(ens, soft, threads=threads)


def mean_nn_distance(ens: Ensemble) -> float:
    return float(_kernels.mean_nn_distance(ens.x))


def probe_points(ens: Ensemble, probe: ProbeSpec) -> np.ndarray:
    radius = probe.radius_factor * (ens.t + ens.alpha)
    return probe.grid_points(ens.d, radius)


def sup_field_estimate(
    ens: Ensemble, soft: Softening, probe: ProbeSpec, *, threads: int = 1
) -> float:
    """Max |E| over the probe set; a lower bound used as the sup-norm estimator."""
    best = 0.0
    if probe.include_particles:
        e = field_values(ens, ens.x, soft, exclude_self=True, threads=threads)
        best = float(np.sqrt(np.einsum("ij,ij->i", e, e)).max())
    grid = probe_points(ens, probe)
    if grid.shape[0]:
        e = field_values(ens, grid, soft, threads=threads)
        best = max(best, float(np.sqrt(np.einsum("ij,ij->i", e, e)).max()))
    return best


def field_gradient_sup(
    ens: Ensemble, soft: Softening, probe: ProbeSpec, *, threads: int = 1
) -> float:
    """Max over probes of the inf-operator norm (max abs row sum) of grad E."""
    if soft.epsilon <= 0.0:
        raise ValueError("gradient sup estimate needs eps > 0")
    best = 0.0
    if probe.include_particles:
        _, g = gradient_values(ens, ens.x, soft, exclude_self=True, threads=threads)
        best = float(np.abs(g).sum(axis=2).max())
    grid = probe_points(ens, probe)
    if grid.shape[0]:
        _, g = gradient_values(ens, grid, soft, threads=threads)
        best = max(best, float(np.abs(g).sum(axis=2).max()))
    return best
