"""Compiled pairwise kernels.

All loops accumulate in a fixed order (per evaluation point, over sources in
index order; pair sums over i < j in row order), so results are independent
of how callers split work across threads.  Half-integer powers of
s = r^2 + eps^2 are built from 1/s by repeated multiplication, with a single
sqrt for odd dimensions.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, inline="always")
def _inv_half_power(inv_s: float, m: int) -> float:
    # inv_s ** (m / 2) for integer m >= 0
    p = 1.0
    for _ in range(m // 2):
        p *= inv_s
    if m & 1:
        p *= np.sqrt(inv_s)
    return p


@njit(cache=True, nogil=True)
def field_kernel(pts, src_x, src_w, eps2, self0, out):
    """Riesz-kernel sum sum_j w_j (p - x_j) / (|p - x_j|^2 + eps^2)^(d/2).

    self0 >= 0 marks pts as the slice src_x[self0 : self0 + len(pts)] and
    skips the matching source (self-interaction).  The leading 1/(d omega_d)
    is applied by the caller.
    """
    npts, d = pts.shape
    nsrc = src_x.shape[0]
    diff = np.empty(d)
    for a in range(npts):
        for c in range(d):
            out[a, c] = 0.0
        for j in range(nsrc):
            if self0 >= 0 and j == self0 + a:
                continue
            s = eps2
            for c in range(d):
                diff[c] = pts[a, c] - src_x[j, c]
                s += diff[c] * diff[c]
            f = src_w[j] * _inv_half_power(1.0 / s, d)
            for c in range(d):
                out[a, c] += diff[c] * f


@njit(cache=True, nogil=True)
def field_gradient_kernel(pts, src_x, src_w, eps2, self0, out_e, out_g):
    """Field sum and its Jacobian d_c E_r at each point (coefficient left off)."""
    npts, d = pts.shape
    nsrc = src_x.shape[0]
    diff = np.empty(d)
    for a in range(npts):
        for r in range(d):
            out_e[a, r] = 0.0
            for c in range(d):
                out_g[a, r, c] = 0.0
        for j in range(nsrc):
            if self0 >= 0 and j == self0 + a:
                continue
            s = eps2
            for c in range(d):
                diff[c] = pts[a, c] - src_x[j, c]
                s += diff[c] * diff[c]
            inv = 1.0 / s
            pd = _inv_half_power(inv, d)
            pd2 = pd * inv
            wj = src_w[j]
            for r in range(d):
                out_e[a, r] += diff[r] * wj * pd
                for c in range(d):
                    out_g[a, r, c] -= wj * d * diff[r] * diff[c] * pd2
                out_g[a, r, r] += wj * pd
    return


@njit(cache=True, nogil=True)
def pair_sums(x, w, eps2, i0, i1):
    """Pair accumulators over rows i in [i0, i1), j > i.

    Returns (sum w_i w_j (r^2+eps^2)^((2-d)/2), sum w_i w_j eps^2 (r^2+eps^2)^(-d/2)),
    the raw potential-energy and softening-trace sums (coefficients left off).
    """
    n, d = x.shape
    pe = 0.0
    tr = 0.0
    for i in range(i0, i1):
        for j in range(i + 1, n):
            s = eps2
            for c in range(d):
                dx = x[i, c] - x[j, c]
                s += dx * dx
            inv = 1.0 / s
            ww = w[i] * w[j]
            pe += ww * _inv_half_power(inv, d - 2)
            tr += ww * eps2 * _inv_half_power(inv, d)
    return pe, tr


@njit(cache=True, nogil=True)
def min_pair_distance2(x):
    n, d = x.shape
    best = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for c in range(d):
                dx = x[i, c] - x[j, c]
                s += dx * dx
            if s < best:
                best = s
    return best


@njit(cache=True, nogil=True)
def mean_nn_distance(x):
    """Mean over particles of the nearest-neighbour distance (direct O(n^2))."""
    n, d = x.shape
    if n < 2:
        return 0.0
    acc = 0.0
    for i in range(n):
        best = np.inf
        for j in range(n):
            if j == i:
                continue
            s = 0.0
            for c in range(d):
                dx = x[i, c] - x[j, c]
                s += dx * dx
            if s < best:
                best = s
        acc += np.sqrt(best)
    return acc / n


@njit(cache=True, nogil=True)
def first_coincident(pts, src_x, self0):
    """First (point, source) pair at zero distance, or (-1, -1)."""
    npts, d = pts.shape
    nsrc = src_x.shape[0]
    for a in range(npts):
        for j in range(nsrc):
            if self0 >= 0 and j == self0 + a:
                continue
            s = 0.0
            for c in range(d):
                dx = pts[a, c] - src_x[j, c]
                s += dx * dx
            if s == 0.0:
                return a, j
    return -1, -1
