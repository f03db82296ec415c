"""Compiled voxel traversal kernels (Amanatides & Woo DDA)."""

import math

import numba
import numpy as np

UNKNOWN = np.uint8(0)
FREE = np.uint8(1)
OCCUPIED = np.uint8(2)

_INF = np.inf


@numba.njit(cache=True)
def _setup(o, d, g0, res, dims):
    """Return entry parameter and DDA state, or t0 < 0 when the ray misses."""
    t0 = 0.0
    t1 = _INF
    for a in range(3):
        lo = g0[a]
        hi = g0[a] + dims[a] * res
        if d[a] == 0.0:
            if o[a] < lo or o[a] >= hi:
                return -1.0, 0, 0, 0, 0, 0, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
        else:
            ta = (lo - o[a]) / d[a]
            tb = (hi - o[a]) / d[a]
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
    if t0 > t1:
        return -1.0, 0, 0, 0, 0, 0, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    idx = np.empty(3, np.int64)
    step = np.empty(3, np.int64)
    tmax = np.empty(3)
    tdel = np.empty(3)
    for a in range(3):
        p = o[a] + d[a] * t0
        i = int(math.floor((p - g0[a]) / res))
        if i < 0:
            i = 0
        if i >= dims[a]:
            i = dims[a] - 1
        idx[a] = i
        if d[a] > 0.0:
            step[a] = 1
            tmax[a] = (g0[a] + (i + 1) * res - o[a]) / d[a]
            tdel[a] = res / d[a]
        elif d[a] < 0.0:
            step[a] = -1
            tmax[a] = (g0[a] + i * res - o[a]) / d[a]
            tdel[a] = -res / d[a]
        else:
            step[a] = 0
            tmax[a] = _INF
            tdel[a] = _INF
    return (t0, idx[0], idx[1], idx[2], step[0], step[1], step[2],
            tmax[0], tmax[1], tmax[2], tdel[0], tdel[1], tdel[2])


@numba.njit(cache=True)
def cast_rays(state, mean, g0, res, origins, dirs, out_t, out_i):
    """First Occupied voxel along each ray: entry distance and intensity."""
    nx, ny, nz = state.shape
    dims = np.array([nx, ny, nz])
    for r in range(origins.shape[0]):
        out_t[r] = _INF
        out_i[r] = 0.0
        (t, i, j, k, sx, sy, sz, tx, ty, tz, dx, dy, dz) = _setup(
            origins[r], dirs[r], g0, res, dims)
        if t < 0.0:
            continue
        while 0 <= i < nx and 0 <= j < ny and 0 <= k < nz:
            if state[i, j, k] == OCCUPIED:
                out_t[r] = t
                out_i[r] = mean[i, j, k]
                break
            if tx < ty and tx < tz:
                t = tx
                tx += dx
                i += sx
            elif ty < tz:
                t = ty
                ty += dy
                j += sy
            else:
                t = tz
                tz += dz
                k += sz


@numba.njit(cache=True)
def reveal_rays(state, mean, count, changed, g0, res, origins, dirs, t_free, hit, hit_int):
    """Mark voxels Free up to ``t_free`` and fold hits into Occupied voxels.

    Free never overrides Occupied.  ``changed`` flags voxels turned Free and
    every voxel that received a hit; the caller filters out hits that left the
    mean where it was.
    """
    nx, ny, nz = state.shape
    dims = np.array([nx, ny, nz])
    for r in range(origins.shape[0]):
        (t, i, j, k, sx, sy, sz, tx, ty, tz, dx, dy, dz) = _setup(
            origins[r], dirs[r], g0, res, dims)
        if t >= 0.0:
            while 0 <= i < nx and 0 <= j < ny and 0 <= k < nz and t < t_free[r]:
                if state[i, j, k] == UNKNOWN:
                    state[i, j, k] = FREE
                    changed[i, j, k] = 1
                if tx < ty and tx < tz:
                    t = tx
                    tx += dx
                    i += sx
                elif ty < tz:
                    t = ty
                    ty += dy
                    j += sy
                else:
                    t = tz
                    tz += dz
                    k += sz
        if hit[r]:
            # nudge inside the surface so faces on voxel boundaries land below
            th = t_free[r] + 1e-6
            hi = int(math.floor((origins[r, 0] + dirs[r, 0] * th - g0[0]) / res))
            hj = int(math.floor((origins[r, 1] + dirs[r, 1] * th - g0[1]) / res))
            hk = int(math.floor((origins[r, 2] + dirs[r, 2] * th - g0[2]) / res))
            if 0 <= hi < nx and 0 <= hj < ny and 0 <= hk < nz:
                changed[hi, hj, hk] = 1
                if state[hi, hj, hk] != OCCUPIED:
                    state[hi, hj, hk] = OCCUPIED
                    mean[hi, hj, hk] = hit_int[r]
                    count[hi, hj, hk] = 1
                else:
                    c = count[hi, hj, hk] + 1
                    count[hi, hj, hk] = c
                    mean[hi, hj, hk] += (hit_int[r] - mean[hi, hj, hk]) / c
