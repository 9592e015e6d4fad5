"""Numba kernels for BVH traversal and point-cloud splatting.

These are the two hot loops of the whole pipeline; everything else is
plain numpy. Kernels are cached so repeated test runs skip compilation.
"""

import math
import os

import numba
import numpy as np
from numba import njit, prange

T_MIN = 1e-4  # self-hit guard along the ray, metres
_STACK = 64


def set_threads_from_env():
    """Honor COVER_THREADS (0 or unset = numba default)."""
    n = int(os.environ.get("COVER_THREADS", "0"))
    if n > 0:
        numba.set_num_threads(n)


@njit(cache=True, inline="always")
def _hit_aabb(ox, oy, oz, ix, iy, iz, bmin, bmax, tbest):
    t0x = (bmin[0] - ox) * ix
    t1x = (bmax[0] - ox) * ix
    if t0x > t1x:
        t0x, t1x = t1x, t0x
    t0y = (bmin[1] - oy) * iy
    t1y = (bmax[1] - oy) * iy
    if t0y > t1y:
        t0y, t1y = t1y, t0y
    t0z = (bmin[2] - oz) * iz
    t1z = (bmax[2] - oz) * iz
    if t0z > t1z:
        t0z, t1z = t1z, t0z
    tnear = max(t0x, max(t0y, t0z))
    tfar = min(t1x, min(t1y, t1z))
    return tfar >= tnear and tfar > 0.0 and tnear < tbest


@njit(cache=True, inline="always")
def _hit_triangle(ox, oy, oz, dx, dy, dz, v0, e1, e2):
    """Moller-Trumbore; returns t or -1.0 (no backface culling)."""
    px = dy * e2[2] - dz * e2[1]
    py = dz * e2[0] - dx * e2[2]
    pz = dx * e2[1] - dy * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if abs(det) < 1e-12:
        return -1.0
    inv = 1.0 / det
    tx = ox - v0[0]
    ty = oy - v0[1]
    tz = oz - v0[2]
    uu = (tx * px + ty * py + tz * pz) * inv
    if uu < -1e-9 or uu > 1.0 + 1e-9:
        return -1.0
    qx = ty * e1[2] - tz * e1[1]
    qy = tz * e1[0] - tx * e1[2]
    qz = tx * e1[1] - ty * e1[0]
    vv = (dx * qx + dy * qy + dz * qz) * inv
    if vv < -1e-9 or uu + vv > 1.0 + 1e-9:
        return -1.0
    return (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv


@njit(cache=True)
def _trace_one(ox, oy, oz, dx, dy, dz,
               node_min, node_max, node_left, node_start, node_count,
               tri_index, tri_v0, tri_e1, tri_e2):
    ix = 1.0 / dx if dx != 0.0 else 1e30
    iy = 1.0 / dy if dy != 0.0 else 1e30
    iz = 1.0 / dz if dz != 0.0 else 1e30
    best_t = np.inf
    best_tri = -1
    stack = np.empty(_STACK, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _hit_aabb(ox, oy, oz, ix, iy, iz, node_min[node], node_max[node], best_t):
            continue
        cnt = node_count[node]
        if cnt > 0:
            start = node_start[node]
            for k in range(start, start + cnt):
                tri = tri_index[k]
                t = _hit_triangle(ox, oy, oz, dx, dy, dz,
                                  tri_v0[tri], tri_e1[tri], tri_e2[tri])
                if T_MIN < t < best_t:
                    best_t = t
                    best_tri = tri
        else:
            left = node_left[node]
            stack[top] = left
            top += 1
            stack[top] = left + 1
            top += 1
    return best_t, best_tri


@njit(cache=True, parallel=True)
def raycast_batch(origins, dirs,
                  node_min, node_max, node_left, node_start, node_count,
                  tri_index, tri_v0, tri_e1, tri_e2):
    """Nearest hit for each (origin, dir) pair. Returns (t, tri_id).

    t = inf and tri_id = -1 for misses.
    """
    n = dirs.shape[0]
    out_t = np.empty(n, dtype=np.float64)
    out_tri = np.empty(n, dtype=np.int64)
    for i in prange(n):
        t, tri = _trace_one(
            origins[i, 0], origins[i, 1], origins[i, 2],
            dirs[i, 0], dirs[i, 1], dirs[i, 2],
            node_min, node_max, node_left, node_start, node_count,
            tri_index, tri_v0, tri_e1, tri_e2)
        out_t[i] = t
        out_tri[i] = tri
    return out_t, out_tri


def splat_points(points, R, C, w, h, radius):
    """Z-buffer splat of world points into an ERP frame; see _splat_impl.

    The thread count is passed in from outside the kernel so numba can
    cache the compiled function.
    """
    return _splat_impl(points, R, C, w, h, radius, numba.get_num_threads())


@njit(cache=True, parallel=True)
def _splat_impl(points, R, C, w, h, radius, nt):
    """Each point projects through the world-to-camera rotation R and
    centre C, then marks a (2*radius+1)^2 neighborhood with its range under
    a min z-buffer. Min is commutative and exact ties carry equal depth
    values, so the output is independent of point order; that makes the
    per-thread buffer + merge scheme below deterministic. Returns
    (depth f32 with 0 = empty, mask).
    """
    n = points.shape[0]
    chunk = (n + nt - 1) // nt
    bufs = np.full((nt, h, w), np.inf, dtype=np.float64)
    two_pi = 2.0 * math.pi
    for ti in prange(nt):
        lo = ti * chunk
        hi = min(n, lo + chunk)
        for i in range(lo, hi):
            px = points[i, 0] - C[0]
            py = points[i, 1] - C[1]
            pz = points[i, 2] - C[2]
            cx = R[0, 0] * px + R[0, 1] * py + R[0, 2] * pz
            cy = R[1, 0] * px + R[1, 1] * py + R[1, 2] * pz
            cz = R[2, 0] * px + R[2, 1] * py + R[2, 2] * pz
            r = math.sqrt(cx * cx + cy * cy + cz * cz)
            if r <= 0.0:
                continue
            dy = cy / r
            if abs(dy) >= 1.0 - 1e-12:
                u = w / 2.0
            else:
                u = (math.atan2(cx, cz) / two_pi + 0.5) * w
                u = u % w
            if dy > 1.0:
                dy = 1.0
            elif dy < -1.0:
                dy = -1.0
            v = (0.5 - math.asin(-dy) / math.pi) * h
            ui = int(math.floor(u))
            vi = int(math.floor(v))
            for dv in range(-radius, radius + 1):
                row = vi + dv
                if row < 0 or row >= h:
                    continue
                for du in range(-radius, radius + 1):
                    col = (ui + du) % w
                    if r < bufs[ti, row, col]:
                        bufs[ti, row, col] = r
    depth = np.full((h, w), np.inf, dtype=np.float64)
    for ti in range(nt):
        for row in range(h):
            for col in range(w):
                if bufs[ti, row, col] < depth[row, col]:
                    depth[row, col] = bufs[ti, row, col]
    mask = np.isfinite(depth)
    out = np.where(mask, depth, 0.0).astype(np.float32)
    return out, mask
