"""Bounding-volume hierarchy over triangle meshes, plus a brute-force
reference intersector used as the test oracle."""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from . import _kernels
from .geom import Aabb

LEAF_SIZE = 4


@dataclasses.dataclass
class RayHit:
    t: float
    triangle_id: int
    point: np.ndarray


class Bvh:
    """Flattened median-split BVH. Immutable after construction.

    Layout: internal node i has children at node_left[i] and node_left[i]+1;
    leaves have node_count > 0 and index into tri_index[start:start+count].
    """

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray):
        if len(triangles) == 0:
            raise ValueError("cannot build a BVH over an empty mesh")
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        v0 = self.vertices[self.triangles[:, 0]]
        v1 = self.vertices[self.triangles[:, 1]]
        v2 = self.vertices[self.triangles[:, 2]]
        self.tri_v0 = np.ascontiguousarray(v0)
        self.tri_e1 = np.ascontiguousarray(v1 - v0)
        self.tri_e2 = np.ascontiguousarray(v2 - v0)
        self.face_color = None  # set by build_bvh for shaded rendering
        self._build(v0, v1, v2)
        _kernels.set_threads_from_env()

    def _build(self, v0, v1, v2):
        tri_min = np.minimum(np.minimum(v0, v1), v2)
        tri_max = np.maximum(np.maximum(v0, v1), v2)
        centroids = (v0 + v1 + v2) / 3.0

        node_min, node_max, node_left, node_start, node_count = [], [], [], [], []
        order = []

        def new_node(idx):
            node_min.append(tri_min[idx].min(axis=0))
            node_max.append(tri_max[idx].max(axis=0))
            node_left.append(-1)
            node_start.append(-1)
            node_count.append(0)
            return len(node_min) - 1

        # Iterative build; stack holds (node_id, triangle index array).
        root = new_node(np.arange(len(v0)))
        stack = [(root, np.arange(len(v0)))]
        while stack:
            node, idx = stack.pop()
            if len(idx) <= LEAF_SIZE:
                node_start[node] = len(order)
                node_count[node] = len(idx)
                order.extend(idx.tolist())
                continue
            ext = node_max[node] - node_min[node]
            axis = int(np.argmax(ext))
            med = np.argsort(centroids[idx, axis], kind="stable")
            half = len(idx) // 2
            li, ri = idx[med[:half]], idx[med[half:]]
            left = new_node(li)
            right = new_node(ri)
            assert right == left + 1
            node_left[node] = left
            stack.append((left, li))
            stack.append((right, ri))

        self.node_min = np.ascontiguousarray(node_min, dtype=np.float64)
        self.node_max = np.ascontiguousarray(node_max, dtype=np.float64)
        self.node_left = np.asarray(node_left, dtype=np.int64)
        self.node_start = np.asarray(node_start, dtype=np.int64)
        self.node_count = np.asarray(node_count, dtype=np.int64)
        self.tri_index = np.asarray(order, dtype=np.int64)

    @property
    def aabb(self) -> Aabb:
        return Aabb(self.node_min[0], self.node_max[0])

    def raycast_batch(self, origins: np.ndarray, dirs: np.ndarray):
        """Vectorized nearest-hit query. Returns (t, tri_id) arrays;
        misses carry t = inf, tri_id = -1."""
        origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
        if origins.shape[0] == 1 and dirs.shape[0] > 1:
            origins = np.broadcast_to(origins, dirs.shape).copy()
        return _kernels.raycast_batch(
            origins, dirs,
            self.node_min, self.node_max, self.node_left,
            self.node_start, self.node_count,
            self.tri_index, self.tri_v0, self.tri_e1, self.tri_e2)

    def raycast(self, origin, direction) -> Optional[RayHit]:
        """Nearest hit beyond t_min along one unit ray, or None."""
        origin = np.asarray(origin, dtype=np.float64)
        direction = np.asarray(direction, dtype=np.float64)
        t, tri = self.raycast_batch(origin[None, :], direction[None, :])
        if tri[0] < 0:
            return None
        return RayHit(float(t[0]), int(tri[0]), origin + t[0] * direction)


def build_bvh(mesh) -> Bvh:
    """BVH over a TriMesh, carrying face colors for shading."""
    bvh = Bvh(mesh.vertices, mesh.triangles)
    bvh.face_color = np.asarray(mesh.face_color, dtype=np.uint8)
    return bvh


def brute_force_raycast(vertices, triangles, origins, dirs, t_min=_kernels.T_MIN):
    """All-triangle Moller-Trumbore reference; independent of the BVH path.

    Returns (t, tri_id) with t = inf / tri_id = -1 on miss.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    if origins.shape[0] == 1 and dirs.shape[0] > 1:
        origins = np.broadcast_to(origins, dirs.shape)

    v0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - v0
    e2 = vertices[triangles[:, 2]] - v0

    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    best_tri = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        o, d = origins[i], dirs[i]
        p = np.cross(d, e2)
        det = np.einsum("ij,ij->i", e1, p)
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tv = o - v0
        u = np.einsum("ij,ij->i", tv, p) * inv
        q = np.cross(tv, e1)
        v = np.einsum("j,ij->i", d, q) * inv
        t = np.einsum("ij,ij->i", e2, q) * inv
        hit = ok & (u >= -1e-9) & (v >= -1e-9) & (u + v <= 1.0 + 1e-9) & (t > t_min)
        if np.any(hit):
            ts = np.where(hit, t, np.inf)
            j = int(np.argmin(ts))
            best_t[i] = ts[j]
            best_tri[i] = j
    return best_t, best_tri
