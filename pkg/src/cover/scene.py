"""Triangle-mesh scenes: ASCII mesh I/O, a procedural indoor generator,
and discretization of the observable surface into weighted sample points.

Mesh file format (docs/formats.md): line-oriented ASCII with
``v x y z`` vertex lines and ``f i j k [r g b]`` face lines (0-based
indices, optional per-face RGB, default grey 180,180,180).
"""

from __future__ import annotations

import dataclasses
import json
from typing import Optional

import numpy as np

from .geom import Aabb

DEFAULT_COLOR = (180, 180, 180)
PARTITION_THICKNESS = 0.1


class MeshError(Exception):
    pass


@dataclasses.dataclass
class TriMesh:
    vertices: np.ndarray  # (N, 3) float64
    triangles: np.ndarray  # (M, 3) int64
    face_color: np.ndarray  # (M, 3) uint8
    dropped_degenerate: int = 0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.face_color = np.asarray(self.face_color, dtype=np.uint8).reshape(-1, 3)

    @property
    def aabb(self) -> Aabb:
        return Aabb(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def face_normals(self) -> np.ndarray:
        """Unit normals per triangle (right-hand rule on vertex winding)."""
        v0 = self.vertices[self.triangles[:, 0]]
        e1 = self.vertices[self.triangles[:, 1]] - v0
        e2 = self.vertices[self.triangles[:, 2]] - v0
        n = np.cross(e1, e2)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def face_areas(self) -> np.ndarray:
        v0 = self.vertices[self.triangles[:, 0]]
        e1 = self.vertices[self.triangles[:, 1]] - v0
        e2 = self.vertices[self.triangles[:, 2]] - v0
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def _drop_degenerate(vertices, triangles, colors):
    v0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - v0
    e2 = vertices[triangles[:, 2]] - v0
    area2 = np.linalg.norm(np.cross(e1, e2), axis=1)
    keep = area2 > 1e-12
    return triangles[keep], colors[keep], int((~keep).sum())


def load_mesh(path) -> TriMesh:
    vertices, faces, colors = [], [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                elif parts[0] == "f":
                    faces.append([int(parts[1]), int(parts[2]), int(parts[3])])
                    if len(parts) >= 7:
                        colors.append([int(parts[4]), int(parts[5]), int(parts[6])])
                    else:
                        colors.append(list(DEFAULT_COLOR))
                else:
                    raise ValueError(f"unknown record {parts[0]!r}")
            except (ValueError, IndexError) as exc:
                raise MeshError(f"{path}:{lineno}: {exc}") from exc
    if not faces:
        raise MeshError(f"{path}: mesh has no faces")
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(faces, dtype=np.int64)
    colors = np.asarray(colors, dtype=np.int64)
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise MeshError(f"{path}: face index out of range")
    triangles, colors, dropped = _drop_degenerate(vertices, triangles, colors)
    if len(triangles) == 0:
        raise MeshError(f"{path}: all triangles degenerate")
    return TriMesh(vertices, triangles, colors.astype(np.uint8), dropped)


def save_mesh(mesh: TriMesh, path) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for tri, col in zip(mesh.triangles, mesh.face_color):
            fh.write(f"f {tri[0]} {tri[1]} {tri[2]} {col[0]} {col[1]} {col[2]}\n")


# ---------------------------------------------------------------------------
# Procedural indoor scenes


@dataclasses.dataclass
class RoomSpec:
    """Desk-scale indoor scene description (JSON-loadable).

    Furniture boxes are explicit AABBs; n_random_furniture adds seeded
    floor-standing boxes on top. jitter_m > 0 perturbs interior vertices
    to emulate noisy scanned geometry.
    """

    width_m: float
    depth_m: float
    height_m: float
    furniture: list = dataclasses.field(default_factory=list)
    partitions: list = dataclasses.field(default_factory=list)
    n_random_furniture: int = 0
    jitter_m: float = 0.0

    @staticmethod
    def from_json(path) -> "RoomSpec":
        with open(path) as fh:
            raw = json.load(fh)
        return RoomSpec(
            width_m=float(raw["width_m"]),
            depth_m=float(raw["depth_m"]),
            height_m=float(raw["height_m"]),
            furniture=raw.get("furniture", []),
            partitions=raw.get("partitions", []),
            n_random_furniture=int(raw.get("n_random_furniture", 0)),
            jitter_m=float(raw.get("jitter_m", 0.0)),
        )


def _quad(verts, faces, colors, a, b, c, d, color):
    """Two triangles for quad a-b-c-d, wound so the normal follows the
    right-hand rule on a->b->c."""
    base = len(verts)
    verts.extend([a, b, c, d])
    faces.append([base, base + 1, base + 2])
    faces.append([base, base + 2, base + 3])
    colors.extend([color, color])


def _face_two_quads(verts, faces, colors, corner, eu, ev, color):
    """One rectangular face split into two quads along eu (so every box
    face contributes 2 quads / 4 triangles)."""
    half = [e / 2.0 for e in eu]
    mid = [corner[i] + half[i] for i in range(3)]
    _quad(verts, faces, colors,
          corner,
          [corner[i] + half[i] for i in range(3)],
          [mid[i] + ev[i] for i in range(3)],
          [corner[i] + ev[i] for i in range(3)], color)
    far = [corner[i] + eu[i] for i in range(3)]
    _quad(verts, faces, colors,
          mid, far,
          [far[i] + ev[i] for i in range(3)],
          [mid[i] + ev[i] for i in range(3)], color)


def _box(verts, faces, colors, bmin, bmax, color, inward):
    """Axis-aligned box; inward=True winds normals toward the interior
    (room shell), False winds them outward (furniture)."""
    x0, y0, z0 = bmin
    x1, y1, z1 = bmax
    # (corner, edge-u, edge-v) per face, wound inward (toward box interior).
    faces_spec = [
        ([x0, y0, z0], [0, 0, z1 - z0], [x1 - x0, 0, 0]),   # floor (n = +y)
        ([x0, y1, z0], [x1 - x0, 0, 0], [0, 0, z1 - z0]),   # ceiling (n = -y)
        ([x0, y0, z0], [x1 - x0, 0, 0], [0, y1 - y0, 0]),   # z = z0 (n = +z)
        ([x0, y0, z1], [0, y1 - y0, 0], [x1 - x0, 0, 0]),   # z = z1 (n = -z)
        ([x0, y0, z0], [0, y1 - y0, 0], [0, 0, z1 - z0]),   # x = x0 (n = +x)
        ([x1, y0, z0], [0, 0, z1 - z0], [0, y1 - y0, 0]),   # x = x1 (n = -x)
    ]
    for corner, eu, ev in faces_spec:
        if not inward:
            eu, ev = ev, eu  # swap winding to flip the normal outward
        _face_two_quads(verts, faces, colors, corner, eu, ev, color)


def gen_room_scene(spec: RoomSpec, rng_seed: int = 0) -> TriMesh:
    """Deterministic procedural room: closed shell + furniture boxes +
    optional partition walls with doorway gaps."""
    if spec.width_m < 1 or spec.depth_m < 1 or spec.height_m < 1:
        raise MeshError("room dimensions must be >= 1 m")
    rng = np.random.default_rng(rng_seed)
    verts: list = []
    faces: list = []
    colors: list = []

    W, H, D = spec.width_m, spec.height_m, spec.depth_m
    _box(verts, faces, colors, (0.0, 0.0, 0.0), (W, H, D), DEFAULT_COLOR, inward=True)

    boxes = [(np.asarray(f["min"], float), np.asarray(f["max"], float))
             for f in spec.furniture]
    for _ in range(spec.n_random_furniture):
        sx = rng.uniform(0.3, min(1.2, W / 3))
        sz = rng.uniform(0.3, min(1.2, D / 3))
        sy = rng.uniform(0.3, min(1.4, H - 0.5))
        x = rng.uniform(0.1, W - sx - 0.1)
        z = rng.uniform(0.1, D - sz - 0.1)
        boxes.append((np.array([x, 0.0, z]), np.array([x + sx, sy, z + sz])))

    for bmin, bmax in boxes:
        if np.any(bmin < -1e-9) or bmax[0] > W + 1e-9 or bmax[1] > H + 1e-9 \
                or bmax[2] > D + 1e-9:
            raise MeshError("furniture box exceeds room volume")
        color = tuple(int(c) for c in rng.integers(60, 230, size=3))
        _box(verts, faces, colors, tuple(bmin), tuple(bmax), color, inward=False)

    for part in spec.partitions:
        axis = part["axis"]
        off = float(part["offset_m"])
        door = part.get("doorway")
        ht = PARTITION_THICKNESS / 2.0
        span = D if axis == "x" else W
        segments = [(0.0, span)]
        if door:
            s, w = float(door["start_m"]), float(door["width_m"])
            segments = [(0.0, s), (s + w, span)]
        for lo, hi in segments:
            if hi - lo <= 1e-9:
                continue
            if axis == "x":
                bmin, bmax = (off - ht, 0.0, lo), (off + ht, H, hi)
            else:
                bmin, bmax = (lo, 0.0, off - ht), (hi, H, off + ht)
            _box(verts, faces, colors, bmin, bmax, DEFAULT_COLOR, inward=False)

    vertices = np.asarray(verts, dtype=np.float64)
    if spec.jitter_m > 0:
        # Keep the outer shell exact so the AABB matches the requested dims.
        jitter = rng.normal(0.0, spec.jitter_m, size=vertices.shape)
        on_shell = (
            (np.abs(vertices[:, 0]) < 1e-9) | (np.abs(vertices[:, 0] - W) < 1e-9) |
            (np.abs(vertices[:, 1]) < 1e-9) | (np.abs(vertices[:, 1] - H) < 1e-9) |
            (np.abs(vertices[:, 2]) < 1e-9) | (np.abs(vertices[:, 2] - D) < 1e-9)
        )
        jitter[on_shell] = 0.0
        vertices = vertices + jitter

    triangles = np.asarray(faces, dtype=np.int64)
    cols = np.asarray(colors, dtype=np.int64)
    triangles, cols, dropped = _drop_degenerate(vertices, triangles, cols)
    return TriMesh(vertices, triangles, cols.astype(np.uint8), dropped)


# ---------------------------------------------------------------------------
# Surface discretization


@dataclasses.dataclass
class SurfaceElements:
    """Stratified surface samples standing in for the observable-surface
    element set; weights carry each sample's share of triangle area (m^2)."""

    points: np.ndarray  # (N, 3)
    weights: np.ndarray  # (N,)
    normals: np.ndarray  # (N, 3)
    triangle_id: np.ndarray  # (N,)


def discretize_surface(mesh: TriMesh, target_spacing: float,
                       rng_seed: int = 0) -> SurfaceElements:
    """Sample ~1 point per target_spacing^2 of area per triangle
    (at least 1), uniformly within each triangle; deterministic per seed.
    Per-triangle weights sum exactly to triangle area."""
    if target_spacing <= 0:
        raise ValueError("target_spacing must be > 0")
    rng = np.random.default_rng(rng_seed)
    areas = mesh.face_areas()
    normals = mesh.face_normals()
    counts = np.maximum(1, np.round(areas / target_spacing**2).astype(np.int64))

    pts, wts, nrm, tid = [], [], [], []
    v0 = mesh.vertices[mesh.triangles[:, 0]]
    e1 = mesh.vertices[mesh.triangles[:, 1]] - v0
    e2 = mesh.vertices[mesh.triangles[:, 2]] - v0
    for f in range(len(areas)):
        n = counts[f]
        r1 = rng.random(n)
        r2 = rng.random(n)
        flip = r1 + r2 > 1.0
        r1[flip] = 1.0 - r1[flip]
        r2[flip] = 1.0 - r2[flip]
        pts.append(v0[f] + np.outer(r1, e1[f]) + np.outer(r2, e2[f]))
        wts.append(np.full(n, areas[f] / n))
        nrm.append(np.broadcast_to(normals[f], (n, 3)))
        tid.append(np.full(n, f, dtype=np.int64))
    return SurfaceElements(
        np.concatenate(pts), np.concatenate(wts),
        np.concatenate(nrm).copy(), np.concatenate(tid))
