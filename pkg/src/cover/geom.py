"""Coordinate conventions: ERP pixel mapping, quaternions, poses, AABBs.

World frame is right-handed, +Y up. Camera frame is OpenCV-style:
+x right, +y down, +z forward. ERP pixels follow the spherical-CNN
convention: longitude = (u/W - 0.5)*2*pi, latitude = (0.5 - v/H)*pi.
All geometry math is float64; depth buffers downstream are float32.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

# Convention strings recorded in per-scene metadata.
WORLD_CONVENTION = "right-handed, +X right, +Y up, +Z forward"
CAMERA_CONVENTION = "OpenCV: +x right, +y down, +z forward"
ERP_CONVENTION = "lon=(u/W-0.5)*2pi, lat=(0.5-v/H)*pi, pixel centres at index+0.5"


def normalize(v: np.ndarray) -> np.ndarray:
    """Return v scaled to unit norm (last axis)."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n == 0.0):
        raise ValueError("cannot normalize zero vector")
    return v / n


@dataclasses.dataclass(frozen=True)
class QuatWC:
    """Scalar-first world-to-camera rotation quaternion [w, x, y, z]."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} not within 1e-6 of 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def to_matrix(self) -> np.ndarray:
        """Rotation matrix R_wc such that p_c = R_wc @ (p_w - C_w)."""
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ],
            dtype=np.float64,
        )

    @staticmethod
    def from_array(q) -> "QuatWC":
        w, x, y, z = (float(c) for c in q)
        n = math.sqrt(w * w + x * x + y * y + z * z)
        return QuatWC(w / n, x / n, y / n, z / n)


@dataclasses.dataclass(frozen=True)
class PoseWC:
    """World-to-camera extrinsic: rotation quaternion plus camera centre C_w."""

    rotation: QuatWC
    position: np.ndarray  # (3,) world metres

    def __post_init__(self):
        object.__setattr__(
            self, "position", np.asarray(self.position, dtype=np.float64).reshape(3)
        )


# Canonical upright ERP camera: 180 deg about world X, so camera +y (image
# down) aligns with world -Y and camera +z (forward) with world -Z.
UPRIGHT_QUAT = QuatWC(0.0, 1.0, 0.0, 0.0)


def upright_pose(position) -> PoseWC:
    """Upright ERP camera pose at a world position (fixed yaw)."""
    return PoseWC(UPRIGHT_QUAT, np.asarray(position, dtype=np.float64))


def pixel_to_dir(u, v, W: int, H: int) -> np.ndarray:
    """Unit camera-frame direction for continuous ERP pixel coordinates.

    Callers pass pixel centres (integer index + 0.5). Accepts scalars or
    arrays (broadcast); returns (..., 3).
    """
    if W < 2 or H < 1:
        raise ValueError("need W >= 2 and H >= 1")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    lon = (u / W - 0.5) * (2.0 * np.pi)
    lat = (0.5 - v / H) * np.pi
    cl = np.cos(lat)
    return np.stack([cl * np.sin(lon), -np.sin(lat), cl * np.cos(lon)], axis=-1)


def dir_to_pixel(d, W: int, H: int):
    """Continuous ERP pixel coordinates (u, v) for unit camera-frame directions.

    u is wrapped into [0, W). At the poles (|d_y| ~ 1) longitude is undefined
    and u is pinned to W/2 for determinism.
    """
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    lon = np.arctan2(x, z)
    lat = np.arcsin(np.clip(-y, -1.0, 1.0))
    u = (lon / (2.0 * np.pi) + 0.5) * W
    u = np.mod(u, W)
    v = (0.5 - lat / np.pi) * H
    pole = np.abs(y) >= 1.0 - 1e-12
    u = np.where(pole, W / 2.0, u)
    if u.ndim == 0:
        return float(u), float(v)
    return u, v


def world_to_camera(pose: PoseWC, p_w) -> np.ndarray:
    """p_c = R_wc (p_w - C_w). Works on (3,) or (N, 3)."""
    p_w = np.asarray(p_w, dtype=np.float64)
    R = pose.rotation.to_matrix()
    return (p_w - pose.position) @ R.T


def camera_to_world(pose: PoseWC, p_c) -> np.ndarray:
    """Inverse of world_to_camera."""
    p_c = np.asarray(p_c, dtype=np.float64)
    R = pose.rotation.to_matrix()
    return p_c @ R + pose.position


@dataclasses.dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box in world metres."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", np.asarray(self.min, dtype=np.float64).reshape(3))
        object.__setattr__(self, "max", np.asarray(self.max, dtype=np.float64).reshape(3))
        if np.any(self.min > self.max):
            raise ValueError("AABB min must be <= max componentwise")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def size(self) -> np.ndarray:
        return self.max - self.min


def aabb_diagonal(box: Aabb) -> float:
    """Euclidean length of the box diagonal."""
    return float(np.linalg.norm(box.max - box.min))
