"""ERP rendering, depth unprojection, and z-buffer splat warping.

Depth images carry Euclidean range along the pixel ray (not planar
z-depth); 0 encodes "no hit / invalid".
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import _kernels
from .bvh import Bvh, brute_force_raycast
from .geom import PoseWC, camera_to_world, pixel_to_dir

DEFAULT_SPLAT_RADIUS = 1


@dataclasses.dataclass
class ErpImage:
    """W x H pixel grid: float32 range depth or uint8 RGB."""

    payload: np.ndarray  # (H, W) float32 or (H, W, 3) uint8

    @property
    def H(self) -> int:
        return self.payload.shape[0]

    @property
    def W(self) -> int:
        return self.payload.shape[1]


@dataclasses.dataclass
class WarpResult:
    """Pixels of a candidate frame already explained by history."""

    mask: np.ndarray  # (H, W) bool
    depth: ErpImage  # valid only where mask is True


def pixel_dirs_camera(W: int, H: int) -> np.ndarray:
    """(H, W, 3) unit camera-frame directions at pixel centres."""
    u = np.arange(W, dtype=np.float64) + 0.5
    v = np.arange(H, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v)
    return pixel_to_dir(uu, vv, W, H)


def render_erp(bvh: Bvh, pose: PoseWC, W: int, H: int, brute_force: bool = False):
    """Render range depth and flat-shaded RGB at an ERP pose.

    RGB is face color modulated by |n . d|; brute_force selects the
    all-triangle reference intersector (test oracle path).
    """
    dirs_cam = pixel_dirs_camera(W, H).reshape(-1, 3)
    R = pose.rotation.to_matrix()
    dirs_world = dirs_cam @ R  # R^T applied row-wise
    origin = pose.position[None, :]
    if brute_force:
        t, tri = brute_force_raycast(bvh.vertices, bvh.triangles, origin, dirs_world)
    else:
        t, tri = bvh.raycast_batch(origin, dirs_world)
    hit = tri >= 0
    depth = np.where(hit, t, 0.0).astype(np.float32).reshape(H, W)
    return ErpImage(depth), _shade(bvh, dirs_world, t, tri, hit, W, H)


def _shade(bvh: Bvh, dirs_world, t, tri, hit, W, H):
    rgb = np.zeros((H * W, 3), dtype=np.uint8)
    if np.any(hit):
        v0 = bvh.tri_v0[tri[hit]]
        n = np.cross(bvh.tri_e1[tri[hit]], bvh.tri_e2[tri[hit]])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        cosine = np.abs(np.einsum("ij,ij->i", n, dirs_world[hit]))
        color = getattr(bvh, "face_color", None)
        if color is None:
            base = np.full((hit.sum(), 3), 180.0)
        else:
            base = color[tri[hit]].astype(np.float64)
        rgb[hit] = np.clip(base * cosine[:, None], 0, 255).astype(np.uint8)
    return ErpImage(rgb.reshape(H, W, 3))


def unproject(depth: ErpImage, pose: PoseWC, stride: int = 1) -> np.ndarray:
    """World points for valid depth pixels on the stride grid; (N, 3)."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    H, W = depth.payload.shape
    d = depth.payload[::stride, ::stride].astype(np.float64)
    dirs = pixel_dirs_camera(W, H)[::stride, ::stride]
    valid = d > 0
    pts_cam = dirs[valid] * d[valid][:, None]
    if len(pts_cam) == 0:
        return np.empty((0, 3), dtype=np.float64)
    return camera_to_world(pose, pts_cam)


def warp_cloud(cloud: np.ndarray, pose: PoseWC, w: int, h: int,
               splat_radius: int = DEFAULT_SPLAT_RADIUS) -> WarpResult:
    """Project an accumulated world point cloud into an ERP frame with a
    min-range z-buffer; each point marks a (2r+1)^2 neighborhood."""
    cloud = np.ascontiguousarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(cloud) == 0:
        return WarpResult(np.zeros((h, w), dtype=bool),
                          ErpImage(np.zeros((h, w), dtype=np.float32)))
    R = np.ascontiguousarray(pose.rotation.to_matrix())
    C = np.ascontiguousarray(pose.position)
    depth, mask = _kernels.splat_points(cloud, R, C, w, h, splat_radius)
    return WarpResult(mask, ErpImage(depth))
