"""Candidate viewpoint generation (grid x height layers) and the 7-layer
geometric sanity filter producing the feasible pool."""

from __future__ import annotations

import dataclasses
from typing import List, Optional

import numpy as np

from .bvh import Bvh
from .geom import Aabb

LAYER_NAMES = [
    "vertical_hits",    # L1
    "inside_geometry",  # L2
    "corner",           # L3
    "enclosure",        # L4
    "wall_proximity",   # L5
    "visible_range",    # L6
    "narrow_gap",       # L7
]


class CandidateError(Exception):
    pass


@dataclasses.dataclass
class GridConfig:
    spacing_m: float = 0.5
    margin_m: float = 0.2
    cap: int = 10000
    height_layers_m: tuple = (0.5, 0.8, 1.2, 1.7, 2.1)
    extra_high_layers_m: tuple = (1.0, 1.5, 2.0, 2.5, 3.0)  # offsets above top layer
    top_clip_m: float = 0.3

    def __post_init__(self):
        if self.spacing_m <= 0 or self.cap < 1:
            raise CandidateError("spacing must be > 0 and cap >= 1")


@dataclasses.dataclass
class RayFan:
    """26 spherical probe directions (16 horizontal + 10 angled) plus the
    dedicated up/down pair; horizontal rays step 22.5 deg in azimuth, the
    angled rays sit at 5 azimuths (72 deg apart) x elevations +-45 deg."""

    horizontal: np.ndarray  # (16, 3)
    angled: np.ndarray  # (10, 3)
    up: np.ndarray
    down: np.ndarray

    @property
    def spherical(self) -> np.ndarray:
        """The 26 rays used by the enclosure / visible-range layers."""
        return np.vstack([self.horizontal, self.angled])

    @staticmethod
    def default() -> "RayFan":
        az = np.deg2rad(np.arange(16) * 22.5)
        horizontal = np.stack(
            [np.sin(az), np.zeros(16), np.cos(az)], axis=1)
        az5 = np.deg2rad(np.arange(5) * 72.0)
        angled = []
        for elev in (np.deg2rad(45.0), np.deg2rad(-45.0)):
            ce, se = np.cos(elev), np.sin(elev)
            for a in az5:
                angled.append([ce * np.sin(a), se, ce * np.cos(a)])
        return RayFan(horizontal, np.asarray(angled),
                      np.array([0.0, 1.0, 0.0]), np.array([0.0, -1.0, 0.0]))


@dataclasses.dataclass
class Candidate:
    id: int
    position: np.ndarray
    layer_pass: List[bool]  # 7 flags, all evaluated even after a failure
    layer_diag: dict
    feasible: bool


@dataclasses.dataclass
class CandidateSet:
    candidates: List[Candidate]

    @property
    def feasible(self) -> List[Candidate]:
        return [c for c in self.candidates if c.feasible]

    def by_id(self, cid: int) -> Candidate:
        return self.candidates[cid]


def gen_candidates(mesh_aabb: Aabb, cfg: GridConfig,
                   effective_ceiling_m: Optional[float] = None) -> np.ndarray:
    """Horizontal grid inset by the margin, replicated at each height layer
    below the clipped ceiling; spacing doubles until the cap is met."""
    if effective_ceiling_m is None:
        effective_ceiling_m = float(mesh_aabb.size[1])
    height_limit = effective_ceiling_m - cfg.top_clip_m

    layers = [y for y in cfg.height_layers_m if y <= height_limit]
    top = max(cfg.height_layers_m)
    layers += [top + dy for dy in cfg.extra_high_layers_m if top + dy <= height_limit]

    spacing = cfg.spacing_m
    while True:
        xs = _axis_points(mesh_aabb.min[0], mesh_aabb.max[0], cfg.margin_m, spacing)
        zs = _axis_points(mesh_aabb.min[2], mesh_aabb.max[2], cfg.margin_m, spacing)
        count = len(xs) * len(zs) * len(layers)
        if count <= cfg.cap:
            break
        spacing *= 2.0
    if count == 0:
        raise CandidateError("candidate grid is empty (degenerate scene)")

    floor = mesh_aabb.min[1]
    positions = np.array(
        [[x, floor + y, z] for y in layers for z in zs for x in xs],
        dtype=np.float64)
    return positions


def _axis_points(lo, hi, margin, spacing):
    length = hi - lo - 2 * margin
    if length < 0:
        return np.empty(0)
    n = int(np.floor(length / spacing + 1e-9)) + 1
    return lo + margin + spacing * np.arange(n)


def sanity_filter(bvh: Bvh, position: np.ndarray, fan: RayFan,
                  ceiling_m: float, cand_id: int = 0) -> Candidate:
    """Evaluate all 7 validity layers from one 28-ray cast (miss = +inf).

    Every layer is reported even when an earlier one already failed.
    """
    position = np.asarray(position, dtype=np.float64)
    dirs = np.vstack([fan.horizontal, fan.angled, fan.up[None], fan.down[None]])
    t, _ = bvh.raycast_batch(position[None, :], dirs)
    horiz = t[:16]
    sph = t[:26]
    up_d, down_d = t[26], t[27]

    # L1: vertical sanity. Up/down hits beyond the bound (or missing
    # entirely) indicate an escaped or atrium-embedded candidate.
    l1 = (up_d <= max(5.0, ceiling_m)) and (down_d <= max(3.0, ceiling_m))
    # L2: embedded in geometry.
    near = int(np.sum(sph < 0.2))
    l2 = near < 2
    # L3: corner/closet — too many short horizontal rays.
    short_frac = float(np.mean(horiz < 1.0))
    l3 = short_frac <= 0.5
    # L4: small enclosed space (conjunction of all three conditions).
    finite = sph[np.isfinite(sph)]
    hit_rate = float(len(finite)) / 26.0
    if len(finite) >= 2 and finite.mean() > 0:
        cv = float(finite.std() / finite.mean())
    else:
        cv = np.inf
    max_d = float(finite.max()) if len(finite) else 0.0
    l4 = not (hit_rate >= 0.9 and cv < 0.3 and max_d < 8.0)
    # L5: wall proximity.
    horiz_min = float(np.min(horiz))
    l5 = horiz_min >= 0.3
    # L6: visible-range fraction over all 26 rays.
    in_range = float(np.mean((sph >= 0.5) & (sph <= 20.0)))
    l6 = in_range >= 0.35
    # L7: narrow gap — any opposite horizontal pair too close together.
    pair_sums = horiz[:8] + horiz[8:16]
    min_pair = float(np.min(pair_sums))
    l7 = min_pair >= 1.5

    flags = [bool(x) for x in (l1, l2, l3, l4, l5, l6, l7)]
    diag = {
        "up_m": float(up_d), "down_m": float(down_d),
        "near_count": near, "short_horiz_frac": short_frac,
        "hit_rate": hit_rate, "cv": cv if np.isfinite(cv) else None,
        "max_m": max_d, "horiz_min_m": horiz_min,
        "in_range_frac": in_range, "min_opposite_sum_m": min_pair,
    }
    return Candidate(cand_id, position, flags, diag, all(flags))


def filter_all(bvh: Bvh, positions: np.ndarray, ceiling_m: float,
               fan: Optional[RayFan] = None) -> CandidateSet:
    """Apply the sanity filter to every position, preserving generation
    order (candidate ids are stable per scene + config)."""
    fan = fan or RayFan.default()
    out = [sanity_filter(bvh, p, fan, ceiling_m, cand_id=i)
           for i, p in enumerate(positions)]
    cs = CandidateSet(out)
    if not cs.feasible:
        raise CandidateError("no feasible candidates (unusable scene)")
    return cs
