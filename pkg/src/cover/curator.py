"""Conflict-aware budgeted greedy viewpoint selection.

Scores candidates with a warping proxy: the accumulated point cloud is
splatted into each candidate's ERP frame and compared against a cached
low-resolution probe render. Probe pixels split into explained / new /
conflicted; the score is coverage gain minus a weighted conflict ratio.
An exact surface-element oracle and four baseline selectors live here
too, so proxy and reference share one candidate pool and seed.
"""

from __future__ import annotations

import dataclasses
import itertools
import time
from typing import Dict, List, Optional, Tuple

import numpy as np

from .bvh import Bvh, brute_force_raycast
from .candidates import Candidate, CandidateSet
from .geom import aabb_diagonal, upright_pose
from .render import render_erp, unproject, warp_cloud
from .scene import SurfaceElements

BASELINES = ("random", "single_probe", "coverage_only", "low_conflict")


@dataclasses.dataclass
class CuratorConfig:
    lam: float = 0.35
    delta_fraction: float = 0.005  # of the AABB diagonal
    delta_min_m: float = 0.01
    delta_max_m: float = 0.2
    probe_w: int = 256
    probe_h: int = 128
    m0: int = 32  # seed pool size (centre-nearest feasible candidates)
    k: int = 30
    early_stop: bool = False
    tau: float = 0.01
    m: int = 2
    stride: int = 4  # unprojection subsampling of the winner render
    render_w: int = 2048
    render_h: int = 1024
    splat_radius: int = 1

    def __post_init__(self):
        if self.lam < 0 or not (0 < self.tau < 1) or self.m < 1 or self.k < 1:
            raise ValueError("invalid curator config")

    def delta(self, bvh: Bvh) -> float:
        d = self.delta_fraction * aabb_diagonal(bvh.aabb)
        return float(np.clip(d, self.delta_min_m, self.delta_max_m))


@dataclasses.dataclass
class OracleScore:
    candidate_id: int
    explained: int
    new: int
    conflicted: int
    probe_total: int
    G: float
    L: float
    s: float


@dataclasses.dataclass
class SelectionState:
    selected: List[int]
    cloud: np.ndarray  # (N, 3) accumulated world points
    step: int = 0


@dataclasses.dataclass
class StepLog:
    step: int
    selected_id: int
    G: float
    L: float
    s: float
    candidates: List[OracleScore]
    runtime_s: float = 0.0


class ProbeCache:
    """Lazy per-candidate probe renders; probes are state-independent so
    one render per candidate serves the whole selection run."""

    def __init__(self, bvh: Bvh, cfg: CuratorConfig):
        self.bvh = bvh
        self.cfg = cfg
        self._depth: Dict[int, np.ndarray] = {}

    def depth(self, cand: Candidate) -> np.ndarray:
        if cand.id not in self._depth:
            d, _ = render_erp(self.bvh, upright_pose(cand.position),
                              self.cfg.probe_w, self.cfg.probe_h)
            self._depth[cand.id] = d.payload
        return self._depth[cand.id]

    def coverage(self, cand: Candidate) -> float:
        d = self.depth(cand)
        return float(np.count_nonzero(d > 0)) / d.size


def score_candidate(state: SelectionState, cand: Candidate, bvh: Bvh,
                    cfg: CuratorConfig, probes: ProbeCache,
                    delta: Optional[float] = None) -> OracleScore:
    """Split probe pixels into explained / new / conflicted against the
    warped history and compute (G, L, s)."""
    if delta is None:
        delta = cfg.delta(bvh)
    probe = probes.depth(cand)
    q = probe > 0
    omega = probe.size
    if len(state.cloud) == 0:
        n_new = int(np.count_nonzero(q))
        G = n_new / omega
        return OracleScore(cand.id, 0, n_new, 0, omega, G, 0.0, G)
    warped = warp_cloud(state.cloud, upright_pose(cand.position),
                        cfg.probe_w, cfg.probe_h, cfg.splat_radius)
    hist = warped.mask
    agree = np.abs(probe.astype(np.float64) - warped.depth.payload) <= delta
    n_e = int(np.count_nonzero(q & hist & agree))
    n_c = int(np.count_nonzero(q & hist & ~agree))
    n_n = int(np.count_nonzero(q & ~hist))
    G = n_n / omega
    L = n_c / omega
    return OracleScore(cand.id, n_e, n_n, n_c, omega, G, L, G - cfg.lam * L)


def seed_pool(candidates: CandidateSet, bvh: Bvh, cfg: CuratorConfig) -> List[Candidate]:
    """The m0 feasible candidates nearest the AABB centre (ties by id)."""
    feas = candidates.feasible
    if not feas:
        raise ValueError("no feasible candidate to seed from")
    centre = bvh.aabb.center
    ranked = sorted(feas, key=lambda c: (float(np.linalg.norm(c.position - centre)), c.id))
    return ranked[: min(cfg.m0, len(ranked))]


def pick_seed(candidates: CandidateSet, bvh: Bvh, cfg: CuratorConfig,
              probes: Optional[ProbeCache] = None) -> int:
    """Seed = argmax single-view probe coverage over the centre-near pool."""
    probes = probes or ProbeCache(bvh, cfg)
    pool = seed_pool(candidates, bvh, cfg)
    best = max(pool, key=lambda c: (probes.coverage(c), -c.id))
    return best.id


def _tie_key(score: OracleScore, cand: Candidate, centre: np.ndarray):
    # Max score wins; ties go to the candidate nearer the AABB centre,
    # then to the lower id (deterministic stand-in for reachability).
    return (-score.s, float(np.linalg.norm(cand.position - centre)), cand.id)


def _accumulate(state: SelectionState, cand: Candidate, bvh: Bvh,
                cfg: CuratorConfig):
    """Render the chosen candidate and fold its unprojection into the cloud."""
    depth, rgb = render_erp(bvh, upright_pose(cand.position),
                            cfg.render_w, cfg.render_h)
    pts = unproject(depth, upright_pose(cand.position), cfg.stride)
    state.cloud = pts if len(state.cloud) == 0 else np.vstack([state.cloud, pts])
    state.selected.append(cand.id)
    state.step += 1
    return depth, rgb


def _seed_log(seed_id: int, pool: List[Candidate], probes: ProbeCache,
              runtime_s: float) -> StepLog:
    scores = [OracleScore(c.id, 0, int(probes.coverage(c) * probes.depth(c).size),
                          0, probes.depth(c).size, probes.coverage(c), 0.0,
                          probes.coverage(c))
              for c in sorted(pool, key=lambda c: c.id)]
    g = next(s.G for s in scores if s.candidate_id == seed_id)
    return StepLog(1, seed_id, g, 0.0, g, scores, runtime_s)


def select_greedy(candidates: CandidateSet, bvh: Bvh, cfg: CuratorConfig
                  ) -> Tuple[SelectionState, List[StepLog]]:
    """Conflict-aware budgeted greedy selection with optional gain-gradient
    early stop (never returns fewer than 2 frames when stopping early)."""
    probes = ProbeCache(bvh, cfg)
    centre = bvh.aabb.center
    delta = cfg.delta(bvh)

    t0 = time.perf_counter()
    pool = seed_pool(candidates, bvh, cfg)
    seed_id = pick_seed(candidates, bvh, cfg, probes)
    state = SelectionState([], np.empty((0, 3)))
    _accumulate(state, candidates.by_id(seed_id), bvh, cfg)
    logs = [_seed_log(seed_id, pool, probes, time.perf_counter() - t0)]

    low_gain_streak = 0
    remaining = {c.id for c in candidates.feasible} - {seed_id}
    while state.step < cfg.k and remaining:
        t0 = time.perf_counter()
        scores = [score_candidate(state, candidates.by_id(cid), bvh, cfg,
                                  probes, delta)
                  for cid in sorted(remaining)]
        winner = min(scores, key=lambda s: _tie_key(s, candidates.by_id(s.candidate_id),
                                                    centre))
        _accumulate(state, candidates.by_id(winner.candidate_id), bvh, cfg)
        remaining.discard(winner.candidate_id)
        logs.append(StepLog(state.step, winner.candidate_id, winner.G, winner.L,
                            winner.s, scores, time.perf_counter() - t0))
        if cfg.early_stop:
            low_gain_streak = low_gain_streak + 1 if winner.G < cfg.tau else 0
            if low_gain_streak >= cfg.m and len(state.selected) >= 2:
                break
    return state, logs


# ---------------------------------------------------------------------------
# Exact pre-render-all oracle


def visibility_mask(position: np.ndarray, elements: SurfaceElements, bvh: Bvh,
                    brute_force: bool = False) -> np.ndarray:
    """Boolean mask of surface elements observed from a viewpoint: the
    segment to the element is unobstructed and the element is front-facing."""
    position = np.asarray(position, dtype=np.float64)
    vecs = elements.points - position
    dist = np.linalg.norm(vecs, axis=1)
    dist = np.maximum(dist, 1e-12)
    dirs = vecs / dist[:, None]
    if brute_force:
        t, _ = brute_force_raycast(bvh.vertices, bvh.triangles,
                                   position[None, :], dirs)
    else:
        t, _ = bvh.raycast_batch(np.broadcast_to(position, dirs.shape).copy(), dirs)
    unobstructed = t >= dist - 1e-4
    front = np.einsum("ij,ij->i", elements.normals, -vecs) > 0
    return unobstructed & front


class ExactOracle:
    """Caches per-candidate element visibility for marginal-gain queries."""

    def __init__(self, elements: SurfaceElements, bvh: Bvh):
        self.elements = elements
        self.bvh = bvh
        self._masks: Dict[int, np.ndarray] = {}

    def mask(self, cand: Candidate) -> np.ndarray:
        if cand.id not in self._masks:
            self._masks[cand.id] = visibility_mask(cand.position, self.elements,
                                                   self.bvh)
        return self._masks[cand.id]

    def coverage(self, cands: List[Candidate]) -> float:
        covered = np.zeros(len(self.elements.points), dtype=bool)
        for c in cands:
            covered |= self.mask(c)
        return float(np.count_nonzero(covered)) / len(covered)


def exact_marginal(covered: np.ndarray, cand: Candidate,
                   oracle: ExactOracle) -> float:
    """True marginal coverage of a candidate given the covered-element mask."""
    gain = np.count_nonzero(oracle.mask(cand) & ~covered)
    return float(gain) / len(covered)


def select_exact_greedy(candidates: CandidateSet, elements: SurfaceElements,
                        bvh: Bvh, k: int, cfg: Optional[CuratorConfig] = None
                        ) -> Tuple[List[int], List[float]]:
    """Greedy on the exact oracle, sharing the proxy's seed rule.

    Returns (selected ids, per-step marginal gains).
    """
    cfg = cfg or CuratorConfig(k=k)
    oracle = ExactOracle(elements, bvh)
    centre = bvh.aabb.center
    seed_id = pick_seed(candidates, bvh, cfg)
    selected = [seed_id]
    covered = oracle.mask(candidates.by_id(seed_id)).copy()
    gains = [float(np.count_nonzero(covered)) / len(covered)]
    remaining = {c.id for c in candidates.feasible} - {seed_id}
    while len(selected) < k and remaining:
        best = min(
            remaining,
            key=lambda cid: (
                -exact_marginal(covered, candidates.by_id(cid), oracle),
                float(np.linalg.norm(candidates.by_id(cid).position - centre)),
                cid))
        gains.append(exact_marginal(covered, candidates.by_id(best), oracle))
        covered |= oracle.mask(candidates.by_id(best))
        selected.append(best)
        remaining.discard(best)
    return selected, gains


def exhaustive_optimum(candidates: CandidateSet, elements: SurfaceElements,
                       bvh: Bvh, k: int, limit: int = 500000) -> Tuple[tuple, float]:
    """Best coverage over all feasible subsets of size <= k (test oracle)."""
    oracle = ExactOracle(elements, bvh)
    feas = candidates.feasible
    n_subsets = sum(1 for _ in itertools.combinations(range(len(feas)), min(k, len(feas))))
    if n_subsets > limit:
        raise ValueError(f"too many subsets ({n_subsets}) for exhaustive search")
    best, best_cov = (), 0.0
    for combo in itertools.combinations(feas, min(k, len(feas))):
        cov = oracle.coverage(list(combo))
        if cov > best_cov:
            best, best_cov = tuple(c.id for c in combo), cov
    return best, best_cov


# ---------------------------------------------------------------------------
# Baselines


def baseline_select(kind: str, candidates: CandidateSet, bvh: Bvh,
                    cfg: CuratorConfig, rng_seed: int = 0
                    ) -> Tuple[SelectionState, List[StepLog]]:
    """Four reference selectors sharing the greedy seed rule.

    random: uniform without replacement; single_probe: one scoring pass
    from the seed state with no state update; coverage_only: greedy on G
    alone; low_conflict: greedy on -L (ties by higher G, then id).
    """
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}")
    probes = ProbeCache(bvh, cfg)
    centre = bvh.aabb.center
    delta = cfg.delta(bvh)

    t0 = time.perf_counter()
    pool = seed_pool(candidates, bvh, cfg)
    seed_id = pick_seed(candidates, bvh, cfg, probes)
    state = SelectionState([], np.empty((0, 3)))
    _accumulate(state, candidates.by_id(seed_id), bvh, cfg)
    logs = [_seed_log(seed_id, pool, probes, time.perf_counter() - t0)]
    remaining = sorted({c.id for c in candidates.feasible} - {seed_id})

    if kind == "random":
        rng = np.random.default_rng(rng_seed)
        picks = [remaining[i] for i in
                 rng.permutation(len(remaining))[: cfg.k - 1]]
        for cid in picks:
            t0 = time.perf_counter()
            sc = score_candidate(state, candidates.by_id(cid), bvh, cfg,
                                 probes, delta)
            _accumulate(state, candidates.by_id(cid), bvh, cfg)
            logs.append(StepLog(state.step, cid, sc.G, sc.L, sc.s, [sc],
                                time.perf_counter() - t0))
        return state, logs

    if kind == "single_probe":
        t0 = time.perf_counter()
        scores = [score_candidate(state, candidates.by_id(cid), bvh, cfg,
                                  probes, delta) for cid in remaining]
        ranked = sorted(scores,
                        key=lambda s: _tie_key(s, candidates.by_id(s.candidate_id),
                                               centre))
        dt = time.perf_counter() - t0
        for sc in ranked[: cfg.k - 1]:
            _accumulate(state, candidates.by_id(sc.candidate_id), bvh, cfg)
            logs.append(StepLog(state.step, sc.candidate_id, sc.G, sc.L, sc.s,
                                scores, dt))
            dt = 0.0
        return state, logs

    # coverage_only / low_conflict: iterative greedy on a reduced key.
    remaining = set(remaining)
    while state.step < cfg.k and remaining:
        t0 = time.perf_counter()
        scores = [score_candidate(state, candidates.by_id(cid), bvh, cfg,
                                  probes, delta) for cid in sorted(remaining)]
        if kind == "coverage_only":
            winner = min(scores, key=lambda s: (
                -s.G,
                float(np.linalg.norm(candidates.by_id(s.candidate_id).position
                                     - centre)),
                s.candidate_id))
        else:  # low_conflict
            winner = min(scores, key=lambda s: (s.L, -s.G, s.candidate_id))
        _accumulate(state, candidates.by_id(winner.candidate_id), bvh, cfg)
        remaining.discard(winner.candidate_id)
        logs.append(StepLog(state.step, winner.candidate_id, winner.G, winner.L,
                            winner.s, scores, time.perf_counter() - t0))
    return state, logs


# ---------------------------------------------------------------------------
# Proxy-vs-exact gap harness


@dataclasses.dataclass
class OracleGapRecord:
    step: int
    proxy_gain: Dict[int, float]  # candidate id -> G
    exact_gain: Dict[int, float]  # candidate id -> true marginal
    epsilon: float  # max |G - exact| over scored candidates
    gamma: float  # L at the exact-best candidate
    top1_agree: bool


@dataclasses.dataclass
class OracleGapResult:
    records: List[OracleGapRecord]
    proxy_state: SelectionState
    proxy_logs: List[StepLog]
    exact_selected: List[int]
    proxy_coverage: float
    exact_coverage: float
    proxy_score_seconds: float
    exact_score_seconds: float
    proxy_step_seconds: List[float] = dataclasses.field(default_factory=list)
    exact_step_seconds: List[float] = dataclasses.field(default_factory=list)


def oracle_gap_run(candidates: CandidateSet, elements: SurfaceElements,
                   bvh: Bvh, cfg: CuratorConfig) -> OracleGapResult:
    """Run the warping greedy while measuring, at every step, the exact
    marginal of every scored candidate; times the two scoring paths."""
    probes = ProbeCache(bvh, cfg)
    oracle = ExactOracle(elements, bvh)
    centre = bvh.aabb.center
    delta = cfg.delta(bvh)

    pool = seed_pool(candidates, bvh, cfg)
    seed_id = pick_seed(candidates, bvh, cfg, probes)
    state = SelectionState([], np.empty((0, 3)))
    _accumulate(state, candidates.by_id(seed_id), bvh, cfg)
    logs = [_seed_log(seed_id, pool, probes, 0.0)]
    covered = oracle.mask(candidates.by_id(seed_id)).copy()

    records: List[OracleGapRecord] = []
    proxy_seconds = 0.0
    exact_seconds = 0.0
    proxy_steps: List[float] = []
    exact_steps: List[float] = []
    remaining = {c.id for c in candidates.feasible} - {seed_id}
    # Probe renders are state-independent one-time setup shared by every
    # step, so they are warmed here and excluded from the per-step timing;
    # the tiny splat warms the JIT-compiled warp kernel the same way.
    for cid in sorted(remaining):
        probes.depth(candidates.by_id(cid))
    warp_cloud(state.cloud[:1], upright_pose(centre), cfg.probe_w,
               cfg.probe_h, cfg.splat_radius)
    while state.step < cfg.k and remaining:
        order = sorted(remaining)
        t0 = time.perf_counter()
        scores = {cid: score_candidate(state, candidates.by_id(cid), bvh, cfg,
                                       probes, delta) for cid in order}
        dt = time.perf_counter() - t0
        proxy_seconds += dt
        proxy_steps.append(dt)

        t0 = time.perf_counter()
        exact = {cid: _prerender_exact_gain(candidates.by_id(cid), covered,
                                            oracle, bvh, cfg)
                 for cid in order}
        dt = time.perf_counter() - t0
        exact_seconds += dt
        exact_steps.append(dt)

        winner = min(scores.values(),
                     key=lambda s: _tie_key(s, candidates.by_id(s.candidate_id),
                                            centre))
        exact_best = min(order, key=lambda cid: (-exact[cid], cid))
        eps = max(abs(scores[cid].G - exact[cid]) for cid in order)
        records.append(OracleGapRecord(
            step=state.step + 1,
            proxy_gain={cid: scores[cid].G for cid in order},
            exact_gain=exact,
            epsilon=eps,
            gamma=scores[exact_best].L,
            top1_agree=(winner.candidate_id == exact_best)))

        _accumulate(state, candidates.by_id(winner.candidate_id), bvh, cfg)
        covered |= oracle.mask(candidates.by_id(winner.candidate_id))
        remaining.discard(winner.candidate_id)
        logs.append(StepLog(state.step, winner.candidate_id, winner.G, winner.L,
                            winner.s, list(scores.values()), 0.0))

    exact_ids, _ = select_exact_greedy(candidates, elements, bvh, cfg.k, cfg)
    proxy_cov = oracle.coverage([candidates.by_id(c) for c in state.selected])
    exact_cov = oracle.coverage([candidates.by_id(c) for c in exact_ids])
    return OracleGapResult(records, state, logs, exact_ids, proxy_cov,
                           exact_cov, proxy_seconds, exact_seconds,
                           proxy_steps, exact_steps)


def _prerender_exact_gain(cand: Candidate, covered: np.ndarray,
                          oracle: ExactOracle, bvh: Bvh, cfg: CuratorConfig) -> float:
    """Exact reference gain, paying the pre-render-all cost: a probe-res
    render of the candidate plus the element-visibility test."""
    render_erp(bvh, upright_pose(cand.position), cfg.probe_w, cfg.probe_h)
    return exact_marginal(covered, cand, oracle)
