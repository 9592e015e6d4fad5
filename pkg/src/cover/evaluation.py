"""Scene-level evaluation: true-coverage metrics, the five-selector
comparison, the conflict-weight sweep, and cross-scene consistency runs.

Conflict for a selection is the mean per-step conflict ratio of the
selected winners over steps >= 2 (the seed has no history); this
definition is applied uniformly to every selector and stated in the CSV
header comment.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from typing import List, Optional, Sequence

import numpy as np

from .bvh import Bvh, build_bvh
from .candidates import CandidateSet, GridConfig, filter_all, gen_candidates
from .curator import (BASELINES, CuratorConfig, ExactOracle, SelectionState,
                      StepLog, baseline_select, select_greedy)
from .scene import RoomSpec, SurfaceElements, discretize_surface, gen_room_scene

CSV_HEADER = ["scene", "selector", "lambda", "K", "coverage", "cov_per_view",
              "conflict", "frames", "runtime_s"]
DEFAULT_LAMBDAS = (0.0, 0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0)


@dataclasses.dataclass
class EvalRow:
    scene: str
    selector: str
    lam: float
    k: int
    coverage: float
    coverage_per_view: float
    conflict: float
    frames: int
    runtime_s: float

    def as_list(self):
        return [self.scene, self.selector, self.lam, self.k, self.coverage,
                self.coverage_per_view, self.conflict, self.frames,
                self.runtime_s]


def selection_conflict(logs: Sequence[StepLog]) -> float:
    """Mean winner conflict ratio over steps >= 2; 0 for a seed-only run."""
    tail = [log.L for log in logs if log.step >= 2]
    return float(np.mean(tail)) if tail else 0.0


def evaluate_selection(state: SelectionState, candidates: CandidateSet,
                       elements: SurfaceElements, bvh: Bvh,
                       logs: Sequence[StepLog], scene_id: str = "",
                       selector: str = "cover", lam: float = 0.0,
                       k: int = 0, runtime_s: float = 0.0) -> EvalRow:
    """True coverage of the selected union via the exact visibility test."""
    if not state.selected:
        raise ValueError("cannot evaluate an empty selection")
    oracle = ExactOracle(elements, bvh)
    cov = oracle.coverage([candidates.by_id(c) for c in state.selected])
    n = len(state.selected)
    return EvalRow(scene_id, selector, lam, k, cov, cov / n,
                   selection_conflict(logs), n, runtime_s)


@dataclasses.dataclass
class PreparedScene:
    scene_id: str
    bvh: Bvh
    candidates: CandidateSet
    elements: SurfaceElements


def prepare_scene(spec: RoomSpec, scene_id: str, rng_seed: int = 0,
                  grid: Optional[GridConfig] = None,
                  element_spacing: float = 0.25) -> PreparedScene:
    """Generate mesh, BVH, candidate pool, and surface elements for one
    procedural scene."""
    mesh = gen_room_scene(spec, rng_seed)
    bvh = build_bvh(mesh)
    grid = grid or GridConfig()
    positions = gen_candidates(mesh.aabb, grid)
    cands = filter_all(bvh, positions, ceiling_m=float(mesh.aabb.size[1]))
    elements = discretize_surface(mesh, element_spacing, rng_seed)
    return PreparedScene(scene_id, bvh, cands, elements)


def run_selector(prep: PreparedScene, selector: str, cfg: CuratorConfig,
                 rng_seed: int = 0):
    t0 = time.perf_counter()
    if selector == "cover":
        state, logs = select_greedy(prep.candidates, prep.bvh, cfg)
    elif selector in BASELINES:
        state, logs = baseline_select(selector, prep.candidates, prep.bvh,
                                      cfg, rng_seed)
    else:
        raise ValueError(f"unknown selector {selector!r}")
    dt = time.perf_counter() - t0
    return state, logs, dt


def compare_selectors(prep: PreparedScene, cfg: CuratorConfig,
                      random_seeds: Sequence[int] = range(10)) -> List[EvalRow]:
    """Five-selector comparison on one scene; the random baseline reports
    one row per seed."""
    rows = []
    for selector in ("cover",) + BASELINES:
        seeds = random_seeds if selector == "random" else [0]
        for seed in seeds:
            state, logs, dt = run_selector(prep, selector, cfg, seed)
            name = selector if selector != "random" else f"random[{seed}]"
            rows.append(evaluate_selection(
                state, prep.candidates, prep.elements, prep.bvh, logs,
                prep.scene_id, name, cfg.lam, cfg.k, dt))
    return rows


def lambda_sweep(preps: Sequence[PreparedScene], lambdas: Sequence[float],
                 cfg: CuratorConfig) -> List[EvalRow]:
    """Run the conflict-aware greedy per lambda per scene, early stop off;
    exactly len(lambdas) * len(preps) rows."""
    rows = []
    for lam in lambdas:
        for prep in preps:
            c = dataclasses.replace(cfg, lam=lam, early_stop=False)
            state, logs, dt = run_selector(prep, "cover", c)
            rows.append(evaluate_selection(state, prep.candidates,
                                           prep.elements, prep.bvh, logs,
                                           prep.scene_id, "cover", lam,
                                           c.k, dt))
    return rows


def scene_families(n_per_family: int = 3, base_seed: int = 0):
    """Procedural scene families standing in for the paper's source size
    regimes: small clean boxes, cluttered mid-size rooms (with and without
    geometry jitter), and large open-plan spaces."""
    fams = {}
    fams["small_box"] = [
        (RoomSpec(3.0 + 0.5 * i, 3.0, 2.5, n_random_furniture=1), f"small_{i}")
        for i in range(n_per_family)]
    fams["cluttered"] = [
        (RoomSpec(5.0, 4.0 + 0.5 * i, 2.7, n_random_furniture=6), f"clut_{i}")
        for i in range(n_per_family)]
    fams["cluttered_noisy"] = [
        (RoomSpec(5.0, 4.0 + 0.5 * i, 2.7, n_random_furniture=6,
                  jitter_m=0.02), f"noisy_{i}")
        for i in range(n_per_family)]
    fams["open_plan"] = [
        (RoomSpec(10.0, 8.0, 3.0, n_random_furniture=8,
                  partitions=[{"axis": "x", "offset_m": 5.0,
                               "doorway": {"start_m": 3.0, "width_m": 1.5}}]),
         f"open_{i}")
        for i in range(n_per_family)]
    return fams, base_seed


def cross_scene_run(cfg: CuratorConfig, n_per_family: int = 3,
                    grid: Optional[GridConfig] = None,
                    element_spacing: float = 0.3) -> List[EvalRow]:
    """One aggregate row per scene family at fixed hyperparameters."""
    fams, base_seed = scene_families(n_per_family)
    rows = []
    for fam, specs in fams.items():
        fam_rows = []
        for i, (spec, sid) in enumerate(specs):
            prep = prepare_scene(spec, sid, base_seed + i, grid, element_spacing)
            state, logs, dt = run_selector(prep, "cover", cfg)
            fam_rows.append(evaluate_selection(
                state, prep.candidates, prep.elements, prep.bvh, logs,
                sid, "cover", cfg.lam, cfg.k, dt))
        rows.append(EvalRow(
            fam, "cover", cfg.lam, cfg.k,
            float(np.mean([r.coverage for r in fam_rows])),
            float(np.mean([r.coverage_per_view for r in fam_rows])),
            float(np.mean([r.conflict for r in fam_rows])),
            int(round(np.mean([r.frames for r in fam_rows]))),
            float(sum(r.runtime_s for r in fam_rows))))
    return rows


def write_rows(out_dir, rows: Sequence[EvalRow], wallclock: Optional[dict] = None):
    """results/coverage.csv + results/wallclock.json."""
    results = os.path.join(out_dir, "results")
    os.makedirs(results, exist_ok=True)
    path = os.path.join(results, "coverage.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        fh.write("# conflict = mean winner L_t over steps >= 2\n")
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow(r.as_list())
    wc = wallclock or {"total_runtime_s": sum(r.runtime_s for r in rows)}
    with open(os.path.join(results, "wallclock.json"), "w") as fh:
        json.dump(wc, fh, indent=2, sort_keys=True)
    return path
