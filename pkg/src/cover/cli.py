"""Command-line front end.

Subcommands: gen-scene, candidates, select, evaluate, sweep-lambda,
cross-scene, oracle-gap, audit. Every run takes an optional JSON config
file plus flag overrides; bad config exits 2 naming the offending key,
runtime failures exit 1. The worker thread count is read from the
COVER_THREADS environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import evaluation, io
from .bvh import build_bvh
from .candidates import (CandidateError, GridConfig, RayFan, filter_all,
                         gen_candidates)
from .curator import (BASELINES, CuratorConfig, baseline_select,
                      oracle_gap_run, select_greedy)
from .geom import upright_pose
from .render import render_erp
from .scene import (MeshError, RoomSpec, discretize_surface, gen_room_scene,
                    load_mesh, save_mesh)

EXIT_CONFIG = 2
EXIT_RUNTIME = 1

_CURATOR_KEYS = {f.name for f in dataclasses.fields(CuratorConfig)}
_GRID_KEYS = {f.name for f in dataclasses.fields(GridConfig)}
_EXTRA_KEYS = {"selector", "seed", "element_spacing"}


class ConfigError(Exception):
    pass


def load_config(path=None, overrides=None) -> dict:
    """Merged run config: defaults < JSON file < CLI flags."""
    cfg = {f.name: getattr(CuratorConfig(), f.name)
           for f in dataclasses.fields(CuratorConfig)}
    cfg.update({f.name: getattr(GridConfig(), f.name)
                for f in dataclasses.fields(GridConfig)})
    cfg["selector"] = "cover"
    cfg["seed"] = 0
    cfg["element_spacing"] = 0.25
    allowed = _CURATOR_KEYS | _GRID_KEYS | _EXTRA_KEYS
    if path:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
        for key in raw:
            if key not in allowed:
                raise ConfigError(f"unknown config key {key!r} in {path}")
        cfg.update(raw)
    for key, val in (overrides or {}).items():
        if val is not None:
            if key not in allowed:
                raise ConfigError(f"unknown config key {key!r}")
            cfg[key] = val
    if cfg["selector"] not in ("cover",) + BASELINES:
        raise ConfigError(f"invalid value for config key 'selector': "
                          f"{cfg['selector']!r}")
    try:
        curator_cfg = CuratorConfig(**{k: cfg[k] for k in _CURATOR_KEYS})
        grid_cfg = GridConfig(**{k: tuple(cfg[k]) if isinstance(cfg[k], list)
                                 else cfg[k] for k in _GRID_KEYS})
    except (ValueError, CandidateError) as exc:
        raise ConfigError(str(exc)) from exc
    cfg["_curator"] = curator_cfg
    cfg["_grid"] = grid_cfg
    return cfg


def _public(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)


def _add_select_flags(p):
    p.add_argument("--scene", required=True, help="mesh file")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--probe-w", dest="probe_w", type=int, default=None)
    p.add_argument("--probe-h", dest="probe_h", type=int, default=None)
    p.add_argument("--render-w", dest="render_w", type=int, default=None)
    p.add_argument("--render-h", dest="render_h", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--spacing", dest="spacing_m", type=float, default=None)
    p.add_argument("--early-stop", choices=["on", "off"], default=None)
    p.add_argument("--selector",
                   choices=("cover",) + BASELINES, default=None)


def _overrides(args) -> dict:
    keys = _CURATOR_KEYS | _GRID_KEYS | _EXTRA_KEYS
    out = {k: getattr(args, k) for k in keys if hasattr(args, k)}
    es = getattr(args, "early_stop", None)
    if es is not None:
        out["early_stop"] = es == "on"
    return out


def _prepare(scene_path, cfg):
    mesh = load_mesh(scene_path)
    bvh = build_bvh(mesh)
    positions = gen_candidates(mesh.aabb, cfg["_grid"])
    cands = filter_all(bvh, positions, ceiling_m=float(mesh.aabb.size[1]))
    return mesh, bvh, cands


def cmd_gen_scene(args):
    if args.room:
        spec = RoomSpec.from_json(args.room)
    else:
        spec = RoomSpec(args.width, args.depth, args.height,
                        n_random_furniture=args.n_furniture)
    mesh = gen_room_scene(spec, args.seed or 0)
    os.makedirs(os.path.dirname(os.path.abspath(args.out_mesh)), exist_ok=True)
    save_mesh(mesh, args.out_mesh)
    print(f"wrote {args.out_mesh}: {len(mesh.vertices)} vertices, "
          f"{len(mesh.triangles)} triangles")
    return 0


def cmd_candidates(args):
    cfg = load_config(args.config, _overrides(args))
    _mesh, _bvh, cands = _prepare(args.scene, cfg)
    os.makedirs(args.out, exist_ok=True)
    path = io.write_candidates(args.out, cands.candidates)
    n_feas = len(cands.feasible)
    print(f"wrote {path}: {len(cands.candidates)} candidates, "
          f"{n_feas} feasible")
    return 0


def cmd_select(args):
    cfg = load_config(args.config, _overrides(args))
    ccfg = cfg["_curator"]
    mesh, bvh, cands = _prepare(args.scene, cfg)

    t0 = time.perf_counter()
    if cfg["selector"] == "cover":
        state, logs = select_greedy(cands, bvh, ccfg)
    else:
        state, logs = baseline_select(cfg["selector"], cands, bvh, ccfg,
                                      cfg["seed"])
    runtime = time.perf_counter() - t0

    os.makedirs(args.out, exist_ok=True)
    cfg_hash = io.write_config(args.out, _public(cfg))
    scene_id = os.path.splitext(os.path.basename(args.scene))[0]
    io.write_meta(args.out, scene_id, "procedural", cfg_hash)
    io.write_candidates(args.out, cands.candidates)
    io.write_step_logs(args.out, logs)
    io.write_selected(args.out, logs)

    first_pose = upright_pose(cands.by_id(state.selected[0]).position)
    for idx, cid in enumerate(state.selected):
        pose = upright_pose(cands.by_id(cid).position)
        depth, rgb = render_erp(bvh, pose, ccfg.render_w, ccfg.render_h)
        io.write_frame(args.out, idx, rgb, depth, pose, first_pose)

    print(f"selected {len(state.selected)} viewpoints "
          f"({cfg['selector']}, lambda={ccfg.lam}) in {runtime:.1f}s "
          f"-> {args.out}")
    return 0


def cmd_evaluate(args):
    cfg = load_config(args.config, _overrides(args))
    mesh, bvh, cands = _prepare(args.scene, cfg)
    elements = discretize_surface(mesh, cfg["element_spacing"], cfg["seed"])
    scene_id = os.path.splitext(os.path.basename(args.scene))[0]
    prep = evaluation.PreparedScene(scene_id, bvh, cands, elements)
    rows = evaluation.compare_selectors(
        prep, cfg["_curator"], random_seeds=range(args.random_seeds))
    os.makedirs(args.out, exist_ok=True)
    io.write_config(args.out, _public(cfg))
    path = evaluation.write_rows(args.out, rows)
    print(f"wrote {path}: {len(rows)} rows")
    return 0


def cmd_sweep_lambda(args):
    cfg = load_config(args.config, _overrides(args))
    lambdas = [float(x) for x in args.lambdas.split(",")] if args.lambdas \
        else list(evaluation.DEFAULT_LAMBDAS)
    preps = []
    for scene_path in args.scene:
        mesh, bvh, cands = _prepare(scene_path, cfg)
        elements = discretize_surface(mesh, cfg["element_spacing"], cfg["seed"])
        sid = os.path.splitext(os.path.basename(scene_path))[0]
        preps.append(evaluation.PreparedScene(sid, bvh, cands, elements))
    rows = evaluation.lambda_sweep(preps, lambdas, cfg["_curator"])
    os.makedirs(args.out, exist_ok=True)
    io.write_config(args.out, _public(cfg))
    path = evaluation.write_rows(args.out, rows)
    print(f"wrote {path}: {len(lambdas)} lambdas x {len(preps)} scenes")
    return 0


def cmd_cross_scene(args):
    cfg = load_config(args.config, _overrides(args))
    rows = evaluation.cross_scene_run(cfg["_curator"], args.n_per_family,
                                      cfg["_grid"], cfg["element_spacing"])
    os.makedirs(args.out, exist_ok=True)
    io.write_config(args.out, _public(cfg))
    path = evaluation.write_rows(args.out, rows)
    print(f"wrote {path}: {len(rows)} scene families")
    return 0


def cmd_oracle_gap(args):
    cfg = load_config(args.config, _overrides(args))
    mesh, bvh, cands = _prepare(args.scene, cfg)
    elements = discretize_surface(mesh, cfg["element_spacing"], cfg["seed"])
    res = oracle_gap_run(cands, elements, bvh, cfg["_curator"])
    os.makedirs(args.out, exist_ok=True)
    io.write_config(args.out, _public(cfg))
    obj = {
        "steps": [
            {"step": r.step, "epsilon": r.epsilon, "gamma": r.gamma,
             "top1_agree": r.top1_agree}
            for r in res.records
        ],
        "proxy_coverage": res.proxy_coverage,
        "exact_coverage": res.exact_coverage,
        "proxy_score_seconds": res.proxy_score_seconds,
        "exact_score_seconds": res.exact_score_seconds,
        "mean_epsilon": float(np.mean([r.epsilon for r in res.records])),
        "top1_agreement": float(np.mean([r.top1_agree for r in res.records])),
    }
    path = os.path.join(args.out, "oracle_gap.json")
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
    speedup = res.exact_score_seconds / max(res.proxy_score_seconds, 1e-12)
    print(f"wrote {path}: mean epsilon {obj['mean_epsilon']:.4f}, "
          f"top-1 agreement {obj['top1_agreement']:.2f}, "
          f"scoring speedup {speedup:.1f}x")
    return 0


def cmd_audit(args):
    report = io.audit_scene(args.dir)
    print(report.summary())
    return 0 if report.passed else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cover",
        description="Budgeted conflict-aware viewpoint selection over "
                    "triangle-mesh scenes")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="generate a procedural room mesh")
    p.add_argument("--room", help="room spec JSON")
    p.add_argument("--width", type=float, default=5.0)
    p.add_argument("--depth", type=float, default=4.0)
    p.add_argument("--height", type=float, default=2.7)
    p.add_argument("--n-furniture", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", dest="out_mesh", required=True, help="mesh path")
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("candidates", help="grid + sanity filter only")
    _add_common(p)
    _add_select_flags(p)
    p.set_defaults(func=cmd_candidates)

    p = sub.add_parser("select", help="run a selector and export the scene")
    _add_common(p)
    _add_select_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evaluate", help="five-selector true-coverage table")
    _add_common(p)
    _add_select_flags(p)
    p.add_argument("--random-seeds", type=int, default=10)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-lambda", help="conflict-weight sweep")
    _add_common(p)
    p.add_argument("--scene", required=True, nargs="+", help="mesh file(s)")
    p.add_argument("--lambdas", help="comma list, default preset")
    p.add_argument("--k", type=int, default=None)
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("cross-scene", help="fixed-config scene-family run")
    _add_common(p)
    p.add_argument("--n-per-family", type=int, default=3)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--spacing", dest="spacing_m", type=float, default=None)
    p.set_defaults(func=cmd_cross_scene)

    p = sub.add_parser("oracle-gap", help="proxy vs exact marginal-gain gap")
    _add_common(p)
    _add_select_flags(p)
    p.set_defaults(func=cmd_oracle_gap)

    p = sub.add_parser("audit", help="re-check an exported scene directory")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_audit)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MeshError, CandidateError, io.SchemaError, OSError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
