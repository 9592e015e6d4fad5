"""Bit-exact readers and writers for the release schema.

Per scene directory:
  frames/frame_XXXX.ppm         binary P6 RGB
  frames/frame_XXXX.depth       raw little-endian float32, row-major
  frames/frame_XXXX.pose.json   scalar-first q_wc, position relative to frame 0
  meta.json                     coordinate-convention declaration
  metadata/candidates.jsonl     all proposals with per-layer diagnostics
  metadata/selected_viewpoints.json
  metadata/per_step_log.jsonl   per-step scores for every candidate
  metadata/timings.json         wall-clock sidecar (excluded from hashing)
  config.json / config_hash.txt

JSON floats are serialized with 17 significant digits so equal runs hash
equal.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from typing import List

import numpy as np

from . import geom
from .candidates import LAYER_NAMES, Candidate
from .curator import StepLog
from .geom import PoseWC, QuatWC
from .render import ErpImage

SCHEMA_CAMERA_TYPE = "erp"
INVALID_DEPTH = "0"


class SchemaError(Exception):
    pass


def _serialize(x) -> str:
    # Hand-rolled canonical form: sorted keys, no whitespace, floats at 17
    # significant digits so equal runs hash equal.
    if x is None:
        return "null"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if v != v or v in (float("inf"), float("-inf")):
            raise SchemaError(f"non-finite float {v} in metadata")
        return format(v, ".17g")
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, dict):
        items = sorted(x.items())
        return "{" + ",".join(f"{json.dumps(k)}:{_serialize(v)}"
                              for k, v in items) + "}"
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ",".join(_serialize(v) for v in x) + "]"
    raise SchemaError(f"unserializable value of type {type(x)}")


def dump_json(obj) -> str:
    """Deterministic JSON text: stable key order, 17-sig-digit floats."""
    return _serialize(obj)


def config_hash(cfg_dict: dict) -> str:
    return hashlib.sha256(dump_json(cfg_dict).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Frames


def write_frame(scene_dir, idx: int, rgb: ErpImage, depth: ErpImage,
                pose: PoseWC, first_pose: PoseWC) -> dict:
    """Write one RGB/depth/pose frame triple; position is stored relative
    to frame 0 per the schema. Returns the frame record."""
    if rgb.payload.shape[:2] != depth.payload.shape:
        raise SchemaError("rgb/depth dimensions differ")
    frames_dir = os.path.join(scene_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    H, W = depth.payload.shape

    rgb_path = os.path.join(frames_dir, f"frame_{idx:04d}.ppm")
    depth_path = os.path.join(frames_dir, f"frame_{idx:04d}.depth")
    pose_path = os.path.join(frames_dir, f"frame_{idx:04d}.pose.json")
    try:
        with open(rgb_path, "wb") as fh:
            fh.write(f"P6\n{W} {H}\n255\n".encode())
            fh.write(np.ascontiguousarray(rgb.payload, dtype=np.uint8).tobytes())
        with open(depth_path, "wb") as fh:
            fh.write(np.ascontiguousarray(
                depth.payload, dtype="<f4").tobytes())
        rel = pose.position - first_pose.position
        pose_obj = {
            "quaternion": list(pose.rotation.as_array()),
            "position": [float(v) for v in rel],
            "camera_type": SCHEMA_CAMERA_TYPE,
            "width": W,
            "height": H,
            "frame_index": idx,
        }
        with open(pose_path, "w") as fh:
            fh.write(dump_json(pose_obj))
    except OSError as exc:
        raise SchemaError(f"writing frame {idx} under {scene_dir}: {exc}") from exc
    return {"frame_index": idx, "rgb": rgb_path, "depth": depth_path,
            "pose": pose_path, "width": W, "height": H}


def read_frame(scene_dir, idx: int):
    frames_dir = os.path.join(scene_dir, "frames")
    with open(os.path.join(frames_dir, f"frame_{idx:04d}.pose.json")) as fh:
        pose_obj = json.load(fh)
    W, H = pose_obj["width"], pose_obj["height"]
    with open(os.path.join(frames_dir, f"frame_{idx:04d}.depth"), "rb") as fh:
        buf = fh.read()
    depth = np.frombuffer(buf, dtype="<f4").reshape(H, W)
    with open(os.path.join(frames_dir, f"frame_{idx:04d}.ppm"), "rb") as fh:
        magic = fh.readline().strip()
        dims = fh.readline().split()
        fh.readline()
        if magic != b"P6":
            raise SchemaError("not a P6 PPM")
        w, h = int(dims[0]), int(dims[1])
        rgb = np.frombuffer(fh.read(), dtype=np.uint8).reshape(h, w, 3)
    return ErpImage(rgb), ErpImage(depth.copy()), pose_obj


# ---------------------------------------------------------------------------
# Metadata


def _score_obj(s) -> dict:
    return {"id": s.candidate_id, "G": s.G, "L": s.L, "s": s.s}


def write_step_logs(scene_dir, logs: List[StepLog]) -> str:
    """per_step_log.jsonl plus the timings.json wall-clock sidecar.

    Timing goes to the sidecar (not the log lines) so equal runs produce
    byte-identical metadata.
    """
    md = os.path.join(scene_dir, "metadata")
    os.makedirs(md, exist_ok=True)
    path = os.path.join(md, "per_step_log.jsonl")
    with open(path, "w") as fh:
        for log in logs:
            obj = {
                "step": log.step,
                "selected_id": log.selected_id,
                "G": log.G,
                "L": log.L,
                "s": log.s,
                "candidates": [_score_obj(s) for s in log.candidates],
            }
            fh.write(dump_json(obj) + "\n")
    with open(os.path.join(md, "timings.json"), "w") as fh:
        fh.write(dump_json({"per_step_runtime_s": [log.runtime_s for log in logs]}))
    return path


def read_step_logs(scene_dir) -> List[dict]:
    path = os.path.join(scene_dir, "metadata", "per_step_log.jsonl")
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_selected(scene_dir, logs: List[StepLog]) -> str:
    md = os.path.join(scene_dir, "metadata")
    os.makedirs(md, exist_ok=True)
    obj = {
        "selected": [
            {"step": log.step, "id": log.selected_id, "G": log.G,
             "L": log.L, "s": log.s}
            for log in logs
        ]
    }
    path = os.path.join(md, "selected_viewpoints.json")
    with open(path, "w") as fh:
        fh.write(dump_json(obj))
    return path


def write_candidates(scene_dir, cands: List[Candidate]) -> str:
    """candidates.jsonl in id order; infeasible proposals are listed too."""
    md = os.path.join(scene_dir, "metadata")
    os.makedirs(md, exist_ok=True)
    path = os.path.join(md, "candidates.jsonl")
    with open(path, "w") as fh:
        for c in sorted(cands, key=lambda c: c.id):
            obj = {
                "id": c.id,
                "position": [float(v) for v in c.position],
                "layers": dict(zip(LAYER_NAMES, c.layer_pass)),
                "diagnostics": {k: (v if v is None else float(v) if
                                    isinstance(v, float) else v)
                                for k, v in c.layer_diag.items()},
                "feasible": c.feasible,
            }
            fh.write(dump_json(obj) + "\n")
    return path


def read_candidates(scene_dir) -> List[dict]:
    path = os.path.join(scene_dir, "metadata", "candidates.jsonl")
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_meta(scene_dir, scene_id: str, source_tag: str, cfg_hash: str) -> str:
    obj = {
        "scene_id": scene_id,
        "source": source_tag,
        "config_hash": cfg_hash,
        "world_frame": geom.WORLD_CONVENTION,
        "camera_frame": geom.CAMERA_CONVENTION,
        "erp_convention": geom.ERP_CONVENTION,
        "invalid_depth": INVALID_DEPTH,
    }
    path = os.path.join(scene_dir, "meta.json")
    with open(path, "w") as fh:
        fh.write(dump_json(obj))
    return path


def write_config(scene_dir, cfg_dict: dict) -> str:
    h = config_hash(cfg_dict)
    with open(os.path.join(scene_dir, "config.json"), "w") as fh:
        fh.write(dump_json(cfg_dict))
    with open(os.path.join(scene_dir, "config_hash.txt"), "w") as fh:
        fh.write(h + "\n")
    return h


# ---------------------------------------------------------------------------
# Audit


@dataclasses.dataclass
class AuditReport:
    checks: List[tuple]  # (name, passed, detail)

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def summary(self) -> str:
        lines = [f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
                 for name, ok, detail in self.checks]
        n_ok = sum(ok for _, ok, _ in self.checks)
        lines.append(f"{n_ok}/{len(self.checks)} audit checks passed")
        return "\n".join(lines)


def audit_scene(scene_dir) -> AuditReport:
    """Re-parse an exported scene and re-check the schema invariants."""
    checks = []

    def check(name, ok, detail=""):
        checks.append((name, bool(ok), detail))

    with open(os.path.join(scene_dir, "meta.json")) as fh:
        meta = json.load(fh)
    check("meta.json parses", True, meta["scene_id"])
    with open(os.path.join(scene_dir, "config_hash.txt")) as fh:
        stated_hash = fh.read().strip()
    with open(os.path.join(scene_dir, "config.json")) as fh:
        cfg = json.load(fh)
    check("config hash consistent",
          config_hash(cfg) == stated_hash == meta["config_hash"], stated_hash[:12])

    logs = read_step_logs(scene_dir)
    cands = read_candidates(scene_dir)
    with open(os.path.join(scene_dir, "metadata", "selected_viewpoints.json")) as fh:
        selected = json.load(fh)["selected"]

    check("log/selected winner order match",
          [s["id"] for s in selected] == [log["selected_id"] for log in logs],
          f"{len(selected)} frames")
    feasible_ids = {c["id"] for c in cands if c["feasible"]}
    check("selected ids are feasible",
          all(s["id"] in feasible_ids for s in selected), "")
    selector = cfg.get("selector", "cover")
    if selector == "cover":
        winner_ok = all(
            log["s"] >= max(c["s"] for c in log["candidates"]) - 1e-12
            and any(c["id"] == log["selected_id"] for c in log["candidates"])
            for log in logs)
        check("winner consistency (s vs candidate scores)", winner_ok, "")
    else:
        check("winner consistency (s vs candidate scores)", True,
              f"skipped: selector={selector} ranks by its own key")
    check("score identity s = G - lambda*L holds at recorded lambda",
          all(abs(log["s"] - (log["G"] - cfg["lam"] * log["L"])) < 1e-9
              for log in logs), "")
    # Any smaller budget k' is replayable by truncating the log: steps are
    # consecutive from 1 and every prefix of the log is the k'-selection.
    prefix_ok = [log["step"] for log in logs] == list(range(1, len(logs) + 1))
    prefix_ok &= all([s["id"] for s in selected[:k]]
                     == [log["selected_id"] for log in logs[:k]]
                     for k in range(1, len(logs) + 1))
    check("K-prefix replay equality", prefix_ok, f"{len(logs)} budgets")
    check("no mixed config hashes under scene dir",
          audit_mixed_hashes(scene_dir), "")

    n_frames = len(selected)
    quat_ok, pose0_ok, bytes_ok, roundtrip_ok = True, True, True, True
    for idx in range(n_frames):
        rgb, depth, pose_obj = read_frame(scene_dir, idx)
        q = np.asarray(pose_obj["quaternion"])
        quat_ok &= abs(np.linalg.norm(q) - 1.0) <= 1e-6
        if idx == 0:
            pose0_ok = np.allclose(pose_obj["position"], 0.0)
        expected = 4 * pose_obj["width"] * pose_obj["height"]
        bytes_ok &= os.path.getsize(
            os.path.join(scene_dir, "frames", f"frame_{idx:04d}.depth")) == expected
        if idx == 0:
            # ERP round-trip spot check on a sample of pixel-centre dirs
            W, H = pose_obj["width"], pose_obj["height"]
            rng = np.random.default_rng(0)
            us = rng.uniform(0, W, 256)
            vs = rng.uniform(0.05 * H, 0.95 * H, 256)
            d = geom.pixel_to_dir(us, vs, W, H)
            u2, v2 = geom.dir_to_pixel(d, W, H)
            du = np.minimum(np.abs(u2 - us), W - np.abs(u2 - us))
            roundtrip_ok = float(np.max(du)) <= 0.5 and float(
                np.max(np.abs(v2 - vs))) <= 0.5
    check("pose quaternions unit-norm", quat_ok, f"{n_frames} frames")
    check("frame 0 position is origin", pose0_ok, "")
    check("depth byte length = 4*W*H", bytes_ok, "")
    check("ERP round-trip on frame sample <= 0.5 px", roundtrip_ok, "")
    return AuditReport(checks)


def audit_mixed_hashes(run_dir) -> bool:
    """True iff every scene under run_dir carries the same config hash."""
    hashes = set()
    for root, _dirs, files in os.walk(run_dir):
        if "config_hash.txt" in files:
            with open(os.path.join(root, "config_hash.txt")) as fh:
                hashes.add(fh.read().strip())
    return len(hashes) <= 1
