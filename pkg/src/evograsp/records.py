"""File formats: grasp records, archive checkpoints, run manifests, traces.

Everything is line-delimited JSON so outputs stream and diff cleanly. Floats
round-trip exactly (shortest-repr JSON encoding), which is what makes
seeded single-worker runs byte-identical.

Grasp record fields: position (xyz), quaternion_wxyz, euler_rpy, q,
closing_cmd, fitness {lifetime, contact_distance, penetration, reward,
total}, success, provenance {kind, step?}.
"""

from __future__ import annotations

import json
import os
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .evaluator import EvalConfig, FitnessBreakdown, Grasp
from .evolution import (
    Archive,
    ArchiveConfig,
    ArchiveEntry,
    PendingJob,
    RunConfig,
    RunState,
    SelectionConfig,
    TracePoint,
    TRACE_COLUMNS,
    VariationConfig,
)
from .hand import WristPose


class RecordError(ValueError):
    pass


# ---------------------------------------------------------------------------
# grasp records
# ---------------------------------------------------------------------------

def grasp_to_dict(grasp: Grasp) -> dict:
    return {
        "position": list(grasp.wrist.position),
        "quaternion_wxyz": list(grasp.wrist.quaternion),
        "euler_rpy": list(grasp.wrist.euler),
        "q": list(grasp.q),
        "closing_cmd": None if grasp.closing_cmd is None else list(grasp.closing_cmd),
    }


def grasp_from_dict(data: dict) -> Grasp:
    wrist = WristPose(np.array(data["position"]), np.array(data["quaternion_wxyz"]))
    stored_euler = np.array(data["euler_rpy"])
    if np.max(np.abs(stored_euler - wrist.euler)) > 1e-6:
        raise RecordError("quaternion and euler fields disagree")
    cmd = data.get("closing_cmd")
    return Grasp(wrist, np.array(data["q"]), None if cmd is None else np.array(cmd))


def fitness_to_dict(fit: FitnessBreakdown) -> dict:
    return {
        "lifetime": fit.lifetime,
        "contact_distance": fit.contact_distance,
        "penetration": fit.penetration,
        "reward": fit.reward,
        "total": fit.total,
    }


def fitness_from_dict(data: dict) -> FitnessBreakdown:
    return FitnessBreakdown(
        lifetime=int(data["lifetime"]),
        contact_distance=float(data["contact_distance"]),
        penetration=float(data["penetration"]),
        reward=float(data["reward"]),
        total=float(data["total"]),
    )


def record_to_dict(grasp: Grasp, fitness: FitnessBreakdown | None = None,
                   success: bool | None = None, provenance: dict | None = None) -> dict:
    out = grasp_to_dict(grasp)
    if fitness is not None:
        out["fitness"] = fitness_to_dict(fitness)
    if success is not None:
        out["success"] = bool(success)
    if provenance is not None:
        out["provenance"] = provenance
    return out


def write_grasp_file(path: str, records: list) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_grasp_file(path: str) -> list:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


# ---------------------------------------------------------------------------
# run manifest
# ---------------------------------------------------------------------------

_MANIFEST_FIELDS = {
    "run_id", "scene", "hand", "out_dir", "rng_seed", "workers", "status",
    "archive", "selection", "variation", "run", "eval",
}

_CONFIG_KEYS = {
    "archive": ("novelty_threshold", "capacity", "prune_keep", "pose_dims", "prune_mode"),
    "selection": ("tournament_size", "density_radius", "density_power"),
    "variation": ("mutation_prob", "crossover_prob", "position_sigma",
                  "orientation_sigma", "joint_sigma"),
    "run": ("population_size", "total_evaluations", "rng_seed", "final_count",
            "min_lifetime", "workers", "seed_mode", "final_select"),
    "eval": ("lifetime_weight", "distance_weight", "penetration_weight",
             "reward_weight", "contact_offset", "ball_radius", "contact_count",
             "steps_per_direction", "disturbance_force", "penetration_stop",
             "max_contact_force", "cone_facets", "closing_cmd_cap", "category"),
}

_CONFIG_TYPES = {
    "archive": ArchiveConfig,
    "selection": SelectionConfig,
    "variation": VariationConfig,
    "run": RunConfig,
    "eval": EvalConfig,
}


@dataclass
class RunManifest:
    run_id: str
    scene: str
    hand: str
    out_dir: str
    archive: ArchiveConfig = field(default_factory=ArchiveConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    variation: VariationConfig = field(default_factory=VariationConfig)
    run: RunConfig = field(default_factory=RunConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    status: str = "running"

    def to_dict(self) -> dict:
        out = {
            "run_id": self.run_id,
            "scene": self.scene,
            "hand": self.hand,
            "out_dir": self.out_dir,
            "status": self.status,
        }
        for section, keys in _CONFIG_KEYS.items():
            cfg = getattr(self, section)
            out[section] = {k: getattr(cfg, k) for k in keys}
        return out


def manifest_from_dict(data: dict) -> RunManifest:
    unknown = set(data) - _MANIFEST_FIELDS
    if unknown:
        raise RecordError(f"unknown manifest fields: {sorted(unknown)}")
    sections = {}
    for section, keys in _CONFIG_KEYS.items():
        payload = dict(data.get(section, {}))
        extra = set(payload) - set(keys)
        if extra:
            raise RecordError(f"unknown {section} config fields: {sorted(extra)}")
        sections[section] = _CONFIG_TYPES[section](**payload)
    return RunManifest(
        run_id=data["run_id"],
        scene=data["scene"],
        hand=data["hand"],
        out_dir=data["out_dir"],
        status=data.get("status", "running"),
        **sections,
    )


def load_manifest(path: str) -> RunManifest:
    with open(path) as fh:
        return manifest_from_dict(json.load(fh))


def save_manifest(manifest: RunManifest, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(manifest.to_dict(), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# archive checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = "evograsp-checkpoint-v1"


def _entry_to_dict(entry: ArchiveEntry) -> dict:
    out = record_to_dict(entry.grasp, entry.fitness, entry.success, entry.provenance)
    out["embedding"] = list(entry.embedding)
    out["insert_step"] = entry.insert_step
    return out


def _entry_from_dict(data: dict) -> ArchiveEntry:
    return ArchiveEntry(
        grasp=grasp_from_dict(data),
        fitness=fitness_from_dict(data["fitness"]),
        embedding=np.array(data["embedding"]),
        insert_step=int(data["insert_step"]),
        success=bool(data["success"]),
        provenance=data["provenance"],
    )


def save_checkpoint(path: str, state: RunState, run_id: str) -> None:
    """Full coordinator state: archive, pending queue, RNG, counters, trace."""
    header = {
        "magic": CHECKPOINT_MAGIC,
        "run_id": run_id,
        "completed": state.completed,
        "seed_successes": state.seed_successes,
        "spawned": state.spawned,
        "rng_state": state.rng.bit_generator.state,
        "pending": [
            {"grasp": grasp_to_dict(job.grasp), "provenance": job.provenance,
             "order": job.order}
            for job in state.pending
        ],
        "trace": [tp.to_row() for tp in state.trace],
        "entries": len(state.archive),
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for entry in state.archive:
            fh.write(json.dumps(_entry_to_dict(entry)) + "\n")
    os.replace(tmp, path)


def load_checkpoint(path: str) -> tuple:
    """Returns (state, run_id); raises RecordError("bad-checkpoint") on any
    structural problem."""
    try:
        with open(path) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        header = json.loads(lines[0])
        if header.get("magic") != CHECKPOINT_MAGIC:
            raise RecordError("bad-checkpoint")
        entries = [_entry_from_dict(json.loads(ln)) for ln in lines[1:]]
        if len(entries) != header["entries"]:
            raise RecordError("bad-checkpoint")
        archive = Archive()
        for entry in entries:
            archive.append(entry)
        rng = np.random.default_rng()
        rng.bit_generator.state = header["rng_state"]
        pending = deque(
            PendingJob(grasp_from_dict(job["grasp"]), job["provenance"], job["order"])
            for job in header["pending"]
        )
        trace = [TracePoint(*row) for row in header["trace"]]
        state = RunState(
            archive=archive,
            pending=pending,
            rng=rng,
            completed=int(header["completed"]),
            seed_successes=int(header["seed_successes"]),
            trace=trace,
            spawned=int(header["spawned"]),
        )
        return state, header["run_id"]
    except RecordError:
        raise
    except Exception as exc:
        raise RecordError("bad-checkpoint") from exc


# ---------------------------------------------------------------------------
# trace table
# ---------------------------------------------------------------------------

def write_trace(path: str, trace: list) -> None:
    """Plot-ready table, one row per trace point."""
    with open(path, "w") as fh:
        fh.write("\t".join(TRACE_COLUMNS) + "\n")
        for tp in trace:
            fh.write("\t".join(repr(v) if isinstance(v, float) else str(v)
                               for v in tp.to_row()) + "\n")


def success_set_records(entries: list) -> list:
    return [_entry_to_dict(e) for e in entries]
