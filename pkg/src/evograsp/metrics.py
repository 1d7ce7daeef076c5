"""Grasp-set quality and diversity metrics.

Success rate, distinct stable grasps under floor quantization at several
resolutions, and marginal histogram entropies over fixed ranges (scene
bounding box + margin for position, [-pi, pi] for Euler angles, joint limits
for the joint vector).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_BINS_PER_DIM = 16
POSITION_MARGIN = 0.10  # meters added around the scene bounding box


class MetricsError(ValueError):
    pass


@dataclass
class DsgResolution:
    delta_r: float     # meters
    delta_phi: float   # radians
    delta_q: float     # radians

    def __post_init__(self):
        if min(self.delta_r, self.delta_phi, self.delta_q) <= 0:
            raise MetricsError("resolution deltas must be positive")


STANDARD_RESOLUTIONS = {
    "DSG@(20cm,90°,90°)": DsgResolution(0.20, np.pi / 2, np.pi / 2),
    "DSG@(2cm,45°,45°)": DsgResolution(0.02, np.pi / 4, np.pi / 4),
    "DSG@(1cm,5°,5°)": DsgResolution(0.01, np.deg2rad(5.0), np.deg2rad(5.0)),
}


@dataclass
class EntropyReport:
    position_axes: np.ndarray     # (3,) nats per position axis
    orientation_axes: np.ndarray  # (3,)
    joint_axes: np.ndarray        # (n_q,)
    position: float               # group means
    orientation: float
    joints: float
    mean: float


@dataclass
class MetricsReport:
    success_rate: float
    dsg: dict
    entropy_position: float
    entropy_orientation: float
    entropy_joints: float
    entropy_mean: float
    count: int
    success_count: int

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "success_count": self.success_count,
            "success_rate": self.success_rate,
            "dsg": dict(self.dsg),
            "entropy_position": self.entropy_position,
            "entropy_orientation": self.entropy_orientation,
            "entropy_joints": self.entropy_joints,
            "entropy_mean": self.entropy_mean,
        }


def success_rate(success_flags) -> float:
    flags = list(success_flags)
    if not flags:
        raise MetricsError("no-grasps")
    return float(sum(bool(f) for f in flags)) / len(flags)


def _grasp_rows(grasps):
    """Stack (position, euler, q) rows for a list of grasps."""
    if not grasps:
        return np.empty((0, 3)), np.empty((0, 3)), np.empty((0, 0))
    pos = np.stack([g.wrist.position for g in grasps])
    eul = np.stack([g.wrist.euler for g in grasps])
    q = np.stack([g.q for g in grasps])
    return pos, eul, q


def distinct_stable_grasps(grasps, resolution: DsgResolution) -> int:
    """Count occupied quantization cells: floor division of every coordinate
    by its resolution, distinct integer tuples."""
    if not grasps:
        return 0
    pos, eul, q = _grasp_rows(grasps)
    cells = np.hstack([
        np.floor(pos / resolution.delta_r),
        np.floor(eul / resolution.delta_phi),
        np.floor(q / resolution.delta_q),
    ]).astype(np.int64)
    return len({tuple(row) for row in cells})


def _histogram_entropy(values: np.ndarray, lo: float, hi: float, bins: int) -> float:
    counts, _ = np.histogram(values, bins=bins, range=(lo, hi))
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def marginal_entropies(grasps, scene, model,
                       bins_per_dim: int = DEFAULT_BINS_PER_DIM) -> EntropyReport:
    """Product-of-marginals histogram entropy in nats, per component group.

    Every axis uses a fixed binning range so that entropy values are
    comparable across grasp sets on the same scene and hand.
    """
    if not grasps:
        raise MetricsError("no-grasps")
    pos, eul, q = _grasp_rows(grasps)
    lo, hi = scene.bbox
    lo = lo - POSITION_MARGIN
    hi = hi + POSITION_MARGIN
    limits = model.joint_limits

    pos_h = np.array([_histogram_entropy(pos[:, a], lo[a], hi[a], bins_per_dim)
                      for a in range(3)])
    eul_h = np.array([_histogram_entropy(eul[:, a], -np.pi, np.pi, bins_per_dim)
                      for a in range(3)])
    q_h = np.array([_histogram_entropy(q[:, j], limits[j, 0], limits[j, 1], bins_per_dim)
                    for j in range(q.shape[1])])

    groups = (float(pos_h.mean()), float(eul_h.mean()), float(q_h.mean()))
    return EntropyReport(
        position_axes=pos_h,
        orientation_axes=eul_h,
        joint_axes=q_h,
        position=groups[0],
        orientation=groups[1],
        joints=groups[2],
        mean=float(np.mean(groups)),
    )


def compute_report(grasps, success_flags, scene, model,
                   bins_per_dim: int = DEFAULT_BINS_PER_DIM) -> MetricsReport:
    """Full report over an evaluated grasp set: rate, DSG at the standard
    resolutions, and entropies of the successful subset."""
    flags = [bool(f) for f in success_flags]
    if len(flags) != len(grasps):
        raise MetricsError("grasps and flags length mismatch")
    rate = success_rate(flags)
    winners = [g for g, f in zip(grasps, flags) if f]
    dsg = {label: distinct_stable_grasps(winners, res)
           for label, res in STANDARD_RESOLUTIONS.items()}
    if winners:
        ent = marginal_entropies(winners, scene, model, bins_per_dim)
        e_pos, e_orient, e_joint, e_mean = ent.position, ent.orientation, ent.joints, ent.mean
    else:
        e_pos = e_orient = e_joint = e_mean = 0.0
    return MetricsReport(
        success_rate=rate,
        dsg=dsg,
        entropy_position=e_pos,
        entropy_orientation=e_orient,
        entropy_joints=e_joint,
        entropy_mean=e_mean,
        count=len(grasps),
        success_count=len(winners),
    )
