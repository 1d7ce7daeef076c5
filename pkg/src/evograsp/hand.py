"""Kinematic hand model: a forest of revolute joints rooted at the wrist.

Link 0 is the palm (no joint, wrist frame). Every other link carries exactly
one revolute joint; joint j is the joint of link j+0 in link order, giving a
stable joint vector layout. Collision spheres, keypoints, and fingertip
contact samples are fixed offsets in their link frame.

The shipped default, ``parametric-12dof``, is a palm with four claw fingers
of three joints each (12 joints, 72 keypoints, 12 fingertip samples). Its
palm faces the local -z axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .transforms import (
    axis_angle_matrix,
    euler_to_quat,
    quat_normalize,
    quat_to_euler,
    quat_to_matrix,
)

DEFAULT_HAND_NAME = "parametric-12dof"
JOINT_LIMIT_TOL = 1e-12


class HandError(ValueError):
    pass


@dataclass
class Link:
    name: str
    parent: int
    origin_rotation: np.ndarray      # (3, 3) fixed transform from the parent frame
    origin_translation: np.ndarray   # (3,)
    joint_axis: np.ndarray | None    # None only for the palm root
    limits: tuple | None
    collision_centers: np.ndarray    # (m, 3)
    collision_radii: np.ndarray      # (m,)
    keypoints: np.ndarray            # (k, 3)
    fingertip_samples: np.ndarray    # (f, 3)


@dataclass
class WristPose:
    """SE(3) wrist pose stored as position + unit (w, x, y, z) quaternion."""

    position: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise HandError("wrist quaternion is not unit norm")
        self.quaternion = quat_normalize(q)

    @property
    def euler(self) -> np.ndarray:
        """Intrinsic-XYZ roll/pitch/yaw, radians."""
        return quat_to_euler(self.quaternion)

    @classmethod
    def from_euler(cls, position, euler) -> "WristPose":
        return cls(position, euler_to_quat(euler))

    @classmethod
    def identity(cls) -> "WristPose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)


@dataclass
class HandState:
    wrist: WristPose
    q: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)


@dataclass
class HandModel:
    name: str
    links: list
    palm_center_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    approach_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -1.0]))
    palm_depth: float = 0.025

    def __post_init__(self):
        self.palm_center_offset = np.asarray(self.palm_center_offset, dtype=float).reshape(3)
        self.approach_axis = np.asarray(self.approach_axis, dtype=float).reshape(3)
        self._validate()
        self._index()

    def _validate(self):
        if not self.links:
            raise HandError("hand has no links")
        if self.links[0].parent != -1 or self.links[0].joint_axis is not None:
            raise HandError("link 0 must be the jointless palm root")
        for i, link in enumerate(self.links):
            if i > 0:
                if not 0 <= link.parent < i:
                    raise HandError(f"link {i} parent {link.parent} breaks the forest order")
                if link.joint_axis is None or link.limits is None:
                    raise HandError(f"link {i} must carry a revolute joint")
                lo, hi = link.limits
                if not lo < hi:
                    raise HandError(f"link {i} limits must satisfy q_min < q_max")
            if np.any(link.collision_radii <= 0):
                raise HandError(f"link {i} has a non-positive sphere radius")

    def _index(self):
        # joint j belongs to link j + 1; ancestor joint masks drive the Jacobian
        self._joint_of_link = {i: i - 1 for i in range(1, len(self.links))}
        n_q = len(self.links) - 1
        self._ancestor_mask = np.zeros((len(self.links), n_q), dtype=bool)
        for i in range(1, len(self.links)):
            self._ancestor_mask[i] = self._ancestor_mask[self.links[i].parent]
            self._ancestor_mask[i, i - 1] = True
        # flattened offset tables so FK can transform everything in one batch
        def _flatten(select):
            offsets, owners = [], []
            for i, link in enumerate(self.links):
                arr = select(link)
                if len(arr):
                    offsets.append(arr)
                    owners.append(np.full(len(arr), i, dtype=int))
            if offsets:
                return np.concatenate(offsets), np.concatenate(owners)
            return np.empty((0, 3)), np.empty(0, dtype=int)

        self._keypoint_offsets, self._keypoint_links = _flatten(lambda l: l.keypoints)
        self._sphere_offsets, self._sphere_links = _flatten(lambda l: l.collision_centers)
        self._sphere_radii = (np.concatenate([l.collision_radii for l in self.links
                                              if len(l.collision_radii)])
                              if len(self._sphere_offsets) else np.empty(0))
        self._tip_offsets, self._tip_links = _flatten(lambda l: l.fingertip_samples)
        self._parents = np.array([l.parent for l in self.links])
        self._origin_rot = np.stack([l.origin_rotation for l in self.links])
        self._origin_trans = np.stack([l.origin_translation for l in self.links])
        self._axes = np.stack([l.joint_axis for l in self.links[1:]]) \
            if len(self.links) > 1 else np.empty((0, 3))

    @property
    def n_q(self) -> int:
        return len(self.links) - 1

    @property
    def joint_limits(self) -> np.ndarray:
        return np.array([link.limits for link in self.links[1:]])

    @property
    def keypoint_count(self) -> int:
        return int(sum(len(link.keypoints) for link in self.links))

    def ancestor_joints(self, link_index: int) -> np.ndarray:
        return self._ancestor_mask[link_index]


@dataclass
class FKResult:
    rotations: np.ndarray          # (L, 3, 3) world link rotations
    translations: np.ndarray       # (L, 3)
    joint_origins: np.ndarray      # (n_q, 3) world joint anchor points
    joint_axes: np.ndarray         # (n_q, 3) world joint axes
    keypoints: np.ndarray          # (K, 3), stable link-then-offset order
    sphere_centers: np.ndarray     # (S, 3)
    sphere_radii: np.ndarray       # (S,)
    sphere_links: np.ndarray       # (S,)
    fingertip_points: np.ndarray   # (M, 3)
    fingertip_links: np.ndarray    # (M,)
    palm_center: np.ndarray        # (3,)


def clamp_to_limits(model: HandModel, q: np.ndarray) -> np.ndarray:
    limits = model.joint_limits
    return np.clip(np.asarray(q, dtype=float), limits[:, 0], limits[:, 1])


def check_limits(model: HandModel, q: np.ndarray) -> None:
    limits = model.joint_limits
    if np.any(q < limits[:, 0] - JOINT_LIMIT_TOL) or np.any(q > limits[:, 1] + JOINT_LIMIT_TOL):
        raise HandError("joint-limit")


def chain_frames(model: HandModel, wrist_rotation: np.ndarray,
                 wrist_position: np.ndarray, q: np.ndarray):
    """World frames of every link plus world joint anchors and axes."""
    n_links = len(model.links)
    rotations = np.empty((n_links, 3, 3))
    translations = np.empty((n_links, 3))
    joint_origins = np.empty((model.n_q, 3))
    joint_axes = np.empty((model.n_q, 3))
    rotations[0] = wrist_rotation
    translations[0] = wrist_position
    for i in range(1, n_links):
        parent = model._parents[i]
        r_parent = rotations[parent]
        r_pre = r_parent @ model._origin_rot[i]
        p_pre = r_parent @ model._origin_trans[i] + translations[parent]
        j = i - 1
        joint_origins[j] = p_pre
        joint_axes[j] = r_pre @ model._axes[j]
        rotations[i] = r_pre @ axis_angle_matrix(model._axes[j], q[j])
        translations[i] = p_pre
    return rotations, translations, joint_origins, joint_axes


def _transform_offsets(offsets, owners, rotations, translations):
    if len(offsets) == 0:
        return np.empty((0, 3))
    r = rotations[owners]
    return np.einsum("nij,nj->ni", r, offsets) + translations[owners]


def hand_sphere_centers(model: HandModel, wrist_rotation: np.ndarray,
                        wrist_position: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Collision-sphere centers only: the light FK path for penetration scans."""
    rotations, translations, _, _ = chain_frames(model, wrist_rotation,
                                                 wrist_position, q)
    return _transform_offsets(model._sphere_offsets, model._sphere_links,
                              rotations, translations)


def forward_kinematics(model: HandModel, state: HandState) -> FKResult:
    if len(state.q) != model.n_q:
        raise HandError(f"expected {model.n_q} joint values, got {len(state.q)}")
    check_limits(model, state.q)
    rotations, translations, joint_origins, joint_axes = chain_frames(
        model, state.wrist.rotation(), state.wrist.position, state.q)
    return FKResult(
        rotations=rotations,
        translations=translations,
        joint_origins=joint_origins,
        joint_axes=joint_axes,
        keypoints=_transform_offsets(model._keypoint_offsets, model._keypoint_links,
                                     rotations, translations),
        sphere_centers=_transform_offsets(model._sphere_offsets, model._sphere_links,
                                          rotations, translations),
        sphere_radii=model._sphere_radii,
        sphere_links=model._sphere_links,
        fingertip_points=_transform_offsets(model._tip_offsets, model._tip_links,
                                            rotations, translations),
        fingertip_links=model._tip_links,
        palm_center=rotations[0] @ model.palm_center_offset + translations[0],
    )


def contact_jacobian(model: HandModel, state: HandState, contact_points: list,
                     fk: FKResult | None = None) -> np.ndarray:
    """Stacked positional Jacobian, shape (3 * n_contacts, n_q).

    ``contact_points`` is a list of (world point, owning link index). Column j
    of a contact block is axis_j x (p - o_j) when joint j lies on the chain
    from the wrist to the owning link (the link's own joint included).
    """
    if fk is None:
        fk = forward_kinematics(model, state)
    jac = np.zeros((3 * len(contact_points), model.n_q))
    for ci, (point, link_index) in enumerate(contact_points):
        mask = model.ancestor_joints(int(link_index))
        joints = np.flatnonzero(mask)
        if joints.size == 0:
            continue
        arms = np.asarray(point, dtype=float) - fk.joint_origins[joints]
        jac[3 * ci:3 * ci + 3, joints] = np.cross(fk.joint_axes[joints], arms).T
    return jac


# ---------------------------------------------------------------------------
# default hand
# ---------------------------------------------------------------------------

_FINGER_SEGMENTS = (0.034, 0.030, 0.026)
_FINGER_ANCHOR_RADIUS = 0.042
_FINGER_ANGLES = (0.0, np.pi / 2, np.pi, 3 * np.pi / 2)
_SEGMENT_RADII = (0.008, 0.0075, 0.007)
_BASE_LIMITS = (-0.35, 1.75)
_FLEX_LIMITS = (-0.25, 1.85)


def _rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _segment_link(name, parent, translation, rotation, length, radius, limits,
                  with_tips=False):
    centers_x = np.linspace(0.25 * length, 0.85 * length, 3)
    keypoints_x = np.linspace(0.2 * length, length, 5)
    tips = np.empty((0, 3))
    if with_tips:
        tips = np.column_stack([centers_x, np.zeros(3), np.full(3, -radius)])
    return Link(
        name=name,
        parent=parent,
        origin_rotation=rotation,
        origin_translation=np.asarray(translation, dtype=float),
        joint_axis=np.array([0.0, 1.0, 0.0]),
        limits=limits,
        collision_centers=np.column_stack([centers_x, np.zeros(3), np.zeros(3)]),
        collision_radii=np.full(3, radius),
        keypoints=np.column_stack([keypoints_x, np.zeros(5), np.full(5, -radius)]),
        fingertip_samples=tips,
    )


def build_parametric_hand() -> HandModel:
    """Palm plus four radial claw fingers of three revolute joints each.

    The palm surface faces -z; positive joint angles curl the fingers toward
    -z, so the hand grasps objects placed below the wrist.
    """
    grid = np.array([-0.022, 0.0, 0.022])
    palm_centers = np.array([[x, y, -0.011] for x in grid for y in grid])
    palm_keypoints = np.array([
        [x, y, -0.02]
        for x in (-0.03, -0.01, 0.01, 0.03)
        for y in (-0.025, 0.0, 0.025)
    ])
    palm = Link(
        name="palm",
        parent=-1,
        origin_rotation=np.eye(3),
        origin_translation=np.zeros(3),
        joint_axis=None,
        limits=None,
        collision_centers=palm_centers,
        collision_radii=np.full(len(palm_centers), 0.011),
        keypoints=palm_keypoints,
        fingertip_samples=np.empty((0, 3)),
    )
    links = [palm]
    for f, angle in enumerate(_FINGER_ANGLES):
        anchor = np.array([
            _FINGER_ANCHOR_RADIUS * np.cos(angle),
            _FINGER_ANCHOR_RADIUS * np.sin(angle),
            -0.011,
        ])
        base_index = len(links)
        links.append(_segment_link(
            f"finger{f}_base", 0, anchor, _rot_z(angle),
            _FINGER_SEGMENTS[0], _SEGMENT_RADII[0], _BASE_LIMITS,
        ))
        links.append(_segment_link(
            f"finger{f}_mid", base_index, [_FINGER_SEGMENTS[0], 0.0, 0.0], np.eye(3),
            _FINGER_SEGMENTS[1], _SEGMENT_RADII[1], _FLEX_LIMITS,
        ))
        links.append(_segment_link(
            f"finger{f}_tip", base_index + 1, [_FINGER_SEGMENTS[1], 0.0, 0.0], np.eye(3),
            _FINGER_SEGMENTS[2], _SEGMENT_RADII[2], _FLEX_LIMITS,
            with_tips=True,
        ))
    return HandModel(
        name=DEFAULT_HAND_NAME,
        links=links,
        palm_center_offset=np.array([0.0, 0.0, -0.022]),
        approach_axis=np.array([0.0, 0.0, -1.0]),
        palm_depth=0.025,
    )


# ---------------------------------------------------------------------------
# hand files
# ---------------------------------------------------------------------------

_HAND_FIELDS = {"name", "palm_center_offset", "approach_axis", "palm_depth", "links"}
_LINK_FIELDS = {
    "name", "parent", "origin_position", "origin_quaternion_wxyz",
    "joint_axis", "limits", "collision_spheres", "keypoints", "fingertip_samples",
}


def hand_from_dict(data: dict) -> HandModel:
    unknown = set(data) - _HAND_FIELDS
    if unknown:
        raise HandError(f"unknown hand fields: {sorted(unknown)}")
    links = []
    for entry in data["links"]:
        extra = set(entry) - _LINK_FIELDS
        if extra:
            raise HandError(f"unknown link fields: {sorted(extra)}")
        spheres = entry.get("collision_spheres", [])
        axis = entry.get("joint_axis")
        links.append(Link(
            name=entry["name"],
            parent=entry["parent"],
            origin_rotation=quat_to_matrix(quat_normalize(entry["origin_quaternion_wxyz"])),
            origin_translation=np.asarray(entry["origin_position"], dtype=float),
            joint_axis=None if axis is None else np.asarray(axis, dtype=float),
            limits=None if entry.get("limits") is None else tuple(entry["limits"]),
            collision_centers=np.array([s["center"] for s in spheres]).reshape(-1, 3),
            collision_radii=np.array([s["radius"] for s in spheres]),
            keypoints=np.asarray(entry.get("keypoints", []), dtype=float).reshape(-1, 3),
            fingertip_samples=np.asarray(
                entry.get("fingertip_samples", []), dtype=float).reshape(-1, 3),
        ))
    return HandModel(
        name=data.get("name", "hand"),
        links=links,
        palm_center_offset=data.get("palm_center_offset", [0.0, 0.0, 0.0]),
        approach_axis=data.get("approach_axis", [0.0, 0.0, -1.0]),
        palm_depth=data.get("palm_depth", 0.025),
    )


def hand_to_dict(model: HandModel) -> dict:
    from .transforms import matrix_to_quat

    return {
        "name": model.name,
        "palm_center_offset": list(model.palm_center_offset),
        "approach_axis": list(model.approach_axis),
        "palm_depth": model.palm_depth,
        "links": [
            {
                "name": link.name,
                "parent": link.parent,
                "origin_position": list(link.origin_translation),
                "origin_quaternion_wxyz": list(matrix_to_quat(link.origin_rotation)),
                "joint_axis": None if link.joint_axis is None else list(link.joint_axis),
                "limits": None if link.limits is None else list(link.limits),
                "collision_spheres": [
                    {"center": list(c), "radius": float(r)}
                    for c, r in zip(link.collision_centers, link.collision_radii)
                ],
                "keypoints": [list(k) for k in link.keypoints],
                "fingertip_samples": [list(t) for t in link.fingertip_samples],
            }
            for link in model.links
        ],
    }


def load_hand(path_or_name: str) -> HandModel:
    """Load a hand file, or resolve the shipped default by name."""
    if path_or_name == DEFAULT_HAND_NAME:
        return build_parametric_hand()
    with open(path_or_name) as fh:
        return hand_from_dict(json.load(fh))


def save_hand(model: HandModel, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(hand_to_dict(model), fh, indent=2)
        fh.write("\n")
