"""Quasi-static grasp evaluation.

The oracle closes the hand with its commanded joint displacement, selects
contacts between fingertip samples and the scene surface, scores penetration
and contact distance, and then probes stability: for each disturbance
direction it asks a linear feasibility program whether linearized
friction-cone forces at the contacts can balance the pull. Every step of a
direction poses the same program (the protocol is quasi-static), so a
direction survives either all of its steps or none.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from .geometry import SdfScene, farthest_point_indices
from .hand import (
    FKResult,
    HandModel,
    HandState,
    WristPose,
    clamp_to_limits,
    forward_kinematics,
    contact_jacobian,
    hand_sphere_centers,
)
from .transforms import euler_to_matrix

log = logging.getLogger(__name__)

OBJECT_DIRECTIONS = np.array([
    [1, 0, 0], [-1, 0, 0],
    [0, 1, 0], [0, -1, 0],
    [0, 0, 1], [0, 0, -1],
], dtype=float)
HANDLE_DIRECTIONS = np.array([[0, 0, -1]], dtype=float)

SLACK_TOL = 1e-7

DEPEN_STEPS = 2
DEPEN_STEP_SIZE = 0.15
DEPEN_CLIP_POSITION = 0.1
DEPEN_CLIP_ORIENTATION = 0.05
DEPEN_CLIP_JOINTS = 0.5
DEPEN_FD_STEP = 1e-4


class EvaluatorError(RuntimeError):
    pass


@dataclass
class Grasp:
    """Wrist pose, joint vector, and the commanded closing displacement."""

    wrist: WristPose
    q: np.ndarray
    closing_cmd: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        if self.closing_cmd is not None:
            self.closing_cmd = np.asarray(self.closing_cmd, dtype=float).reshape(-1)

    def copy(self) -> "Grasp":
        return Grasp(
            WristPose(self.wrist.position.copy(), self.wrist.quaternion.copy()),
            self.q.copy(),
            None if self.closing_cmd is None else self.closing_cmd.copy(),
        )


@dataclass
class ContactSet:
    """Ball-query candidates plus the actively selected contact points."""

    candidate_indices: np.ndarray      # into scene.surface_points
    candidate_distances: np.ndarray    # to the nearest fingertip sample
    points: np.ndarray                 # (n, 3) active contact points
    normals: np.ndarray                # (n, 3) outward surface normals
    links: np.ndarray                  # (n,) owning hand link per contact
    mus: np.ndarray                    # (n,) friction at the contact
    tip_indices: np.ndarray            # (n,) paired fingertip sample index
    surface_indices: np.ndarray        # (n,) index into scene.surface_points

    @property
    def n_active(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "ContactSet":
        z = np.empty(0, dtype=int)
        return cls(z, np.empty(0), np.empty((0, 3)), np.empty((0, 3)), z.copy(),
                   np.empty(0), z.copy(), z.copy())


@dataclass
class FitnessBreakdown:
    lifetime: int              # disturbance steps survived
    contact_distance: float    # meters, fingertip-to-surface shaping term
    penetration: float         # meters, offset penetration energy
    reward: float              # preference term, 0 when steering is off
    total: float


@dataclass
class EvalConfig:
    lifetime_weight: float = 1.0
    distance_weight: float = 1.0
    penetration_weight: float = 100.0
    reward_weight: float = 0.0
    contact_offset: float = 0.003      # meters, collision offset in the penetration energy
    ball_radius: float = 0.025         # meters, contact candidate query radius
    contact_count: int = 12
    steps_per_direction: int = 10
    disturbance_force: float = 5.0     # newtons
    penetration_stop: float = 0.02     # meters, early-termination depth
    max_contact_force: float = 10.0    # newtons, per-contact normal force cap
    cone_facets: int = 8
    closing_cmd_cap: float = 1.0       # radians, cap on |closing command|
    category: str = "object"

    def __post_init__(self):
        for name in ("lifetime_weight", "distance_weight", "penetration_weight",
                     "reward_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.contact_offset <= 0:
            raise ValueError("contact_offset must be positive")
        if self.steps_per_direction < 1:
            raise ValueError("steps_per_direction must be at least 1")
        if self.cone_facets < 4:
            raise ValueError("cone_facets must be at least 4")
        if self.category not in ("object", "handle"):
            raise ValueError(f"unknown category {self.category!r}")

    @property
    def directions(self) -> np.ndarray:
        return HANDLE_DIRECTIONS if self.category == "handle" else OBJECT_DIRECTIONS


@dataclass
class EvalResult:
    fitness: FitnessBreakdown
    success: bool
    contact_count: int
    max_penetration: float
    directions_survived: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


# ---------------------------------------------------------------------------
# contact selection and closing command
# ---------------------------------------------------------------------------

def select_contacts(scene: SdfScene, fk: FKResult, cfg: EvalConfig) -> ContactSet:
    """Ball-query the scene surface around fingertip samples, then pick a
    spatially diverse active subset by farthest point sampling."""
    tips = fk.fingertip_points
    if len(tips) == 0 or len(scene.surface_points) == 0:
        return ContactSet.empty()
    d = cdist(scene.surface_points, tips)
    nearest_tip = d.argmin(axis=1)
    nearest_dist = d[np.arange(len(d)), nearest_tip]
    cand = np.flatnonzero(nearest_dist <= cfg.ball_radius)
    if cand.size == 0:
        return ContactSet.empty()
    cand_points = scene.surface_points[cand]
    seed = int(np.argmin(np.linalg.norm(cand_points - fk.palm_center, axis=1)))
    order = farthest_point_indices(cand_points, cfg.contact_count, seed)
    active = cand[order]
    points = scene.surface_points[active]
    normals = np.stack([scene.gradient(p) for p in points])
    tip_idx = nearest_tip[active]
    return ContactSet(
        candidate_indices=cand,
        candidate_distances=nearest_dist[cand],
        points=points,
        normals=normals,
        links=fk.fingertip_links[tip_idx],
        mus=scene.mu_at(points),
        tip_indices=tip_idx,
        surface_indices=active,
    )


def solve_closing_command(jacobian: np.ndarray, target: np.ndarray,
                          max_norm: float | None = None) -> np.ndarray:
    """Minimum-norm least-squares joint command for the stacked contact system.

    With no contacts (zero rows) the command is zero. When ``max_norm`` is set
    the solution is rescaled onto the norm cap, preserving its direction.
    """
    jacobian = np.atleast_2d(np.asarray(jacobian, dtype=float))
    n_q = jacobian.shape[1]
    if jacobian.shape[0] == 0 or not np.any(jacobian):
        return np.zeros(n_q)
    cmd = np.linalg.lstsq(jacobian, np.asarray(target, dtype=float), rcond=None)[0]
    if max_norm is not None:
        norm = np.linalg.norm(cmd)
        if norm > max_norm:
            cmd = cmd * (max_norm / norm)
    return cmd


# ---------------------------------------------------------------------------
# wrench feasibility
# ---------------------------------------------------------------------------

def cone_edge_wrenches(points: np.ndarray, inward_normals: np.ndarray,
                       mus: np.ndarray, com: np.ndarray, facets: int) -> np.ndarray:
    """Wrench columns (6, n*facets) of the linearized cone edges.

    Edges are n + mu * t_k, unnormalized, so a unit edge coefficient carries a
    unit normal-force magnitude; torques are taken about ``com``.
    """
    n = len(points)
    normals = np.asarray(inward_normals, dtype=float)
    helper = np.zeros((n, 3))
    helper[np.arange(n), np.abs(normals).argmin(axis=1)] = 1.0
    t1 = np.cross(normals, helper)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(normals, t1)
    phis = 2.0 * np.pi * np.arange(facets) / facets
    tangents = (np.cos(phis)[None, :, None] * t1[:, None, :]
                + np.sin(phis)[None, :, None] * t2[:, None, :])
    dirs = normals[:, None, :] + mus[:, None, None] * tangents
    arms = points - com
    torques = np.cross(np.broadcast_to(arms[:, None, :], dirs.shape), dirs)
    return np.concatenate([dirs, torques], axis=2).reshape(n * facets, 6).T


# screening directions for the quick infeasibility certificate: the 12 signed
# wrench axes plus a handful of mixed force/torque probes
_SCREEN_DIRS = np.vstack([
    np.eye(6), -np.eye(6),
    np.array([
        [1, 1, 1, 0, 0, 0], [-1, -1, -1, 0, 0, 0],
        [1, -1, 0, 0, 0, 1], [-1, 1, 0, 0, 0, -1],
    ]) / np.sqrt(3),
])


def _feasible_given_edges(edges: np.ndarray, n_contacts: int, facets: int,
                          w_ext: np.ndarray, max_contact_force: float,
                          slack_tol: float) -> bool:
    target = -w_ext
    # support-function screen: if any direction u has u.target beyond the
    # attainable support, the balance is certifiably infeasible without an LP
    support = max_contact_force * np.maximum(
        0.0, (_SCREEN_DIRS @ edges).reshape(len(_SCREEN_DIRS), n_contacts, facets)
        .max(axis=2)).sum(axis=1)
    if np.any(_SCREEN_DIRS @ target > support + 1e-9):
        return False

    n_lam = edges.shape[1]
    # variables: [lambda (n_lam), s_plus (6), s_minus (6)]
    cost = np.concatenate([np.zeros(n_lam), np.ones(12)])
    a_eq = np.hstack([edges, np.eye(6), -np.eye(6)])
    a_ub = np.zeros((n_contacts, n_lam + 12))
    for i in range(n_contacts):
        a_ub[i, i * facets:(i + 1) * facets] = 1.0
    b_ub = np.full(n_contacts, max_contact_force)
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=target,
                  bounds=(0, None), method="highs", options={"presolve": False})
    if res.status != 0:
        raise EvaluatorError("lp-failed")
    return bool(res.fun <= slack_tol)


def wrench_resist_feasible(contacts: ContactSet, mu, external_wrench: np.ndarray,
                           cone_facets: int = 8, com: np.ndarray | None = None,
                           max_contact_force: float = 10.0,
                           slack_tol: float = SLACK_TOL) -> bool:
    """Can capped friction-cone forces at the active contacts balance the wrench?

    Solved as a phase-1 linear program: minimize the equality slack of the
    force/torque balance; feasible when the optimal slack is within tolerance.
    """
    if cone_facets < 4:
        raise ValueError("cone_facets must be at least 4")
    w_ext = np.asarray(external_wrench, dtype=float).reshape(6)
    n = contacts.n_active
    if n == 0:
        return bool(np.linalg.norm(w_ext) <= slack_tol)
    com = np.zeros(3) if com is None else np.asarray(com, dtype=float)
    mus = np.broadcast_to(np.asarray(mu, dtype=float), (n,)).astype(float)
    edges = cone_edge_wrenches(contacts.points, -contacts.normals, mus, com, cone_facets)
    return _feasible_given_edges(edges, n, cone_facets, w_ext,
                                 max_contact_force, slack_tol)


# ---------------------------------------------------------------------------
# penetration energy and de-penetration
# ---------------------------------------------------------------------------

def _penetration_terms(centers: np.ndarray, radii: np.ndarray, scene: SdfScene,
                       offset: float) -> tuple:
    """Offset penetration energy and the worst penetration depth.

    Separations are signed, positive when apart: hand spheres against the
    scene SDF, and scene surface points against the nearest hand sphere.
    """
    if len(centers) == 0:
        return 0.0, 0.0
    sep_hand = scene.sdf(centers) - radii
    sep_surface = (cdist(scene.surface_points, centers) - radii).min(axis=1)
    energy = (np.maximum(0.0, offset - sep_hand).sum()
              + np.maximum(0.0, offset - sep_surface).sum())
    depth = max(0.0, float(-min(sep_hand.min(), sep_surface.min())))
    return float(energy), depth


def penetration_energy(centers: np.ndarray, radii: np.ndarray, scene: SdfScene,
                       offset: float = 0.003) -> float:
    return _penetration_terms(centers, radii, scene, offset)[0]


def _grasp_penetration(scene: SdfScene, model: HandModel, position, euler, q,
                       offset: float) -> float:
    centers = hand_sphere_centers(model, euler_to_matrix(euler), position,
                                  clamp_to_limits(model, q))
    return _penetration_terms(centers, model._sphere_radii, scene, offset)[0]


def depenetrate(grasp: Grasp, scene: SdfScene, model: HandModel,
                offset: float = 0.003) -> Grasp:
    """Up to two descent steps on the penetration energy.

    The step moves (position, euler, joints) along the negative
    finite-difference gradient, with the gradient clipped per block before
    scaling; joints are clamped back into their limits.
    """
    position = grasp.wrist.position.copy()
    euler = grasp.wrist.euler.copy()
    q = clamp_to_limits(model, grasp.q)
    changed = False
    for _ in range(DEPEN_STEPS):
        base = _grasp_penetration(scene, model, position, euler, q, offset)
        if base == 0.0:
            break
        x = np.concatenate([position, euler, q])
        grad = np.empty_like(x)
        for i in range(len(x)):
            xp = x.copy()
            xp[i] += DEPEN_FD_STEP
            grad[i] = (_grasp_penetration(scene, model, xp[:3], xp[3:6], xp[6:], offset)
                       - base) / DEPEN_FD_STEP
        grad[:3] = np.clip(grad[:3], -DEPEN_CLIP_POSITION, DEPEN_CLIP_POSITION)
        grad[3:6] = np.clip(grad[3:6], -DEPEN_CLIP_ORIENTATION, DEPEN_CLIP_ORIENTATION)
        grad[6:] = np.clip(grad[6:], -DEPEN_CLIP_JOINTS, DEPEN_CLIP_JOINTS)
        position = position - DEPEN_STEP_SIZE * grad[:3]
        euler = euler - DEPEN_STEP_SIZE * grad[3:6]
        q = clamp_to_limits(model, q - DEPEN_STEP_SIZE * grad[6:])
        changed = True
    if not changed:
        return grasp
    return Grasp(WristPose.from_euler(position, euler), q, grasp.closing_cmd)


# ---------------------------------------------------------------------------
# full evaluation
# ---------------------------------------------------------------------------

def evaluate(scene: SdfScene, model: HandModel, grasp: Grasp, cfg: EvalConfig,
             reward_fn=None) -> EvalResult:
    """Score one grasp: close the hand, find contacts, test the disturbance
    protocol, and assemble the weighted fitness."""
    closing = grasp.closing_cmd if grasp.closing_cmd is not None else np.zeros(model.n_q)
    q_closed = clamp_to_limits(model, grasp.q + closing)
    fk = forward_kinematics(model, HandState(grasp.wrist, q_closed))
    contacts = select_contacts(scene, fk, cfg)

    energy, max_depth = _penetration_terms(
        fk.sphere_centers, fk.sphere_radii, scene, cfg.contact_offset)

    # contact-distance shaping at the hand-side sample points: the fingertips
    # paired with active contacts, or all fingertips when nothing is in range
    if contacts.n_active:
        tips_used = fk.fingertip_points[contacts.tip_indices]
    else:
        tips_used = fk.fingertip_points
    e_dis = float(np.abs(scene.sdf(tips_used)).mean()) if len(tips_used) else 0.0

    directions = cfg.directions
    survived = np.zeros(len(directions), dtype=bool)
    lifetime = 0
    if max_depth <= cfg.penetration_stop and contacts.n_active > 0:
        edges = cone_edge_wrenches(contacts.points, -contacts.normals,
                                   contacts.mus, scene.center, cfg.cone_facets)
        for i, direction in enumerate(directions):
            wrench = np.concatenate([cfg.disturbance_force * direction, np.zeros(3)])
            try:
                ok = _feasible_given_edges(
                    edges, contacts.n_active, cfg.cone_facets, wrench,
                    cfg.max_contact_force, SLACK_TOL)
            except EvaluatorError:
                log.warning("wrench LP failed; treating direction %s as unresisted",
                            direction)
                ok = False
            survived[i] = ok
            if ok:  # a failed first step ends the direction; steps are identical
                lifetime += cfg.steps_per_direction

    if cfg.category == "handle":
        success = bool(survived[0]) if len(survived) else False
    else:
        success = any(bool(survived[2 * a] and survived[2 * a + 1]) for a in range(3))

    reward = 0.0
    if cfg.reward_weight > 0 and reward_fn is not None:
        reward = float(reward_fn(grasp))
    total = (cfg.lifetime_weight * lifetime
             - cfg.distance_weight * e_dis
             - cfg.penetration_weight * energy
             + cfg.reward_weight * reward)

    return EvalResult(
        fitness=FitnessBreakdown(
            lifetime=int(lifetime),
            contact_distance=e_dis,
            penetration=energy,
            reward=reward,
            total=float(total),
        ),
        success=success,
        contact_count=contacts.n_active,
        max_penetration=max_depth,
        directions_survived=survived,
    )


def compute_closing_command(scene: SdfScene, model: HandModel, grasp: Grasp,
                            cfg: EvalConfig) -> np.ndarray:
    """Closing command from the current open-hand contacts: least-squares fit
    of joint motion onto unit inward contact normals."""
    state = HandState(grasp.wrist, clamp_to_limits(model, grasp.q))
    fk = forward_kinematics(model, state)
    contacts = select_contacts(scene, fk, cfg)
    if contacts.n_active == 0:
        return np.zeros(model.n_q)
    pairs = list(zip(contacts.points, contacts.links))
    jac = contact_jacobian(model, state, pairs, fk)
    target = (-contacts.normals).reshape(-1)
    return solve_closing_command(jac, target, max_norm=cfg.closing_cmd_cap)


def prepare_grasp(scene: SdfScene, model: HandModel, grasp: Grasp,
                  cfg: EvalConfig) -> Grasp:
    """De-penetrate, then attach a fresh closing command."""
    out = depenetrate(grasp, scene, model, cfg.contact_offset)
    cmd = compute_closing_command(scene, model, out, cfg)
    return replace(out, closing_cmd=cmd)
