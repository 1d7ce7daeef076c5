"""Analytic signed-distance scenes.

A scene is a union (pointwise min) of posed primitives: spheres, capsules,
boxes, and cylinders. Each primitive has an exact SDF, an exact surface area,
and an analytic surface sampler, so the scene can cache a deterministic
surface point set with outward normals at load time. Positive SDF means
outside.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .transforms import quat_normalize, quat_to_matrix

SURFACE_TOL = 1e-4          # cached surface points must be this close to the zero level set
GRADIENT_STEP = 1e-5        # central-difference step for sdf_gradient, meters
DEFAULT_SURFACE_DENSITY = 2000.0   # points per square meter

PRIMITIVE_KINDS = ("sphere", "capsule", "box", "cylinder")

_DIMENSION_KEYS = {
    "sphere": ("radius",),
    "capsule": ("radius", "height"),
    "box": ("size",),
    "cylinder": ("radius", "height"),
}


class SceneError(ValueError):
    pass


@dataclass
class Primitive:
    """A posed analytic solid.

    Dimensions by kind:
      sphere:   radius
      capsule:  radius, height (segment length between hemisphere centers, local z)
      box:      size = (x, y, z) full extents
      cylinder: radius, height (full height, local z)
    """

    kind: str
    position: np.ndarray
    quaternion: np.ndarray  # (w, x, y, z)
    dimensions: dict
    mu: float

    def __post_init__(self):
        if self.kind not in PRIMITIVE_KINDS:
            raise SceneError(f"unknown primitive kind {self.kind!r}")
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise SceneError("primitive quaternion is not unit norm")
        self.quaternion = quat_normalize(q)
        if not 0.0 <= self.mu <= 2.0:
            raise SceneError(f"mu {self.mu} outside [0, 2]")
        expected = _DIMENSION_KEYS[self.kind]
        if set(self.dimensions) != set(expected):
            raise SceneError(
                f"{self.kind} expects dimensions {expected}, got {tuple(self.dimensions)}"
            )
        for key, value in self.dimensions.items():
            arr = np.atleast_1d(np.asarray(value, dtype=float))
            if np.any(arr <= 0):
                raise SceneError(f"dimension {key!r} must be positive")
        self._rot = quat_to_matrix(self.quaternion)

    # -- local geometry ----------------------------------------------------

    def _to_local(self, points: np.ndarray) -> np.ndarray:
        return (points - self.position) @ self._rot

    def sdf(self, points: np.ndarray) -> np.ndarray:
        """Exact signed distance for an (N, 3) array of world points."""
        p = self._to_local(np.atleast_2d(points))
        if self.kind == "sphere":
            return np.linalg.norm(p, axis=1) - self.dimensions["radius"]
        if self.kind == "capsule":
            r = self.dimensions["radius"]
            half = self.dimensions["height"] / 2.0
            z = np.clip(p[:, 2], -half, half)
            closest = np.column_stack([np.zeros((len(p), 2)), z])
            return np.linalg.norm(p - closest, axis=1) - r
        if self.kind == "box":
            half = np.asarray(self.dimensions["size"], dtype=float) / 2.0
            q = np.abs(p) - half
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(np.max(q, axis=1), 0.0)
            return outside + inside
        # cylinder
        r = self.dimensions["radius"]
        half = self.dimensions["height"] / 2.0
        d_rad = np.linalg.norm(p[:, :2], axis=1) - r
        d_ax = np.abs(p[:, 2]) - half
        d = np.column_stack([d_rad, d_ax])
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
        inside = np.minimum(np.max(d, axis=1), 0.0)
        return outside + inside

    @property
    def area(self) -> float:
        if self.kind == "sphere":
            return 4.0 * np.pi * self.dimensions["radius"] ** 2
        if self.kind == "capsule":
            r, h = self.dimensions["radius"], self.dimensions["height"]
            return 2.0 * np.pi * r * h + 4.0 * np.pi * r**2
        if self.kind == "box":
            a, b, c = np.asarray(self.dimensions["size"], dtype=float)
            return 2.0 * (a * b + b * c + c * a)
        r, h = self.dimensions["radius"], self.dimensions["height"]
        return 2.0 * np.pi * r * h + 2.0 * np.pi * r**2

    @property
    def volume(self) -> float:
        if self.kind == "sphere":
            return 4.0 / 3.0 * np.pi * self.dimensions["radius"] ** 3
        if self.kind == "capsule":
            r, h = self.dimensions["radius"], self.dimensions["height"]
            return np.pi * r**2 * h + 4.0 / 3.0 * np.pi * r**3
        if self.kind == "box":
            return float(np.prod(np.asarray(self.dimensions["size"], dtype=float)))
        r, h = self.dimensions["radius"], self.dimensions["height"]
        return np.pi * r**2 * h

    def sample_surface(self, n: int, rng: np.random.Generator):
        """``n`` points uniform by area on the local surface, with outward normals."""
        if self.kind == "sphere":
            r = self.dimensions["radius"]
            d = rng.normal(size=(n, 3))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            return r * d, d
        if self.kind == "capsule":
            return self._sample_capsule(n, rng)
        if self.kind == "box":
            return self._sample_box(n, rng)
        return self._sample_cylinder(n, rng)

    def _sample_box(self, n, rng):
        half = np.asarray(self.dimensions["size"], dtype=float) / 2.0
        a, b, c = half * 2.0
        face_areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
        faces = rng.choice(6, size=n, p=face_areas / face_areas.sum())
        u = rng.uniform(-1.0, 1.0, size=(n, 2))
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        for f in range(6):
            m = faces == f
            axis, sign = divmod(f, 2)
            sign = 1.0 if sign == 0 else -1.0
            others = [i for i in range(3) if i != axis]
            pts[m, axis] = sign * half[axis]
            pts[m, others[0]] = u[m, 0] * half[others[0]]
            pts[m, others[1]] = u[m, 1] * half[others[1]]
            nrm[m, axis] = sign
        return pts, nrm

    def _sample_cylinder(self, n, rng):
        r = self.dimensions["radius"]
        half = self.dimensions["height"] / 2.0
        lateral = 2.0 * np.pi * r * 2.0 * half
        cap = np.pi * r**2
        part = rng.choice(3, size=n, p=np.array([lateral, cap, cap]) / (lateral + 2 * cap))
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        lat = part == 0
        pts[lat, 0] = r * np.cos(theta[lat])
        pts[lat, 1] = r * np.sin(theta[lat])
        pts[lat, 2] = rng.uniform(-half, half, size=int(lat.sum()))
        nrm[lat, 0] = np.cos(theta[lat])
        nrm[lat, 1] = np.sin(theta[lat])
        for which, sign in ((1, 1.0), (2, -1.0)):
            m = part == which
            rad = r * np.sqrt(rng.uniform(size=int(m.sum())))
            pts[m, 0] = rad * np.cos(theta[m])
            pts[m, 1] = rad * np.sin(theta[m])
            pts[m, 2] = sign * half
            nrm[m, 2] = sign
        return pts, nrm

    def _sample_capsule(self, n, rng):
        r = self.dimensions["radius"]
        half = self.dimensions["height"] / 2.0
        lateral = 2.0 * np.pi * r * 2.0 * half
        spherical = 4.0 * np.pi * r**2
        on_sphere = rng.uniform(size=n) < spherical / (lateral + spherical)
        pts = np.empty((n, 3))
        nrm = np.empty((n, 3))
        k = int(on_sphere.sum())
        d = rng.normal(size=(k, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        # whole sphere split into the two end caps by hemisphere
        pts[on_sphere] = r * d + np.sign(d[:, 2:3]) * np.array([0.0, 0.0, half])
        nrm[on_sphere] = d
        m = ~on_sphere
        theta = rng.uniform(0.0, 2.0 * np.pi, size=int(m.sum()))
        pts[m, 0] = r * np.cos(theta)
        pts[m, 1] = r * np.sin(theta)
        pts[m, 2] = rng.uniform(-half, half, size=int(m.sum()))
        nrm[m] = np.column_stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)])
        return pts, nrm


@dataclass
class PointSet:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise SceneError("points and normals length mismatch")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class SdfScene:
    """Union of primitives with a cached surface sample.

    The cache (points, outward unit normals, owning primitive index) is built
    once in ``__post_init__`` from a seeded generator, so a scene file always
    produces the same scene.
    """

    primitives: list
    name: str = "scene"
    category: str = "object"
    surface_density: float = DEFAULT_SURFACE_DENSITY
    sampling_seed: int = 0
    surface_points: np.ndarray = field(init=False, repr=False)
    surface_normals: np.ndarray = field(init=False, repr=False)
    surface_owner: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.primitives:
            raise SceneError("empty-scene")
        if self.category not in ("object", "handle"):
            raise SceneError(f"unknown category {self.category!r}")
        if self.surface_density <= 0:
            raise SceneError("surface_density must be positive")
        self._build_surface_cache()

    def _build_surface_cache(self):
        rng = np.random.default_rng(self.sampling_seed)
        pts, nrms, owner = [], [], []
        for i, prim in enumerate(self.primitives):
            n = max(1, int(round(self.surface_density * prim.area)))
            local_p, local_n = prim.sample_surface(n, rng)
            world_p = local_p @ prim._rot.T + prim.position
            world_n = local_n @ prim._rot.T
            # drop sample points swallowed by another primitive of the union
            keep = np.ones(n, dtype=bool)
            for j, other in enumerate(self.primitives):
                if j != i:
                    keep &= other.sdf(world_p) > -1e-9
            pts.append(world_p[keep])
            nrms.append(world_n[keep])
            owner.append(np.full(int(keep.sum()), i, dtype=int))
        self.surface_points = np.concatenate(pts)
        self.surface_normals = np.concatenate(nrms)
        self.surface_owner = np.concatenate(owner)
        residual = np.abs(self.sdf(self.surface_points))
        if residual.size and residual.max() > SURFACE_TOL:
            raise SceneError(f"surface cache off the zero level set by {residual.max():.2e}")

    # -- queries -------------------------------------------------------------

    def sdf(self, points: np.ndarray) -> np.ndarray:
        """Scene signed distance (union = min over primitives) for (N, 3) points."""
        points = np.atleast_2d(points)
        values = np.stack([p.sdf(points) for p in self.primitives])
        return values.min(axis=0)

    def sdf_one(self, point: np.ndarray) -> float:
        return float(self.sdf(np.asarray(point, dtype=float).reshape(1, 3))[0])

    def owning_primitive(self, points: np.ndarray) -> np.ndarray:
        """Index of the primitive attaining the union min (lowest index on ties)."""
        points = np.atleast_2d(points)
        values = np.stack([p.sdf(points) for p in self.primitives])
        return values.argmin(axis=0)

    def mu_at(self, points: np.ndarray) -> np.ndarray:
        owners = self.owning_primitive(points)
        mus = np.array([p.mu for p in self.primitives])
        return mus[owners]

    def gradient(self, point: np.ndarray) -> np.ndarray:
        """Unit outward SDF gradient by central differences on the owning primitive.

        At union seams the lowest-index primitive wins, which keeps the result
        deterministic on the (measure-zero) tie locus.
        """
        point = np.asarray(point, dtype=float).reshape(3)
        prim = self.primitives[int(self.owning_primitive(point)[0])]
        h = GRADIENT_STEP
        offsets = np.vstack([np.eye(3) * h, -np.eye(3) * h])
        vals = prim.sdf(point + offsets)
        grad = (vals[:3] - vals[3:]) / (2.0 * h)
        norm = np.linalg.norm(grad)
        if norm < 1e-12:
            raise SceneError("degenerate-gradient")
        return grad / norm

    # -- derived summaries ----------------------------------------------------

    @property
    def center(self) -> np.ndarray:
        """Volume-weighted center of the primitive poses (overlaps ignored)."""
        vols = np.array([p.volume for p in self.primitives])
        centers = np.stack([p.position for p in self.primitives])
        return (vols[:, None] * centers).sum(axis=0) / vols.sum()

    @property
    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.surface_points - self.center, axis=1).max())

    @property
    def bbox(self) -> tuple:
        return self.surface_points.min(axis=0), self.surface_points.max(axis=0)

    @property
    def total_area(self) -> float:
        return float(sum(p.area for p in self.primitives))

    def summary_features(self) -> np.ndarray:
        """Eight scalars describing the scene, used by the preference features."""
        lo, hi = self.bbox
        extent = hi - lo
        mean_mu = float(np.mean([p.mu for p in self.primitives]))
        return np.array([
            extent[0], extent[1], extent[2],
            self.bounding_radius,
            self.total_area,
            mean_mu,
            float(len(self.primitives)),
            float(extent.max()),
        ])


# ---------------------------------------------------------------------------
# point-set operations
# ---------------------------------------------------------------------------

def sdf_eval(scene: SdfScene, point: np.ndarray) -> float:
    """Scene signed distance at a single world point, positive outside."""
    return scene.sdf_one(point)


def sdf_gradient(scene: SdfScene, point: np.ndarray) -> np.ndarray:
    return scene.gradient(point)


def ball_query(query: PointSet, target: PointSet, radius: float) -> list:
    """Indices of target points within ``radius`` (inclusive) of each query point.

    Brute-force and exact: sets in this package stay small enough that a full
    distance matrix beats a tree.
    """
    if radius <= 0:
        raise SceneError("ball_query radius must be positive")
    if len(query) == 0 or len(target) == 0:
        return [np.empty(0, dtype=int) for _ in range(len(query))]
    d = cdist(query.points, target.points)
    return [np.flatnonzero(row <= radius) for row in d]


def farthest_point_indices(points: np.ndarray, n: int, seed_index: int) -> np.ndarray:
    """Greedy max-min selection over an (N, D) array, ties to the lowest index."""
    points = np.asarray(points, dtype=float)
    count = len(points)
    if count == 0:
        raise SceneError("empty-pointset")
    if not 0 <= seed_index < count:
        raise SceneError(f"seed index {seed_index} out of range")
    n = min(n, count)
    chosen = np.empty(n, dtype=int)
    chosen[0] = seed_index
    dist = np.linalg.norm(points - points[seed_index], axis=1)
    for i in range(1, n):
        nxt = int(np.argmax(dist))  # argmax takes the first max: lowest index wins ties
        chosen[i] = nxt
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return chosen


def farthest_point_sample(points: PointSet, n: int, seed_index: int) -> np.ndarray:
    return farthest_point_indices(points.points, n, seed_index)


# ---------------------------------------------------------------------------
# scene files
# ---------------------------------------------------------------------------

_SCENE_FIELDS = {"name", "category", "surface_density", "sampling_seed", "primitives"}
_PRIMITIVE_FIELDS = {"kind", "position", "quaternion_wxyz", "dimensions", "mu"}


def scene_from_dict(data: dict) -> SdfScene:
    unknown = set(data) - _SCENE_FIELDS
    if unknown:
        raise SceneError(f"unknown scene fields: {sorted(unknown)}")
    if "primitives" not in data:
        raise SceneError("scene file missing 'primitives'")
    prims = []
    for entry in data["primitives"]:
        extra = set(entry) - _PRIMITIVE_FIELDS
        if extra:
            raise SceneError(f"unknown primitive fields: {sorted(extra)}")
        missing = _PRIMITIVE_FIELDS - set(entry)
        if missing:
            raise SceneError(f"primitive missing fields: {sorted(missing)}")
        prims.append(Primitive(
            kind=entry["kind"],
            position=entry["position"],
            quaternion=entry["quaternion_wxyz"],
            dimensions=entry["dimensions"],
            mu=entry["mu"],
        ))
    return SdfScene(
        primitives=prims,
        name=data.get("name", "scene"),
        category=data.get("category", "object"),
        surface_density=data.get("surface_density", DEFAULT_SURFACE_DENSITY),
        sampling_seed=data.get("sampling_seed", 0),
    )


def scene_to_dict(scene: SdfScene) -> dict:
    return {
        "name": scene.name,
        "category": scene.category,
        "surface_density": scene.surface_density,
        "sampling_seed": scene.sampling_seed,
        "primitives": [
            {
                "kind": p.kind,
                "position": list(p.position),
                "quaternion_wxyz": list(p.quaternion),
                "dimensions": {k: (list(v) if isinstance(v, (list, tuple, np.ndarray)) else v)
                               for k, v in p.dimensions.items()},
                "mu": p.mu,
            }
            for p in scene.primitives
        ],
    }


def load_scene(path: str) -> SdfScene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh))


def save_scene(scene: SdfScene, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)
        fh.write("\n")
