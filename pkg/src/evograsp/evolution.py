"""Quality-diversity evolutionary engine.

The archive gates insertion on novelty in an 18-dimensional grasp embedding
(scaled position, Euler angles, joints) and lets near-duplicates compete
locally: a candidate within the novelty threshold of its nearest neighbor
replaces it only on a strict fitness improvement. Parent selection is
tournament selection over density-reweighted fitness, which suppresses
crowded regions. The generate-evaluate loop keeps a fixed number of
evaluations in flight and refills each finished slot, so results are
collected asynchronously under a worker pool while archive mutations stay
serialized in the coordinator.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field

import numpy as np

from .evaluator import EvalConfig, EvalResult, Grasp, evaluate, prepare_grasp
from .geometry import SdfScene
from .hand import HandModel, WristPose
from .metrics import STANDARD_RESOLUTIONS, distinct_stable_grasps, marginal_entropies
from .transforms import axis_angle_matrix, matrix_to_quat, random_unit_quaternion, rotation_between

POSITION_EMBED_SCALE = 10.0
TRACE_EVERY = 100


class EvolutionError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------

@dataclass
class ArchiveConfig:
    novelty_threshold: float = 0.1
    capacity: int = 1024
    prune_keep: int = 768
    pose_dims: int = 6
    prune_mode: str = "score"  # or "score_fps"

    def __post_init__(self):
        if not 0 < self.prune_keep < self.capacity:
            raise ValueError("need 0 < prune_keep < capacity")
        if self.novelty_threshold <= 0:
            raise ValueError("novelty_threshold must be positive")
        if self.prune_mode not in ("score", "score_fps"):
            raise ValueError(f"unknown prune_mode {self.prune_mode!r}")


@dataclass
class SelectionConfig:
    tournament_size: int = 4
    density_radius: float = 0.65
    density_power: float = 2.0

    def __post_init__(self):
        if self.tournament_size < 2:
            raise ValueError("tournament_size must be at least 2")
        if self.density_radius <= 0 or self.density_power <= 0:
            raise ValueError("density radius and power must be positive")


@dataclass
class VariationConfig:
    mutation_prob: float = 0.75
    crossover_prob: float = 0.2
    position_sigma: float = 0.025    # meters
    orientation_sigma: float = 0.05  # radians
    joint_sigma: float = 0.04        # fraction of each joint's limit range

    def __post_init__(self):
        if not 0 <= self.mutation_prob <= 1 or not 0 <= self.crossover_prob <= 1:
            raise ValueError("probabilities must lie in [0, 1]")
        if min(self.position_sigma, self.orientation_sigma, self.joint_sigma) < 0:
            raise ValueError("sigmas must be nonnegative")


@dataclass
class RunConfig:
    population_size: int = 32
    total_evaluations: int = 10000
    rng_seed: int = 0
    final_count: int = 128
    min_lifetime: int | None = None   # default derives from the success rule
    workers: int = 1
    seed_mode: str = "random"         # or "approach-heuristic"
    final_select: str = "top"         # overflow rule: "top" or "fps"

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.total_evaluations < self.population_size:
            raise EvolutionError("budget-too-small")
        if self.seed_mode not in ("random", "approach-heuristic"):
            raise ValueError(f"unknown seed_mode {self.seed_mode!r}")
        if self.final_select not in ("fps", "top"):
            raise ValueError(f"unknown final_select {self.final_select!r}")


def default_min_lifetime(cfg: EvalConfig) -> int:
    """Success already demands a surviving direction set; the lifetime gate
    mirrors it: a full +/- axis pair for objects, the full pull for handles."""
    if cfg.category == "handle":
        return cfg.steps_per_direction
    return 2 * cfg.steps_per_direction


# ---------------------------------------------------------------------------
# embedding and archive
# ---------------------------------------------------------------------------

def grasp_embedding(grasp: Grasp, position_scale: float = POSITION_EMBED_SCALE) -> np.ndarray:
    """[scaled position, euler, joints] descriptor used for novelty and density."""
    return np.concatenate([
        position_scale * grasp.wrist.position,
        grasp.wrist.euler,
        grasp.q,
    ])


def embedding_distance(a: np.ndarray, b: np.ndarray, pose_dims: int = 6) -> float:
    """Half the rms difference of the pose block plus half the rms of the rest."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("embedding length mismatch")
    diff = a - b
    pose = np.sqrt(np.mean(diff[:pose_dims] ** 2))
    joints = np.sqrt(np.mean(diff[pose_dims:] ** 2))
    return float(0.5 * pose + 0.5 * joints)


def embedding_distances(a: np.ndarray, many: np.ndarray, pose_dims: int = 6) -> np.ndarray:
    """Vectorized ``embedding_distance`` of one embedding against rows of a matrix."""
    diff = many - a
    pose = np.sqrt(np.mean(diff[:, :pose_dims] ** 2, axis=1))
    joints = np.sqrt(np.mean(diff[:, pose_dims:] ** 2, axis=1))
    return 0.5 * pose + 0.5 * joints


@dataclass
class ArchiveEntry:
    grasp: Grasp
    fitness: object                  # FitnessBreakdown
    embedding: np.ndarray
    insert_step: int
    success: bool = False
    provenance: dict = field(default_factory=lambda: {"kind": "seed"})


@dataclass
class InsertionResult:
    outcome: str          # "inserted" | "replaced" | "discarded"
    index: int            # slot touched (nearest neighbor for "discarded")
    nn_distance: float    # distance to the nearest neighbor before the op


class Archive:
    """Novelty-gated population with a cached embedding matrix."""

    def __init__(self, dim: int = 18):
        self.entries: list[ArchiveEntry] = []
        self._dim = dim
        self._emb = np.empty((0, dim))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i: int) -> ArchiveEntry:
        return self.entries[i]

    @property
    def embeddings(self) -> np.ndarray:
        return self._emb

    def totals(self) -> np.ndarray:
        return np.array([e.fitness.total for e in self.entries])

    def _rebuild(self):
        if self.entries:
            self._emb = np.stack([e.embedding for e in self.entries])
        else:
            self._emb = np.empty((0, self._dim))

    def append(self, entry: ArchiveEntry):
        self.entries.append(entry)
        self._emb = np.vstack([self._emb, entry.embedding])

    def snapshot(self) -> "Archive":
        """Shallow copy safe to read while the original keeps evolving
        (entries are replaced wholesale, never mutated in place)."""
        dup = Archive(self._dim)
        dup.entries = list(self.entries)
        dup._emb = self._emb.copy()
        return dup

    def insert_or_replace(self, entry: ArchiveEntry, cfg: ArchiveConfig) -> InsertionResult:
        if not self.entries:
            self.append(entry)
            return InsertionResult("inserted", 0, np.inf)
        dists = embedding_distances(entry.embedding, self._emb, cfg.pose_dims)
        j = int(np.argmin(dists))
        nn = float(dists[j])
        if nn >= cfg.novelty_threshold:
            self.append(entry)
            return InsertionResult("inserted", len(self.entries) - 1, nn)
        if entry.fitness.total > self.entries[j].fitness.total:
            self.entries[j] = entry
            self._emb[j] = entry.embedding
            return InsertionResult("replaced", j, nn)
        return InsertionResult("discarded", j, nn)

    def prune(self, cfg: ArchiveConfig):
        """Shrink to ``prune_keep`` once strictly over capacity."""
        if len(self.entries) <= cfg.capacity:
            return
        if cfg.prune_mode == "score":
            order = sorted(range(len(self.entries)),
                           key=lambda i: (-self.entries[i].fitness.total,
                                          self.entries[i].insert_step))
            keep = set(order[:cfg.prune_keep])
        else:  # score_fps: seed at the best score, then spread over embeddings
            best = int(np.argmax(self.totals()))
            keep = set(_embedding_fps(self._emb, cfg.prune_keep, best, cfg.pose_dims))
        self.entries = [e for i, e in enumerate(self.entries) if i in keep]
        self._rebuild()


def _embedding_fps(embeddings: np.ndarray, n: int, seed: int, pose_dims: int) -> np.ndarray:
    """Greedy max-min selection under the archive's embedding metric."""
    count = len(embeddings)
    n = min(n, count)
    chosen = np.empty(n, dtype=int)
    chosen[0] = seed
    dist = embedding_distances(embeddings[seed], embeddings, pose_dims)
    for i in range(1, n):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        dist = np.minimum(dist, embedding_distances(embeddings[nxt], embeddings, pose_dims))
    return chosen


# ---------------------------------------------------------------------------
# selection and variation
# ---------------------------------------------------------------------------

def density_reweight(archive: Archive, index: int, cfg: SelectionConfig,
                     pose_dims: int = 6) -> float:
    """Fitness divided by the kernel mass of neighbors within the density
    radius; an isolated grasp keeps its fitness, N identical grasps share it."""
    if not len(archive):
        raise EvolutionError("empty archive")
    dists = embedding_distances(archive.embeddings[index], archive.embeddings, pose_dims)
    inside = dists <= cfg.density_radius
    weights = 1.0 - (dists[inside] / cfg.density_radius) ** cfg.density_power
    return float(archive[index].fitness.total / weights.sum())


def tournament_select(archive: Archive, cfg: SelectionConfig,
                      rng: np.random.Generator, pose_dims: int = 6) -> tuple:
    """Two parent indices: the top density-reweighted scores of a uniformly
    sampled tournament, ties broken toward the lower index."""
    n = len(archive)
    if n < 2:
        raise EvolutionError("population-too-small")
    if n >= cfg.tournament_size:
        picks = rng.choice(n, size=cfg.tournament_size, replace=False)
    else:
        picks = rng.choice(n, size=cfg.tournament_size, replace=True)
    candidates = sorted(set(int(i) for i in picks))
    scored = sorted(candidates,
                    key=lambda i: (-density_reweight(archive, i, cfg, pose_dims), i))
    if len(scored) == 1:
        return scored[0], scored[0]
    return scored[0], scored[1]


def crossover(parent_a: Grasp, parent_b: Grasp, crossover_prob: float,
              rng: np.random.Generator) -> Grasp:
    """Copy of parent A whose joint vector is swapped for parent B's with the
    configured probability; the closing command is dropped for recomputation."""
    child = parent_a.copy()
    child.closing_cmd = None
    if rng.uniform() < crossover_prob:
        child.q = parent_b.q.copy()
    return child


def mutate(grasp: Grasp, cfg: VariationConfig, model: HandModel,
           rng: np.random.Generator) -> Grasp:
    """Gaussian perturbation of position, Euler angles, and joints (scaled by
    each joint's limit range), applied with the mutation probability."""
    if rng.uniform() >= cfg.mutation_prob:
        return grasp.copy()
    position = grasp.wrist.position + cfg.position_sigma * rng.normal(size=3)
    euler = grasp.wrist.euler + cfg.orientation_sigma * rng.normal(size=3)
    limits = model.joint_limits
    ranges = limits[:, 1] - limits[:, 0]
    q = grasp.q + cfg.joint_sigma * ranges * rng.normal(size=model.n_q)
    q = np.clip(q, limits[:, 0], limits[:, 1])
    return Grasp(WristPose.from_euler(position, euler), q, None)


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------

def seed_population(scene: SdfScene, model: HandModel, mode: str, count: int,
                    rng: np.random.Generator, eval_cfg: EvalConfig | None = None) -> list:
    """Initial grasps: either uniform poses in a shell around the scene, or a
    heuristic that points the palm at the scene along a surface normal. All
    seeds are de-penetrated and carry a fresh closing command."""
    if count < 1:
        raise EvolutionError("no-seeds")
    eval_cfg = eval_cfg or EvalConfig()
    limits = model.joint_limits
    center = scene.center
    r_obj = scene.bounding_radius
    seeds = []
    for _ in range(count):
        if mode == "random":
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            radius = r_obj + rng.uniform(0.02, 0.10)
            position = center + radius * direction
            quat = random_unit_quaternion(rng)
        elif mode == "approach-heuristic":
            idx = int(rng.integers(len(scene.surface_points)))
            anchor = scene.surface_points[idx]
            normal = scene.surface_normals[idx]
            position = anchor + normal * (model.palm_depth + 0.01)
            align = rotation_between(model.approach_axis, -normal)
            twist = axis_angle_matrix(-normal, rng.uniform(0.0, 2.0 * np.pi))
            quat = matrix_to_quat(twist @ align)
        else:
            raise EvolutionError(f"unknown seed mode {mode!r}")
        q = rng.uniform(limits[:, 0], limits[:, 1])
        grasp = Grasp(WristPose(position, quat), q)
        seeds.append(prepare_grasp(scene, model, grasp, eval_cfg))
    return seeds


# ---------------------------------------------------------------------------
# the asynchronous loop
# ---------------------------------------------------------------------------

@dataclass
class PendingJob:
    grasp: Grasp
    provenance: dict
    order: int = 0


@dataclass
class TracePoint:
    step: int
    archive_size: int
    best_total: float
    success_count: int
    dsg_coarse: int
    dsg_mid: int
    dsg_fine: int
    entropy_mean: float

    def to_row(self) -> list:
        return [self.step, self.archive_size, self.best_total, self.success_count,
                self.dsg_coarse, self.dsg_mid, self.dsg_fine, self.entropy_mean]


TRACE_COLUMNS = ["step", "archive_size", "best_total", "success_count",
                 "dsg_coarse", "dsg_mid", "dsg_fine", "entropy_mean"]


@dataclass
class RunState:
    archive: Archive
    pending: deque
    rng: np.random.Generator
    completed: int = 0
    seed_successes: int = 0
    trace: list = field(default_factory=list)
    spawned: int = 0


@dataclass
class RunResult:
    archive: Archive
    success_set: list
    trace: list
    seed_successes: int
    completed: int


def initial_state(seeds: list, run_cfg: RunConfig,
                  rng: np.random.Generator | None = None) -> RunState:
    """Fresh coordinator state; pass the generator used for seeding to keep
    one reproducible stream across seeding and evolution."""
    if not seeds:
        raise EvolutionError("no-seeds")
    pending = deque(PendingJob(g, {"kind": "seed"}, order=i) for i, g in enumerate(seeds))
    return RunState(
        archive=Archive(),
        pending=pending,
        rng=rng if rng is not None else np.random.default_rng(run_cfg.rng_seed),
        spawned=len(seeds),
    )


def success_entries(archive: Archive, min_lifetime: int) -> list:
    return [e for e in archive if e.success and e.fitness.lifetime >= min_lifetime]


def select_final(archive: Archive, final_count: int, min_lifetime: int,
                 pose_dims: int = 6, mode: str = "top") -> list:
    """The returned grasp set: every qualifying success; on overflow either
    the top scores, or farthest point sampling over embeddings seeded at the
    best score."""
    succ = success_entries(archive, min_lifetime)
    if len(succ) <= final_count:
        return list(succ)
    if mode == "top":
        order = sorted(range(len(succ)),
                       key=lambda i: (-succ[i].fitness.total, succ[i].insert_step))
        return [succ[i] for i in sorted(order[:final_count])]
    emb = np.stack([e.embedding for e in succ])
    totals = np.array([e.fitness.total for e in succ])
    picks = _embedding_fps(emb, final_count, int(np.argmax(totals)), pose_dims)
    return [succ[i] for i in sorted(picks)]


def _trace_point(state: RunState, scene: SdfScene, model: HandModel,
                 min_lifetime: int, final_count: int,
                 pose_dims: int, select_mode: str = "top") -> TracePoint:
    # diversity metrics are taken over the capped returned set, the same
    # selection the run would return if stopped here
    n_success = len(success_entries(state.archive, min_lifetime))
    final = select_final(state.archive, final_count, min_lifetime, pose_dims, select_mode)
    grasps = [e.grasp for e in final]
    res = list(STANDARD_RESOLUTIONS.values())
    entropy = marginal_entropies(grasps, scene, model).mean if grasps else 0.0
    totals = state.archive.totals()
    return TracePoint(
        step=state.completed,
        archive_size=len(state.archive),
        best_total=float(totals.max()) if len(totals) else -np.inf,
        success_count=n_success,
        dsg_coarse=distinct_stable_grasps(grasps, res[0]),
        dsg_mid=distinct_stable_grasps(grasps, res[1]),
        dsg_fine=distinct_stable_grasps(grasps, res[2]),
        entropy_mean=float(entropy),
    )


def run_evolution(scene: SdfScene, model: HandModel, seeds: list,
                  archive_cfg: ArchiveConfig, selection_cfg: SelectionConfig,
                  variation_cfg: VariationConfig, run_cfg: RunConfig,
                  eval_cfg: EvalConfig, reward_fn=None,
                  state: RunState | None = None, checkpoint_cb=None,
                  checkpoint_every: int = 500, trace_cb=None) -> RunResult:
    """Evolve until the evaluation budget is exhausted.

    ``state`` resumes a checkpointed run; otherwise the seeds are enqueued
    fresh. ``checkpoint_cb(state)`` fires every ``checkpoint_every`` completed
    evaluations. With ``run_cfg.workers == 1`` the loop is strictly serial and
    reproducible; more workers evaluate concurrently and only the completion
    order varies.
    """
    if state is None:
        if len(seeds) != run_cfg.population_size:
            raise EvolutionError(
                f"expected {run_cfg.population_size} seeds, got {len(seeds)}")
        state = initial_state(seeds, run_cfg)
    total = run_cfg.total_evaluations
    if total < run_cfg.population_size:
        raise EvolutionError("budget-too-small")
    min_lifetime = (run_cfg.min_lifetime if run_cfg.min_lifetime is not None
                    else default_min_lifetime(eval_cfg))

    def process(job: PendingJob, result: EvalResult):
        state.completed += 1
        if job.provenance.get("kind") == "seed" and result.success:
            state.seed_successes += 1
        entry = ArchiveEntry(
            grasp=job.grasp,
            fitness=result.fitness,
            embedding=grasp_embedding(job.grasp),
            insert_step=state.completed,
            success=result.success,
            provenance=job.provenance,
        )
        state.archive.insert_or_replace(entry, archive_cfg)
        state.archive.prune(archive_cfg)
        if state.completed % TRACE_EVERY == 0:
            state.trace.append(_trace_point(state, scene, model, min_lifetime,
                                            run_cfg.final_count, archive_cfg.pose_dims,
                                            run_cfg.final_select))
            if trace_cb is not None:
                trace_cb(state)

    def spawn(in_flight: int) -> PendingJob | None:
        if state.completed + in_flight >= total:
            return None
        if len(state.archive) >= 2:
            ia, ib = tournament_select(state.archive, selection_cfg, state.rng,
                                       archive_cfg.pose_dims)
        else:
            # too early for a tournament: clone the sole entry
            ia = ib = 0
        child = crossover(state.archive[ia].grasp, state.archive[ib].grasp,
                          variation_cfg.crossover_prob, state.rng)
        child = mutate(child, variation_cfg, model, state.rng)
        child = prepare_grasp(scene, model, child, eval_cfg)
        job = PendingJob(child, {"kind": "offspring", "step": state.completed},
                         order=state.spawned)
        state.spawned += 1
        return job

    # checkpoints are cut at the iteration boundary, after the refill spawn,
    # so a resumed run replays the identical parent-selection sequence
    def maybe_checkpoint():
        if checkpoint_cb is not None and state.completed % checkpoint_every == 0:
            checkpoint_cb(state)

    if run_cfg.workers <= 1:
        while state.completed < total and state.pending:
            job = state.pending.popleft()
            process(job, evaluate(scene, model, job.grasp, eval_cfg, reward_fn))
            nxt = spawn(len(state.pending))
            if nxt is not None:
                state.pending.append(nxt)
            maybe_checkpoint()
    else:
        with ThreadPoolExecutor(max_workers=run_cfg.workers) as pool:
            futures = {}
            while state.pending:
                job = state.pending.popleft()
                futures[pool.submit(evaluate, scene, model, job.grasp,
                                    eval_cfg, reward_fn)] = job
            while futures:
                done, _ = wait(futures, return_when=FIRST_COMPLETED)
                for fut in sorted(done, key=lambda f: futures[f].order):
                    job = futures.pop(fut)
                    process(job, fut.result())
                    nxt = spawn(len(futures))
                    if nxt is not None:
                        futures[pool.submit(evaluate, scene, model, nxt.grasp,
                                            eval_cfg, reward_fn)] = nxt
                    maybe_checkpoint()

    return RunResult(
        archive=state.archive,
        success_set=select_final(state.archive, run_cfg.final_count, min_lifetime,
                                 archive_cfg.pose_dims, run_cfg.final_select),
        trace=state.trace,
        seed_successes=state.seed_successes,
        completed=state.completed,
    )
