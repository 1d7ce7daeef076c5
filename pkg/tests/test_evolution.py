"""Evolution engine tests: embedding metric, archive semantics, density
reweighting, selection, variation operators, seeding, and small end-to-end
runs."""

import numpy as np
import numpy.testing as npt
import pytest

from evograsp.evaluator import EvalConfig, FitnessBreakdown, Grasp
from evograsp.evolution import (
    Archive,
    ArchiveConfig,
    ArchiveEntry,
    EvolutionError,
    RunConfig,
    SelectionConfig,
    VariationConfig,
    crossover,
    density_reweight,
    embedding_distance,
    grasp_embedding,
    initial_state,
    mutate,
    run_evolution,
    seed_population,
    select_final,
    success_entries,
    tournament_select,
)
from evograsp.hand import WristPose

IDENT = [1.0, 0.0, 0.0, 0.0]


def fitness(total, lifetime=0):
    return FitnessBreakdown(lifetime=lifetime, contact_distance=0.0,
                            penetration=0.0, reward=0.0, total=total)


def entry(embedding, total, step=0, success=False, lifetime=0):
    grasp = Grasp(WristPose.identity(), np.zeros(12))
    return ArchiveEntry(grasp=grasp, fitness=fitness(total, lifetime),
                        embedding=np.asarray(embedding, dtype=float),
                        insert_step=step, success=success)


def random_entry(rng, total=None, step=0, success=False, lifetime=0):
    total = rng.normal() if total is None else total
    return entry(rng.normal(size=18), total, step, success, lifetime)


class TestEmbedding:
    def test_identical_zero(self):
        e = np.arange(18.0)
        assert embedding_distance(e, e) == 0.0

    def test_position_offset(self):
        # 0.1 m in x scales to 1.0 in the pose block: d = 0.5 * sqrt(1/6)
        a = Grasp(WristPose.identity(), np.zeros(12))
        b = Grasp(WristPose([0.1, 0, 0], IDENT), np.zeros(12))
        d = embedding_distance(grasp_embedding(a), grasp_embedding(b))
        assert d == pytest.approx(0.5 * np.sqrt(1.0 / 6.0), abs=1e-12)

    def test_joint_offset(self):
        a = Grasp(WristPose.identity(), np.zeros(12))
        b = Grasp(WristPose.identity(), np.full(12, 0.1))
        d = embedding_distance(grasp_embedding(a), grasp_embedding(b))
        assert d == pytest.approx(0.05, abs=1e-12)

    def test_embedding_recomputes_exactly(self):
        rng = np.random.default_rng(0)
        grasp = Grasp(WristPose([0.1, -0.2, 0.3], IDENT), rng.uniform(-1, 1, 12))
        npt.assert_array_equal(grasp_embedding(grasp), grasp_embedding(grasp))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            embedding_distance(np.zeros(18), np.zeros(17))


class TestInsertOrReplace:
    def test_empty_always_inserts(self):
        archive = Archive()
        res = archive.insert_or_replace(random_entry(np.random.default_rng(0)),
                                        ArchiveConfig())
        assert res.outcome == "inserted"
        assert len(archive) == 1

    def test_replacement_on_improvement(self):
        cfg = ArchiveConfig()
        archive = Archive()
        incumbent = entry(np.zeros(18), total=2.0)
        archive.insert_or_replace(incumbent, cfg)
        # nearest-neighbor distance 0.05 < tau = 0.1, strictly better fitness
        close = entry(np.full(18, 0.05 * 2 / np.sqrt(1.0)), total=3.0)
        close.embedding = np.zeros(18)
        close.embedding[6] = 0.05 * 2 * np.sqrt(12)  # joint rms 0.05 -> d = 0.05
        res = archive.insert_or_replace(close, cfg)
        assert res.outcome == "replaced"
        assert res.index == 0
        assert res.nn_distance == pytest.approx(0.05)
        assert archive[0].fitness.total == 3.0

    def test_tie_is_discarded(self):
        cfg = ArchiveConfig()
        archive = Archive()
        archive.insert_or_replace(entry(np.zeros(18), total=2.0), cfg)
        twin = entry(np.zeros(18), total=2.0)
        res = archive.insert_or_replace(twin, cfg)
        assert res.outcome == "discarded"
        assert len(archive) == 1

    def test_novel_inserted_at_threshold(self):
        cfg = ArchiveConfig()
        archive = Archive()
        archive.insert_or_replace(entry(np.zeros(18), total=1.0), cfg)
        far = entry(np.zeros(18), total=0.0)
        far.embedding = np.zeros(18)
        far.embedding[6:] = 0.2  # joint rms 0.2 -> d = 0.1 = tau exactly
        res = archive.insert_or_replace(far, cfg)
        assert res.outcome == "inserted"

    def test_randomized_semantics(self):
        # novelty on the inserted branch, strict improvement on replacement
        rng = np.random.default_rng(1)
        cfg = ArchiveConfig()
        archive = Archive()
        for step in range(800):
            cand = random_entry(rng, step=step)
            cand.embedding = rng.normal(0, 0.08, size=18)
            before = None
            if len(archive):
                dists = [embedding_distance(cand.embedding, e.embedding)
                         for e in archive]
                before = (min(dists), int(np.argmin(dists)),
                          archive[int(np.argmin(dists))].fitness.total)
            res = archive.insert_or_replace(cand, cfg)
            if before is None:
                assert res.outcome == "inserted"
            elif res.outcome == "inserted":
                assert before[0] >= cfg.novelty_threshold
            elif res.outcome == "replaced":
                assert before[0] < cfg.novelty_threshold
                assert cand.fitness.total > before[2]
                assert res.index == before[1]
            else:
                assert cand.fitness.total <= before[2]


class TestDensityReweight:
    def test_isolated_keeps_fitness(self):
        archive = Archive()
        cfg = ArchiveConfig()
        sel = SelectionConfig()
        archive.insert_or_replace(entry(np.zeros(18), total=4.0), cfg)
        far = entry(np.zeros(18), 1.0)
        far.embedding = np.full(18, 10.0)
        archive.insert_or_replace(far, cfg)
        assert density_reweight(archive, 0, sel) == pytest.approx(4.0, abs=1e-9)

    def test_identical_share(self):
        sel = SelectionConfig()
        for n in (2, 10, 100):
            archive = Archive()
            for _ in range(n):
                archive.append(entry(np.zeros(18), total=5.0))
            assert density_reweight(archive, 0, sel) == pytest.approx(5.0 / n, abs=1e-9)

    def test_half_kernel_neighbor(self):
        sel = SelectionConfig(density_radius=0.65, density_power=2.0)
        archive = Archive()
        archive.append(entry(np.zeros(18), total=3.0))
        other = entry(np.zeros(18), 1.0)
        d = sel.density_radius / np.sqrt(2.0)
        other.embedding = np.zeros(18)
        other.embedding[6:] = 2.0 * d  # joint rms d, pose zero
        archive.append(other)
        assert density_reweight(archive, 0, sel) == pytest.approx(3.0 / 1.5, abs=1e-9)


class TestTournament:
    def test_top_two_by_reweighted_fitness(self):
        rng = np.random.default_rng(2)
        archive = Archive()
        totals = [1.0, 5.0, 3.0, 4.0]
        for i, t in enumerate(totals):
            e = entry(np.zeros(18), total=t, step=i)
            e.embedding = np.full(18, float(i) * 5)  # isolated: F' = F
            archive.append(e)
        sel = SelectionConfig(tournament_size=4)
        a, b = tournament_select(archive, sel, rng)
        assert (a, b) == (1, 3)

    def test_tie_breaks_to_lower_index(self):
        rng = np.random.default_rng(3)
        archive = Archive()
        for i in range(4):
            e = entry(np.zeros(18), total=2.0, step=i)
            e.embedding = np.full(18, float(i) * 5)
            archive.append(e)
        a, b = tournament_select(archive, SelectionConfig(tournament_size=4), rng)
        assert (a, b) == (0, 1)

    def test_seeded_reproducibility(self):
        archive = Archive()
        fill = np.random.default_rng(4)
        for i in range(30):
            archive.append(random_entry(fill, step=i))

        def sequence(seed):
            rng = np.random.default_rng(seed)
            return [tournament_select(archive, SelectionConfig(), rng)
                    for _ in range(10)]

        assert sequence(9) == sequence(9)

    def test_small_population_error(self):
        archive = Archive()
        archive.append(random_entry(np.random.default_rng(5)))
        with pytest.raises(EvolutionError, match="population-too-small"):
            tournament_select(archive, SelectionConfig(), np.random.default_rng(0))


class TestCrossover:
    def make_parents(self):
        a = Grasp(WristPose([0.1, 0, 0], IDENT), np.full(12, 0.2), np.ones(12))
        b = Grasp(WristPose([0, 0.5, 0], IDENT), np.full(12, 0.9), np.ones(12))
        return a, b

    def test_probability_zero(self):
        a, b = self.make_parents()
        child = crossover(a, b, 0.0, np.random.default_rng(0))
        npt.assert_array_equal(child.q, a.q)
        npt.assert_array_equal(child.wrist.position, a.wrist.position)
        assert child.closing_cmd is None

    def test_probability_one(self):
        a, b = self.make_parents()
        child = crossover(a, b, 1.0, np.random.default_rng(0))
        npt.assert_array_equal(child.q, b.q)
        npt.assert_array_equal(child.wrist.position, a.wrist.position)

    def test_seeded_replay_matches_coin_flips(self):
        a, b = self.make_parents()
        replay = np.random.default_rng(7)
        flips = [replay.uniform() < 0.2 for _ in range(50)]
        rng = np.random.default_rng(7)
        for expected in flips:
            child = crossover(a, b, 0.2, rng)
            swapped = np.array_equal(child.q, b.q)
            assert swapped == expected


class TestMutate:
    def test_zero_sigma_roundtrip(self, hand):
        cfg = VariationConfig(mutation_prob=1.0, position_sigma=0.0,
                              orientation_sigma=0.0, joint_sigma=0.0)
        grasp = Grasp(WristPose.from_euler([0.1, 0.2, 0.3], [0.4, -0.2, 1.0]),
                      np.full(12, 0.5))
        out = mutate(grasp, cfg, hand, np.random.default_rng(0))
        npt.assert_allclose(out.wrist.position, grasp.wrist.position, atol=1e-12)
        npt.assert_allclose(out.wrist.quaternion, grasp.wrist.quaternion, atol=1e-9)
        npt.assert_array_equal(out.q, grasp.q)

    def test_clamps_joint_overflow(self, hand):
        cfg = VariationConfig(mutation_prob=1.0)
        top = hand.joint_limits[:, 1].copy()
        grasp = Grasp(WristPose.identity(), top)
        out = mutate(grasp, cfg, hand, np.random.default_rng(1))
        assert np.all(out.q <= hand.joint_limits[:, 1])
        assert np.all(out.q >= hand.joint_limits[:, 0])

    def test_seeded_bit_identical(self, hand):
        cfg = VariationConfig()
        grasp = Grasp(WristPose.identity(), np.full(12, 0.3))
        a = mutate(grasp, cfg, hand, np.random.default_rng(11))
        b = mutate(grasp, cfg, hand, np.random.default_rng(11))
        npt.assert_array_equal(a.wrist.position, b.wrist.position)
        npt.assert_array_equal(a.wrist.quaternion, b.wrist.quaternion)
        npt.assert_array_equal(a.q, b.q)

    def test_skip_branch_copies(self, hand):
        cfg = VariationConfig(mutation_prob=0.0)
        grasp = Grasp(WristPose.identity(), np.full(12, 0.3))
        out = mutate(grasp, cfg, hand, np.random.default_rng(2))
        assert out is not grasp
        npt.assert_array_equal(out.q, grasp.q)
        npt.assert_array_equal(out.wrist.quaternion, grasp.wrist.quaternion)


class TestPrune:
    def make_archive(self, n, cfg):
        rng = np.random.default_rng(6)
        archive = Archive()
        for i in range(n):
            archive.append(random_entry(rng, total=float(rng.normal()), step=i))
        return archive

    def test_at_capacity_unchanged(self):
        cfg = ArchiveConfig(capacity=50, prune_keep=30)
        archive = self.make_archive(50, cfg)
        archive.prune(cfg)
        assert len(archive) == 50

    def test_over_capacity_keeps_best(self):
        cfg = ArchiveConfig(capacity=1024, prune_keep=768)
        archive = self.make_archive(1025, cfg)
        kept_totals = None
        all_totals = sorted((e.fitness.total for e in archive), reverse=True)
        archive.prune(cfg)
        assert len(archive) == 768
        kept = sorted((e.fitness.total for e in archive), reverse=True)
        assert kept == all_totals[:768]

    def test_tie_prefers_earlier_insert(self):
        cfg = ArchiveConfig(capacity=3, prune_keep=2)
        archive = Archive()
        for i, total in enumerate([9.0, 5.0, 5.0, 5.0]):
            archive.append(entry(np.full(18, float(i)), total, step=i))
        archive.prune(cfg)
        steps = sorted(e.insert_step for e in archive)
        assert steps == [0, 1]  # the 5.0 tie at the cut resolves to step 1


class TestSeeding:
    def test_count_and_limits(self, sparse_sphere, hand, eval_cfg):
        rng = np.random.default_rng(0)
        seeds = seed_population(sparse_sphere, hand, "random", 8, rng, eval_cfg)
        assert len(seeds) == 8
        limits = hand.joint_limits
        for g in seeds:
            assert np.all(g.q >= limits[:, 0]) and np.all(g.q <= limits[:, 1])
            assert g.closing_cmd is not None

    def test_seeded_replay(self, sparse_sphere, hand, eval_cfg):
        a = seed_population(sparse_sphere, hand, "random", 5,
                            np.random.default_rng(3), eval_cfg)
        b = seed_population(sparse_sphere, hand, "random", 5,
                            np.random.default_rng(3), eval_cfg)
        for ga, gb in zip(a, b):
            npt.assert_array_equal(ga.wrist.position, gb.wrist.position)
            npt.assert_array_equal(ga.q, gb.q)

    def test_approach_heuristic_ray_hits_sphere(self, sparse_sphere, hand, eval_cfg):
        rng = np.random.default_rng(1)
        seeds = seed_population(sparse_sphere, hand, "approach-heuristic", 12,
                                rng, eval_cfg)
        for g in seeds:
            origin = g.wrist.position
            direction = g.wrist.rotation() @ hand.approach_axis
            # ray-sphere intersection: closest approach to the center within radius
            t = -np.dot(origin, direction)
            closest = origin + max(t, 0.0) * direction
            assert np.linalg.norm(closest) <= 0.05 + 1e-6


class TestRunEvolution:
    def small_run(self, scene, hand, total=64, seed=5, workers=1, pop=8):
        eval_cfg = EvalConfig()
        run_cfg = RunConfig(population_size=pop, total_evaluations=total,
                            rng_seed=seed, workers=workers)
        rng = np.random.default_rng(seed)
        seeds = seed_population(scene, hand, "random", pop, rng, eval_cfg)
        state = initial_state(seeds, run_cfg, rng)
        return run_evolution(scene, hand, [], ArchiveConfig(), SelectionConfig(),
                             VariationConfig(), run_cfg, eval_cfg, state=state)

    def test_budget_equals_population(self, toy_sphere, hand):
        res = self.small_run(toy_sphere, hand, total=8, pop=8)
        assert res.completed == 8
        # archive holds exactly the novelty-filtered seeds, provenance intact
        assert all(e.provenance["kind"] == "seed" for e in res.archive)
        assert 1 <= len(res.archive) <= 8

    def test_single_worker_determinism(self, toy_sphere, hand):
        a = self.small_run(toy_sphere, hand, total=60, seed=12)
        b = self.small_run(toy_sphere, hand, total=60, seed=12)
        assert len(a.archive) == len(b.archive)
        npt.assert_array_equal(a.archive.embeddings, b.archive.embeddings)
        npt.assert_array_equal(a.archive.totals(), b.archive.totals())

    def test_best_total_never_leaves_archive(self, toy_sphere, hand):
        res = self.small_run(toy_sphere, hand, total=120, seed=2)
        bests = [tp.best_total for tp in res.trace]
        assert all(b2 >= b1 for b1, b2 in zip(bests, bests[1:]))

    def test_budget_too_small(self):
        with pytest.raises(EvolutionError, match="budget-too-small"):
            RunConfig(population_size=16, total_evaluations=8)

    def test_success_set_capped_and_successful(self):
        rng = np.random.default_rng(8)
        archive = Archive()
        for i in range(300):
            archive.append(random_entry(rng, total=float(rng.uniform(0, 60)),
                                        step=i, success=bool(rng.uniform() < 0.8),
                                        lifetime=int(rng.uniform(0, 60))))
        for mode in ("top", "fps"):
            final = select_final(archive, 128, min_lifetime=20, mode=mode)
            assert len(final) <= 128
            assert all(e.success and e.fitness.lifetime >= 20 for e in final)
        qualifying = success_entries(archive, 20)
        if len(qualifying) > 128:
            assert len(select_final(archive, 128, 20)) == 128

    def test_multiworker_runs(self, toy_sphere, hand):
        res = self.small_run(toy_sphere, hand, total=40, seed=3, workers=4)
        assert res.completed == 40
