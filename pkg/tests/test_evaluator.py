"""Evaluator tests: contact selection, the closing-command least squares,
wrench feasibility, penetration energy, de-penetration, and the full
disturbance pipeline."""

import numpy as np
import numpy.testing as npt
import pytest

from evograsp.evaluator import (
    ContactSet,
    EvalConfig,
    Grasp,
    _penetration_terms,
    depenetrate,
    evaluate,
    penetration_energy,
    prepare_grasp,
    select_contacts,
    solve_closing_command,
    wrench_resist_feasible,
)
from evograsp.geometry import Primitive, SdfScene
from evograsp.hand import HandState, WristPose, forward_kinematics

from oracles import fps_oracle, svd_lstsq_oracle

IDENT = [1.0, 0.0, 0.0, 0.0]


def contact_set(points, normals, mus):
    points = np.asarray(points, dtype=float)
    normals = np.asarray(normals, dtype=float)
    n = len(points)
    return ContactSet(
        candidate_indices=np.arange(n),
        candidate_distances=np.zeros(n),
        points=points,
        normals=normals,
        links=np.zeros(n, dtype=int),
        mus=np.asarray(mus, dtype=float) * np.ones(n),
        tip_indices=np.zeros(n, dtype=int),
        surface_indices=np.arange(n),
    )


# ---------------------------------------------------------------------------
# contact selection
# ---------------------------------------------------------------------------

class TestSelectContacts:
    def test_far_hand_no_candidates(self, toy_sphere, hand, eval_cfg):
        state = HandState(WristPose([0, 0, 1.0], IDENT), np.zeros(12))
        contacts = select_contacts(toy_sphere, forward_kinematics(hand, state), eval_cfg)
        assert contacts.n_active == 0
        assert len(contacts.candidate_indices) == 0

    def test_active_is_all_when_few_candidates(self, hand, eval_cfg, stable_sphere_grasp):
        # sparse surface: fewer than contact_count candidates in range
        scene = SdfScene(
            [Primitive("sphere", [0, 0, 0], IDENT, {"radius": 0.05}, 0.8)],
            surface_density=900.0)
        state = HandState(stable_sphere_grasp.wrist, stable_sphere_grasp.q)
        contacts = select_contacts(scene, forward_kinematics(hand, state), eval_cfg)
        assert 0 < contacts.n_active < eval_cfg.contact_count
        assert contacts.n_active == len(contacts.candidate_indices)

    def test_active_matches_fps_oracle(self, toy_sphere, hand, eval_cfg,
                                       stable_sphere_grasp):
        state = HandState(stable_sphere_grasp.wrist, stable_sphere_grasp.q)
        fk = forward_kinematics(hand, state)
        contacts = select_contacts(toy_sphere, fk, eval_cfg)
        assert contacts.n_active == eval_cfg.contact_count
        cand = toy_sphere.surface_points[contacts.candidate_indices]
        seed = int(np.argmin(np.linalg.norm(cand - fk.palm_center, axis=1)))
        expected = contacts.candidate_indices[
            fps_oracle(cand, eval_cfg.contact_count, seed)]
        npt.assert_array_equal(contacts.surface_indices, expected)

    def test_normals_and_links(self, toy_sphere, hand, eval_cfg, stable_sphere_grasp):
        state = HandState(stable_sphere_grasp.wrist, stable_sphere_grasp.q)
        fk = forward_kinematics(hand, state)
        contacts = select_contacts(toy_sphere, fk, eval_cfg)
        # normals point radially outward on a centered sphere
        radial = contacts.points / np.linalg.norm(contacts.points, axis=1, keepdims=True)
        npt.assert_allclose(contacts.normals, radial, atol=1e-4)
        # owning links are fingertip (distal) links
        tip_links = set(fk.fingertip_links.tolist())
        assert set(contacts.links.tolist()) <= tip_links


# ---------------------------------------------------------------------------
# closing command
# ---------------------------------------------------------------------------

class TestSolveClosingCommand:
    def test_identity_system(self):
        target = np.array([0.3, -0.2, 0.5])
        npt.assert_allclose(solve_closing_command(np.eye(3), target), target, atol=1e-12)

    def test_zero_matrix_gives_zero(self):
        cmd = solve_closing_command(np.zeros((6, 12)), np.ones(6))
        npt.assert_array_equal(cmd, np.zeros(12))

    def test_matches_pseudo_inverse_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            jac = rng.normal(size=(9, 12))
            target = rng.normal(size=9)
            got = solve_closing_command(jac, target)
            want = svd_lstsq_oracle(jac, target)
            assert abs(np.linalg.norm(jac @ got - target)
                       - np.linalg.norm(jac @ want - target)) < 1e-8

    def test_minimum_norm_when_rank_deficient(self):
        rng = np.random.default_rng(1)
        base = rng.normal(size=(3, 12))
        jac = np.vstack([base, base, base])  # rank 3 of 9 rows
        target = rng.normal(size=9)
        got = solve_closing_command(jac, target)
        oracle = svd_lstsq_oracle(jac, target)
        npt.assert_allclose(np.linalg.norm(got), np.linalg.norm(oracle), atol=1e-9)
        # adding any null-space component must not shrink the norm
        _, _, vt = np.linalg.svd(jac)
        null = vt[3:]
        for vec in null[:3]:
            assert np.linalg.norm(got + 0.1 * vec) > np.linalg.norm(got) - 1e-12

    def test_norm_cap(self):
        cmd = solve_closing_command(np.eye(3), np.array([10.0, 0, 0]), max_norm=1.0)
        npt.assert_allclose(np.linalg.norm(cmd), 1.0, atol=1e-12)
        npt.assert_allclose(cmd / np.linalg.norm(cmd), [1, 0, 0], atol=1e-12)


# ---------------------------------------------------------------------------
# wrench feasibility
# ---------------------------------------------------------------------------

class TestWrenchResistFeasible:
    def test_antipodal_pull_feasible(self):
        cs = contact_set([[0.05, 0, 0], [-0.05, 0, 0]],
                         [[1, 0, 0], [-1, 0, 0]], 0.8)
        wrench = np.array([5.0, 0, 0, 0, 0, 0])
        assert wrench_resist_feasible(cs, 0.8, wrench, com=np.zeros(3))

    def test_frictionless_tangent_infeasible(self):
        cs = contact_set([[0.05, 0, 0]], [[1, 0, 0]], 0.0)
        wrench = np.array([0, 5.0, 0, 0, 0, 0])
        assert not wrench_resist_feasible(cs, 0.0, wrench, com=np.zeros(3))

    def test_three_symmetric_contacts_all_axes(self):
        ang = np.array([0, 2 * np.pi / 3, 4 * np.pi / 3])
        pts = 0.05 * np.column_stack([np.cos(ang), np.sin(ang), np.zeros(3)])
        nrm = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        cs = contact_set(pts, nrm, 0.8)
        for direction in np.vstack([np.eye(3), -np.eye(3)]):
            wrench = np.concatenate([5.0 * direction, np.zeros(3)])
            assert wrench_resist_feasible(cs, 0.8, wrench, com=np.zeros(3))

    def test_force_cap_limits_resistance(self):
        cs = contact_set([[0.05, 0, 0], [-0.05, 0, 0]],
                         [[1, 0, 0], [-1, 0, 0]], 0.8)
        big = np.array([10.5, 0, 0, 0, 0, 0])  # just beyond the 10 N cap
        assert not wrench_resist_feasible(cs, 0.8, big, com=np.zeros(3))

    def test_empty_contacts(self):
        cs = ContactSet.empty()
        assert not wrench_resist_feasible(cs, 0.8, np.array([1.0, 0, 0, 0, 0, 0]))
        assert wrench_resist_feasible(cs, 0.8, np.zeros(6))


# ---------------------------------------------------------------------------
# penetration energy
# ---------------------------------------------------------------------------

def surface_side_energy(scene, centers, radii, offset):
    """Direct evaluation of the scene-points-versus-hand-spheres term."""
    total = 0.0
    for p in scene.surface_points:
        sep = np.min(np.linalg.norm(p - centers, axis=1) - radii)
        total += max(0.0, offset - sep)
    return total


class TestPenetrationEnergy:
    def test_separated_is_zero(self, toy_sphere):
        centers = np.array([[0.0, 0.0, 0.2]])
        assert penetration_energy(centers, np.array([0.01]), toy_sphere, 0.003) == 0.0

    def test_single_sample_depth(self, toy_sphere):
        # hand sphere of radius 0.01 placed so its separation is exactly -0.010
        centers = np.array([[0.05 + 0.01 - 0.010, 0.0, 0.0]])
        radii = np.array([0.01])
        got = penetration_energy(centers, radii, toy_sphere, 0.003)
        expected = 0.013 + surface_side_energy(toy_sphere, centers, radii, 0.003)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got >= 0.013

    def test_sample_exactly_on_surface(self, toy_sphere):
        centers = np.array([[0.05 + 0.01, 0.0, 0.0]])
        radii = np.array([0.01])
        got = penetration_energy(centers, radii, toy_sphere, 0.003)
        expected = 0.003 + surface_side_energy(toy_sphere, centers, radii, 0.003)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_max_depth_reported(self, toy_sphere):
        centers = np.array([[0.03, 0.0, 0.0]])  # 2 cm inside, plus the radius
        energy, depth = _penetration_terms(centers, np.array([0.01]), toy_sphere, 0.003)
        assert depth == pytest.approx(0.03, abs=1e-9)
        assert energy > 0


class TestDepenetrate:
    def test_clean_grasp_unchanged(self, toy_sphere, hand):
        grasp = Grasp(WristPose([0, 0, 0.5], IDENT), np.zeros(12))
        out = depenetrate(grasp, toy_sphere, hand)
        assert out is grasp

    def test_penetration_decreases(self, toy_sphere, hand):
        grasp = Grasp(WristPose([0.0, 0.0, 0.045], IDENT), np.full(12, 0.6))
        state = HandState(grasp.wrist, grasp.q)
        fk = forward_kinematics(hand, state)
        before = penetration_energy(fk.sphere_centers, fk.sphere_radii, toy_sphere, 0.003)
        assert before > 0
        out = depenetrate(grasp, toy_sphere, hand)
        fk2 = forward_kinematics(hand, HandState(out.wrist, out.q))
        after = penetration_energy(fk2.sphere_centers, fk2.sphere_radii, toy_sphere, 0.003)
        assert after < before

    def test_matches_naive_reimplementation(self, toy_sphere, hand):
        # test-side oracle: the same descent written out naively, checking
        # step direction, per-block gradient clipping, and joint clamping
        from evograsp.evaluator import _grasp_penetration

        def naive(grasp):
            pos = grasp.wrist.position.copy()
            eul = grasp.wrist.euler.copy()
            q = np.clip(grasp.q, hand.joint_limits[:, 0], hand.joint_limits[:, 1])
            for _ in range(2):
                base = _grasp_penetration(toy_sphere, hand, pos, eul, q, 0.003)
                if base == 0.0:
                    break
                vec = np.concatenate([pos, eul, q])
                grad = np.zeros(18)
                for i in range(18):
                    bumped = vec.copy()
                    bumped[i] += 1e-4
                    grad[i] = (_grasp_penetration(toy_sphere, hand, bumped[:3],
                                                  bumped[3:6], bumped[6:], 0.003)
                               - base) / 1e-4
                grad[:3] = np.clip(grad[:3], -0.1, 0.1)
                grad[3:6] = np.clip(grad[3:6], -0.05, 0.05)
                grad[6:] = np.clip(grad[6:], -0.5, 0.5)
                pos = pos - 0.15 * grad[:3]
                eul = eul - 0.15 * grad[3:6]
                q = np.clip(q - 0.15 * grad[6:],
                            hand.joint_limits[:, 0], hand.joint_limits[:, 1])
            return pos, eul, q

        for start in (Grasp(WristPose([0.0, 0.0, 0.045], IDENT), np.full(12, 0.6)),
                      Grasp(WristPose([0.01, -0.02, 0.03], IDENT), np.full(12, 0.4))):
            out = depenetrate(start, toy_sphere, hand)
            pos, eul, q = naive(start)
            npt.assert_allclose(out.wrist.position, pos, atol=1e-12)
            npt.assert_allclose(out.wrist.euler, eul, atol=1e-9)
            npt.assert_allclose(out.q, q, atol=1e-12)

    def test_step_clipping_bounds(self, toy_sphere, hand):
        # deep penetration: gradients far exceed the clip bounds, so each
        # translation component moves at most step_size * clip per step
        grasp = Grasp(WristPose([0.0, 0.0, 0.045], IDENT), np.full(12, 0.6))
        out = depenetrate(grasp, toy_sphere, hand)
        delta = np.abs(out.wrist.position - grasp.wrist.position)
        assert np.all(delta <= 2 * 0.15 * 0.1 + 1e-9)
        assert delta.max() > 0

    def test_joints_stay_in_limits(self, toy_sphere, hand):
        grasp = Grasp(WristPose([0.0, 0.0, 0.05], IDENT),
                      hand.joint_limits[:, 1].copy())
        out = depenetrate(grasp, toy_sphere, hand)
        limits = hand.joint_limits
        assert np.all(out.q >= limits[:, 0]) and np.all(out.q <= limits[:, 1])


# ---------------------------------------------------------------------------
# full evaluation
# ---------------------------------------------------------------------------

class TestEvaluate:
    def test_free_space(self, toy_sphere, hand, eval_cfg):
        grasp = Grasp(WristPose([0, 0, 1.0], IDENT), np.zeros(12), np.zeros(12))
        res = evaluate(toy_sphere, hand, grasp, eval_cfg)
        assert res.fitness.lifetime == 0
        assert res.fitness.contact_distance > 0
        assert res.fitness.penetration == 0
        assert not res.success

    def test_stable_wrap_full_lifetime(self, toy_sphere, hand, eval_cfg,
                                       stable_sphere_grasp):
        res = evaluate(toy_sphere, hand, stable_sphere_grasp, eval_cfg)
        assert res.fitness.lifetime == 6 * eval_cfg.steps_per_direction
        assert res.success

    def test_deep_penetration_terminates(self, toy_sphere, hand, eval_cfg):
        grasp = Grasp(WristPose([0, 0, 0.03], IDENT), np.zeros(12), np.zeros(12))
        res = evaluate(toy_sphere, hand, grasp, eval_cfg)
        assert res.max_penetration > eval_cfg.penetration_stop
        assert res.fitness.lifetime == 0
        assert res.fitness.penetration > eval_cfg.penetration_stop

    def test_deterministic(self, toy_sphere, hand, eval_cfg, stable_sphere_grasp):
        a = evaluate(toy_sphere, hand, stable_sphere_grasp, eval_cfg)
        b = evaluate(toy_sphere, hand, stable_sphere_grasp, eval_cfg)
        assert a.fitness == b.fitness
        assert a.success == b.success

    def test_total_identity(self, toy_sphere, hand, stable_sphere_grasp):
        cfg = EvalConfig(lifetime_weight=2.0, distance_weight=3.0,
                         penetration_weight=50.0)
        res = evaluate(toy_sphere, hand, stable_sphere_grasp, cfg)
        fit = res.fitness
        assert fit.total == (2.0 * fit.lifetime - 3.0 * fit.contact_distance
                             - 50.0 * fit.penetration + 0.0)

    def test_lifetime_monotone_in_force(self, toy_sphere, hand, stable_sphere_grasp):
        lifetimes = []
        for force in (1.0, 5.0, 20.0, 45.0, 200.0):
            cfg = EvalConfig(disturbance_force=force)
            lifetimes.append(
                evaluate(toy_sphere, hand, stable_sphere_grasp, cfg).fitness.lifetime)
        assert lifetimes == sorted(lifetimes, reverse=True)
        assert lifetimes[-1] == 0  # far beyond the summed force caps

    def test_weight_scaling_preserves_argmax(self, toy_sphere, hand,
                                             stable_sphere_grasp):
        rng = np.random.default_rng(4)
        grasps = [stable_sphere_grasp]
        for _ in range(5):
            pos = stable_sphere_grasp.wrist.position + rng.normal(0, 0.02, 3)
            q = np.clip(stable_sphere_grasp.q + rng.normal(0, 0.2, 12),
                        hand.joint_limits[:, 0], hand.joint_limits[:, 1])
            grasps.append(Grasp(WristPose(pos, IDENT), q, np.zeros(12)))

        def totals(scale):
            cfg = EvalConfig(lifetime_weight=1.0 * scale, distance_weight=1.0 * scale,
                             penetration_weight=100.0 * scale)
            return [evaluate(toy_sphere, hand, g, cfg).fitness.total for g in grasps]

        assert int(np.argmax(totals(1.0))) == int(np.argmax(totals(7.5)))

    def test_handle_category_single_direction(self, hand):
        scene = SdfScene(
            [Primitive("capsule", [0, 0, 0],
                       [0.7071067811865476, 0.0, 0.7071067811865476, 0.0],
                       {"radius": 0.011, "height": 0.11}, 0.8)],
            name="bar", category="handle", surface_density=20000.0)
        cfg = EvalConfig(category="handle")
        grasp = Grasp(WristPose([0, 0, 0.065], IDENT), np.full(12, 0.9), np.zeros(12))
        res = evaluate(scene, hand, grasp, cfg)
        assert len(res.directions_survived) == 1
        assert res.fitness.lifetime <= cfg.steps_per_direction
        assert res.success == bool(res.directions_survived[0])

    def test_reward_term(self, toy_sphere, hand, stable_sphere_grasp):
        cfg = EvalConfig(reward_weight=10.0)
        res = evaluate(toy_sphere, hand, stable_sphere_grasp, cfg,
                       reward_fn=lambda g: -1.5)
        assert res.fitness.reward == -1.5
        base = evaluate(toy_sphere, hand, stable_sphere_grasp, EvalConfig())
        assert res.fitness.total == pytest.approx(base.fitness.total - 15.0)

    def test_reward_skipped_when_weight_zero(self, toy_sphere, hand,
                                             stable_sphere_grasp):
        calls = []

        def spy(grasp):
            calls.append(grasp)
            return 1.0

        res = evaluate(toy_sphere, hand, stable_sphere_grasp, EvalConfig(), reward_fn=spy)
        assert res.fitness.reward == 0.0
        assert not calls


class TestPrepareGrasp:
    def test_attaches_capped_command(self, toy_sphere, hand, eval_cfg,
                                     stable_sphere_grasp):
        raw = Grasp(stable_sphere_grasp.wrist, stable_sphere_grasp.q - 0.15)
        prepared = prepare_grasp(toy_sphere, hand, raw, eval_cfg)
        assert prepared.closing_cmd is not None
        assert np.linalg.norm(prepared.closing_cmd) <= eval_cfg.closing_cmd_cap + 1e-9
        assert np.linalg.norm(prepared.closing_cmd) > 0

    def test_no_contacts_zero_command(self, toy_sphere, hand, eval_cfg):
        raw = Grasp(WristPose([0, 0, 1.0], IDENT), np.zeros(12))
        prepared = prepare_grasp(toy_sphere, hand, raw, eval_cfg)
        npt.assert_array_equal(prepared.closing_cmd, np.zeros(12))
