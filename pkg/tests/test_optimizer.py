from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from georeg.bundle import bundle_from_view, make_bundle
from georeg.camera import camera_attitude, camera_pose
from georeg.diagnostics import basin_rates, half_width, jacobian_check
from georeg.engine import query_render
from georeg.errors import AllHypothesesInvalid, ConfigMismatch, SolveFailed
from georeg.features import build_pyramid
from georeg.metrics import pose_error
from georeg.optimizer import (
    Hypothesis,
    LinearSystem,
    RefineSchedule,
    SamplerConfig,
    accumulate_system,
    evaluate_level,
    generate_hypotheses,
    huber,
    huber_weight,
    level_system,
    lm_solve,
    refine,
    refine_batch,
    residual,
    run,
    select,
    total_costs,
)
from georeg.se3 import EulerAngles, Pose, Twist, exp, rot_z
from georeg.world import render

from conftest import random_pose

SINGLE = SamplerConfig(alpha_pitch=0.0, alpha_yaw=0.0, sigma_t=np.zeros((3, 3)))


@pytest.fixture(scope="module")
def aligned(scene, k):
    """Reference view, its bundle and a query that is the reference itself."""
    pose = random_pose(np.random.default_rng(42))
    view = render(scene, pose, k)
    return pose, bundle_from_view(view, 500, 0), build_pyramid(view)


def perturbed(pose, dt, ddeg, rng):
    d = rng.normal(size=3)
    axis = rng.normal(size=3)
    xi = np.concatenate([np.zeros(3), np.radians(ddeg) * axis / np.linalg.norm(axis)])
    return Pose(exp(Twist.from_vector(xi)).R @ pose.R, pose.t + dt * d / np.linalg.norm(d))


# --- hypotheses ---------------------------------------------------------------------


class TestHypotheses:
    def test_standard_grid_has_144(self):
        hyps = generate_hypotheses(random_pose(np.random.default_rng(0)), SamplerConfig())
        assert len(hyps) == 144

    def test_grid_spans_the_box(self):
        center = camera_pose([0.0, 0.0, 200.0], EulerAngles.from_degrees(30.0, 60.0, 0.0))
        cfg = replace(SamplerConfig(), sigma_t=np.zeros((3, 3)))
        hyps = generate_hypotheses(center, cfg)
        yaws = sorted({round(camera_attitude(h).degrees()[0], 6) for h in hyps})
        pitches = sorted({round(camera_attitude(h).degrees()[1], 6) for h in hyps})
        assert len(yaws) == 12
        assert yaws[0] == pytest.approx(30.0 - 11.0) and yaws[-1] == pytest.approx(30.0 + 11.0)
        assert len(pitches) == 12
        assert pitches[0] == pytest.approx(60.0 - 11.0) and pitches[-1] == pytest.approx(60.0 + 11.0)

    def test_degenerate_box_is_the_center(self):
        center = random_pose(np.random.default_rng(1))
        hyps = generate_hypotheses(center, SINGLE)
        assert len(hyps) == 1 and hyps[0].allclose(center, 1e-15)

    def test_isotropic_count(self):
        hyps = generate_hypotheses(random_pose(np.random.default_rng(2)), SamplerConfig(mode="isotropic"))
        assert len(hyps) == 144

    def test_step_must_tile(self):
        with pytest.raises(ConfigMismatch):
            generate_hypotheses(Pose.identity(), SamplerConfig(yaw_step=np.radians(3.0)))

    def test_translation_covariance(self):
        center = Pose.identity()
        cfg = SamplerConfig(alpha_pitch=0.0, alpha_yaw=0.0, mode="isotropic", isotropic_alpha=0.0, isotropic_count=100_000)
        offsets = np.array([h.t for h in generate_hypotheses(center, cfg)])
        cov = np.cov(offsets.T)
        assert np.abs(cov - np.eye(3)).max() < 0.05

    def test_deterministic(self):
        c = random_pose(np.random.default_rng(3))
        a, b = generate_hypotheses(c, SamplerConfig(rng_seed=9)), generate_hypotheses(c, SamplerConfig(rng_seed=9))
        assert all(np.array_equal(x.t, y.t) and np.array_equal(x.R, y.R) for x, y in zip(a, b))


# --- residuals and the robust system --------------------------------------------------


class TestResidual:
    def test_self_alignment_is_zero(self, aligned, k):
        pose, bundle, query = aligned
        for level in range(3):
            ev = evaluate_level(pose.R[None], pose.t[None], bundle, query, level, 0.5)
            assert ev.count[0] > 400  # the 1 px margin drops edge anchors at coarse levels
            assert np.abs(ev.r[0][ev.valid[0]]).max() < 1e-9
            assert ev.cost[0] < 1e-15

    def test_single_anchor_matches_batch(self, aligned, k):
        pose, bundle, query = aligned
        hyp = perturbed(pose, 0.5, 0.5, np.random.default_rng(4))
        ev = evaluate_level(hyp.R[None], hyp.t[None], bundle, query, 2, np.inf)
        for j in range(0, 500, 50):
            out = residual(bundle.anchors_world[j], bundle.ref_features[2][j], hyp, query, 2, k)
            if ev.valid[0, j]:
                r, J = out
                assert np.allclose(r, ev.r[0, j], atol=1e-15) and np.allclose(J, ev.J[0, j], atol=1e-15)
            else:
                assert out is None

    def test_flipped_pose_puts_anchor_behind(self, aligned, k):
        pose, bundle, query = aligned
        flip = Pose(pose.R @ np.diag([1.0, -1.0, -1.0]), pose.t)
        assert residual(bundle.anchors_world[0], bundle.ref_features[2][0], flip, query, 2, k) is None

    def test_jacobian_against_finite_differences(self):
        rep = jacobian_check(n_triples=200, seed=3)
        assert rep.worst < 1e-4
        assert min(rep.samples) == 200


class TestHuber:
    @given(st.floats(0, 100), st.floats(0.01, 5))
    def test_continuous_and_below_quadratic(self, s, delta):
        assert huber(s, delta) <= s + 1e-12
        assert 0 < huber_weight(s, delta) <= 1.0

    def test_regimes(self):
        assert huber(0.16, 0.5) == pytest.approx(0.16)
        assert huber(4.0, 0.5) == pytest.approx(2 * 0.5 * 2.0 - 0.25)
        assert huber_weight(4.0, 0.5) == pytest.approx(0.25)


class TestAccumulate:
    def test_empty(self):
        sys_ = accumulate_system([])
        assert np.array_equal(sys_.H, np.zeros((6, 6))) and np.array_equal(sys_.g, np.zeros(6))

    def test_single_quadratic(self):
        rng = np.random.default_rng(5)
        J = rng.normal(size=(4, 6))
        r = np.full(4, 0.1)
        sys_ = accumulate_system([(r, J, 1.0)], delta=0.5)
        assert np.allclose(sys_.H, J.T @ J, atol=1e-15, rtol=0) and np.allclose(sys_.g, J.T @ r, atol=1e-15, rtol=0)

    def test_parallel_equals_sequential(self, aligned):
        pose, bundle, query = aligned
        hyp = perturbed(pose, 2.0, 2.0, np.random.default_rng(6))
        ev = evaluate_level(hyp.R[None], hyp.t[None], bundle, query, 2, np.inf)
        items = [(ev.r[0, j], ev.J[0, j], ev.w[0, j]) for j in range(500) if ev.valid[0, j]]
        seq = accumulate_system(items, 0.5, chunks=1)
        par = accumulate_system(items, 0.5, chunks=8)
        assert np.abs(seq.H - par.H).max() < 1e-9 and np.abs(seq.g - par.g).max() < 1e-9

    def test_fused_kernel_matches_reference(self, aligned):
        pose, bundle, query = aligned
        rng = np.random.default_rng(7)
        hyps = [perturbed(pose, rng.uniform(0, 5), rng.uniform(0, 5), rng) for _ in range(16)]
        R = np.stack([h.R for h in hyps])
        t = np.stack([h.t for h in hyps])
        for level in range(3):
            a = level_system(R, t, bundle, query, level, 0.5, backend="fused")
            b = level_system(R, t, bundle, query, level, 0.5, backend="numpy")
            assert np.array_equal(a[1], b[1])
            for x, y in zip((a[0], a[2], a[3]), (b[0], b[2], b[3])):
                assert np.abs(x - y).max() <= 1e-9 * max(1.0, np.abs(y).max())

    def test_system_matches_accumulate(self, aligned):
        pose, bundle, query = aligned
        hyp = perturbed(pose, 1.0, 1.0, np.random.default_rng(8))
        ev = evaluate_level(hyp.R[None], hyp.t[None], bundle, query, 1, 0.5)
        items = [(ev.r[0, j], ev.J[0, j], ev.w[0, j]) for j in range(500) if ev.valid[0, j]]
        ref = accumulate_system(items, 0.5)
        _, _, H, g = level_system(hyp.R[None], hyp.t[None], bundle, query, 1, 0.5)
        assert np.abs(H[0] - ref.H).max() < 1e-9 and np.abs(g[0] - ref.g).max() < 1e-9


class TestLmSolve:
    def test_identity_system(self):
        g = np.zeros(6)
        g[0] = 1.0
        dxi = lm_solve(LinearSystem(np.eye(6), g), 1e-12).as_vector()
        assert np.allclose(dxi, -g, atol=1e-10)

    def test_damping_shrinks_step(self):
        rng = np.random.default_rng(9)
        A = rng.normal(size=(10, 6))
        sys_ = LinearSystem(A.T @ A, rng.normal(size=6))
        norms = [np.linalg.norm(lm_solve(sys_, lam).as_vector()) for lam in 10.0 ** np.arange(-6, 7)]
        assert all(b <= a for a, b in zip(norms, norms[1:]))
        assert norms[-1] < 1e-4

    def test_normal_equations_residual(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            A = rng.normal(size=(12, 6))
            H, g = A.T @ A, rng.normal(size=6)
            lam = 10 ** rng.uniform(-4, 2)
            dxi = lm_solve(LinearSystem(H, g), lam).as_vector()
            assert np.abs((H + lam * np.eye(6)) @ dxi + g).max() < 1e-10

    def test_singular_raises(self):
        with pytest.raises(SolveFailed):
            lm_solve(LinearSystem(-np.eye(6), np.ones(6)), 1e-6)


# --- refinement --------------------------------------------------------------------------


class TestRefine:
    def test_fixed_point(self, aligned):
        pose, bundle, query = aligned
        h = refine(pose, bundle, query)
        dt, dr = pose_error(h.pose, pose)
        assert dt < 1e-6 and np.radians(dr) < 1e-6
        assert h.photometric_cost_fine < 1e-15 and not h.flagged

    def test_converges_from_half_meter(self, scene, k):
        rng = np.random.default_rng(11)
        for trial in range(5):
            gt = random_pose(rng)
            bundle = make_bundle(scene, gt, k, 500, trial)
            query = query_render(scene, gt, k)
            h = refine(perturbed(gt, 0.5, 0.5, rng), bundle, query)
            dt, dr = pose_error(h.pose, gt)
            assert dt < 0.02 and dr < 0.02

    def test_outside_terrain_is_flagged(self, aligned):
        pose, bundle, query = aligned
        away = Pose(pose.R, pose.t + np.array([5000.0, 0.0, 0.0]))
        h = refine(away, bundle, query)
        assert h.flagged and h.photometric_cost_fine == np.inf

    def test_cost_non_increasing(self, aligned):
        pose, bundle, query = aligned
        rng = np.random.default_rng(12)
        hyps = [perturbed(pose, 3.0, 3.0, rng) for _ in range(8)]
        res = refine_batch(np.stack([h.R for h in hyps]), np.stack([h.t for h in hyps]), bundle, query, RefineSchedule(), track_costs=True)
        for history in res.level_costs:
            h = np.array(history)
            assert np.all(np.diff(h, axis=0) <= 0)

    def test_zero_iteration_levels(self, aligned):
        pose, bundle, query = aligned
        h = refine(pose, bundle, query, RefineSchedule(iterations_per_level=(0, 0, 3)))
        assert not h.flagged
        with pytest.raises(ValueError):
            RefineSchedule(iterations_per_level=(0, 0, 0))


def _hyp(pose, cost, flagged=False):
    return Hypothesis(pose, cost, cost, 500, flagged)


class TestSelect:
    def test_photometric_argmin_without_motion(self):
        rng = np.random.default_rng(13)
        hyps = [_hyp(random_pose(rng), c) for c in [3.0, 1.0, 2.0]]
        assert select(hyps, Pose.identity(), 0.0)[1] == 1

    def test_prediction_breaks_ties(self):
        pred = random_pose(np.random.default_rng(14))
        other = Pose(pred.R, pred.t + 1.0)
        _, idx = select([_hyp(other, 1.0), _hyp(pred, 1.0)], pred, 0.1)
        assert idx == 1

    def test_ties_go_to_lowest_index(self):
        p = random_pose(np.random.default_rng(15))
        assert select([_hyp(p, 1.0), _hyp(p, 1.0)], p, 0.0)[1] == 0

    def test_scale_invariance(self):
        rng = np.random.default_rng(16)
        pred = random_pose(rng)
        hyps = [_hyp(Pose(pred.R, pred.t + rng.normal(size=3)), c) for c in rng.uniform(0, 5, 20)]
        idx = select(hyps, pred, 0.3)[1]
        scaled = [_hyp(h.pose, 7.0 * h.photometric_cost_fine) for h in hyps]
        assert select(scaled, pred, 7.0 * 0.3)[1] == idx
        totals = total_costs(hyps, pred, 0.3)
        assert totals[idx] == totals.min()

    def test_all_flagged(self):
        p = Pose.identity()
        with pytest.raises(AllHypothesesInvalid):
            select([_hyp(p, np.inf, True)] * 3, p, 0.0)


class TestRun:
    def test_single_hypothesis_equals_refine(self, scene, k):
        rng = np.random.default_rng(17)
        gt = random_pose(rng)
        bundle = make_bundle(scene, gt, k, 500, 1)
        query = query_render(scene, gt, k)
        start = perturbed(gt, 1.0, 1.0, rng)
        pose, diag = run(start, bundle, query, SINGLE)
        h = refine(start, bundle, query)
        assert np.array_equal(pose.R, h.pose.R) and np.array_equal(pose.t, h.pose.t)
        assert len(diag.hypotheses) == 1 and diag.index == 0

    def test_deterministic_and_chunk_independent(self, scene, k):
        rng = np.random.default_rng(18)
        gt = random_pose(rng)
        bundle = make_bundle(scene, gt, k, 500, 2)
        query = query_render(scene, gt, k)
        center = Pose(rot_z(np.radians(6.0)) @ gt.R, gt.t + np.array([4.0, -3.0, 1.0]))
        cfg = SamplerConfig(rng_seed=5)
        a, da = run(center, bundle, query, cfg)
        b, db = run(center, bundle, query, cfg)
        c, dc = run(center, bundle, query, cfg, chunks=4)
        for p, d in ((b, db), (c, dc)):
            assert np.array_equal(a.R, p.R) and np.array_equal(a.t, p.t) and da.index == d.index
            assert np.array_equal(da.total_costs, d.total_costs)

    def test_wide_basin(self, scene, k):
        rng = np.random.default_rng(19)
        gt = random_pose(rng)
        bundle_center = Pose(rot_z(np.radians(10.0)) @ gt.R, gt.t + np.array([6.0, 8.0, 0.0]))
        bundle = make_bundle(scene, bundle_center, k, 500, 3)
        query = query_render(scene, gt, k)
        pose, _ = run(bundle_center, bundle, query, SamplerConfig(rng_seed=3))
        dt, dr = pose_error(pose, gt)
        assert dt < 0.5 and dr < 0.1


def test_basin_narrows_from_coarse_to_fine(scene, k):
    offsets = (4, 8, 12, 16, 20)
    rates = basin_rates(scene, k, "yaw", offsets, trials=4, seed=100)
    assert half_width(offsets, rates[2]) < half_width(offsets, rates[0])
