import numpy as np
import pytest
import sympy as sp

from georeg.bundle import make_bundle
from georeg.camera import (
    Intrinsics,
    PixelPoint,
    back_project,
    level_intrinsics,
    pose_point_jacobian,
    project,
    projection_jacobian,
    to_level_pixel,
)
from georeg.errors import BadDimensions, BehindCamera, NoIntersection, NonPositiveDepth
from georeg.se3 import Pose, Twist, exp
from georeg.world import pixel_ray, raycast

from conftest import random_pose, random_rotation

K512 = Intrinsics(100.0, 100.0, 256.0, 256.0, 512, 512)


def test_optical_axis_projects_to_principal_point():
    assert project(K512, [0.0, 0.0, 10.0]) == PixelPoint(256.0, 256.0)


def test_unit_similar_triangle():
    u, v = project(K512, [1.0, 0.0, 1.0])
    assert (u, v) == (356.0, 256.0)


def test_behind_camera():
    with pytest.raises(BehindCamera):
        project(K512, [0.0, 0.0, -1.0])
    with pytest.raises(BehindCamera):
        projection_jacobian(K512, [0.0, 0.0, 0.0])


def test_back_project_principal_point():
    assert np.array_equal(back_project(K512, PixelPoint(256.0, 256.0), 5.0), [0.0, 0.0, 5.0])


def test_back_project_rejects_nonpositive_depth():
    with pytest.raises(NonPositiveDepth):
        back_project(K512, PixelPoint(1.0, 1.0), 0.0)


def test_round_trip(k):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(2000):
        p = PixelPoint(rng.uniform(0, k.width - 1), rng.uniform(0, k.height - 1))
        d = 10 ** rng.uniform(-1, 4)
        q = project(k, back_project(k, p, d))
        worst = max(worst, np.hypot(q.u - p.u, q.v - p.v))
    assert worst < 1e-9


def test_level_intrinsics():
    assert level_intrinsics(K512, 2) == K512
    k0 = level_intrinsics(K512, 0)
    assert (k0.width, k0.height) == (128, 128)
    assert k0.fx == 25.0 and k0.cx == (256.0 + 0.5) / 4 - 0.5


def test_level_intrinsics_bad_dimensions():
    with pytest.raises(BadDimensions):
        level_intrinsics(Intrinsics(50.0, 50.0, 30.0, 30.0, 62, 62), 0)


def test_level_projection_consistency():
    rng = np.random.default_rng(1)
    for _ in range(100):
        P = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(1, 50)])
        full = project(K512, P)
        for level in (0, 1):
            coarse = project(level_intrinsics(K512, level), P)
            assert abs(coarse.u - to_level_pixel(full.u, level)) < 1e-9
            assert abs(coarse.v - to_level_pixel(full.v, level)) < 1e-9


class TestProjectionJacobian:
    def test_finite_differences(self):
        rng = np.random.default_rng(2)
        h = 1e-4
        worst = 0.0
        for _ in range(100):
            P = np.array([rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(2, 100)])
            J = projection_jacobian(K512, P)
            fd = np.empty((2, 3))
            for i in range(3):
                e = np.zeros(3)
                e[i] = h
                fd[:, i] = (np.array(project(K512, P + e)) - np.array(project(K512, P - e))) / (2 * h)
            worst = max(worst, np.linalg.norm(fd - J) / np.linalg.norm(J))
        assert worst < 1e-5

    def test_optical_axis_has_no_cross_terms(self):
        J = projection_jacobian(K512, [0.0, 0.0, 7.0])
        assert J[0, 1] == J[0, 2] == J[1, 0] == J[1, 2] == 0.0

    def test_doubling_depth_halves_focal_entry(self):
        a = projection_jacobian(K512, [1.0, 2.0, 5.0])
        b = projection_jacobian(K512, [1.0, 2.0, 10.0])
        assert b[0, 0] == a[0, 0] / 2 and b[1, 1] == a[1, 1] / 2


class TestPoseJacobian:
    @staticmethod
    def cam_point(p, Pw):
        return p.R.T @ (Pw - p.t)

    def test_finite_differences(self):
        rng = np.random.default_rng(3)
        eps = 1e-6
        worst = 0.0
        for _ in range(100):
            p = Pose(random_rotation(rng), rng.uniform(-100, 100, 3))
            Pw = rng.uniform(-100, 100, 3)
            J = pose_point_jacobian(p, Pw)
            fd = np.empty((3, 6))
            for i in range(6):
                e = np.zeros(6)
                e[i] = eps
                plus = exp(Twist.from_vector(e)) @ p
                minus = exp(Twist.from_vector(-e)) @ p
                fd[:, i] = (self.cam_point(plus, Pw) - self.cam_point(minus, Pw)) / (2 * eps)
            worst = max(worst, np.linalg.norm(fd - J) / np.linalg.norm(J))
        assert worst < 1e-5

    def test_translation_block_is_minus_rt(self):
        rng = np.random.default_rng(4)
        p = Pose(random_rotation(rng), rng.standard_normal(3))
        J = pose_point_jacobian(p, rng.standard_normal(3))
        assert np.array_equal(J[:, :3], -p.R.T)

    def test_rotation_block_symbolic(self):
        # camera point of the perturbed identity pose: exp(-dxi) P, to first order (I - [phi]x) P - rho
        rho = sp.symbols("r0:3")
        phi = sp.symbols("p0:3")
        P = sp.Matrix([1, 0, 0])
        Phi = sp.Matrix([[0, -phi[2], phi[1]], [phi[2], 0, -phi[0]], [-phi[1], phi[0], 0]])
        expr = (sp.eye(3) - Phi) * P - sp.Matrix(rho)
        sym = expr.jacobian(list(rho) + list(phi)).subs({s: 0 for s in rho + phi})
        J = pose_point_jacobian(Pose.identity(), [1.0, 0.0, 0.0])
        assert np.array_equal(J, np.array(sym, dtype=float))


def test_anchors_reproject_through_second_view(scene, k):
    """Anchors from view A seen by view B: the ray from B hits the same point and maps back to A's pixel."""
    rng = np.random.default_rng(5)
    a = random_pose(rng)
    b = Pose(exp(Twist.from_vector([0, 0, 0, 0, 0, 0.05])).R @ a.R, a.t + np.array([5.0, -3.0, 2.0]))
    bundle = make_bundle(scene, a, k, 200, 0)
    checked = 0
    for X, px in zip(bundle.anchors_world, bundle.anchor_pixels):
        Pb = b.R.T @ (X - b.t)
        if Pb[2] <= 0:
            continue
        q = project(k, Pb)
        if not k.in_bounds(q.u, q.v):
            continue
        try:
            hit = raycast(scene, b.t, pixel_ray(b, k, q))
        except NoIntersection:
            continue
        if np.linalg.norm(hit - X) > 1e-2:  # occluded from B
            continue
        back = project(k, a.R.T @ (hit - a.t))
        assert np.hypot(back.u - px[0], back.v - px[1]) < 0.5
        checked += 1
    assert checked > 100
