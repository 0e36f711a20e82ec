import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from georeg.camera import camera_pose
from georeg.errors import BadDimensions, OutOfBounds
from georeg.features import (
    BLUR_SIGMA,
    BLUR_TRUNCATE,
    FeatureMap,
    bilinear,
    build_pyramid_from_image,
    joint_weight,
    sample,
)
from georeg.se3 import EulerAngles
from georeg.world import render


def brute_blur_decimate(img):
    """Explicit Gaussian (edge-replicated) followed by 2x2 averaging, one pixel at a time."""
    h, w = img.shape[:2]
    r = int(BLUR_TRUNCATE * BLUR_SIGMA + 0.5)
    taps = np.exp(-0.5 * (np.arange(-r, r + 1) / BLUR_SIGMA) ** 2)
    taps /= taps.sum()
    blurred = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    acc = acc + taps[dy + r] * taps[dx + r] * img[yy, xx]
            blurred[y, x] = acc
    out = np.zeros((h // 2, w // 2) + img.shape[2:])
    for y in range(h // 2):
        for x in range(w // 2):
            out[y, x] = blurred[2 * y : 2 * y + 2, 2 * x : 2 * x + 2].mean(axis=(0, 1))
    return out


def test_level_sizes():
    pyr = build_pyramid_from_image(np.zeros((512, 512, 4)))
    assert [f.data.shape[:2] for f in pyr.features] == [(128, 128), (256, 256), (512, 512)]


def test_bad_dimensions():
    with pytest.raises(BadDimensions):
        build_pyramid_from_image(np.zeros((30, 32, 4)))


def test_constant_image_stays_constant():
    pyr = build_pyramid_from_image(np.full((64, 64, 4), 0.37))
    for f in pyr.features:
        assert np.allclose(f.data, 0.37, atol=1e-15)
    for u in pyr.uncertainties:
        assert np.all(u.values == 1.0)


def test_decimation_matches_brute_force():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, (16, 16, 2))
    pyr = build_pyramid_from_image(img)
    l1 = brute_blur_decimate(img)
    l0 = brute_blur_decimate(l1)
    assert np.abs(pyr.features[1].data - l1).max() < 1e-6
    assert np.abs(pyr.features[0].data - l0).max() < 1e-6


def test_noise_estimate_lowers_weights():
    rng = np.random.default_rng(1)
    img = 0.5 + 0.2 * rng.standard_normal((32, 32, 4))
    pyr = build_pyramid_from_image(img, estimate_noise=True)
    for u in pyr.uncertainties:
        assert np.all(u.values > 0) and np.all(u.values < 1)


class TestBilinear:
    def test_integer_point_returns_stored_value(self):
        rng = np.random.default_rng(2)
        data = rng.uniform(0, 1, (8, 9, 3))
        value, grad = sample(FeatureMap(data), (4.0, 3.0))
        assert np.array_equal(value, data[3, 4])
        # ties go to the lower cell: u in (3, 4], v in (2, 3]
        assert np.allclose(grad[:, 0], data[3, 4] - data[3, 3])
        assert np.allclose(grad[:, 1], data[3, 4] - data[2, 4])

    def test_ramp(self):
        data = np.tile(np.arange(10.0)[None, :, None], (6, 1, 1))
        rng = np.random.default_rng(3)
        for _ in range(50):
            u, v = rng.uniform(0, 9), rng.uniform(0, 5)
            value, grad = sample(FeatureMap(data), (u, v))
            assert abs(value[0] - u) < 1e-12
            assert np.allclose(grad[0], [1.0, 0.0], atol=1e-12)

    @given(
        st.floats(-3, 3),
        st.floats(-3, 3),
        st.floats(-3, 3),
        st.floats(0, 15),
        st.floats(0, 11),
    )
    def test_exact_on_affine_images(self, a, b, c, u, v):
        vv, uu = np.mgrid[0:12, 0:16].astype(float)
        data = (a * uu + b * vv + c)[..., None]
        value, grad = bilinear(data, np.array(u), np.array(v))
        assert abs(value[0] - (a * u + b * v + c)) < 1e-9
        assert np.allclose(grad[0], [a, b], atol=1e-9)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        data = rng.uniform(0, 1, (20, 20, 4))
        h = 1e-6
        for _ in range(200):
            u = rng.integers(1, 18) + rng.uniform(0.1, 0.9)
            v = rng.integers(1, 18) + rng.uniform(0.1, 0.9)
            _, grad = bilinear(data, np.array(u), np.array(v))
            du = (bilinear(data, np.array(u + h), np.array(v), False) - bilinear(data, np.array(u - h), np.array(v), False)) / (2 * h)
            dv = (bilinear(data, np.array(u), np.array(v + h), False) - bilinear(data, np.array(u), np.array(v - h), False)) / (2 * h)
            assert np.abs(grad[:, 0] - du).max() < 1e-6
            assert np.abs(grad[:, 1] - dv).max() < 1e-6

    def test_out_of_bounds(self):
        with pytest.raises(OutOfBounds):
            sample(FeatureMap(np.zeros((4, 4, 1))), (3.5, 1.0))


class TestJointWeight:
    def test_values(self):
        assert joint_weight(1.0, 1.0) == 1.0
        assert joint_weight(0.5, 0.5) == 0.25

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
    def test_monotone(self, a, b, d):
        assert joint_weight(min(a + d, 1.0), b) >= joint_weight(a, b)
        assert joint_weight(a, min(b + d, 1.0)) >= joint_weight(a, b)


def _subpixel_shift(a, b, max_shift=3):
    """Horizontal shift of b relative to a from the parabola through the correlation peak."""
    m = max_shift + 2
    core = a[m:-m, m:-m]
    core = (core - core.mean()) / core.std()
    scores = []
    for s in range(-max_shift, max_shift + 1):
        other = b[m:-m, m + s : b.shape[1] - m + s]
        scores.append(float((core * (other - other.mean()) / other.std()).mean()))
    i = int(np.argmax(scores))
    l, c, r = scores[i - 1], scores[i], scores[i + 1]
    return (i - max_shift) + 0.5 * (l - r) / (l - 2 * c + r)


def test_coarse_level_shift_equivariance(flat_scene, k):
    """A 4 px shift at full resolution is about a 1 px shift at the coarse level."""
    altitude = 150.0
    a = camera_pose([10.0, 20.0, altitude], EulerAngles.from_degrees(30.0, 90.0, 0.0))
    step = 4.0 * altitude / k.fx  # meters for 4 px at full resolution
    b = camera_pose(a.t + step * a.R[:, 0], EulerAngles.from_degrees(30.0, 90.0, 0.0))
    pa = build_pyramid_from_image(render(flat_scene, a, k).appearance)
    pb = build_pyramid_from_image(render(flat_scene, b, k).appearance)
    for ch in range(4):
        fine = _subpixel_shift(pa.features[2].data[..., ch], pb.features[2].data[..., ch], 6)
        coarse = _subpixel_shift(pa.features[0].data[..., ch], pb.features[0].data[..., ch], 3)
        assert abs(abs(fine) - 4.0) < 0.25
        assert abs(abs(coarse) - 1.0) < 0.25
