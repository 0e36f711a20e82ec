import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from georeg.camera import Intrinsics, camera_pose
from georeg.se3 import EulerAngles
from georeg.world import build_scene

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def scene():
    return build_scene(7, 4000.0, 1.0)


@pytest.fixture(scope="session")
def flat_scene():
    return build_scene(3, 4000.0, 0.0)


@pytest.fixture(scope="session")
def k():
    return Intrinsics.from_fov(128, 128, 60.0)


def random_pose(rng, altitude=200.0, pitch_deg=60.0, span=300.0):
    xy = rng.uniform(-span, span, size=2)
    return camera_pose([xy[0], xy[1], altitude], EulerAngles.from_degrees(rng.uniform(0, 360), pitch_deg, 0.0))


def random_rotation(rng, max_angle=np.pi):
    from scipy.spatial.transform import Rotation

    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return Rotation.from_rotvec(axis * rng.uniform(0, max_angle)).as_matrix()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
