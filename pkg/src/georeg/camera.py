"""Pinhole camera model, pyramid intrinsics and the analytic Jacobian blocks.

Pixel convention: integer coordinates name pixel *centres*; the image spans
``[-0.5, width - 0.5]``.  Camera frame is x right, y down, z forward.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import BadDimensions, BehindCamera, NonPositiveDepth
from .se3 import EulerAngles, Pose, hat_batch

Z_MIN = 1e-6
LEVEL_SCALES = (0.25, 0.5, 1.0)

# Columns are the camera axes expressed in the body frame (x fwd, y left, z up).
BODY_FROM_CAMERA = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)


class PixelPoint(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> Intrinsics:
        f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def as_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    def in_bounds(self, u, v, margin: float = 0.0):
        return (u >= margin) & (u <= self.width - 1 - margin) & (v >= margin) & (v <= self.height - 1 - margin)


def camera_pose(position, attitude: EulerAngles) -> Pose:
    """World-from-camera pose for a camera looking along the body's forward axis."""
    return Pose(attitude.matrix() @ BODY_FROM_CAMERA, position)


def camera_attitude(pose: Pose) -> EulerAngles:
    return EulerAngles.from_matrix(pose.R @ BODY_FROM_CAMERA.T)


def project(k: Intrinsics, point_cam) -> PixelPoint:
    x, y, z = np.asarray(point_cam, dtype=float)
    if z <= Z_MIN:
        raise BehindCamera(f"z = {z:g} <= {Z_MIN:g}")
    return PixelPoint(k.fx * x / z + k.cx, k.fy * y / z + k.cy)


def project_points(k: Intrinsics, points_cam):
    """Vectorised projection; returns ``(u, v, in_front)``.

    Points with ``z <= Z_MIN`` get ``in_front = False`` and finite garbage
    coordinates instead of raising.
    """
    P = np.asarray(points_cam, dtype=float)
    z = P[..., 2]
    in_front = z > Z_MIN
    zs = np.where(in_front, z, 1.0)
    return k.fx * P[..., 0] / zs + k.cx, k.fy * P[..., 1] / zs + k.cy, in_front


def back_project(k: Intrinsics, p: PixelPoint, depth: float) -> np.ndarray:
    if not depth > 0:
        raise NonPositiveDepth(f"depth = {depth!r}")
    u, v = p
    return depth * np.array([(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0])


def back_project_pixels(k: Intrinsics, u, v, depth) -> np.ndarray:
    u, v, depth = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (u, v, depth)))
    return np.stack([depth * (u - k.cx) / k.fx, depth * (v - k.cy) / k.fy, depth], axis=-1)


def pixel_rays(k: Intrinsics) -> np.ndarray:
    """``K^-1 (u, v, 1)`` for every pixel centre, shape ``(height, width, 3)``."""
    v, u = np.mgrid[0 : k.height, 0 : k.width].astype(float)
    return back_project_pixels(k, u, v, 1.0)


def level_scale(level: int) -> float:
    return LEVEL_SCALES[level]


def to_level_pixel(coord, level: int):
    """Map a full-resolution pixel coordinate to pyramid ``level`` (half-pixel aware)."""
    s = LEVEL_SCALES[level]
    return (np.asarray(coord, dtype=float) + 0.5) * s - 0.5


def level_intrinsics(k: Intrinsics, level: int) -> Intrinsics:
    if level not in (0, 1, 2):
        raise ValueError(f"level must be 0, 1 or 2, got {level}")
    if k.width % 4 or k.height % 4:
        raise BadDimensions(f"{k.width}x{k.height} is not divisible by 4")
    s = LEVEL_SCALES[level]
    return replace(
        k,
        fx=k.fx * s,
        fy=k.fy * s,
        cx=(k.cx + 0.5) * s - 0.5,
        cy=(k.cy + 0.5) * s - 0.5,
        width=int(k.width * s),
        height=int(k.height * s),
    )


def projection_jacobian(k: Intrinsics, point_cam) -> np.ndarray:
    """d(u, v)/d(point_cam) as a 2x3 matrix."""
    x, y, z = np.asarray(point_cam, dtype=float)
    if z <= Z_MIN:
        raise BehindCamera(f"z = {z:g} <= {Z_MIN:g}")
    return np.array(
        [
            [k.fx / z, 0.0, -k.fx * x / (z * z)],
            [0.0, k.fy / z, -k.fy * y / (z * z)],
        ]
    )


def projection_jacobian_batch(k: Intrinsics, points_cam) -> np.ndarray:
    P = np.asarray(points_cam, dtype=float)
    x, y, z = P[..., 0], P[..., 1], P[..., 2]
    inv_z = 1.0 / np.where(z > Z_MIN, z, 1.0)
    J = np.zeros(P.shape[:-1] + (2, 3))
    J[..., 0, 0] = k.fx * inv_z
    J[..., 0, 2] = -k.fx * x * inv_z * inv_z
    J[..., 1, 1] = k.fy * inv_z
    J[..., 1, 2] = -k.fy * y * inv_z * inv_z
    return J


def pose_point_jacobian(p: Pose, world_point) -> np.ndarray:
    """d(camera-frame point)/d(dxi) for the world-frame left update ``exp(dxi) @ p``.

    The camera point is ``p^-1 P_w``; perturbing gives
    ``R^T (exp(-dxi) P_w - t)``, whose derivative at zero is
    ``[-R^T | R^T [P_w]x]``.
    """
    return pose_point_jacobian_batch(p.R, world_point)


def pose_point_jacobian_batch(R, world_points) -> np.ndarray:
    """Same as :func:`pose_point_jacobian` for stacked rotations and points.

    ``R`` is ``(..., 3, 3)`` world-from-camera, ``world_points`` broadcasts
    against it as ``(..., 3)``.
    """
    R = np.asarray(R, dtype=float)
    Pw = np.asarray(world_points, dtype=float)
    Rt = np.swapaxes(R, -1, -2)
    shape = np.broadcast_shapes(Rt.shape[:-2], Pw.shape[:-1])
    J = np.empty(shape + (3, 6))
    J[..., :3] = -np.broadcast_to(Rt, shape + (3, 3))
    J[..., 3:] = Rt @ hat_batch(Pw)
    return J
