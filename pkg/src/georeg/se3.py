"""Rigid-body poses on SE(3).

A :class:`Pose` maps points from its local frame into the parent frame
(``x_parent = R @ x_local + t``).  Camera poses are stored world-from-camera.

Twists are ordered ``(rho, phi)``: translational part first, rotational part
second.  Pose updates are left-multiplicative in the world frame,
``T <- exp(dxi) @ T``.

Attitude convention
-------------------
Euler angles are intrinsic yaw-pitch-roll (z, then y, then x) of a body frame
whose axes are x forward, y left, z up, in a z-up world:

    R_world_body = Rz(yaw) @ Ry(pitch) @ Rx(roll)

With this right-handed convention a positive pitch tilts the nose *down*, so
pitch reads as the depression angle of the forward axis (90 deg is nadir).
The camera mount on top of the body frame lives in :mod:`georeg.camera`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import AngleNearPi

SMALL_ANGLE = 1e-8
SERIES_ANGLE = 1e-1
LOG_PI_MARGIN = 1e-6


def hat(v):
    v = np.asarray(v, dtype=float)
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def hat_batch(v):
    """Skew matrices for an ``(..., 3)`` array of vectors."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]], dtype=float)


@dataclass(frozen=True, eq=False)
class Twist:
    rho: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float).reshape(3))
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float).reshape(3))

    @classmethod
    def zero(cls) -> Twist:
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, xi) -> Twist:
        xi = np.asarray(xi, dtype=float).reshape(6)
        return cls(xi[:3], xi[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.rho, self.phi])

    def scaled(self, s: float) -> Twist:
        return Twist(self.rho * s, self.phi * s)


@dataclass(frozen=True, eq=False)
class Pose:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_quaternion(cls, position, wxyz) -> Pose:
        w, x, y, z = np.asarray(wxyz, dtype=float)
        return cls(Rotation.from_quat([x, y, z, w]).as_matrix(), position)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    def quaternion(self) -> np.ndarray:
        """Unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
        x, y, z, w = Rotation.from_matrix(self.R).as_quat()
        q = np.array([w, x, y, z])
        return -q if q[0] < 0 else q

    def inverse(self) -> Pose:
        return Pose(self.R.T, -self.R.T @ self.t)

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def apply(self, points) -> np.ndarray:
        return apply(self, points)

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.R, other.R, atol=atol) and np.allclose(self.t, other.t, atol=atol))


def _series_terms(t2):
    # Taylor series of the coefficients below; truncation error < 1e-16 for theta < SERIES_ANGLE
    a = 1.0 - t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0)))
    b = 0.5 - t2 / 24.0 * (1.0 - t2 / 30.0 * (1.0 - t2 / 56.0 * (1.0 - t2 / 90.0)))
    c = 1.0 / 6.0 - t2 / 120.0 * (1.0 - t2 / 42.0 * (1.0 - t2 / 72.0 * (1.0 - t2 / 110.0)))
    return a, b, c


def _so3_exp_terms(theta):
    """Coefficients (A, B, C) with R = I + A*Phi + B*Phi^2, V = I + B*Phi + C*Phi^2."""
    if theta < SERIES_ANGLE:
        return _series_terms(theta * theta)
    s, c = np.sin(theta), np.cos(theta)
    return s / theta, (1.0 - c) / theta**2, (theta - s) / theta**3


def exp(xi: Twist) -> Pose:
    phi = xi.phi
    theta = float(np.linalg.norm(phi))
    a, b, c = _so3_exp_terms(theta)
    Phi = hat(phi)
    Phi2 = Phi @ Phi
    R = np.eye(3) + a * Phi + b * Phi2
    V = np.eye(3) + b * Phi + c * Phi2
    return Pose(R, V @ xi.rho)


def exp_batch(xi):
    """Vectorised exp for an ``(M, 6)`` array; returns ``(R (M,3,3), t (M,3))``."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[:, :3], xi[:, 3:]
    theta = np.linalg.norm(phi, axis=1)
    small = theta < SERIES_ANGLE
    safe = np.where(small, 1.0, theta)
    sa, sb, sc = _series_terms(theta * theta)
    a = np.where(small, sa, np.sin(safe) / safe)
    b = np.where(small, sb, (1.0 - np.cos(safe)) / safe**2)
    c = np.where(small, sc, (safe - np.sin(safe)) / safe**3)
    Phi = hat_batch(phi)
    Phi2 = Phi @ Phi
    eye = np.eye(3)[None]
    R = eye + a[:, None, None] * Phi + b[:, None, None] * Phi2
    V = eye + b[:, None, None] * Phi + c[:, None, None] * Phi2
    return R, np.einsum("mij,mj->mi", V, rho)


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    w = 0.5 * vee(R - R.T)
    s = float(np.linalg.norm(w))
    c = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(s, c)
    if theta >= np.pi - LOG_PI_MARGIN:
        raise AngleNearPi(f"rotation angle {theta:.9f} rad too close to pi")
    if theta < SMALL_ANGLE:
        return w * (1.0 + theta * theta / 6.0)
    return w * (theta / s)


def log(p: Pose) -> Twist:
    phi = so3_log(p.R)
    theta = float(np.linalg.norm(phi))
    Phi = hat(phi)
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        coef = 1.0 / 12.0 + t2 * (1.0 / 720.0 + t2 * (1.0 / 30240.0 + t2 * (1.0 / 1209600.0 + t2 / 47900160.0)))
    else:
        coef = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / theta**2
    V_inv = np.eye(3) - 0.5 * Phi + coef * (Phi @ Phi)
    return Twist(V_inv @ p.t, phi)


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.R @ b.R, a.R @ b.t + a.t)


def inverse(p: Pose) -> Pose:
    return p.inverse()


def apply(p: Pose, points) -> np.ndarray:
    """``R @ x + t`` for a single point or an ``(..., 3)`` array of points."""
    points = np.asarray(points, dtype=float)
    return points @ p.R.T + p.t


def geodesic_distance_sq(a: Pose, b: Pose) -> float:
    """Squared norm of ``log(a^-1 b)``; radians and meters are summed unweighted."""
    xi = log(compose(a.inverse(), b)).as_vector()
    return float(xi @ xi)


def rotation_angle(R) -> float:
    R = np.asarray(R, dtype=float)
    s = 0.5 * np.linalg.norm(vee(R - R.T))
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


# --- attitude ---------------------------------------------------------------


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class EulerAngles:
    """Body attitude in radians; see the module docstring for the convention."""

    yaw: float
    pitch: float
    roll: float = 0.0

    def matrix(self) -> np.ndarray:
        return rot_z(self.yaw) @ rot_y(self.pitch) @ rot_x(self.roll)

    @classmethod
    def from_matrix(cls, R) -> EulerAngles:
        R = np.asarray(R, dtype=float)
        pitch = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
        yaw = np.arctan2(R[1, 0], R[0, 0])
        roll = np.arctan2(R[2, 1], R[2, 2])
        return cls(float(yaw), float(pitch), float(roll))

    @classmethod
    def from_degrees(cls, yaw, pitch, roll=0.0) -> EulerAngles:
        return cls(np.radians(yaw), np.radians(pitch), np.radians(roll))

    def degrees(self) -> tuple:
        return tuple(np.degrees([self.yaw, self.pitch, self.roll]))
