"""Constant-velocity motion prior.

Translation runs through a linear Kalman filter (position + velocity per
axis, world frame).  Rotation is extrapolated with an exponentially smoothed
body-frame angular velocity; it is not filtered.

The second measurement initialises velocity by two-point differencing
(``v = z1 - z0``, ``P = [[R, R], [R, 2R]]``), so a noiseless constant-velocity
track is predicted exactly from the third frame on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .se3 import Pose, Twist, exp, so3_log


@dataclass(frozen=True)
class MotionModel:
    q_pos: float = 0.01  # m^2 per frame
    q_vel: float = 0.0025  # (m/frame)^2 per frame
    r_meas: float = 0.04  # m^2
    beta: float = 0.5  # weight of the previous angular velocity
    init_vel_var: float = 25.0


DEFAULT_MODEL = MotionModel()


@dataclass(frozen=True, eq=False)
class MotionState:
    pose: Pose
    velocity: Twist  # rho: world-frame m/frame, phi: body-frame rad/frame
    cov_translation: np.ndarray
    cov_velocity: np.ndarray
    cov_cross: np.ndarray  # E[dp dv^T]
    n_updates: int = 1

    def joint_covariance(self) -> np.ndarray:
        return np.block([[self.cov_translation, self.cov_cross], [self.cov_cross.T, self.cov_velocity]])


def initial_state(pose: Pose, model: MotionModel = DEFAULT_MODEL) -> MotionState:
    return MotionState(
        pose=pose,
        velocity=Twist.zero(),
        cov_translation=model.r_meas * np.eye(3),
        cov_velocity=model.init_vel_var * np.eye(3),
        cov_cross=np.zeros((3, 3)),
        n_updates=1,
    )


def predict(state: MotionState, frames_ahead: int = 1, model: MotionModel = DEFAULT_MODEL):
    """Extrapolate ``frames_ahead`` frames.

    Returns ``(pose, mu_t, sigma_t)`` where ``mu_t`` is always zero (samples
    are drawn around the predicted pose) and
    ``sigma_t = P_pp + k^2 P_vv + k Q_pos``.
    """
    if frames_ahead < 1:
        raise ValueError("frames_ahead must be >= 1")
    k = float(frames_ahead)
    rot = state.pose.R @ exp(Twist(np.zeros(3), k * state.velocity.phi)).R
    pose = Pose(rot, state.pose.t + k * state.velocity.rho)
    sigma = state.cov_translation + k * k * state.cov_velocity + k * model.q_pos * np.eye(3)
    return pose, np.zeros(3), 0.5 * (sigma + sigma.T)


def _propagate(state: MotionState, model: MotionModel):
    F = np.block([[np.eye(3), np.eye(3)], [np.zeros((3, 3)), np.eye(3)]])
    Q = np.diag([model.q_pos] * 3 + [model.q_vel] * 3)
    x = np.concatenate([state.pose.t + state.velocity.rho, state.velocity.rho])
    P = F @ state.joint_covariance() @ F.T + Q
    return x, 0.5 * (P + P.T)


def _with_covariance(state: MotionState, P: np.ndarray, **changes) -> MotionState:
    P = 0.5 * (P + P.T)
    return replace(state, cov_translation=P[:3, :3], cov_velocity=P[3:, 3:], cov_cross=P[:3, 3:], **changes)


def coast(state: MotionState, model: MotionModel = DEFAULT_MODEL) -> MotionState:
    """Advance one frame without a measurement (used after a tracking failure)."""
    pose, _, _ = predict(state, 1, model)
    _, P = _propagate(state, model)
    return _with_covariance(state, P, pose=pose)


def update(state: MotionState, measured: Pose, model: MotionModel = DEFAULT_MODEL) -> MotionState:
    """Advance one frame and fuse the measured pose."""
    omega_meas = so3_log(state.pose.R.T @ measured.R)
    r = model.r_meas
    if state.n_updates == 1:
        eye = np.eye(3)
        return MotionState(
            pose=measured,
            velocity=Twist(measured.t - state.pose.t, omega_meas),
            cov_translation=r * eye,
            cov_velocity=2.0 * r * eye,
            cov_cross=r * eye,
            n_updates=2,
        )

    x, P = _propagate(state, model)
    H = np.hstack([np.eye(3), np.zeros((3, 3))])
    S = H @ P @ H.T + r * np.eye(3)
    K = np.linalg.solve(S, H @ P).T
    x = x + K @ (measured.t - x[:3])
    IKH = np.eye(6) - K @ H
    P = IKH @ P @ IKH.T + r * K @ K.T
    omega = model.beta * state.velocity.phi + (1.0 - model.beta) * omega_meas
    return _with_covariance(
        state,
        P,
        pose=Pose(measured.R, x[:3]),
        velocity=Twist(x[3:], omega),
        n_updates=state.n_updates + 1,
    )
