"""Ablation harness and the motion-weight calibration.

A trial is a short sequence on the standard scene: straight flight at
200 m while the camera yaws by a fixed step of random sign every frame, so
the constant-velocity rotation prediction is off by up to two steps.  Recall at (1 m, 1 deg) is
pooled over all frames of all trials in a cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .bundle import make_bundle
from .camera import Intrinsics, camera_pose
from .engine import PriorNoise, SequenceConfig, derive_seed, query_render, run_sequential
from .metrics import compute_metrics
from .optimizer import SamplerConfig, level_system
from .se3 import EulerAngles, Pose
from .world import Degradation, Scene

AXES = ("rotation_aware", "motion_reg", "multi_hypothesis")
DEFAULT_LEVELS = (3.0, 5.0, 10.0)

STANDARD_ALTITUDE = 200.0
STANDARD_PITCH_DEG = 60.0
STANDARD_SPAN = 300.0  # trial start positions are drawn in +-span


def standard_pose(rng, altitude: float = STANDARD_ALTITUDE, pitch_deg: float = STANDARD_PITCH_DEG) -> Pose:
    xy = rng.uniform(-STANDARD_SPAN, STANDARD_SPAN, size=2)
    yaw = rng.uniform(0.0, 360.0)
    return camera_pose([xy[0], xy[1], altitude], EulerAngles.from_degrees(yaw, pitch_deg, 0.0))


# --- motion weight -------------------------------------------------------------------


def calibrate_lambda_motion(
    scene: Scene,
    k: Intrinsics,
    n_samples: int = 50,
    displacement_m: float = 2.0,
    degradation: Degradation = Degradation(),
    n_anchors: int = 500,
    huber_delta: float = 0.5,
    seed: int = 0,
):
    """Weight that makes ``lambda * d^2`` equal the median fine-level cost at ``d`` meters.

    Each sample renders a bundle at a random standard pose, displaces the
    pose by ``displacement_m`` in a random direction and evaluates the
    fine-level cost there.  Returns ``(lambda, costs)``.
    """
    rng = np.random.default_rng(seed)
    costs = []
    for i in range(n_samples):
        gt = standard_pose(rng)
        b = make_bundle(scene, gt, k, n_anchors, derive_seed(seed, i, 1))
        q = query_render(scene, gt, k, degradation, derive_seed(seed, i, 3))
        d = rng.standard_normal(3)
        d *= displacement_m / np.linalg.norm(d)
        moved = Pose(gt.R, gt.t + d)
        cost, count, _, _ = level_system(moved.R[None], moved.t[None], b, q, 2, huber_delta, with_system=False)
        costs.append(float(cost[0]))
    return float(np.median(costs)) / displacement_m**2, np.array(costs)


# --- trials ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AblationBase:
    scene: Scene
    intrinsics: Intrinsics
    lambda_motion: float
    degradation: Degradation = Degradation()
    trials: int = 50
    n_frames: int = 4
    yaw_step_deg: float = 10.0
    speed: float = 2.0
    n_anchors: int = 500
    seed: int = 0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)


def maneuver_trajectory(rng, n_frames: int, yaw_step_deg: float, speed: float) -> list:
    """Straight flight while the camera yaws by ``+-yaw_step_deg`` per frame, sign drawn at random."""
    start = standard_pose(rng)
    heading = float(np.degrees(np.arctan2(start.R[1, 2], start.R[0, 2])))
    h = np.radians(heading)
    step = speed * np.array([np.cos(h), np.sin(h), 0.0])
    signs = rng.choice([-1.0, 1.0], size=max(n_frames - 1, 0))
    yaws = heading + np.concatenate([[0.0], np.cumsum(signs * yaw_step_deg)])
    return [camera_pose(start.t + i * step, EulerAngles.from_degrees(yaws[i], STANDARD_PITCH_DEG, 0.0)) for i in range(n_frames)]


def _trial_config(base: AblationBase, trial: int, level: float, sampler: SamplerConfig, lam: float) -> SequenceConfig:
    rng = np.random.default_rng(derive_seed(base.seed, trial, 10))
    traj = maneuver_trajectory(rng, base.n_frames, base.yaw_step_deg, base.speed)
    return SequenceConfig(
        scene=base.scene,
        trajectory=traj,
        intrinsics=base.intrinsics,
        prior_noise=PriorNoise(level, level),
        degradation=base.degradation,
        sampler=sampler,
        lambda_motion=lam,
        n_anchors=base.n_anchors,
        rng_seed=derive_seed(base.seed, trial, 11),
    )


def _settings(base: AblationBase, axis: str):
    """``(label, sampler, lambda_motion)`` for the OFF and ON rows of an axis."""
    grid = replace(base.sampler, mode="grid")
    if axis == "rotation_aware":
        return [("isotropic", replace(base.sampler, mode="isotropic"), 0.0), ("rotation_aware", grid, 0.0)]
    if axis == "motion_reg":
        return [("lambda_0", grid, 0.0), ("lambda_calibrated", grid, base.lambda_motion)]
    if axis == "multi_hypothesis":
        single = replace(base.sampler, mode="grid", alpha_pitch=0.0, alpha_yaw=0.0, sigma_t=np.zeros((3, 3)))
        return [("single", single, base.lambda_motion), ("multi", grid, base.lambda_motion)]
    raise ValueError(f"unknown ablation axis {axis!r}; expected one of {AXES}")


def run_cell(base: AblationBase, sampler: SamplerConfig, lam: float, level: float, threshold=(1.0, 1.0)) -> float:
    """Recall (percent) at ``threshold`` pooled over every frame of every trial."""
    results, gts = [], []
    for trial in range(base.trials):
        cfg = _trial_config(base, trial, level, sampler, lam)
        results += run_sequential(cfg)
        gts += list(cfg.trajectory)
    return compute_metrics(results, gts, thresholds=(threshold,)).recall[tuple(float(x) for x in threshold)]


@dataclass(eq=False)
class AblationTable:
    axis: str
    levels: tuple
    rows: dict  # label -> list of recall percentages, one per level

    def format(self) -> str:
        head = f"{'setting':<20}" + "".join(f"{f'{lv:g}m/{lv:g}deg':>14}" for lv in self.levels)
        lines = [f"recall@(1 m, 1 deg), axis={self.axis}", head]
        for label, vals in self.rows.items():
            lines.append(f"{label:<20}" + "".join(f"{v:>14.1f}" for v in vals))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"axis": self.axis, "levels": list(self.levels), "rows": {k: list(v) for k, v in self.rows.items()}}


def run_ablation(base: AblationBase, axis: str, levels=DEFAULT_LEVELS, only=None) -> AblationTable:
    """Recall table for the OFF/ON rows of ``axis`` across noise ``levels``.

    ``only`` optionally restricts to a subset of row labels.
    """
    rows = {}
    for label, sampler, lam in _settings(base, axis):
        if only is not None and label not in only:
            continue
        rows[label] = [run_cell(base, sampler, lam, lv) for lv in levels]
    return AblationTable(axis, tuple(levels), rows)


def recall_spread(values) -> float:
    return float(max(values) - min(values))
