"""Sequential localization with a render worker and a localization worker.

Schedule (identical in both execution modes):

* bundles 0 and 1 are rendered at the initial prior;
* after frame ``i`` is estimated, the render worker builds bundle ``i + 2``
  from the motion state extrapolated two frames ahead;
* the localization worker registers query ``i`` against bundle ``i``,
  centring hypotheses on the one-frame prediction from the latest state.

The two workers talk only through queues carrying immutable values (motion
states one way, bundles the other), so the dual-worker run reproduces the
sequential oracle exactly.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .bundle import DEFAULT_ANCHORS, ReferenceBundle, make_bundle
from .camera import Intrinsics, camera_attitude, camera_pose
from .errors import AllHypothesesInvalid, InsufficientValidPixels
from .features import FeaturePyramid, build_pyramid_from_image
from .motion import DEFAULT_MODEL, MotionModel, MotionState, coast, initial_state, predict, update
from .optimizer import RefineSchedule, SamplerConfig, run
from .se3 import EulerAngles, Pose, rot_z
from .world import Degradation, Scene, degrade, render

# independent random streams per frame
STREAM_PRIOR = 0
STREAM_ANCHORS = 1
STREAM_HYPOTHESES = 2
STREAM_DEGRADATION = 3


def derive_seed(base: int, frame: int, stream: int) -> int:
    ss = np.random.SeedSequence(entropy=int(base), spawn_key=(int(frame), int(stream)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# --- initial prior -------------------------------------------------------------------


@dataclass(frozen=True)
class PriorNoise:
    """Bounds of the first-frame prior error.

    Translation is uniform in a ball of radius ``translation_m``; yaw and
    pitch offsets are uniform in ``+-rotation_deg``.  Roll is left exact
    (gimbal-stabilised).
    """

    translation_m: float = 10.0
    rotation_deg: float = 10.0

    def __post_init__(self):
        if self.translation_m < 0 or self.rotation_deg < 0:
            raise ValueError("noise bounds must be non-negative")


def perturb_pose(pose: Pose, noise: PriorNoise, seed) -> Pose:
    rng = np.random.default_rng(seed)
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    radius = noise.translation_m * rng.uniform() ** (1.0 / 3.0)
    a = np.radians(noise.rotation_deg)
    yaw, pitch = rng.uniform(-a, a, size=2)
    att = camera_attitude(pose)
    att = EulerAngles(att.yaw + yaw, att.pitch + pitch, att.roll)
    return camera_pose(pose.t + radius * d, att)


def offset_pose(pose: Pose, translation, yaw_rad: float) -> Pose:
    """Shift by a world-frame vector and rotate about the world vertical."""
    return Pose(rot_z(yaw_rad) @ pose.R, pose.t + np.asarray(translation, dtype=float))


# --- configuration ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SequenceConfig:
    scene: Scene
    trajectory: tuple  # ground-truth camera poses
    intrinsics: Intrinsics
    prior_noise: PriorNoise = PriorNoise()
    degradation: Degradation = Degradation()
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    schedule: RefineSchedule = RefineSchedule()
    lambda_motion: float = 0.0
    n_anchors: int = DEFAULT_ANCHORS
    motion_model: MotionModel = DEFAULT_MODEL
    rng_seed: int = 0
    chunks: int = 1
    initial_pose: Pose | None = None  # overrides the seeded prior when given

    def __post_init__(self):
        object.__setattr__(self, "trajectory", tuple(self.trajectory))
        if not self.trajectory:
            raise ValueError("trajectory is empty")


@dataclass(frozen=True, eq=False)
class FrameResult:
    frame_index: int
    estimated_pose: Pose | None  # None when the frame failed
    status: str  # "localized" | "failed"
    photometric_cost: float
    hypothesis_index: int
    latency_ms: float
    reported_pose: Pose  # the estimate, or the coasted prediction on failure
    bundle_frame: int
    bundle_source: int  # last estimated frame the bundle's prediction used; -1 = prior
    bundle_fallback: bool = False

    @property
    def localized(self) -> bool:
        return self.status == "localized"

    def same_as(self, other: "FrameResult") -> bool:
        """Equality of everything except wall-clock latency."""

        def pose_eq(a, b):
            if a is None or b is None:
                return a is b
            return np.array_equal(a.R, b.R) and np.array_equal(a.t, b.t)

        return (
            self.frame_index == other.frame_index
            and self.status == other.status
            and pose_eq(self.estimated_pose, other.estimated_pose)
            and pose_eq(self.reported_pose, other.reported_pose)
            and (self.photometric_cost == other.photometric_cost or (np.isnan(self.photometric_cost) and np.isnan(other.photometric_cost)))
            and self.hypothesis_index == other.hypothesis_index
            and self.bundle_frame == other.bundle_frame
            and self.bundle_source == other.bundle_source
            and self.bundle_fallback == other.bundle_fallback
        )


# --- query side -----------------------------------------------------------------------------


def query_render(scene: Scene, gt_pose: Pose, intrinsics: Intrinsics, degradation: Degradation = Degradation(), rng_seed=0) -> FeaturePyramid:
    """Simulated live frame: render at the true pose, degrade, build the pyramid.

    Uncertainty estimation is switched on whenever the degradation is not
    the identity.
    """
    view = render(scene, gt_pose, intrinsics)
    image = degrade(view.appearance, degradation, rng_seed)
    return build_pyramid_from_image(image, estimate_noise=not degradation.is_identity)


def initial_prior(cfg: SequenceConfig) -> Pose:
    if cfg.initial_pose is not None:
        return cfg.initial_pose
    return perturb_pose(cfg.trajectory[0], cfg.prior_noise, derive_seed(cfg.rng_seed, 0, STREAM_PRIOR))


# --- the two workers' steps ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _BundleMsg:
    bundle: ReferenceBundle
    fallback: bool


def _render_step(cfg: SequenceConfig, frame: int, prior: Pose, state: MotionState | None, source: int, last: _BundleMsg | None) -> _BundleMsg:
    if state is None:
        target = prior
    else:
        target, _, _ = predict(state, 2, cfg.motion_model)
    try:
        b = make_bundle(
            cfg.scene,
            target,
            cfg.intrinsics,
            cfg.n_anchors,
            derive_seed(cfg.rng_seed, frame, STREAM_ANCHORS),
            frame_index=frame,
            source_frame=source,
        )
        return _BundleMsg(b, False)
    except InsufficientValidPixels:
        if last is None:
            raise
        return _BundleMsg(replace(last.bundle, frame_index=frame), True)


class _Localizer:
    """Per-frame localization plus the motion state it owns."""

    def __init__(self, cfg: SequenceConfig, prior: Pose):
        self.cfg = cfg
        self.prior = prior
        self.state: MotionState | None = None

    def step(self, frame: int, msg: _BundleMsg, t_start: float) -> FrameResult:
        cfg = self.cfg
        query = query_render(
            cfg.scene, cfg.trajectory[frame], cfg.intrinsics, cfg.degradation, derive_seed(cfg.rng_seed, frame, STREAM_DEGRADATION)
        )
        t0 = time.perf_counter()
        if self.state is None:
            center, sigma, lam = self.prior, cfg.sampler.sigma_t, 0.0
        else:
            center, _, sigma = predict(self.state, 1, cfg.motion_model)
            # the prediction carries no velocity information until two fixes
            lam = cfg.lambda_motion if self.state.n_updates >= 2 else 0.0
        sampler = replace(cfg.sampler, sigma_t=sigma, rng_seed=derive_seed(cfg.rng_seed, frame, STREAM_HYPOTHESES))
        try:
            pose, diag = run(center, msg.bundle, query, sampler, cfg.schedule, center, lam, cfg.chunks)
        except AllHypothesesInvalid:
            pose, diag = None, None
        if pose is not None:
            hyp = diag.hypotheses[diag.index]
            if self.state is None:
                self.state = initial_state(pose, cfg.motion_model)
            else:
                self.state = update(self.state, pose, cfg.motion_model)
            status, cost, idx, reported = "localized", hyp.photometric_cost_fine, diag.index, pose
        else:
            if self.state is None:
                self.state = initial_state(center, cfg.motion_model)
            else:
                self.state = coast(self.state, cfg.motion_model)
            status, cost, idx, reported = "failed", float("nan"), -1, self.state.pose
        latency = 1000.0 * (time.perf_counter() - t0) + t_start
        return FrameResult(
            frame_index=frame,
            estimated_pose=pose,
            status=status,
            photometric_cost=float(cost),
            hypothesis_index=int(idx),
            latency_ms=latency,
            reported_pose=reported,
            bundle_frame=msg.bundle.frame_index,
            bundle_source=msg.bundle.source_frame,
            bundle_fallback=msg.fallback,
        )


# --- runners ----------------------------------------------------------------------------------


def run_sequential(cfg: SequenceConfig) -> list:
    """Single-threaded execution of the schedule (the reference oracle)."""
    prior = initial_prior(cfg)
    loc = _Localizer(cfg, prior)
    n = len(cfg.trajectory)
    bundles = {}
    last = None
    for f in range(min(2, n)):
        last = bundles[f] = _render_step(cfg, f, prior, None, -1, last)
    results = []
    for i in range(n):
        t0 = time.perf_counter()
        msg = bundles.pop(i)
        results.append(loc.step(i, msg, 1000.0 * (time.perf_counter() - t0)))
        if i + 2 < n:
            last = bundles[i + 2] = _render_step(cfg, i + 2, prior, loc.state, i, last)
    return results


class _Stop:
    pass


def run_dual(cfg: SequenceConfig, timeout_s: float | None = None) -> list:
    """Render and localization on two threads with a two-slot hand-off."""
    prior = initial_prior(cfg)
    loc = _Localizer(cfg, prior)
    n = len(cfg.trajectory)
    bundles: queue.Queue = queue.Queue(maxsize=2)
    states: queue.Queue = queue.Queue(maxsize=1)

    def render_worker():
        last = None
        try:
            for f in range(n):
                if f < 2:
                    msg = _render_step(cfg, f, prior, None, -1, last)
                else:
                    item = states.get()
                    if isinstance(item, _Stop):
                        return
                    source, state = item
                    msg = _render_step(cfg, f, prior, state, source, last)
                last = msg
                bundles.put(msg)
        except BaseException as exc:  # surfaced on the localization side
            bundles.put(exc)

    worker = threading.Thread(target=render_worker, name="render", daemon=True)
    worker.start()
    results = []
    try:
        for i in range(n):
            t0 = time.perf_counter()
            msg = bundles.get(timeout=timeout_s)
            if isinstance(msg, BaseException):
                raise msg
            results.append(loc.step(i, msg, 1000.0 * (time.perf_counter() - t0)))
            if i + 2 < n:
                states.put((i, loc.state))
    finally:
        if worker.is_alive():
            try:
                states.put_nowait(_Stop())
            except queue.Full:
                pass
        worker.join(timeout=timeout_s)
    return results


def run_sequence(cfg: SequenceConfig, dual_thread: bool = True) -> list:
    return run_dual(cfg) if dual_thread else run_sequential(cfg)


def lag_violations(results) -> list:
    """Frames whose bundle used information newer than ``i - 2``."""
    return [r.frame_index for r in results if r.frame_index >= 2 and r.bundle_source > r.frame_index - 2]


# --- trajectories -------------------------------------------------------------------------------


def line_trajectory(
    n_frames: int,
    start=(0.0, 0.0, 200.0),
    heading_deg: float = 0.0,
    speed: float = 2.0,
    pitch_deg: float = 60.0,
    yaw_rate_deg: float = 0.0,
) -> list:
    """Constant-velocity straight flight; the camera yaw may spin independently."""
    start = np.asarray(start, dtype=float)
    h = np.radians(heading_deg)
    step = speed * np.array([np.cos(h), np.sin(h), 0.0])
    return [
        camera_pose(start + i * step, EulerAngles.from_degrees(heading_deg + i * yaw_rate_deg, pitch_deg, 0.0))
        for i in range(n_frames)
    ]


def orbit_trajectory(
    n_frames: int,
    center=(0.0, 0.0),
    radius: float = 300.0,
    altitude: float = 200.0,
    deg_per_frame: float = 0.5,
    pitch_deg: float = 60.0,
) -> list:
    """Circle at constant altitude, camera looking along the direction of travel."""
    cx, cy = center
    out = []
    for i in range(n_frames):
        a = np.radians(i * deg_per_frame)
        pos = np.array([cx + radius * np.cos(a), cy + radius * np.sin(a), altitude])
        heading = np.degrees(a) + 90.0 * np.sign(deg_per_frame or 1.0)
        out.append(camera_pose(pos, EulerAngles.from_degrees(heading, pitch_deg, 0.0)))
    return out


def barrel_roll_trajectory(
    n_frames: int,
    center=(0.0, 0.0),
    radius: float = 300.0,
    altitude: float = 200.0,
    deg_per_frame: float = 0.5,
    pitch_deg: float = 60.0,
    roll_amp_deg: float = 15.0,
    roll_period: int = 60,
    step_every: int = 50,
    pitch_step_deg: float = 5.0,
    climb_step_m: float = 10.0,
) -> list:
    """Orbit with a rolling camera and step-wise pitch and altitude changes."""
    base = orbit_trajectory(n_frames, center, radius, altitude, deg_per_frame, pitch_deg)
    out = []
    for i, p in enumerate(base):
        k = i // step_every
        sign = 1.0 if k % 2 == 0 else -1.0
        att = camera_attitude(p)
        att = EulerAngles(
            att.yaw,
            att.pitch + np.radians(sign * pitch_step_deg if k else 0.0),
            np.radians(roll_amp_deg) * np.sin(2.0 * np.pi * i / roll_period),
        )
        pos = p.t + np.array([0.0, 0.0, climb_step_m * k])
        out.append(camera_pose(pos, att))
    return out


TRAJECTORY_PATTERNS = {
    "line": line_trajectory,
    "orbit": orbit_trajectory,
    "barrel-roll": barrel_roll_trajectory,
}


def make_trajectory(pattern: str, n_frames: int, **kwargs) -> list:
    try:
        fn = TRAJECTORY_PATTERNS[pattern]
    except KeyError:
        raise ValueError(f"unknown trajectory pattern {pattern!r}") from None
    return fn(n_frames, **kwargs)
