"""Run configuration: one YAML file with scene, trajectory, noise, jngo, engine and eval sections.

Angles are stored in degrees in the file and converted to radians when the
runtime objects are built.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .camera import Intrinsics
from .engine import PriorNoise, SequenceConfig, make_trajectory
from .errors import ConfigMismatch
from .motion import MotionModel
from .optimizer import RefineSchedule, SamplerConfig
from .world import Degradation, build_scene

# fine-level cost per squared unit of geodesic distance; see scripts/calibrate_lambda.py
CALIBRATED_LAMBDA_MOTION = 0.1673


@dataclass
class SceneSection:
    seed: int = 7
    extent: float = 4000.0
    roughness: float = 1.0


@dataclass
class TrajectorySection:
    pattern: str = "line"
    n_frames: int = 100
    params: dict = field(default_factory=lambda: {"start": [0.0, 0.0, 200.0], "heading_deg": 0.0, "speed": 2.0, "pitch_deg": 60.0})


@dataclass
class NoiseSection:
    prior_translation_m: float = 10.0
    prior_rotation_deg: float = 10.0
    gain: float = 1.0
    bias: float = 0.0
    noise_sigma: float = 0.01
    gain_jitter: float = 0.05
    bias_jitter: float = 0.02


@dataclass
class JngoSection:
    sampler_mode: str = "grid"
    alpha_pitch_deg: float = 11.0
    alpha_yaw_deg: float = 11.0
    pitch_step_deg: float = 2.0
    yaw_step_deg: float = 2.0
    sigma_t: list = field(default_factory=lambda: np.eye(3).tolist())
    isotropic_alpha_deg: float = 2.0
    isotropic_count: int = 144
    iterations_per_level: list = field(default_factory=lambda: [2, 3, 10])
    lm_lambda_init: float = 1e-2
    lm_lambda_up: float = 10.0
    lm_lambda_down: float = 0.5
    lm_lambda_min: float = 1e-6
    lm_lambda_max: float = 1e4
    huber_delta: float = 0.5
    min_anchors: int = 50
    margin_px: float = 1.0
    lambda_motion: float = CALIBRATED_LAMBDA_MOTION


@dataclass
class EngineSection:
    width: int = 128
    height: int = 128
    fx: float = float(64.0 / np.tan(np.radians(30.0)))  # 60 deg horizontal field of view
    fy: float = float(64.0 / np.tan(np.radians(30.0)))
    cx: float = 63.5
    cy: float = 63.5
    n_anchors: int = 500
    dual_thread: bool = True
    chunks: int = 1
    q_pos: float = 0.01
    q_vel: float = 0.0025
    r_meas: float = 0.04
    beta: float = 0.5


@dataclass
class EvalSection:
    thresholds: list = field(default_factory=lambda: [[1.0, 1.0], [3.0, 3.0], [5.0, 5.0]])
    target_ks: list = field(default_factory=lambda: [1.0, 3.0, 5.0])


SECTIONS = {
    "scene": SceneSection,
    "trajectory": TrajectorySection,
    "noise": NoiseSection,
    "jngo": JngoSection,
    "engine": EngineSection,
    "eval": EvalSection,
}


@dataclass
class RunConfig:
    scene: SceneSection = field(default_factory=SceneSection)
    trajectory: TrajectorySection = field(default_factory=TrajectorySection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    jngo: JngoSection = field(default_factory=JngoSection)
    engine: EngineSection = field(default_factory=EngineSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seed: int = 0

    def to_dict(self) -> dict:
        d = {name: asdict(getattr(self, name)) for name in SECTIONS}
        d["seed"] = self.seed
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        unknown = set(d) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigMismatch(f"unknown config sections {sorted(unknown)}")
        kwargs = {}
        for name, section in SECTIONS.items():
            body = d.get(name) or {}
            names = {f.name for f in fields(section)}
            bad = set(body) - names
            if bad:
                raise ConfigMismatch(f"unknown keys in [{name}]: {sorted(bad)}")
            kwargs[name] = section(**body)
        return cls(seed=int(d.get("seed", 0)), **kwargs)

    def with_seed(self, seed: int) -> "RunConfig":
        """Override every seed (run and scene) for one-command reproduction."""
        return replace(self, seed=int(seed), scene=replace(self.scene, seed=int(seed)))


def load_config(path) -> RunConfig:
    return RunConfig.from_dict(yaml.safe_load(Path(path).read_text()))


class _Dumper(yaml.SafeDumper):
    pass


# sections stay in block style, numeric lists go inline
_Dumper.add_representer(list, lambda d, v: d.represent_sequence("tag:yaml.org,2002:seq", v, flow_style=True))


def dump_config(cfg: RunConfig) -> str:
    return yaml.dump(cfg.to_dict(), Dumper=_Dumper, sort_keys=False)


# --- runtime objects ----------------------------------------------------------------


def intrinsics_of(cfg: RunConfig) -> Intrinsics:
    e = cfg.engine
    return Intrinsics(float(e.fx), float(e.fy), float(e.cx), float(e.cy), int(e.width), int(e.height))


def scene_of(cfg: RunConfig):
    return build_scene(cfg.scene.seed, cfg.scene.extent, cfg.scene.roughness)


def trajectory_of(cfg: RunConfig) -> list:
    return make_trajectory(cfg.trajectory.pattern, cfg.trajectory.n_frames, **(cfg.trajectory.params or {}))


def sampler_of(cfg: RunConfig) -> SamplerConfig:
    j = cfg.jngo
    return SamplerConfig(
        alpha_pitch=np.radians(j.alpha_pitch_deg),
        alpha_yaw=np.radians(j.alpha_yaw_deg),
        pitch_step=np.radians(j.pitch_step_deg),
        yaw_step=np.radians(j.yaw_step_deg),
        sigma_t=np.asarray(j.sigma_t, dtype=float),
        rng_seed=cfg.seed,
        mode=j.sampler_mode,
        isotropic_alpha=np.radians(j.isotropic_alpha_deg),
        isotropic_count=int(j.isotropic_count),
    )


def schedule_of(cfg: RunConfig) -> RefineSchedule:
    j = cfg.jngo
    return RefineSchedule(
        iterations_per_level=tuple(int(x) for x in j.iterations_per_level),
        lm_lambda_init=j.lm_lambda_init,
        lm_lambda_up=j.lm_lambda_up,
        lm_lambda_down=j.lm_lambda_down,
        lm_lambda_min=j.lm_lambda_min,
        lm_lambda_max=j.lm_lambda_max,
        huber_delta=j.huber_delta,
        min_anchors=int(j.min_anchors),
        margin=j.margin_px,
    )


def degradation_of(cfg: RunConfig) -> Degradation:
    n = cfg.noise
    return Degradation(n.gain, n.bias, n.noise_sigma, n.gain_jitter, n.bias_jitter)


def sequence_config(cfg: RunConfig, trajectory=None) -> SequenceConfig:
    e = cfg.engine
    return SequenceConfig(
        scene=scene_of(cfg),
        trajectory=tuple(trajectory if trajectory is not None else trajectory_of(cfg)),
        intrinsics=intrinsics_of(cfg),
        prior_noise=PriorNoise(cfg.noise.prior_translation_m, cfg.noise.prior_rotation_deg),
        degradation=degradation_of(cfg),
        sampler=sampler_of(cfg),
        schedule=schedule_of(cfg),
        lambda_motion=float(cfg.jngo.lambda_motion),
        n_anchors=int(e.n_anchors),
        motion_model=MotionModel(q_pos=e.q_pos, q_vel=e.q_vel, r_meas=e.r_meas, beta=e.beta),
        rng_seed=int(cfg.seed),
        chunks=int(e.chunks),
    )
