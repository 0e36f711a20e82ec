"""Pixel-to-world geolocation by casting camera rays into the scene."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics, PixelPoint
from .errors import NoIntersection, UnknownFrame
from .se3 import Pose
from .world import Scene, pixel_ray, raycast

HIT = "hit"
MISS = "miss"


@dataclass(frozen=True, eq=False)
class TargetObservation:
    frame_index: int
    pixel: PixelPoint
    world_estimate: np.ndarray | None  # None on a miss
    status: str  # "hit" | "miss"

    @property
    def hit(self) -> bool:
        return self.status == HIT


def pixel_to_world(pose: Pose, k: Intrinsics, p, scene: Scene, frame_index: int = -1) -> TargetObservation:
    p = PixelPoint(float(p[0]), float(p[1]))
    if not k.in_bounds(p.u, p.v):
        raise ValueError(f"pixel {tuple(p)} outside the {k.width}x{k.height} image")
    try:
        world = raycast(scene, pose.t, pixel_ray(pose, k, p))
    except NoIntersection:
        return TargetObservation(frame_index, p, None, MISS)
    return TargetObservation(frame_index, p, world, HIT)


def track_targets(results, targets, scene: Scene, k: Intrinsics) -> list:
    """Geolocate ``(frame_index, pixel)`` annotations from per-frame results.

    Targets on failed frames come back as misses.
    """
    by_frame = {r.frame_index: r for r in results}
    out = []
    for frame, pixel in targets:
        if frame not in by_frame:
            raise UnknownFrame(f"no result for frame {frame}")
        r = by_frame[frame]
        if not r.localized:
            out.append(TargetObservation(frame, PixelPoint(float(pixel[0]), float(pixel[1])), None, MISS))
            continue
        out.append(pixel_to_world(r.estimated_pose, k, pixel, scene, frame))
    return out


def synth_targets(scene: Scene, trajectory, k: Intrinsics, per_frame: int = 1, rng_seed=0, border: float = 8.0):
    """Random ``(frame, pixel, true world point)`` annotations from ground-truth poses.

    Pixels are drawn away from the image border; rays that miss the terrain
    are redrawn.
    """
    rng = np.random.default_rng(rng_seed)
    out = []
    for f, pose in enumerate(trajectory):
        got = 0
        for _ in range(100 * per_frame):
            if got == per_frame:
                break
            u = rng.uniform(border, k.width - 1 - border)
            v = rng.uniform(border, k.height - 1 - border)
            obs = pixel_to_world(pose, k, (u, v), scene, f)
            if obs.hit:
                out.append((f, obs.pixel, obs.world_estimate))
                got += 1
    return out
