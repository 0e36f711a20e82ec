"""Deterministic procedural terrain used as the geo-referenced map.

The heightfield is a sum of eight oriented sinusoids; appearance is a
four-channel field of smooth sinusoid mixtures, the last channel partly
driven by height.  Both are analytic, so the renderer can be checked against
the fields themselves.

Rendering casts one ray per pixel centre.  Rays are advanced with a
Lipschitz-safe step (never shorter than 1 m), and the first sign change of
``ray_z - height`` is refined by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .camera import Intrinsics, PixelPoint, back_project_pixels, pixel_rays
from .errors import CameraUnderground, InsufficientValidPixels, NoIntersection
from .se3 import Pose

N_HEIGHT_TERMS = 8
N_APPEARANCE_TERMS = 6
N_CHANNELS = 4

_HEIGHT_AMPS = np.array([12.0, 9.0, 7.0, 5.0, 3.5, 2.5, 1.5, 1.0])
_HEIGHT_WAVELENGTHS = np.array([800.0, 560.0, 400.0, 300.0, 220.0, 170.0, 140.0, 120.0])
_APPEARANCE_WAVELENGTHS = (30.0, 240.0)

MARCH_MIN_STEP = 1.0
BISECT_TOL = 1e-5
MAX_MARCH_ITERS = 20000


def _plane_wave_params(rng, wavelengths):
    theta = rng.uniform(0.0, 2.0 * np.pi, size=wavelengths.shape)
    k = (2.0 * np.pi / wavelengths)[..., None] * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    phase = rng.uniform(0.0, 2.0 * np.pi, size=wavelengths.shape)
    return k, phase


@dataclass(frozen=True, eq=False)
class Scene:
    seed: int
    extent: float
    roughness: float
    height_amp: np.ndarray  # (8,) meters
    height_k: np.ndarray  # (8, 2) rad/m
    height_phase: np.ndarray  # (8,)
    app_offset: np.ndarray  # (C,)
    app_height_gain: np.ndarray  # (C,) per meter of height
    app_amp: np.ndarray  # (C, 6)
    app_k: np.ndarray  # (C, 6, 2)
    app_phase: np.ndarray  # (C, 6)

    @property
    def channels(self) -> int:
        return self.app_amp.shape[0]

    @property
    def max_height(self) -> float:
        return float(np.abs(self.height_amp).sum())

    @property
    def slope_bound(self) -> float:
        """Upper bound on ``|grad h|`` (Lipschitz constant of the heightfield)."""
        return float((np.abs(self.height_amp) * np.linalg.norm(self.height_k, axis=1)).sum())

    def height(self, x, y):
        x = np.asarray(x, dtype=float)[..., None]
        y = np.asarray(y, dtype=float)[..., None]
        arg = self.height_k[:, 0] * x + self.height_k[:, 1] * y + self.height_phase
        return (self.height_amp * np.sin(arg)).sum(axis=-1)

    def height_gradient(self, x, y):
        """``(dh/dx, dh/dy)`` stacked on the last axis."""
        x = np.asarray(x, dtype=float)[..., None]
        y = np.asarray(y, dtype=float)[..., None]
        arg = self.height_k[:, 0] * x + self.height_k[:, 1] * y + self.height_phase
        c = self.height_amp * np.cos(arg)
        return np.stack([(c * self.height_k[:, 0]).sum(-1), (c * self.height_k[:, 1]).sum(-1)], axis=-1)

    def appearance(self, x, y):
        """Channel values in [0, 1] at world ``(x, y)``, shape ``(..., C)``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        xe, ye = x[..., None, None], y[..., None, None]
        arg = self.app_k[..., 0] * xe + self.app_k[..., 1] * ye + self.app_phase
        waves = (self.app_amp * np.sin(arg)).sum(axis=-1)
        h = self.height(x, y)[..., None]
        return self.app_offset + self.app_height_gain * h + waves

    def inside(self, x, y):
        half = 0.5 * self.extent
        return (np.abs(x) <= half) & (np.abs(y) <= half)

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "extent": float(self.extent), "roughness": float(self.roughness)}


def build_scene(seed: int, extent: float = 4000.0, roughness: float = 1.0) -> Scene:
    if not extent > 0:
        raise ValueError("extent must be positive")
    rng = np.random.default_rng(seed)
    height_k, height_phase = _plane_wave_params(rng, _HEIGHT_WAVELENGTHS)
    height_amp = roughness * _HEIGHT_AMPS

    lo, hi = np.log(_APPEARANCE_WAVELENGTHS)
    wl = np.exp(rng.uniform(lo, hi, size=(N_CHANNELS, N_APPEARANCE_TERMS)))
    app_k, app_phase = _plane_wave_params(rng, wl)
    raw = rng.uniform(0.3, 1.0, size=(N_CHANNELS, N_APPEARANCE_TERMS))
    # three texture channels swing +-0.45; the last mixes 0.25 of height with 0.2 texture
    budget = np.array([0.45, 0.45, 0.45, 0.2])
    app_amp = raw / raw.sum(axis=1, keepdims=True) * budget[:, None]
    hmax = float(height_amp.sum())
    height_gain = np.zeros(N_CHANNELS)
    if hmax > 0:
        height_gain[3] = 0.25 / hmax
    return Scene(
        seed=int(seed),
        extent=float(extent),
        roughness=float(roughness),
        height_amp=height_amp,
        height_k=height_k,
        height_phase=height_phase,
        app_offset=np.full(N_CHANNELS, 0.5),
        app_height_gain=height_gain,
        app_amp=app_amp,
        app_k=app_k,
        app_phase=app_phase,
    )


def scene_from_dict(d: dict) -> Scene:
    return build_scene(int(d["seed"]), float(d.get("extent", 4000.0)), float(d.get("roughness", 1.0)))


@dataclass(frozen=True, eq=False)
class DepthMap:
    values: np.ndarray  # (H, W) meters along the optical axis, 0 where invalid
    valid: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class RenderedView:
    appearance: np.ndarray  # (H, W, C)
    depth: DepthMap
    pose: Pose
    intrinsics: Intrinsics


@njit(cache=True, inline="always")
def _terrain_gap(px, py, pz, amp, k, phase):
    h = 0.0
    for i in range(amp.shape[0]):
        h += amp[i] * math.sin(k[i, 0] * px + k[i, 1] * py + phase[i])
    return pz - h


@njit(cache=True, nogil=True)
def _march_kernel(origin, dirs, amp, k, phase, half, slope, zmax, tol, min_step, max_iters, tau_out, hit_out):
    ox, oy, oz = origin[0], origin[1], origin[2]
    for n in range(dirs.shape[0]):
        dx, dy, dz = dirs[n, 0], dirs[n, 1], dirs[n, 2]
        hit_out[n] = False
        tau_out[n] = 0.0
        # leave the square domain or sink below the lowest possible terrain
        tmax = np.inf
        if dx > 0:
            tmax = min(tmax, (half - ox) / dx)
        elif dx < 0:
            tmax = min(tmax, (-half - ox) / dx)
        if dy > 0:
            tmax = min(tmax, (half - oy) / dy)
        elif dy < 0:
            tmax = min(tmax, (-half - oy) / dy)
        if dz < 0:
            tmax = min(tmax, (-zmax - 1.0 - oz) / dz)
        tau = 0.0
        if oz > zmax:
            if not dz < 0:
                continue
            tau = (oz - zmax) / -dz
        rate = -dz + slope * math.sqrt(dx * dx + dy * dy)
        if not (tau < tmax and rate > 0):
            continue
        gap = _terrain_gap(ox + tau * dx, oy + tau * dy, oz + tau * dz, amp, k, phase)
        lo = hi = 0.0
        found = False
        for _ in range(max_iters):
            t_new = min(tau + max(gap / rate, min_step), tmax)
            g_new = _terrain_gap(ox + t_new * dx, oy + t_new * dy, oz + t_new * dz, amp, k, phase)
            if g_new <= 0:
                lo, hi, found = tau, t_new, True
                break
            tau, gap = t_new, g_new
            if t_new >= tmax:
                break
        if not found:
            continue
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if _terrain_gap(ox + mid * dx, oy + mid * dy, oz + mid * dz, amp, k, phase) > 0:
                lo = mid
            else:
                hi = mid
        tau_out[n] = 0.5 * (lo + hi)
        hit_out[n] = True


def march_rays(scene: Scene, origin, dirs):
    """Distance along each unit ray to the first terrain hit.

    Returns ``(tau, hit)``; ``tau`` is meaningless where ``hit`` is False.
    ``origin`` is a shared 3-vector, ``dirs`` is ``(n, 3)`` of unit vectors.
    """
    origin = np.ascontiguousarray(origin, dtype=float)
    dirs = np.ascontiguousarray(dirs, dtype=float)
    n = dirs.shape[0]
    tau = np.zeros(n)
    hit = np.zeros(n, dtype=np.bool_)
    _march_kernel(
        origin,
        dirs,
        scene.height_amp,
        scene.height_k,
        scene.height_phase,
        0.5 * scene.extent,
        scene.slope_bound,
        scene.max_height,
        BISECT_TOL,
        MARCH_MIN_STEP,
        MAX_MARCH_ITERS,
        tau,
        hit,
    )
    return tau, hit


def _check_above_ground(scene: Scene, position):
    x, y, z = np.asarray(position, dtype=float)
    if z <= scene.height(x, y):
        raise CameraUnderground(f"camera at z={z:.3f} is below terrain height {float(scene.height(x, y)):.3f}")


def render(scene: Scene, pose: Pose, k: Intrinsics) -> RenderedView:
    _check_above_ground(scene, pose.t)
    rays = pixel_rays(k).reshape(-1, 3) @ pose.R.T
    norms = np.linalg.norm(rays, axis=1)
    tau, hit = march_rays(scene, pose.t, rays / norms[:, None])
    depth = np.where(hit, tau / norms, 0.0)
    pts = pose.t + depth[:, None] * rays
    inside = scene.inside(pts[:, 0], pts[:, 1])
    valid = hit & inside & (depth > 0)
    app = np.zeros((rays.shape[0], scene.channels))
    app[valid] = scene.appearance(pts[valid, 0], pts[valid, 1])
    depth = np.where(valid, depth, 0.0)
    shape = (k.height, k.width)
    return RenderedView(
        appearance=app.reshape(shape + (scene.channels,)),
        depth=DepthMap(depth.reshape(shape), valid.reshape(shape)),
        pose=pose,
        intrinsics=k,
    )


def raycast(scene: Scene, origin, direction) -> np.ndarray:
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    tau, hit = march_rays(scene, origin, direction[None])
    if not hit[0]:
        raise NoIntersection("ray leaves the scene without hitting terrain")
    p = np.asarray(origin, dtype=float) + tau[0] * direction
    if not scene.inside(p[0], p[1]):
        raise NoIntersection("hit lies outside the scene extent")
    return p


@dataclass(frozen=True)
class Degradation:
    """Photometric perturbation applied to query renders only."""

    gain: float = 1.0
    bias: float = 0.0
    noise_sigma: float = 0.0
    gain_jitter: float = 0.0
    bias_jitter: float = 0.0

    @property
    def is_identity(self) -> bool:
        return (
            self.gain == 1.0
            and self.bias == 0.0
            and self.noise_sigma == 0.0
            and self.gain_jitter == 0.0
            and self.bias_jitter == 0.0
        )


def degrade(appearance: np.ndarray, deg: Degradation, rng_seed) -> np.ndarray:
    if deg.is_identity:
        return appearance
    rng = np.random.default_rng(rng_seed)
    c = appearance.shape[-1]
    gain = deg.gain + rng.uniform(-deg.gain_jitter, deg.gain_jitter, size=c)
    bias = deg.bias + rng.uniform(-deg.bias_jitter, deg.bias_jitter, size=c)
    out = appearance * gain + bias
    if deg.noise_sigma > 0:
        out = out + rng.normal(0.0, deg.noise_sigma, size=appearance.shape)
    return np.clip(out, 0.0, 1.0)


def sample_geo_anchors(view: RenderedView, n: int, rng_seed, border: int = 2):
    """Draw ``n`` depth-valid pixels uniformly without replacement and lift them to 3D.

    Pixels within ``border`` of the image edge are not eligible, so every
    anchor's source pixel stays inside all pyramid levels.

    Returns ``(world_points (n, 3), pixels (n, 2))`` with pixels as ``(u, v)``.
    """
    mask = view.depth.valid.copy()
    if border:
        mask[:border] = mask[-border:] = False
        mask[:, :border] = mask[:, -border:] = False
    candidates = np.flatnonzero(mask)
    if candidates.size < n:
        raise InsufficientValidPixels(f"{candidates.size} eligible pixels, {n} requested")
    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(candidates, size=n, replace=False)
    v, u = np.divmod(chosen, view.intrinsics.width)
    d = view.depth.values.ravel()[chosen]
    cam = back_project_pixels(view.intrinsics, u, v, d)
    world = view.pose.apply(cam)
    return world, np.stack([u, v], axis=-1).astype(float)


def pixel_ray(pose: Pose, k: Intrinsics, p: PixelPoint) -> np.ndarray:
    """Unit world-frame direction of the ray through pixel ``p``."""
    d = pose.R @ np.array([(p[0] - k.cx) / k.fx, (p[1] - k.cy) / k.fy, 1.0])
    return d / np.linalg.norm(d)
