"""Finite-difference check of the analytic residual Jacobian, and per-level basin widths.

Each random scene gets a reference bundle, a query view from a nearby pose
and a third pose where the Jacobian is evaluated.  That pose is perturbed
along all six twist coordinates with the same left update the optimizer
uses, and central differences of the residual are compared with the
chain-rule Jacobian at every level.

Bilinear features are only piecewise smooth, so anchors whose projection
lies within ``boundary_px`` of a cell edge are skipped: a difference that
straddles the edge measures the kink, not the derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import make_bundle
from .camera import Intrinsics, camera_pose, level_intrinsics, project_points
from .features import build_pyramid
from .metrics import pose_error
from .optimizer import RefineSchedule, evaluate_level, refine
from .se3 import EulerAngles, Pose, exp_batch, rot_z
from .world import build_scene, render


@dataclass(eq=False)
class JacobianReport:
    max_rel_error: tuple  # per level
    median_rel_error: tuple
    samples: tuple  # per level, anchors compared
    skipped: tuple  # per level, anchors too close to a cell edge or invalid

    @property
    def worst(self) -> float:
        return float(max(self.max_rel_error))

    def format(self) -> str:
        lines = ["level  samples  skipped  median_rel  max_rel"]
        for ell in range(3):
            lines.append(
                f"{ell:>5}  {self.samples[ell]:>7}  {self.skipped[ell]:>7}  {self.median_rel_error[ell]:>10.2e}  {self.max_rel_error[ell]:>7.2e}"
            )
        return "\n".join(lines)


def _near_edge(coord, tol):
    frac = coord - np.floor(coord)
    return (frac < tol) | (frac > 1.0 - tol)


def _random_pair(rng, k: Intrinsics):
    scene = build_scene(int(rng.integers(0, 2**31)), 4000.0, float(rng.uniform(0.5, 1.5)))
    xy = rng.uniform(-400.0, 400.0, size=2)
    alt = rng.uniform(120.0, 300.0)
    att = EulerAngles.from_degrees(rng.uniform(0, 360), rng.uniform(40, 90), rng.uniform(-10, 10))
    ref = camera_pose([xy[0], xy[1], alt], att)
    # query seen from a nearby pose so anchors land between pixel centres
    qatt = EulerAngles(att.yaw + np.radians(rng.uniform(-2, 2)), att.pitch + np.radians(rng.uniform(-2, 2)), att.roll)
    query_pose = camera_pose(ref.t + rng.uniform(-3.0, 3.0, size=3), qatt)
    hatt = EulerAngles(att.yaw + np.radians(rng.uniform(-0.5, 0.5)), att.pitch + np.radians(rng.uniform(-0.5, 0.5)), att.roll)
    hyp = camera_pose(ref.t + rng.uniform(-1.0, 1.0, size=3), hatt)
    return scene, ref, query_pose, hyp


def jacobian_check(
    n_triples: int = 1000,
    anchors_per_pose: int = 20,
    seed: int = 0,
    eps: float = 1e-6,
    boundary_px: float = 0.01,
    k: Intrinsics | None = None,
) -> JacobianReport:
    """Relative error ``||J_fd - J|| / ||J||`` on ``n_triples`` (scene, pose, anchor) triples per level.

    Pairs are drawn until every level has ``n_triples`` usable anchors.
    """
    k = k or Intrinsics.from_fov(128, 128, 60.0)
    rng = np.random.default_rng(seed)
    errs = [[], [], []]
    skipped = [0, 0, 0]
    steps = np.concatenate([eps * np.eye(6), -eps * np.eye(6)])
    dR, dt = exp_batch(steps)
    while min(len(e) for e in errs) < n_triples:
        scene, ref_pose, query_pose, hyp = _random_pair(rng, k)
        bundle = make_bundle(scene, ref_pose, k, anchors_per_pose, int(rng.integers(0, 2**31)))
        query = build_pyramid(render(scene, query_pose, k))
        R = np.concatenate([hyp.R[None], dR @ hyp.R])
        t = np.concatenate([hyp.t[None], (dR @ hyp.t[:, None])[..., 0] + dt])
        for ell in range(3):
            ev = evaluate_level(R, t, bundle, query, ell, delta=np.inf, margin=1.0)
            kl = level_intrinsics(k, ell)
            Pc = (bundle.anchors_world - hyp.t) @ hyp.R
            u, v, _ = project_points(kl, Pc)
            ok = ev.valid.all(axis=0) & ~_near_edge(u, boundary_px) & ~_near_edge(v, boundary_px)
            skipped[ell] += int((~ok).sum())
            J = ev.J[0]  # (N, C, 6)
            fd = (ev.r[1:7] - ev.r[7:13]) / (2.0 * eps)  # (6, N, C)
            fd = np.moveaxis(fd, 0, -1)
            num = np.linalg.norm((fd - J).reshape(J.shape[0], -1), axis=1)
            den = np.linalg.norm(J.reshape(J.shape[0], -1), axis=1)
            good = ok & (den > 0)
            errs[ell].extend((num[good] / den[good]).tolist())
    errs = [e[:n_triples] for e in errs]
    return JacobianReport(
        max_rel_error=tuple(float(np.max(e)) if e else float("nan") for e in errs),
        median_rel_error=tuple(float(np.median(e)) if e else float("nan") for e in errs),
        samples=tuple(len(e) for e in errs),
        skipped=tuple(skipped),
    )


# --- convergence basins ------------------------------------------------------------------


def _offset(gt: Pose, kind: str, size: float, rng) -> Pose:
    if kind == "yaw":
        return Pose(rot_z(np.radians(size * rng.choice([-1.0, 1.0]))) @ gt.R, gt.t.copy())
    if kind == "translation":
        d = rng.standard_normal(3)
        return Pose(gt.R, gt.t + size * d / np.linalg.norm(d))
    raise ValueError(f"unknown offset kind {kind!r}")


def basin_rates(scene, k: Intrinsics, kind: str, offsets, trials: int, iters: int = 15, seed: int = 0, n_anchors: int = 500):
    """Convergence rate (percent) per level and offset for single-level LM.

    Each trial starts one hypothesis ``offsets[j]`` away from the truth
    (degrees of yaw or meters of translation) and refines it on a single
    pyramid level.  It converges when it ends within 1 m and 1 deg.
    Returns a ``(3, len(offsets))`` array.
    """
    from .ablation import standard_pose
    from .engine import query_render

    rates = np.zeros((3, len(offsets)))
    for tr in range(trials):
        rng = np.random.default_rng(seed + tr)
        gt = standard_pose(rng)
        bundle = make_bundle(scene, gt, k, n_anchors, seed + tr)
        query = query_render(scene, gt, k)
        for j, size in enumerate(offsets):
            start = _offset(gt, kind, size, rng)
            for level in range(3):
                sched = RefineSchedule(iterations_per_level=tuple(iters if ell == level else 0 for ell in range(3)))
                h = refine(start, bundle, query, sched)
                if not h.flagged:
                    dt, dr = pose_error(h.pose, gt)
                    rates[level, j] += dt <= 1.0 and dr <= 1.0
    return 100.0 * rates / trials


def half_width(offsets, rates) -> float:
    """Largest offset at which at least half of the trials converged."""
    ok = [o for o, r in zip(offsets, rates) if r >= 50.0]
    return float(max(ok)) if ok else 0.0
