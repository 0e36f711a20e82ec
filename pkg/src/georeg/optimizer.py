"""Multi-hypothesis feature-metric pose optimizer.

Pipeline for one query frame:

1. :func:`generate_hypotheses` perturbs the centre pose on a pitch/yaw grid
   and adds Gaussian translation offsets.
2. :func:`refine_batch` runs coarse-to-fine Levenberg-Marquardt on every
   hypothesis at once.  Residuals are query-minus-reference features at the
   projected geo-anchors; the robust cost is a Huber loss on the weighted
   squared residual norm, entering the normal equations through IRLS weights.
3. :func:`select` adds a squared-geodesic motion penalty and keeps the
   argmin.

Hypotheses are independent, so the batch dimension is the parallel axis.
Anchor sums go through a blocked, compensated reduction so the result does
not depend on how anchors are chunked.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .camera import BODY_FROM_CAMERA, Intrinsics, level_intrinsics, project_points, projection_jacobian_batch
from .errors import AllHypothesesInvalid, AngleNearPi, ConfigMismatch, SolveFailed
from .features import FeaturePyramid, bilinear
from .kernels import level_pass
from .se3 import Pose, Twist, exp_batch, geodesic_distance_sq, hat_batch, rot_x, rot_y, rot_z

REDUCTION_BLOCK = 64


# --- configuration ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SamplerConfig:
    """Hypothesis sampler.

    ``mode="grid"`` is the rotation-aware pitch/yaw box; ``mode="isotropic"``
    draws ``isotropic_count`` uniform perturbations on yaw, pitch and roll
    within ``+-isotropic_alpha`` (the ablation baseline).
    """

    alpha_pitch: float = np.radians(11.0)
    alpha_yaw: float = np.radians(11.0)
    pitch_step: float = np.radians(2.0)
    yaw_step: float = np.radians(2.0)
    sigma_t: np.ndarray = field(default_factory=lambda: np.eye(3))
    rng_seed: int = 0
    mode: str = "grid"
    isotropic_alpha: float = np.radians(2.0)
    isotropic_count: int = 144

    def __post_init__(self):
        object.__setattr__(self, "sigma_t", np.asarray(self.sigma_t, dtype=float).reshape(3, 3))


@dataclass(frozen=True)
class RefineSchedule:
    # 10 fine steps: with 4, degraded sequences inherit the start pose and drift
    iterations_per_level: tuple = (2, 3, 10)
    lm_lambda_init: float = 1e-2
    lm_lambda_up: float = 10.0
    lm_lambda_down: float = 0.5
    lm_lambda_min: float = 1e-6
    lm_lambda_max: float = 1e4
    huber_delta: float = 0.5
    min_anchors: int = 50
    margin: float = 1.0

    def __post_init__(self):
        its = self.iterations_per_level
        if len(its) != 3 or min(its) < 0 or max(its) < 1:
            raise ValueError("need three non-negative iteration counts, at least one positive")
        if not (self.lm_lambda_up > 1.0 and 0.0 < self.lm_lambda_down < 1.0):
            raise ValueError("lambda multipliers must satisfy up > 1 > down > 0")
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")


@dataclass(frozen=True, eq=False)
class Hypothesis:
    pose: Pose
    photometric_cost_fine: float
    total_cost: float
    valid_anchor_count: int
    flagged: bool = False
    accepted_steps: int = 0


@dataclass(frozen=True, eq=False)
class LinearSystem:
    H: np.ndarray
    g: np.ndarray


@dataclass(eq=False)
class RunDiagnostics:
    hypotheses: list
    total_costs: np.ndarray
    index: int
    wall_time_s: float
    initial_poses: list


# --- hypothesis generation -----------------------------------------------------


def _grid_nodes(alpha, step):
    if alpha == 0.0:
        return np.zeros(1)
    if step <= 0:
        raise ConfigMismatch("grid step must be positive")
    n = 2.0 * alpha / step
    if abs(n - round(n)) > 1e-9:
        raise ConfigMismatch(f"step {step:g} does not tile [-{alpha:g}, {alpha:g}]")
    return -alpha + step * np.arange(int(round(n)) + 1)


def _translation_offsets(rng, sigma, m):
    w, V = np.linalg.eigh(0.5 * (sigma + sigma.T))
    root = V * np.sqrt(np.clip(w, 0.0, None))
    return rng.standard_normal((m, 3)) @ root.T


def _perturb(center: Pose, yaw, pitch, roll=0.0):
    # yaw about world vertical, pitch/roll about the body's lateral/forward axes
    body_pert = rot_y(pitch) @ rot_x(roll)
    cam_pert = BODY_FROM_CAMERA.T @ body_pert @ BODY_FROM_CAMERA
    return rot_z(yaw) @ center.R @ cam_pert


def generate_hypotheses_arrays(center: Pose, cfg: SamplerConfig):
    """Stacked ``(R (M,3,3), t (M,3))`` for the configured sampler."""
    rng = np.random.default_rng(cfg.rng_seed)
    if cfg.mode == "grid":
        pitches = _grid_nodes(cfg.alpha_pitch, cfg.pitch_step)
        yaws = _grid_nodes(cfg.alpha_yaw, cfg.yaw_step)
        angles = [(y, p, 0.0) for p in pitches for y in yaws]
    elif cfg.mode == "isotropic":
        a = cfg.isotropic_alpha
        draws = rng.uniform(-a, a, size=(cfg.isotropic_count, 3))
        angles = [tuple(d) for d in draws]
    else:
        raise ConfigMismatch(f"unknown sampler mode {cfg.mode!r}")
    m = len(angles)
    R = np.stack([_perturb(center, *ang) for ang in angles])
    t = center.t + _translation_offsets(rng, cfg.sigma_t, m)
    return R, t


def generate_hypotheses(center: Pose, cfg: SamplerConfig) -> list:
    R, t = generate_hypotheses_arrays(center, cfg)
    return [Pose(r, tt) for r, tt in zip(R, t)]


# --- robust cost ------------------------------------------------------------------


def huber(s, delta):
    """Huber loss of a squared residual norm ``s``."""
    s = np.asarray(s, dtype=float)
    root = np.sqrt(s)
    with np.errstate(invalid="ignore"):
        return np.where(root <= delta, s, 2.0 * delta * root - delta * delta)


def huber_weight(s, delta):
    """IRLS weight ``rho'(s) = min(1, delta / sqrt(s))``."""
    s = np.asarray(s, dtype=float)
    root = np.sqrt(s)
    return np.where(root <= delta, 1.0, delta / np.where(root > 0, root, 1.0))


# --- residuals ----------------------------------------------------------------------


@dataclass(eq=False)
class LevelEval:
    r: np.ndarray  # (M, N, C)
    J: np.ndarray | None  # (M, N, C, 6)
    w: np.ndarray  # (M, N) joint weight, 0 where invalid
    valid: np.ndarray  # (M, N)
    s: np.ndarray  # (M, N) weighted squared norm
    cost: np.ndarray  # (M,)
    count: np.ndarray  # (M,)


def evaluate_level(R, t, bundle, query: FeaturePyramid, level: int, delta: float, margin: float = 1.0, jacobian=True):
    """Residuals, Jacobians and Huber cost for stacked poses at one level."""
    kl = level_intrinsics(bundle.intrinsics, level)
    Pw = bundle.anchors_world
    # camera-frame points R^T (P - t), as row vectors
    Pc = (Pw[None, :, :] - t[:, None, :]) @ R
    u, v, front = project_points(kl, Pc)
    valid = front & kl.in_bounds(u, v, margin)
    fmap, umap = query.level(level)
    if jacobian:
        fq, grad = bilinear(fmap.data, u, v)
    else:
        fq, grad = bilinear(fmap.data, u, v, with_gradient=False), None
    wq = bilinear(umap.values, u, v, with_gradient=False)
    r = fq - bundle.ref_features[level][None]
    w = np.where(valid, wq * bundle.ref_weights[level][None], 0.0)
    r = np.where(valid[..., None], r, 0.0)
    s = w * (r * r).sum(axis=-1)
    cost = np.where(valid, huber(s, delta), 0.0).sum(axis=1)
    J = None
    if jacobian:
        # feature gradient (C x 2) . projection (2 x 3) . pose (3 x 6)
        a = projection_jacobian_batch(kl, Pc) @ np.swapaxes(R, 1, 2)[:, None]  # (M, N, 2, 3)
        B = np.empty(a.shape[:-1] + (6,))
        B[..., :3] = -a
        B[..., 3:] = a @ hat_batch(Pw)[None]
        J = grad @ B
        J[~valid] = 0.0
    return LevelEval(r=r, J=J, w=w, valid=valid, s=s, cost=cost, count=valid.sum(axis=1))


def residual(anchor_world, ref_feature, hyp_pose: Pose, query: FeaturePyramid, level: int, intrinsics: Intrinsics, margin=1.0):
    """Single-anchor residual and Jacobian, or ``None`` when the anchor is not usable."""

    class _One:
        pass

    b = _One()
    b.intrinsics = intrinsics
    b.anchors_world = np.asarray(anchor_world, dtype=float).reshape(1, 3)
    feats = [None, None, None]
    feats[level] = np.asarray(ref_feature, dtype=float).reshape(1, -1)
    b.ref_features = feats
    wts = [None, None, None]
    wts[level] = np.ones(1)
    b.ref_weights = wts
    ev = evaluate_level(hyp_pose.R[None], hyp_pose.t[None], b, query, level, delta=np.inf, margin=margin)
    if not ev.valid[0, 0]:
        return None
    return ev.r[0, 0], ev.J[0, 0]


# --- accumulation ----------------------------------------------------------------


def _neumaier_add(total, comp, x):
    t = total + x
    big = np.abs(total) >= np.abs(x)
    comp = comp + np.where(big, (total - t) + x, (x - t) + total)
    return t, comp


def compensated_sum(x, axis=1, block=REDUCTION_BLOCK):
    """Sum along ``axis`` in fixed blocks, combining block sums with Neumaier compensation."""
    x = np.moveaxis(np.asarray(x, dtype=float), axis, 0)
    n = x.shape[0]
    total = np.zeros(x.shape[1:])
    comp = np.zeros(x.shape[1:])
    for start in range(0, n, block):
        total, comp = _neumaier_add(total, comp, x[start : start + block].sum(axis=0))
    return total + comp


def _contributions(J, r, coef):
    Jw = J * coef[..., None, None]
    H = np.einsum("...ci,...cj->...ij", Jw, J)
    g = np.einsum("...ci,...c->...i", Jw, r)
    return H, g


def _accumulate_chunk(items, delta):
    H, cH = np.zeros((6, 6)), np.zeros((6, 6))
    g, cg = np.zeros(6), np.zeros(6)
    for r, J, w in items:
        r = np.asarray(r, dtype=float)
        J = np.asarray(J, dtype=float)
        s = w * float(r @ r)
        coef = w * float(huber_weight(s, delta))
        Hj, gj = _contributions(J, r, np.asarray(coef))
        H, cH = _neumaier_add(H, cH, Hj)
        g, cg = _neumaier_add(g, cg, gj)
    return H, cH, g, cg


def accumulate_system(residuals, delta: float = 0.5, chunks: int = 1, workers: int | None = None) -> LinearSystem:
    """Reduce a stream of ``(r, J, w)`` into the robust normal equations.

    ``H = sum J^T w rho' J`` and ``g = sum J^T w rho' r``.  The stream is split
    into ``chunks`` contiguous pieces reduced concurrently; partial sums are
    merged in chunk order with compensation.
    """
    items = list(residuals)
    if not items:
        return LinearSystem(np.zeros((6, 6)), np.zeros(6))
    chunks = max(1, min(chunks, len(items)))
    bounds = np.linspace(0, len(items), chunks + 1).astype(int)
    pieces = [items[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    if chunks == 1:
        parts = [_accumulate_chunk(pieces[0], delta)]
    else:
        with ThreadPoolExecutor(max_workers=workers or chunks) as pool:
            parts = list(pool.map(lambda p: _accumulate_chunk(p, delta), pieces))
    H, cH = np.zeros((6, 6)), np.zeros((6, 6))
    g, cg = np.zeros(6), np.zeros(6)
    for pH, pcH, pg, pcg in parts:
        H, cH = _neumaier_add(H, cH, pH)
        H, cH = _neumaier_add(H, cH, pcH)
        g, cg = _neumaier_add(g, cg, pg)
        g, cg = _neumaier_add(g, cg, pcg)
    H = H + cH
    return LinearSystem(0.5 * (H + H.T), g + cg)


def batch_system(ev: LevelEval, delta: float, block: int = REDUCTION_BLOCK):
    """Per-hypothesis ``(H (M,6,6), g (M,6))`` from a level evaluation.

    Anchors are summed in fixed blocks of ``block``; block partials are
    combined with Neumaier compensation (same scheme as :func:`compensated_sum`).
    """
    coef = ev.w * huber_weight(ev.s, delta)
    m, n, c, _ = ev.J.shape
    nb = -(-n // block)
    pad = nb * block - n
    J = ev.J
    r = ev.r
    if pad:
        J = np.concatenate([J, np.zeros((m, pad, c, 6))], axis=1)
        r = np.concatenate([r, np.zeros((m, pad, c))], axis=1)
        coef = np.concatenate([coef, np.zeros((m, pad))], axis=1)
    J = J.reshape(m, nb, block * c, 6)
    Jw = J * np.repeat(coef, c, axis=1).reshape(m, nb, block * c, 1)
    JwT = np.swapaxes(Jw, -1, -2)
    Hb = JwT @ J  # (M, nb, 6, 6)
    gb = (JwT @ r.reshape(m, nb, block * c, 1))[..., 0]
    H = compensated_sum(Hb, axis=1, block=1)
    H = 0.5 * (H + np.swapaxes(H, 1, 2))
    return H, compensated_sum(gb, axis=1, block=1)


def lm_solve(sys: LinearSystem, lam: float) -> Twist:
    """Solve ``(H + lam I) dxi = -g`` by Cholesky factorisation."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    A = sys.H + lam * np.eye(6)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise SolveFailed(str(exc)) from exc
    y = np.linalg.solve(L, -sys.g)
    dxi = np.linalg.solve(L.T, y)
    if not np.all(np.isfinite(dxi)):
        raise SolveFailed("non-finite increment")
    return Twist.from_vector(dxi)


def _batch_solve(H, g, lam):
    A = H + lam[:, None, None] * np.eye(6)
    ok = np.all(np.isfinite(A), axis=(1, 2)) & np.all(np.isfinite(g), axis=1)
    dxi = np.zeros_like(g)
    try:
        np.linalg.cholesky(A[ok])
        dxi[ok] = np.linalg.solve(A[ok], -g[ok][..., None])[..., 0]
    except np.linalg.LinAlgError:
        for i in np.flatnonzero(ok):
            try:
                dxi[i] = lm_solve(LinearSystem(H[i], g[i]), lam[i]).as_vector()
            except SolveFailed:
                ok[i] = False
    return dxi, ok


# --- refinement ----------------------------------------------------------------------


def level_system(R, t, bundle, query: FeaturePyramid, level, delta, margin=1.0, active=None, with_system=True, backend="fused"):
    """Cost, valid count and (optionally) normal equations for stacked poses.

    Returns ``(cost (M,), count (M,), H (M,6,6) | None, g (M,6) | None)``.
    Inactive rows come back with infinite cost and zero count.
    """
    m = R.shape[0]
    if active is None:
        active = np.ones(m, dtype=bool)
    if backend == "numpy":
        ev = evaluate_level(R, t, bundle, query, level, delta, margin, jacobian=with_system)
        H, g = batch_system(ev, delta) if with_system else (None, None)
        cost = np.where(active, ev.cost, np.inf)
        count = np.where(active, ev.count, 0)
        return cost, count, H, g
    if backend != "fused":
        raise ConfigMismatch(f"unknown backend {backend!r}")
    kl = level_intrinsics(bundle.intrinsics, level)
    fmap, umap = query.level(level)
    cost = np.full(m, np.inf)
    count = np.zeros(m, dtype=np.int64)
    H = np.zeros((m, 6, 6))
    g = np.zeros((m, 6))
    level_pass(
        np.ascontiguousarray(R, dtype=float),
        np.ascontiguousarray(t, dtype=float),
        bundle.anchors_world,
        bundle.ref_features[level],
        bundle.ref_weights[level],
        fmap.data,
        umap.values,
        np.array([kl.fx, kl.fy, kl.cx, kl.cy, kl.width, kl.height], dtype=float),
        float(margin),
        float(delta),
        np.ascontiguousarray(active, dtype=np.bool_),
        bool(with_system),
        cost,
        count,
        H,
        g,
    )
    return cost, count, (H if with_system else None), (g if with_system else None)


@dataclass(eq=False)
class BatchResult:
    R: np.ndarray
    t: np.ndarray
    cost_fine: np.ndarray
    count_fine: np.ndarray
    flagged: np.ndarray
    accepted: np.ndarray
    level_costs: list  # per level: list of (M,) cost arrays after each step


def refine_batch(R, t, bundle, query: FeaturePyramid, sched: RefineSchedule, track_costs: bool = False, backend: str = "fused") -> BatchResult:
    """Coarse-to-fine LM on a stack of hypotheses; rows never interact."""
    R = np.array(R, dtype=float)
    t = np.array(t, dtype=float)
    m = R.shape[0]
    flagged = np.zeros(m, dtype=bool)
    accepted = np.zeros(m, dtype=int)
    delta = sched.huber_delta
    level_costs = []
    cost = count = None
    for level in range(3):
        n_iter = sched.iterations_per_level[level]
        lam = np.full(m, sched.lm_lambda_init)
        cost, count, H, g = level_system(R, t, bundle, query, level, delta, sched.margin, ~flagged, True, backend)
        flagged |= count < sched.min_anchors
        history = [np.where(flagged, np.inf, cost)] if track_costs else None
        for it in range(n_iter):
            live = ~flagged
            if not live.any():
                break
            dxi, ok = _batch_solve(H, g, lam)
            flagged |= live & ~ok
            live = ~flagged
            dR, dt = exp_batch(dxi)
            R_new = dR @ R
            t_new = (dR @ t[..., None])[..., 0] + dt
            need_system = it + 1 < n_iter
            tc, tn, tH, tg = level_system(R_new, t_new, bundle, query, level, delta, sched.margin, live, need_system, backend)
            acc = live & (tn >= sched.min_anchors) & (tc < cost)
            R[acc] = R_new[acc]
            t[acc] = t_new[acc]
            cost[acc] = tc[acc]
            count[acc] = tn[acc]
            if need_system:
                H[acc] = tH[acc]
                g[acc] = tg[acc]
            accepted += acc
            lam = np.clip(
                np.where(acc, lam * sched.lm_lambda_down, lam * sched.lm_lambda_up),
                sched.lm_lambda_min,
                sched.lm_lambda_max,
            )
            if track_costs:
                history.append(np.where(flagged, np.inf, cost))
        level_costs.append(history)
    cost = np.where(flagged, np.inf, cost)
    return BatchResult(R, t, cost, count.copy(), flagged, accepted, level_costs)


def _to_hypotheses(res: BatchResult) -> list:
    return [
        Hypothesis(
            pose=Pose(res.R[i], res.t[i]),
            photometric_cost_fine=float(res.cost_fine[i]),
            total_cost=float(res.cost_fine[i]),
            valid_anchor_count=int(res.count_fine[i]),
            flagged=bool(res.flagged[i]),
            accepted_steps=int(res.accepted[i]),
        )
        for i in range(res.R.shape[0])
    ]


def refine(hyp: Pose, bundle, query: FeaturePyramid, sched: RefineSchedule = RefineSchedule()) -> Hypothesis:
    res = refine_batch(hyp.R[None], hyp.t[None], bundle, query, sched)
    return _to_hypotheses(res)[0]


# --- selection ------------------------------------------------------------------


def total_costs(hyps, predicted: Pose, lambda_motion: float) -> np.ndarray:
    out = np.empty(len(hyps))
    for i, h in enumerate(hyps):
        if h.flagged or not np.isfinite(h.photometric_cost_fine):
            out[i] = np.inf
            continue
        if lambda_motion == 0.0:
            out[i] = h.photometric_cost_fine
            continue
        try:
            out[i] = h.photometric_cost_fine + lambda_motion * geodesic_distance_sq(predicted, h.pose)
        except AngleNearPi:
            out[i] = np.inf
    return out


def select(hyps, predicted: Pose, lambda_motion: float):
    """Return ``(best_pose, index)``; ties go to the lowest index."""
    totals = total_costs(hyps, predicted, lambda_motion)
    if not np.isfinite(totals).any():
        raise AllHypothesesInvalid(f"all {len(hyps)} hypotheses flagged")
    idx = int(np.argmin(totals))
    return hyps[idx].pose, idx


def run(
    center: Pose,
    bundle,
    query: FeaturePyramid,
    sampler_cfg: SamplerConfig = SamplerConfig(),
    sched: RefineSchedule = RefineSchedule(),
    predicted: Pose | None = None,
    lambda_motion: float = 0.0,
    chunks: int = 1,
    backend: str = "fused",
):
    """Generate, refine (in ``chunks`` concurrent batches) and select.

    Returns ``(pose, RunDiagnostics)``; raises :class:`AllHypothesesInvalid`
    when nothing survives.
    """
    t0 = time.perf_counter()
    R0, t0_ = generate_hypotheses_arrays(center, sampler_cfg)
    m = R0.shape[0]
    chunks = max(1, min(chunks, m))
    bounds = np.linspace(0, m, chunks + 1).astype(int)
    if chunks == 1:
        results = [refine_batch(R0, t0_, bundle, query, sched, backend=backend)]
    else:
        with ThreadPoolExecutor(max_workers=chunks) as pool:
            results = list(
                pool.map(
                    lambda ab: refine_batch(R0[ab[0] : ab[1]], t0_[ab[0] : ab[1]], bundle, query, sched, backend=backend),
                    zip(bounds[:-1], bounds[1:]),
                )
            )
    hyps = [h for res in results for h in _to_hypotheses(res)]
    predicted = center if predicted is None else predicted
    totals = total_costs(hyps, predicted, lambda_motion)
    hyps = [
        Hypothesis(h.pose, h.photometric_cost_fine, float(tc), h.valid_anchor_count, h.flagged, h.accepted_steps)
        for h, tc in zip(hyps, totals)
    ]
    diag = RunDiagnostics(
        hypotheses=hyps,
        total_costs=totals,
        index=-1,
        wall_time_s=0.0,
        initial_poses=[Pose(r, tt) for r, tt in zip(R0, t0_)],
    )
    pose, idx = select(hyps, predicted, lambda_motion)
    diag.index = idx
    diag.wall_time_s = time.perf_counter() - t0
    return pose, diag
