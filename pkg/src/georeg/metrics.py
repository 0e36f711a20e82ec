"""Pose and target error metrics, plus their JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch
from .se3 import Pose, rotation_angle

DEFAULT_THRESHOLDS = ((1.0, 1.0), (3.0, 3.0), (5.0, 5.0))
DEFAULT_TARGET_KS = (1.0, 3.0, 5.0)


def pose_error(est: Pose, gt: Pose):
    """``(translation m, rotation deg)`` between an estimate and ground truth."""
    trans = float(np.linalg.norm(est.t - gt.t))
    rot = float(np.degrees(abs(rotation_angle(gt.R.T @ est.R))))
    return trans, rot


def _median(x):
    return float(np.median(x)) if len(x) else float("nan")


@dataclass(eq=False)
class MetricsReport:
    median_translation_err: float
    median_rotation_err: float
    recall: dict  # (m, deg) -> percent
    completeness: float
    mean_fps: float
    translation_errors: list  # per frame, None where the frame failed
    rotation_errors: list

    def to_dict(self) -> dict:
        return {
            "median_translation_err": self.median_translation_err,
            "median_rotation_err": self.median_rotation_err,
            "recall": [{"m": m, "deg": d, "percent": p} for (m, d), p in self.recall.items()],
            "completeness": self.completeness,
            "mean_fps": self.mean_fps,
            "translation_errors": list(self.translation_errors),
            "rotation_errors": list(self.rotation_errors),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            median_translation_err=float(d["median_translation_err"]),
            median_rotation_err=float(d["median_rotation_err"]),
            recall={(float(e["m"]), float(e["deg"])): float(e["percent"]) for e in d["recall"]},
            completeness=float(d["completeness"]),
            mean_fps=float(d["mean_fps"]),
            translation_errors=[None if x is None else float(x) for x in d["translation_errors"]],
            rotation_errors=[None if x is None else float(x) for x in d["rotation_errors"]],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def same_as(self, other: "MetricsReport") -> bool:
        return json.dumps(self.to_dict(), sort_keys=True) == json.dumps(other.to_dict(), sort_keys=True)


def compute_metrics(results, gt_trajectory, thresholds=DEFAULT_THRESHOLDS) -> MetricsReport:
    """Medians over localized frames; recall over all frames (failures are misses)."""
    results = list(results)
    gt_trajectory = list(gt_trajectory)
    if len(results) != len(gt_trajectory):
        raise LengthMismatch(f"{len(results)} results vs {len(gt_trajectory)} ground-truth poses")
    n = len(results)
    te, re = [], []
    for r, gt in zip(results, gt_trajectory):
        if r.localized:
            t, a = pose_error(r.estimated_pose, gt)
            te.append(t)
            re.append(a)
        else:
            te.append(None)
            re.append(None)
    ok_t = [t for t in te if t is not None]
    ok_r = [a for a in re if a is not None]
    recall = {}
    for m, d in thresholds:
        hits = sum(1 for t, a in zip(te, re) if t is not None and t <= m and a <= d)
        recall[(float(m), float(d))] = 100.0 * hits / n if n else 0.0
    latencies = [r.latency_ms for r in results]
    mean_lat = float(np.mean(latencies)) if latencies else float("nan")
    return MetricsReport(
        median_translation_err=_median(ok_t),
        median_rotation_err=_median(ok_r),
        recall=recall,
        completeness=100.0 * len(ok_t) / n if n else 0.0,
        mean_fps=1000.0 / mean_lat if mean_lat > 0 else float("inf"),
        translation_errors=te,
        rotation_errors=re,
    )


@dataclass(eq=False)
class TargetReport:
    recall_at: dict  # k meters -> percent
    errors: list = field(default_factory=list)  # per target, None on a miss

    def to_dict(self) -> dict:
        return {"recall_at": [{"k": k, "percent": p} for k, p in self.recall_at.items()], "errors": list(self.errors)}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetReport":
        return cls(
            recall_at={float(e["k"]): float(e["percent"]) for e in d["recall_at"]},
            errors=[None if x is None else float(x) for x in d["errors"]],
        )


def target_report(observations, truths, ks=DEFAULT_TARGET_KS) -> TargetReport:
    """Recall of targets within ``k`` meters of their true 3D position; misses count against."""
    observations = list(observations)
    truths = list(truths)
    if len(observations) != len(truths):
        raise LengthMismatch(f"{len(observations)} observations vs {len(truths)} truths")
    errs = []
    for obs, gt in zip(observations, truths):
        if obs.hit:
            errs.append(float(np.linalg.norm(obs.world_estimate - np.asarray(gt, dtype=float))))
        else:
            errs.append(None)
    n = len(errs)
    recall = {float(k): (100.0 * sum(1 for e in errs if e is not None and e <= k) / n if n else 0.0) for k in ks}
    return TargetReport(recall, errs)
