"""Text and binary file formats: trajectories, targets and float-image dumps.

Numbers are written with ``repr`` so values read back bit-exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import FrameResult
from .se3 import Pose

TRAJECTORY_FIELDS = ("frame_index", "status", "x", "y", "z", "qw", "qx", "qy", "qz", "cost", "latency_ms")
GROUND_TRUTH_FIELDS = ("frame_index", "x", "y", "z", "qw", "qx", "qy", "qz")
FLOAT_IMAGE_MAGIC = "GEOREG-F32"


def _pose_fields(pose: Pose) -> list:
    return [repr(float(v)) for v in pose.t] + [repr(float(v)) for v in pose.quaternion()]


def _pose_from(row: dict) -> Pose:
    t = [float(row[k]) for k in ("x", "y", "z")]
    q = [float(row[k]) for k in ("qw", "qx", "qy", "qz")]
    return Pose.from_quaternion(t, q)


def _reader(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    return csv.DictReader(lines)


# --- trajectories ---------------------------------------------------------------


def write_trajectory(path, results) -> None:
    """One row per frame; failed frames carry the coasted prediction."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_FIELDS)
        for r in results:
            w.writerow(
                [r.frame_index, r.status, *_pose_fields(r.reported_pose), repr(float(r.photometric_cost)), repr(float(r.latency_ms))]
            )


def read_trajectory(path) -> list:
    """Rows back as :class:`FrameResult` (bundle provenance is not stored)."""
    out = []
    for row in _reader(path):
        missing = set(TRAJECTORY_FIELDS) - set(row)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        pose = _pose_from(row)
        status = row["status"].strip()
        if status not in ("localized", "failed"):
            raise ValueError(f"{path}: bad status {status!r}")
        out.append(
            FrameResult(
                frame_index=int(row["frame_index"]),
                estimated_pose=pose if status == "localized" else None,
                status=status,
                photometric_cost=float(row["cost"]),
                hypothesis_index=-1,
                latency_ms=float(row["latency_ms"]),
                reported_pose=pose,
                bundle_frame=-1,
                bundle_source=-1,
            )
        )
    return out


def write_ground_truth(path, poses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GROUND_TRUTH_FIELDS)
        for i, p in enumerate(poses):
            w.writerow([i, *_pose_fields(p)])


def read_ground_truth(path) -> list:
    rows = sorted(_reader(path), key=lambda r: int(r["frame_index"]))
    idx = [int(r["frame_index"]) for r in rows]
    if idx != list(range(len(rows))):
        raise ValueError(f"{path}: frame indices must run 0..{len(rows) - 1}")
    return [_pose_from(r) for r in rows]


# --- targets -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TargetAnnotation:
    frame_index: int
    u: float
    v: float
    world: np.ndarray | None = None  # optional ground truth

    @property
    def pixel(self):
        return (self.u, self.v)


def read_targets(path) -> list:
    """``frame_index,u,v[,x,y,z]`` per line; ``#`` starts a comment."""
    out = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if parts[0] == "frame_index":
            continue
        if len(parts) not in (3, 6):
            raise ValueError(f"{path}:{lineno}: expected 3 or 6 fields, got {len(parts)}")
        world = np.array([float(p) for p in parts[3:]]) if len(parts) == 6 else None
        out.append(TargetAnnotation(int(parts[0]), float(parts[1]), float(parts[2]), world))
    return out


def write_targets(path, targets) -> None:
    lines = ["# frame_index,u,v,x,y,z"]
    for t in targets:
        fields = [str(t.frame_index), repr(float(t.u)), repr(float(t.v))]
        if t.world is not None:
            fields += [repr(float(c)) for c in t.world]
        lines.append(",".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


# --- float images ------------------------------------------------------------------


def write_float_image(path, image: np.ndarray, channel: str) -> None:
    """Three text header lines (magic, ``W H``, channel name), then LE float32 rows."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("expected a single-channel image")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"{FLOAT_IMAGE_MAGIC}\n{w} {h}\n{channel}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype="<f4").tobytes())


def read_float_image(path):
    """Returns ``(image (H, W) float32, channel name)``."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii").strip()
        if magic != FLOAT_IMAGE_MAGIC:
            raise ValueError(f"{path}: not a float image")
        w, h = (int(x) for x in fh.readline().split())
        channel = fh.readline().decode("ascii").strip()
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != w * h:
        raise ValueError(f"{path}: expected {w * h} values, found {data.size}")
    return data.reshape(h, w), channel


def dump_view(view, directory, prefix: str = "view") -> list:
    """Write each appearance channel plus depth; returns the paths written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in range(view.appearance.shape[-1]):
        p = directory / f"{prefix}_c{c}.f32"
        write_float_image(p, view.appearance[..., c], f"appearance{c}")
        paths.append(p)
    p = directory / f"{prefix}_depth.f32"
    write_float_image(p, view.depth.values, "depth")
    paths.append(p)
    return paths
