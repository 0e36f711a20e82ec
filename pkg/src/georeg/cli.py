"""Command-line entry points.

Exit codes: 0 success, 1 usage or input error, 2 runtime failure,
3 a requested threshold was not met.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import config as C
from .errors import ConfigMismatch, GeoregError
from .formats import (
    TargetAnnotation,
    dump_view,
    read_ground_truth,
    read_targets,
    read_trajectory,
    write_ground_truth,
    write_targets,
    write_trajectory,
)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_THRESHOLD = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> C.RunConfig:
    cfg = C.load_config(args.config) if args.config else C.RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _parse_value(text: str):
    return yaml.safe_load(text)


def _recall_gate(text: str):
    """``M:DEG:PERCENT`` -> ((m, deg), percent)."""
    try:
        m, d, p = (float(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"bad recall gate {text!r}; expected M:DEG:PERCENT") from None
    return (m, d), p


def _write_json(path, obj):
    text = json.dumps(obj, indent=2)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


# --- subcommands ---------------------------------------------------------------------


def cmd_gen_scene(args) -> int:
    cfg = _config(args)
    scene = C.scene_of(cfg)
    info = scene.to_dict() | {"max_height_m": scene.max_height, "slope_bound": scene.slope_bound, "channels": scene.channels}
    text = yaml.safe_dump(info, sort_keys=False)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    if args.dump_dir:
        from .world import render

        k = C.intrinsics_of(cfg)
        pose = C.trajectory_of(cfg)[0]
        for p in dump_view(render(scene, pose, k), args.dump_dir):
            print(p)
    return EXIT_OK


def cmd_gen_traj(args) -> int:
    from .engine import make_trajectory

    cfg = _config(args)
    pattern = args.pattern or cfg.trajectory.pattern
    n = args.frames if args.frames is not None else cfg.trajectory.n_frames
    params = dict(cfg.trajectory.params or {}) if pattern == cfg.trajectory.pattern else {}
    for item in args.param or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"bad --param {item!r}; expected KEY=VALUE")
        params[key] = _parse_value(value)
    try:
        poses = make_trajectory(pattern, n, **params)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    write_ground_truth(args.out, poses)
    return EXIT_OK


def _trajectory_for(cfg, gt_path):
    return read_ground_truth(gt_path) if gt_path else C.trajectory_of(cfg)


def cmd_run(args) -> int:
    from .engine import run_sequence
    from .metrics import compute_metrics

    cfg = _config(args)
    gt = _trajectory_for(cfg, args.gt)
    if args.frames is not None:
        gt = gt[: args.frames]
    seq = C.sequence_config(cfg, gt)
    dual = cfg.engine.dual_thread and not args.single_thread
    results = run_sequence(seq, dual_thread=dual)
    write_trajectory(args.out, results)
    if args.metrics:
        report = compute_metrics(results, gt, thresholds=tuple(tuple(t) for t in cfg.eval.thresholds))
        _write_json(args.metrics, report.to_dict())
    n_ok = sum(r.localized for r in results)
    print(f"{n_ok}/{len(results)} frames localized -> {args.out}")
    return EXIT_OK


def cmd_gen_targets(args) -> int:
    from .geoloc import synth_targets

    cfg = _config(args)
    gt = _trajectory_for(cfg, args.gt)
    found = synth_targets(C.scene_of(cfg), gt, C.intrinsics_of(cfg), args.per_frame, rng_seed=cfg.seed)
    write_targets(args.out, [TargetAnnotation(f, p.u, p.v, w) for f, p, w in found])
    return EXIT_OK


def cmd_target(args) -> int:
    from .geoloc import track_targets
    from .metrics import target_report

    cfg = _config(args)
    results = read_trajectory(args.traj)
    targets = read_targets(args.targets)
    obs = track_targets(results, [(t.frame_index, t.pixel) for t in targets], C.scene_of(cfg), C.intrinsics_of(cfg))
    rows = ["frame_index,u,v,status,x,y,z"]
    for o in obs:
        xyz = [repr(float(c)) for c in o.world_estimate] if o.hit else ["", "", ""]
        rows.append(",".join([str(o.frame_index), repr(o.pixel.u), repr(o.pixel.v), o.status, *xyz]))
    Path(args.out).write_text("\n".join(rows) + "\n")
    truths = [t.world for t in targets]
    if all(w is not None for w in truths) and truths:
        report = target_report(obs, truths, tuple(cfg.eval.target_ks))
        _write_json(args.report, report.to_dict())
        if args.min_recall is not None:
            k, pct = args.min_recall
            got = report.recall_at.get(float(k))
            if got is None:
                raise UsageError(f"k={k} is not among the evaluated radii {list(report.recall_at)}")
            if got < pct:
                print(f"target recall@{k:g} m = {got:.1f}% < {pct:g}%", file=sys.stderr)
                return EXIT_THRESHOLD
    elif args.min_recall is not None:
        raise UsageError("--min-recall needs ground-truth world points in the targets file")
    return EXIT_OK


def _plot(report, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    te = np.array([np.nan if x is None else x for x in report.translation_errors], dtype=float)
    re = np.array([np.nan if x is None else x for x in report.rotation_errors], dtype=float)
    fig, (a, b) = plt.subplots(2, 1, sharex=True, figsize=(8, 5))
    a.plot(te, lw=1)
    a.set_ylabel("translation error [m]")
    b.plot(re, lw=1, color="tab:orange")
    b.set_ylabel("rotation error [deg]")
    b.set_xlabel("frame")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_eval(args) -> int:
    from .metrics import compute_metrics

    gates = [_recall_gate(s) for s in args.min_recall or []]
    results = read_trajectory(args.traj)
    gt = read_ground_truth(args.gt)
    thresholds = [(1.0, 1.0), (3.0, 3.0), (5.0, 5.0)]
    thresholds += [t for t, _ in gates if t not in thresholds]
    report = compute_metrics(results, gt, thresholds=tuple(thresholds))
    _write_json(args.out, report.to_dict())
    if args.plot:
        _plot(report, args.plot)
    failed = []
    for t, pct in gates:
        if report.recall[t] < pct:
            failed.append(f"recall@({t[0]:g} m, {t[1]:g} deg) = {report.recall[t]:.1f}% < {pct:g}%")
    if args.min_completeness is not None and report.completeness < args.min_completeness:
        failed.append(f"completeness = {report.completeness:.1f}% < {args.min_completeness:g}%")
    for msg in failed:
        print(msg, file=sys.stderr)
    return EXIT_THRESHOLD if failed else EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import AblationBase, recall_spread, run_ablation

    cfg = _config(args)
    base = AblationBase(
        scene=C.scene_of(cfg),
        intrinsics=C.intrinsics_of(cfg),
        lambda_motion=float(cfg.jngo.lambda_motion),
        trials=args.trials,
        n_frames=args.frames,
        n_anchors=int(cfg.engine.n_anchors),
        seed=cfg.seed,
        sampler=C.sampler_of(cfg),
    )
    table = run_ablation(base, args.axis, tuple(args.levels))
    print(table.format())
    if args.out:
        _write_json(args.out, table.to_dict())
    rows = list(table.rows.values())
    if args.min_gap is not None:
        i = int(np.argmax(table.levels))
        gap = rows[1][i] - rows[0][i]
        if gap < args.min_gap:
            print(f"ON-OFF gap at level {table.levels[i]:g} is {gap:.1f} < {args.min_gap:g}", file=sys.stderr)
            return EXIT_THRESHOLD
    if args.max_spread is not None:
        spread = recall_spread(rows[1])
        if spread > args.max_spread:
            print(f"ON-row spread {spread:.1f} > {args.max_spread:g}", file=sys.stderr)
            return EXIT_THRESHOLD
    return EXIT_OK


def cmd_jacobian_check(args) -> int:
    from .diagnostics import jacobian_check

    seed = args.seed if args.seed is not None else 0
    report = jacobian_check(args.triples, seed=seed)
    print(report.format())
    if not report.worst < args.tol:
        print(f"worst relative error {report.worst:.3e} >= {args.tol:g}", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    cfg_opt = argparse.ArgumentParser(add_help=False)
    cfg_opt.add_argument("--config", "-c", help="run configuration (YAML); built-in defaults if omitted")

    p = _Parser(prog="georeg", description="Synthetic aerial geo-registration toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-scene", parents=[common, cfg_opt], help="describe the procedural scene")
    s.add_argument("--out", "-o")
    s.add_argument("--dump-dir", help="also render the first trajectory pose as float images")
    s.set_defaults(fn=cmd_gen_scene)

    s = sub.add_parser("gen-traj", parents=[common, cfg_opt], help="write a ground-truth trajectory")
    s.add_argument("--pattern", choices=["line", "orbit", "barrel-roll"])
    s.add_argument("--frames", type=int)
    s.add_argument("--param", action="append", metavar="KEY=VALUE", help="pattern parameter, YAML value")
    s.add_argument("--out", "-o", required=True)
    s.set_defaults(fn=cmd_gen_traj)

    s = sub.add_parser("run", parents=[common, cfg_opt], help="localize a sequence")
    s.add_argument("--gt", help="ground-truth trajectory CSV; the config pattern is used otherwise")
    s.add_argument("--frames", type=int, help="only the first N frames")
    s.add_argument("--out", "-o", required=True)
    s.add_argument("--metrics", help="also write a metrics JSON")
    s.add_argument("--single-thread", action="store_true")
    s.set_defaults(fn=cmd_run)

    s = sub.add_parser("gen-targets", parents=[common, cfg_opt], help="random target annotations with truth")
    s.add_argument("--gt", help="ground-truth trajectory CSV; the config pattern is used otherwise")
    s.add_argument("--per-frame", type=int, default=1)
    s.add_argument("--out", "-o", required=True)
    s.set_defaults(fn=cmd_gen_targets)

    s = sub.add_parser("target", parents=[common, cfg_opt], help="geolocate annotated pixels")
    s.add_argument("--traj", required=True)
    s.add_argument("--targets", required=True)
    s.add_argument("--out", "-o", required=True)
    s.add_argument("--report", help="target recall JSON (printed if omitted)")
    s.add_argument("--min-recall", nargs=2, type=float, metavar=("K", "PERCENT"))
    s.set_defaults(fn=cmd_target)

    s = sub.add_parser("eval", parents=[common], help="metrics from trajectory files")
    s.add_argument("--traj", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--out", "-o", help="metrics JSON (printed if omitted)")
    s.add_argument("--plot", help="per-frame error curves as SVG")
    s.add_argument("--min-recall", action="append", metavar="M:DEG:PERCENT")
    s.add_argument("--min-completeness", type=float)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("ablate", parents=[common, cfg_opt], help="recall table with one component toggled")
    s.add_argument("--axis", required=True, choices=["rotation_aware", "motion_reg", "multi_hypothesis"])
    s.add_argument("--levels", nargs="+", type=float, default=[3.0, 5.0, 10.0])
    s.add_argument("--trials", type=int, default=50)
    s.add_argument("--frames", type=int, default=4, help="frames per trial")
    s.add_argument("--out", "-o")
    s.add_argument("--min-gap", type=float, help="fail unless ON beats OFF by this many points at the highest noise level")
    s.add_argument("--max-spread", type=float, help="fail if the ON row varies by more than this across levels")
    s.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("jacobian-check", parents=[common], help="finite-difference test of the residual Jacobian")
    s.add_argument("--triples", type=int, default=1000)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(fn=cmd_jacobian_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ConfigMismatch, FileNotFoundError) as exc:
        print(f"georeg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GeoregError, ValueError, OSError) as exc:
        print(f"georeg {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
