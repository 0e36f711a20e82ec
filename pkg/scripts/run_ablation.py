"""Print all three ablation tables (rotation-aware sampling, motion weight, hypothesis count).

    python3 scripts/run_ablation.py [--trials 50] [--out tables.json]
"""

import argparse
import json
import time

from georeg.ablation import AXES, AblationBase, recall_spread, run_ablation
from georeg.config import RunConfig, intrinsics_of, scene_of


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--levels", nargs="+", type=float, default=[3.0, 5.0, 10.0])
    ap.add_argument("--axes", nargs="+", default=list(AXES), choices=AXES)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()

    cfg = RunConfig()
    base = AblationBase(scene_of(cfg), intrinsics_of(cfg), cfg.jngo.lambda_motion, trials=args.trials, seed=args.seed)
    tables = []
    for axis in args.axes:
        t0 = time.perf_counter()
        table = run_ablation(base, axis, tuple(args.levels))
        print(table.format())
        for label, row in table.rows.items():
            print(f"  spread[{label}] = {recall_spread(row):.1f}")
        print(f"  ({time.perf_counter() - t0:.0f} s)\n")
        tables.append(table.to_dict())
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(tables, fh, indent=2)


if __name__ == "__main__":
    main()
