"""Convergence basin of plain LM at each pyramid level.

Starts a single hypothesis at a pure yaw or pure translation offset from
the truth and refines it on one level only.  A trial converges when the
result is within 1 m and 1 deg.  The half-width reported per level is the
largest offset at which at least half of the trials converged; it should
shrink from the coarse level to the fine one.

    python3 scripts/basin_analysis.py [--trials 20]
"""

import argparse

from georeg.config import RunConfig, intrinsics_of, scene_of
from georeg.diagnostics import basin_rates, half_width

YAW_OFFSETS = (2, 4, 8, 10, 12, 16, 20, 25, 30)  # deg
TRANSLATION_OFFSETS = (5, 10, 15, 20, 30, 40, 60, 80)  # m


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=100)
    args = ap.parse_args()
    cfg = RunConfig()
    scene, k = scene_of(cfg), intrinsics_of(cfg)
    for kind, offsets, unit in (("yaw", YAW_OFFSETS, "deg"), ("translation", TRANSLATION_OFFSETS, "m")):
        rates = basin_rates(scene, k, kind, offsets, args.trials, seed=args.seed)
        print(f"{kind} offset [{unit}]   " + "".join(f"{o:>6g}" for o in offsets) + "   half-width")
        for level, name in enumerate(("coarse", "middle", "fine")):
            row = "".join(f"{r:>6.0f}" for r in rates[level])
            print(f"  level {level} ({name:<6})   {row}   {half_width(offsets, rates[level]):>6g}")
        print()


if __name__ == "__main__":
    main()
