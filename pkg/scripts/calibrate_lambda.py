"""Calibrate the motion-regularizer weight on the standard scene.

The weight is chosen so that lambda * d^2 equals the median fine-level
photometric cost of a pose displaced by d = 2 m, i.e. a 2 m jump costs as
much as a typical misalignment of that size.

    python3 scripts/calibrate_lambda.py [--samples 50] [--degraded]
"""

import argparse

import numpy as np

from georeg.ablation import calibrate_lambda_motion
from georeg.config import RunConfig, degradation_of, intrinsics_of, scene_of
from georeg.world import Degradation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=50)
    ap.add_argument("--displacement", type=float, default=2.0)
    ap.add_argument("--degraded", action="store_true", help="use the standard query degradation")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = RunConfig()
    deg = degradation_of(cfg) if args.degraded else Degradation()
    lam, costs = calibrate_lambda_motion(
        scene_of(cfg), intrinsics_of(cfg), args.samples, args.displacement, deg, cfg.engine.n_anchors, cfg.jngo.huber_delta, args.seed
    )
    q = np.percentile(costs, [10, 50, 90])
    print(f"fine cost at {args.displacement:g} m: p10={q[0]:.4f} median={q[1]:.4f} p90={q[2]:.4f}")
    print(f"lambda_motion = {lam:.4f}")


if __name__ == "__main__":
    main()
