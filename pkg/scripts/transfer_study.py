#!/usr/bin/env python3
"""Zero-shot transfer study: evaluate a farm-trained checkpoint on the lunar
domain with the ten-run protocol and write the report CSV.

Usage: python scripts/transfer_study.py --checkpoint runs/farm/seed0/best_success.ckpt
"""

import argparse

from roverlab import checkpoint as ckptmod
from roverlab import evalx
from roverlab.env import lunar_domain
from roverlab.rover import ControlLimits, RoverGeometry
from roverlab.terrain import TerrainConfig


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--min-outcomes", type=int, default=170)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="transfer_report.csv")
    args = ap.parse_args()

    params = ckptmod.load_checkpoint(args.checkpoint).params
    report = evalx.transfer_protocol(
        params, lunar_domain(TerrainConfig(seed=5)), RoverGeometry(),
        ControlLimits(), runs=args.runs, min_outcomes=args.min_outcomes,
        base_seed=args.seed)
    with open(args.out, "w") as fp:
        evalx.write_transfer_csv(report, fp)
    for i, m in enumerate(report.runs):
        print(f"run {i}: success_rate={m.success_rate:.4f} "
              f"({m.successes}s/{m.collisions}c/{m.oob}o/{m.timeouts}t, "
              f"{m.total_timesteps} steps)")
    print(f"mean={report.mean_success_rate:.4f} best={report.best_success_rate:.4f}")
    print(f"reference from the full-scale study: mean 46.69%, best 73.33%")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
