#!/usr/bin/env python3
"""Render the reward-vs-steps curve and the transfer success/failure chart.

Usage: python scripts/make_plots.py --telemetry runs/farm/seed0/telemetry.csv \
           --report transfer_report.csv --out-dir plots
"""

import argparse
from pathlib import Path

from roverlab import plot


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--telemetry")
    ap.add_argument("--report")
    ap.add_argument("--out-dir", default="plots")
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.telemetry:
        n = plot.render_telemetry_svg(args.telemetry, out / "reward_curve.svg")
        print(f"reward_curve.svg: {n} iterations plotted")
    if args.report:
        n = plot.render_report_svg(args.report, out / "transfer_runs.svg")
        print(f"transfer_runs.svg: {n} runs plotted")
    if not args.telemetry and not args.report:
        ap.error("need --telemetry and/or --report")


if __name__ == "__main__":
    main()
