#!/usr/bin/env python3
"""Five-seed farm training study: rough terrain, ten tree obstacles.

Trains one policy per seed with the desk recipe used by the acceptance gate,
then prints the spike-trend summary (successes in the first vs final fifth of
iterations) and a quick deterministic evaluation of each run's candidate
checkpoints.

Usage: python scripts/train_farm_seeds.py [--steps 2000000] [--out runs/farm]
"""

import argparse
import csv
from pathlib import Path

from roverlab import checkpoint as ckptmod
from roverlab import evalx, ppo
from roverlab.env import farm_domain
from roverlab.rover import ControlLimits, RoverGeometry
from roverlab.terrain import TerrainConfig

TRAIN_EPISODE_CAP = 300  # tight cap keeps episode turnover high; eval uses 1000


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=2_000_000)
    ap.add_argument("--seeds", type=int, nargs="*", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="runs/farm")
    args = ap.parse_args()

    geometry, limits = RoverGeometry(), ControlLimits()
    domain = farm_domain(TerrainConfig(seed=5))
    for seed in args.seeds:
        out_dir = Path(args.out) / f"seed{seed}"
        cfg = ppo.desk_config(total_env_steps=args.steps)
        result = ppo.train(ppo.TrainSetup(
            ppo=cfg, domain=domain, geometry=geometry, limits=limits,
            master_seed=seed, out_dir=out_dir,
            checkpoint_interval_steps=200_000,
            max_episode_steps=TRAIN_EPISODE_CAP))

        rows = list(csv.DictReader(open(result.telemetry_path)))
        succ = [int(r["success_count"]) for r in rows]
        k = len(succ) // 5
        print(f"seed {seed}: {result.iterations} iterations, "
              f"successes first fifth={sum(succ[:k])} final fifth={sum(succ[-k:])}")
        for name in ("best_success", "best", "final"):
            params = ckptmod.load_checkpoint(out_dir / f"{name}.ckpt").params
            policy = evalx.mean_policy(params, limits)
            m, _, _ = evalx.evaluate(policy, domain, geometry, limits,
                                     min_outcomes=50, seed=900 + seed)
            print(f"  {name}: farm success {m.success_rate:.2f} "
                  f"({m.successes}s/{m.collisions}c/{m.oob}o/{m.timeouts}t)")


if __name__ == "__main__":
    main()
