"""Operator command line: rtl train | eval | transfer | plot | terrain.

Exit codes: 0 success, 2 usage or configuration problems (bad config keys,
unreadable inputs, checkpoint refusals), 3 runtime failures (diverged
training). RTL_THREADS caps BLAS worker threads when set; the cap is applied
before numpy loads, so it must be set in the environment of the process.
"""

from __future__ import annotations

import os


def _cap_threads() -> None:
    n = os.environ.get("RTL_THREADS")
    if n:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


_cap_threads()

import argparse
import csv
import sys
import traceback
from dataclasses import replace
from pathlib import Path

from . import checkpoint as ckptmod
from . import config as cfgmod
from . import evalx
from . import plot as plotmod
from . import ppo as ppomod
from . import terrain as terrainmod
from .env import PlacementError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load_config(path: str | None, seed: int | None) -> cfgmod.RunConfig:
    if path is None:
        run = cfgmod.default_run_config()
    else:
        run = cfgmod.load_run_config(path)
    if seed is not None:
        run = replace(run, master_seed=seed)
    return run


def cmd_train(args) -> int:
    run = _load_config(args.config, args.seed)
    if args.out is not None:
        run = replace(run, output_dir=args.out)
    out_dir = Path(run.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = cfgmod.emit_config(run)
    (out_dir / "config_snapshot.toml").write_text(snapshot)
    domain = run.domains[args.domain]
    setup = ppomod.TrainSetup(
        ppo=run.ppo, domain=domain, geometry=run.geometry, limits=run.limits,
        master_seed=run.master_seed, out_dir=out_dir,
        checkpoint_interval_steps=run.checkpoint_interval_steps,
        run_digest=cfgmod.run_digest(run),
        max_episode_steps=run.episode_max_steps,
    )
    result = ppomod.train(setup, resume_from=args.resume)
    print(f"trained {result.env_steps} env steps over {result.iterations} iterations")
    print(f"telemetry: {result.telemetry_path}")
    print(f"final checkpoint: {result.final_checkpoint}")
    print(f"best checkpoint:  {result.best_checkpoint} "
          f"(mean reward {result.best_mean_reward:.4f})")
    return EXIT_OK


def _metrics_summary(m: evalx.EvalMetrics) -> str:
    tps = "n/a" if m.ts_per_success is None else f"{m.ts_per_success:.1f}"
    tpf = "n/a" if m.ts_per_failure is None else f"{m.ts_per_failure:.1f}"
    return (f"outcomes={m.total_outcomes} successes={m.successes} "
            f"collisions={m.collisions} oob={m.oob} timeouts={m.timeouts} "
            f"success_rate={m.success_rate:.4f} ts/success={tps} ts/failure={tpf}")


def cmd_eval(args) -> int:
    run = _load_config(args.config, args.seed)
    ck = ckptmod.load_checkpoint(args.checkpoint)
    if args.domain not in run.domains:
        raise cfgmod.ConfigError(
            f"unknown domain {args.domain!r}; configured: {sorted(run.domains)}")
    domain = run.domains[args.domain]
    policy = evalx.mean_policy(ck.params, run.limits)
    metrics, digest, outcomes = evalx.evaluate(
        policy, domain, run.geometry, run.limits, args.min_outcomes,
        seed=run.master_seed if args.seed is None else args.seed,
        max_episode_steps=run.episode_max_steps)
    out = Path(args.out)
    with open(out, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(evalx.EVAL_EPISODE_COLUMNS)
        for i, o in enumerate(outcomes):
            writer.writerow([i, o.kind.value, o.steps, repr(o.final_distance)])
    print(f"domain={args.domain} layouts={digest} {_metrics_summary(metrics)}")
    print(f"episodes csv: {out}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    run = _load_config(args.config, args.seed)
    ck = ckptmod.load_checkpoint(args.checkpoint)
    if args.domain not in run.domains:
        raise cfgmod.ConfigError(
            f"unknown domain {args.domain!r}; configured: {sorted(run.domains)}")
    report = evalx.transfer_protocol(
        ck.params, run.domains[args.domain], run.geometry, run.limits,
        runs=args.runs, min_outcomes=args.min_outcomes,
        base_seed=run.master_seed if args.seed is None else args.seed,
        max_episode_steps=run.episode_max_steps)
    with open(args.out, "w") as fp:
        evalx.write_transfer_csv(report, fp)
    for i, m in enumerate(report.runs):
        print(f"run {i}: {_metrics_summary(m)}")
    print(f"mean success rate: {report.mean_success_rate:.4f}  "
          f"best: {report.best_success_rate:.4f}")
    print(f"report csv: {args.out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    if args.telemetry:
        n = plotmod.render_telemetry_svg(args.telemetry, args.out)
        print(f"wrote {args.out} ({n} points)")
    else:
        n = plotmod.render_report_svg(args.report, args.out)
        print(f"wrote {args.out} ({n} run groups)")
    return EXIT_OK


def cmd_terrain(args) -> int:
    run = _load_config(args.config, None)
    tcfg = run.terrain if args.seed is None else replace(run.terrain, seed=args.seed)
    hf = terrainmod.generate_heightfield(tcfg)
    hf = terrainmod.clamp_slopes(hf, tcfg.slope_threshold)
    with open(args.out, "w") as fp:
        terrainmod.write_csv(hf, fp)
    print(f"wrote {args.out} ({hf.nx}x{hf.ny} nodes, cell {hf.cell_size} m)")
    if args.pgm:
        with open(args.pgm, "w") as fp:
            terrainmod.write_pgm(hf, fp)
        print(f"wrote {args.pgm}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtl",
                                     description="rover navigation training lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy with PPO")
    p.add_argument("--config", help="run config file (defaults to built-in desk profile)")
    p.add_argument("--seed", type=int, help="override master seed")
    p.add_argument("--out", help="override output directory")
    p.add_argument("--domain", default="farm", help="training domain name")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a frozen checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--config")
    p.add_argument("--min-outcomes", type=int, default=evalx.DEFAULT_MIN_OUTCOMES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="eval_episodes.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="zero-shot transfer protocol")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--domain", default="lunar")
    p.add_argument("--config")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--min-outcomes", type=int, default=evalx.DEFAULT_MIN_OUTCOMES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="transfer_report.csv")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("plot", help="render telemetry or transfer charts to SVG")
    grp = p.add_mutually_exclusive_group(required=True)
    grp.add_argument("--telemetry", help="telemetry csv from training")
    grp.add_argument("--report", help="transfer report csv")
    p.add_argument("--out", required=True, help="output .svg path")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("terrain", help="emit a generated heightfield")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output .csv path")
    p.add_argument("--pgm", help="optional grayscale preview path")
    p.set_defaults(func=cmd_terrain)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (cfgmod.ConfigError, terrainmod.TerrainConfigError,
            ckptmod.CheckpointError, PlacementError,
            plotmod.MalformedCsvError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ppomod.TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception:
        traceback.print_exc()
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
