"""Command-line entry point: ``vecoffload {simulate,train,evaluate,sweep}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from ..config import ConfigError, ScenarioConfig, load_config
from ..marl.trainer import TrainerConfig
from .experiments import SWEEP_AXES, ExperimentPlan, InvariantViolation, run_plan

log = logging.getLogger("vecoffload")

# exit codes
OK, FAILURE, INVARIANT = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vecoffload", description=__doc__)
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode, help_text in (
        ("simulate", "run a fixed policy and write metrics and per-slot traces"),
        ("train", "train the multi-agent PPO policy"),
        ("evaluate", "run a heuristic or a trained checkpoint and write metrics"),
        ("sweep", "repeat runs across a parameter axis and seeds"),
    ):
        p = sub.add_parser(mode, help=help_text)
        p.add_argument("--config", type=Path, help="scenario YAML file (defaults to the bundled one)")
        p.add_argument("--seed", type=int, default=None, help="base seed (default: config seed)")
        p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
        p.add_argument("--policy", default="mappo" if mode == "train" else "greedy_grid",
                       help="random|all_local|all_edge_nearest|uniform_split|greedy_grid|trained:<ckpt>|mappo")
        p.add_argument("--dt", choices=("on", "off"), default="on", help="twin aggregate in observations")
        p.add_argument("--out", type=Path, default=Path("out"), help="parent directory for run outputs")
        p.add_argument("--run-name", help="run directory name (reuse to resume a sweep)")
        p.add_argument("--episodes", type=int, default=300 if mode in ("train", "sweep") else 10)
        p.add_argument("--workers", type=int, default=1, help="parallel sweep cells")
        p.add_argument("--traces", action="store_true", default=mode == "simulate",
                       help="write per-slot trace CSVs")
        p.add_argument("--lr", type=float, default=None, help="trainer learning rate")
        p.add_argument("--episodes-per-update", type=int, default=None)
        p.add_argument("-v", "--verbose", action="store_true")
        if mode == "sweep":
            p.add_argument("--sweep-axis", choices=SWEEP_AXES, required=True)
            p.add_argument("--sweep-values", required=True, help="comma-separated values, e.g. 2,3,4")
    return parser


def plan_from_args(args) -> ExperimentPlan:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    seed = cfg.seed if args.seed is None else args.seed
    overrides = {}
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.episodes_per_update is not None:
        overrides["episodes_per_update"] = args.episodes_per_update
    run_name = args.run_name or f"{args.mode}-{time.strftime('%Y%m%d-%H%M%S')}"
    values = tuple(v.strip() for v in args.sweep_values.split(",")) if args.mode == "sweep" else ()
    return ExperimentPlan(
        mode=args.mode,
        out_dir=args.out / run_name,
        policy=args.policy,
        seed=seed,
        seeds=args.seeds,
        episodes=args.episodes,
        dt_enabled=args.dt == "on",
        sweep_axis=getattr(args, "sweep_axis", None),
        sweep_values=values,
        workers=args.workers,
        traces=args.traces,
        cfg=cfg,
        trainer=TrainerConfig(max_episodes=args.episodes, **overrides),
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        plan = plan_from_args(args)
        out = run_plan(plan)
    except InvariantViolation as exc:
        log.error("invariant violated: %s", exc)
        return INVARIANT
    except (ConfigError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return FAILURE
    print(out)
    return OK


if __name__ == "__main__":
    sys.exit(main())
