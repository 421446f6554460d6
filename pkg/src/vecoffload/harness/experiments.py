"""Experiment plans: single runs, training, evaluation and resumable parameter sweeps."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import lyapunov
from ..baselines import POLICY_KINDS
from ..config import ScenarioConfig, dump_config
from ..env import VecEnv, trace_columns, trace_rows
from ..marl.checkpoint import load_checkpoint, save_checkpoint
from ..marl.trainer import TRAINING_COLUMNS, MappoTrainer, TrainedPolicy, TrainerConfig
from ..queues import QUEUE_TRACE_COLUMNS, queue_trace_rows
from ..rollout import EPISODE_COLUMNS, HeuristicController, run_episode
from .metrics import aggregate, read_csv, steady_metrics, write_csv

log = logging.getLogger(__name__)

MODES = ("simulate", "train", "evaluate", "sweep")
SWEEP_AXES = ("num_cvs", "lyapunov_v", "dt_enabled")
SUMMARY_METRICS = ("reward", "cost", "delay", "energy", "backlog")
PLOT_COLUMNS = ("series", "x", "y", "yerr")
QUEUE_COLUMNS = ("episode", "cv", "local_backlog")
MANIFEST = "manifest.json"


class InvariantViolation(RuntimeError):
    """A simulated slot broke a property the model guarantees."""


@dataclass(frozen=True)
class ExperimentPlan:
    """What to run and where to put it.

    ``policy`` is a heuristic name, ``trained:<checkpoint>`` or ``mappo``
    (train a fresh policy in every cell).
    """

    mode: str
    out_dir: Path
    policy: str = "greedy_grid"
    seed: int = 0
    seeds: int = 1
    episodes: int = 10
    dt_enabled: bool = True
    sweep_axis: str | None = None
    sweep_values: tuple = ()
    workers: int = 1
    traces: bool = False
    cfg: ScenarioConfig = field(default_factory=ScenarioConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    def __post_init__(self):
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.seeds < 1 or self.episodes < 1 or self.workers < 1:
            raise ValueError("seeds, episodes and workers must be >= 1")
        if self.mode == "train" and self.policy != "mappo":
            object.__setattr__(self, "policy", "mappo")
        if self.policy not in POLICY_KINDS and self.policy != "mappo" and not self.policy.startswith("trained:"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.mode == "sweep":
            if self.sweep_axis not in SWEEP_AXES:
                raise ValueError(f"sweep axis must be one of {SWEEP_AXES}")
            if not self.sweep_values:
                raise ValueError("sweep needs at least one value")
            object.__setattr__(self, "sweep_values", tuple(_coerce(self.sweep_axis, v) for v in self.sweep_values))
        elif self.sweep_axis is not None:
            raise ValueError("sweep axis given for a non-sweep mode")

    def cells(self) -> list[tuple[object, int]]:
        values = self.sweep_values if self.mode == "sweep" else (None,)
        return [(v, self.seed + r) for v in values for r in range(self.seeds)]

    def cell_config(self, value) -> tuple[ScenarioConfig, bool]:
        if self.sweep_axis == "num_cvs":
            return self.cfg.replace(num_cvs=value), self.dt_enabled
        if self.sweep_axis == "lyapunov_v":
            return self.cfg.replace(lyapunov_v=value), self.dt_enabled
        if self.sweep_axis == "dt_enabled":
            return self.cfg, value
        return self.cfg, self.dt_enabled

    def describe(self) -> dict:
        d = asdict(self)
        d["out_dir"] = str(self.out_dir)
        d["cfg"] = self.cfg.to_dict()
        d["trainer"]["hidden"] = list(self.trainer.hidden)
        return d


def _coerce(axis: str, value):
    if axis == "num_cvs":
        v = int(value)
        if not 2 <= v <= 6:
            raise ValueError("num_cvs sweep values must lie in 2..6")
        return v
    if axis == "lyapunov_v":
        v = float(value)
        if v <= 0:
            raise ValueError("lyapunov_v sweep values must be positive")
        return v
    if isinstance(value, str):
        if value not in ("on", "off"):
            raise ValueError("dt sweep values are 'on' and 'off'")
        return value == "on"
    return bool(value)


def cell_id(plan: ExperimentPlan, value, seed: int) -> str:
    label = "base" if value is None else f"{plan.sweep_axis}={_label(value)}"
    return f"{label}/seed={seed}"


def _label(value) -> str:
    if isinstance(value, bool):
        return "on" if value else "off"
    return repr(value)


def check_slot(outcome, cfg: ScenarioConfig) -> None:
    if not outcome.lemma_holds:
        raise InvariantViolation(
            f"drift bound violated at slot {outcome.slot}: {outcome.realized_drift!r} > {outcome.drift_bound!r}"
        )
    for i, d in enumerate(outcome.decisions):
        problems = d.violations(cfg)
        if problems:
            raise InvariantViolation(f"infeasible decision for CV {i} at slot {outcome.slot}: {problems}")
    q = outcome.queues_after
    if np.any(q.local_backlog < 0) or np.any(q.rsu_backlog < 0) or q.virtual_energy < 0:
        raise InvariantViolation(f"negative backlog at slot {outcome.slot}")


def check_energy_chain(outcomes, cfg: ScenarioConfig) -> None:
    e = [o.e_total for o in outcomes]
    lhs, rhs = lyapunov.energy_chain(e, outcomes[-1].queues_after.virtual_energy, cfg)
    if lhs > rhs + 1e-9 * max(1.0, abs(lhs), abs(rhs), cfg.energy_budget_w):
        raise InvariantViolation(f"energy budget chain violated: {lhs!r} > {rhs!r}")


def _controller(policy: str):
    if policy.startswith("trained:"):
        params, _ = load_checkpoint(policy.split(":", 1)[1])
        return TrainedPolicy(params)
    return HeuristicController(policy)


def run_cell(plan: ExperimentPlan, value, seed: int) -> dict:
    """Run one (sweep value, seed) cell and write its files; returns the summary record."""
    cfg, dt = plan.cell_config(value)
    cfg = cfg.replace(seed=seed)
    cdir = plan.out_dir / "cells" / cell_id(plan, value, seed)
    cdir.mkdir(parents=True, exist_ok=True)
    env = VecEnv(cfg, dt_enabled=dt, seed=seed)

    if plan.policy == "mappo":
        trainer = MappoTrainer(TrainerConfig(**{**asdict(plan.trainer), "seed": seed}), env)
        tlog = trainer.train(plan.episodes)
        rows = tlog.rows
        write_csv(cdir / "training_log.csv", TRAINING_COLUMNS, rows)
        save_checkpoint(cdir / "policy.npz", trainer.params, {"seed": seed, "dt_enabled": dt})
        queue_rows = [
            {"episode": r["episode"], "cv": i, "local_backlog": float(b)}
            for r, q in zip(rows, tlog.local_backlog) for i, b in enumerate(q)
        ]
    else:
        controller = _controller(plan.policy)
        if isinstance(controller, TrainedPolicy) and controller.params.actor.mlp.sizes[0] != env.obs_dim:
            raise ValueError("checkpoint observation width does not match the scenario")
        rng = np.random.default_rng([seed, 99])
        rows, queue_rows, traces, qtraces, srows = [], [], [], [], []
        for ep in range(plan.episodes):
            slot_obs = []
            stats, outcomes = run_episode(env, controller, rng, ep, on_slot=lambda o, r: slot_obs.append(o))
            for o in outcomes:
                check_slot(o, cfg)
            check_energy_chain(outcomes, cfg)
            rows.append(stats.row())
            queue_rows += [{"episode": ep, "cv": i, "local_backlog": float(b)} for i, b in enumerate(stats.local_backlog)]
            if plan.traces:
                for obs, o in zip(slot_obs, outcomes):
                    slot = ep * cfg.episode_slots + o.slot
                    traces += [dict(r, slot=slot) for r in trace_rows(o, obs, cfg)]
                    qtraces += queue_trace_rows(slot, o.queues_after, o.flows.local_arrivals, o.flows.rsu_arrivals,
                                                o.queue_delays, o.e_total)
                    srows.append(lyapunov.slot_row(slot, o.objective))
        write_csv(cdir / "metrics.csv", EPISODE_COLUMNS, rows)
        if plan.traces:
            write_csv(cdir / "episode_trace.csv", trace_columns(cfg), traces)
            write_csv(cdir / "queue_trace.csv", QUEUE_TRACE_COLUMNS, qtraces)
            write_csv(cdir / "slot_objective.csv", lyapunov.SLOT_COLUMNS, srows)
    write_csv(cdir / "queues.csv", QUEUE_COLUMNS, queue_rows)
    return summarize_cell(rows, value, seed)


def summarize_cell(rows: list[dict], value, seed: int) -> dict:
    rewards = [r["mean_reward"] for r in rows]
    tail = rows[-50:]
    out = {"value": value, "seed": seed}
    for name, col in zip(SUMMARY_METRICS, ("mean_reward", "mean_cost", "mean_delay", "mean_energy", "mean_backlog")):
        out[name] = float(np.mean([r[col] for r in tail]))
    if len(rewards) >= 50:
        sm = steady_metrics(rewards)
        out.update(steady=sm.steady, cv=sm.cv, conv_episode=sm.convergence_episode)
    return out


def _run_cell_args(args):
    return run_cell(*args)


def _load_manifest(path: Path) -> dict:
    if path.exists():
        return json.loads(path.read_text())
    return {}


def run_plan(plan: ExperimentPlan) -> Path:
    """Execute every pending cell, then aggregate summaries and plot data."""
    out = plan.out_dir
    out.mkdir(parents=True, exist_ok=True)
    dump_config(plan.cfg, out / "config.yaml")
    (out / "plan.json").write_text(json.dumps(plan.describe(), indent=2, sort_keys=True, default=str))
    manifest_path = out / MANIFEST
    manifest = _load_manifest(manifest_path)
    pending = [(v, s) for v, s in plan.cells() if cell_id(plan, v, s) not in manifest]
    if pending:
        log.info("running %d of %d cells", len(pending), len(plan.cells()))
    jobs = [(plan, v, s) for v, s in pending]
    if plan.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            results = list(pool.map(_run_cell_args, jobs))
    else:
        results = []
        for job in jobs:
            results.append(run_cell(*job))
            # record progress as we go so an interrupted sweep can resume
            manifest[cell_id(plan, job[1], job[2])] = results[-1]
            manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    for (v, s), res in zip(pending, results):
        manifest[cell_id(plan, v, s)] = res
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    write_outputs(plan, manifest)
    return out


def write_outputs(plan: ExperimentPlan, manifest: dict) -> None:
    """Aggregate cell summaries over seeds and emit plot-ready CSVs."""
    values = plan.sweep_values if plan.mode == "sweep" else (None,)
    axis = plan.sweep_axis or "none"
    summary, reward_plot, queue_plot, metric_plots = [], [], [], {m: [] for m in SUMMARY_METRICS}
    for v in values:
        cells = [manifest[cell_id(plan, v, s)] for vv, s in plan.cells() if vv == v]
        row = {"axis": axis, "value": "" if v is None else _label(v), "seeds": len(cells)}
        for m in SUMMARY_METRICS:
            row[f"{m}_mean"], row[f"{m}_std"] = aggregate(c[m] for c in cells)
            if v is not None:
                metric_plots[m].append({"series": plan.policy, "x": _x(v), "y": row[f"{m}_mean"], "yerr": row[f"{m}_std"]})
        summary.append(row)

        series = "base" if v is None else _label(v)
        per_seed, per_queue = [], []
        for vv, s in plan.cells():
            if vv != v:
                continue
            cdir = plan.out_dir / "cells" / cell_id(plan, v, s)
            metrics = "training_log.csv" if plan.policy == "mappo" else "metrics.csv"
            per_seed.append([r["mean_reward"] for r in read_csv(cdir / metrics)])
            per_queue.append(read_csv(cdir / "queues.csv"))
        rewards = np.array(per_seed)
        for ep in range(rewards.shape[1]):
            y, yerr = aggregate(rewards[:, ep])
            reward_plot.append({"series": series, "x": ep, "y": y, "yerr": yerr})
        num_cvs = max(int(r["cv"]) for r in per_queue[0]) + 1
        for i in range(num_cvs):
            for ep in range(rewards.shape[1]):
                vals = [q[ep * num_cvs + i]["local_backlog"] for q in per_queue]
                y, yerr = aggregate(vals)
                queue_plot.append({"series": f"{series}/cv{i}", "x": ep, "y": y, "yerr": yerr})

    cols = ("axis", "value", "seeds") + tuple(f"{m}_{s}" for m in SUMMARY_METRICS for s in ("mean", "std"))
    write_csv(plan.out_dir / "summary.csv", cols, summary)
    plots = plan.out_dir / "plots"
    write_csv(plots / "reward_vs_episode.csv", PLOT_COLUMNS, reward_plot)
    write_csv(plots / "queue_vs_episode.csv", PLOT_COLUMNS, queue_plot)
    if plan.mode == "sweep":
        for m, rows in metric_plots.items():
            write_csv(plots / f"{m}_vs_{plan.sweep_axis}.csv", PLOT_COLUMNS, rows)


def _x(value) -> float:
    return float(int(value)) if isinstance(value, bool) else float(value)
