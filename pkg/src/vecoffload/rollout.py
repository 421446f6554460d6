"""Running controllers through episodes and summarising what happened."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .baselines import HeuristicPolicy
from .env import SlotOutcome, VecEnv

EPISODE_COLUMNS = ("episode", "mean_reward", "mean_cost", "mean_delay", "mean_energy", "mean_backlog")


class Controller(Protocol):
    def act(self, env: VecEnv, rng: np.random.Generator) -> np.ndarray: ...


class HeuristicController:
    """Adapter giving a heuristic policy the controller interface."""

    def __init__(self, kind: str):
        self.policy = HeuristicPolicy(kind)
        self.name = kind

    def act(self, env: VecEnv, rng: np.random.Generator) -> np.ndarray:
        return self.policy.act(env.world, env.cfg, rng)


@dataclass(frozen=True)
class EpisodeStats:
    episode: int
    mean_reward: float
    mean_cost: float
    mean_delay: float
    mean_energy: float
    mean_backlog: float
    local_backlog: np.ndarray
    total_backlog: np.ndarray

    def row(self) -> dict:
        return {c: getattr(self, c) for c in EPISODE_COLUMNS}


def summarize_episode(episode: int, outcomes: Sequence[SlotOutcome]) -> EpisodeStats:
    """Per-slot means of reward, cost, latency and system energy.

    ``mean_backlog`` is the local backlog in cycles averaged over CVs and
    slots; ``local_backlog`` keeps the per-CV slot average and
    ``total_backlog`` the per-slot sum of every physical queue.
    """
    local = np.array([o.queues_after.local_backlog for o in outcomes])
    total = np.array([o.queues_after.local_backlog.sum() + o.queues_after.rsu_backlog.sum() for o in outcomes])
    return EpisodeStats(
        episode=episode,
        mean_reward=float(np.mean([o.reward for o in outcomes])),
        mean_cost=float(np.mean([o.objective.cost for o in outcomes])),
        mean_delay=float(np.mean([o.mean_latency_s for o in outcomes])),
        mean_energy=float(np.mean([o.e_total for o in outcomes])),
        mean_backlog=float(local.mean()),
        local_backlog=local.mean(axis=0),
        total_backlog=total,
    )


def run_episode(env: VecEnv, controller: Controller, rng: np.random.Generator, episode: int | None = None,
                on_slot=None) -> tuple[EpisodeStats, list[SlotOutcome]]:
    """Play one full episode; ``on_slot(observations, step_result)`` sees every slot."""
    obs, _ = env.reset(episode)
    outcomes = []
    done = False
    while not done:
        result = env.step(controller.act(env, rng))
        if on_slot is not None:
            on_slot(obs, result)
        outcomes.append(result.outcome)
        obs = result.observations
        done = result.done
    return summarize_episode(env.episode, outcomes), outcomes
