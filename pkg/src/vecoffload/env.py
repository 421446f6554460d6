"""The offloading MDP: action projection, observations and the slot transition.

A raw action for one agent is a real vector laid out as
``[local logit, K split logits, K bandwidth logits, K compute logits]``.
The world is an immutable :class:`WorldState`; :func:`env_step` is a pure
function of the world, the joint raw action and an rng, and :class:`VecEnv`
wraps it with episode bookkeeping.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import lyapunov, queues, scenario
from .compute import BRANCH_EPS, SplitDecision, TaskOutcome, TaskSpec, evaluate_task
from .config import ScenarioConfig
from .lyapunov import SlotFlows, SlotObjective
from .queues import QueueState
from .scenario import ChannelDraw, RsuState, VehicleState

# Infeasible branches are charged this many deadlines of latency.
INFEASIBLE_DEADLINES = 10.0


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def split_raw(raw: np.ndarray, num_rsus: int):
    """Slice a (..., 1 + 3K) raw action into split, bandwidth and compute logits."""
    k = num_rsus
    return raw[..., : 1 + k], raw[..., 1 + k : 1 + 2 * k], raw[..., 1 + 2 * k : 1 + 3 * k]


def project_arrays(raw, cfg: ScenarioConfig):
    """Vectorised projection of raw actions shaped (..., N, 1 + 3K).

    Split and bandwidth shares are softmaxes, so each sums to one. Compute
    requests are sigmoids of the capacity; requests on branches that carry
    no task share are dropped, and an RSU whose remaining requests exceed its
    capacity scales them all down proportionally.

    Returns:
        (split (..., N, 1 + K), bandwidth (..., N, K), grant_hz (..., N, K))
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim < 2 or raw.shape[-1] != cfg.action_dim:
        raise ValueError(f"raw actions must have shape (..., N, {cfg.action_dim}), got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw action contains non-finite entries")
    split_logits, bw_logits, f_logits = split_raw(raw, cfg.num_rsus)
    split = _softmax(split_logits)
    bw = _softmax(bw_logits)
    cap = cfg.rsu_capacity_hz
    request = np.where(split[..., 1:] > BRANCH_EPS, _sigmoid(f_logits) * cap, 0.0)
    total = request.sum(axis=-2, keepdims=True)
    scale = np.where(total > cap, cap / np.where(total > 0, total, 1.0), 1.0)
    return split, bw, np.minimum(request * scale, cap)


def project_actions(raw, cfg: ScenarioConfig) -> list[SplitDecision]:
    """Map the joint raw action (N, 1 + 3K) onto feasible per-CV decisions."""
    split, bw, grant = project_arrays(np.atleast_2d(np.asarray(raw, dtype=float)), cfg)
    return [
        SplitDecision(
            local_ratio=float(split[i, 0]),
            rsu_ratios=split[i, 1:].copy(),
            bandwidth_ratios=bw[i].copy(),
            rsu_cpu_hz=grant[i].copy(),
        )
        for i in range(split.shape[0])
    ]


def project_action(raw, cfg: ScenarioConfig) -> SplitDecision:
    """Single-agent projection (no competing requests at the RSUs)."""
    return project_actions(np.asarray(raw, dtype=float)[None, :], cfg)[0]


@dataclass(frozen=True)
class WorldState:
    """Snapshot at the start of a slot: who is where, what they must compute, and the queues."""

    slot: int
    vehicles: tuple[VehicleState, ...]
    rsus: tuple[RsuState, ...]
    tasks: tuple[TaskSpec, ...]
    channels: ChannelDraw
    in_coverage: np.ndarray
    queues: QueueState

    @property
    def num_cvs(self) -> int:
        return len(self.vehicles)


def _slot_draws(vehicles, rsus, rng: np.random.Generator, cfg: ScenarioConfig):
    channels = scenario.draw_channels(vehicles, rsus, rng, cfg)
    # coverage follows the physical position even under static_distance
    dist = scenario.distance_matrix(vehicles, rsus, cfg.replace(static_distance=False))
    tasks = tuple(scenario.spawn_task(cv, rng, cfg) for cv in vehicles)
    return channels, dist <= cfg.rsu_coverage_m, tasks


def initial_world(
    rng: np.random.Generator, cfg: ScenarioConfig, local_backlog=None, rsu_backlog=None
) -> WorldState:
    vehicles = scenario.spawn_vehicles(rng, cfg)
    rsus = scenario.make_rsus(cfg)
    channels, cover, tasks = _slot_draws(vehicles, rsus, rng, cfg)
    return WorldState(
        slot=0,
        vehicles=vehicles,
        rsus=rsus,
        tasks=tasks,
        channels=channels,
        in_coverage=cover,
        queues=QueueState.initial(cfg, local_backlog, rsu_backlog),
    )


def link_rates(world: WorldState, bandwidth: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    """(N, K) uplink rates for the given bandwidth shares; out-of-coverage links carry nothing."""
    rate = scenario.v2i_rate(bandwidth, world.channels.small_scale_gain, world.channels.pathloss_linear, cfg)
    return np.where(world.in_coverage, rate, 0.0)


def cap_outcome(outcome: TaskOutcome, task: TaskSpec, cfg: ScenarioConfig) -> TaskOutcome:
    """Replace infinite sentinels by finite charges so that rewards stay finite.

    Latency is capped at ``INFEASIBLE_DEADLINES * T_max``; a non-finite energy
    component is charged as transmitting at full power for that long.
    """
    t_cap = INFEASIBLE_DEADLINES * task.t_max_s
    e_cap = cfg.tx_power_w * t_cap

    def fix(x):
        x = np.asarray(x, dtype=float)
        return np.where(np.isfinite(x), x, e_cap)

    e_up, e_co, e_cp = fix(outcome.energy_upload_j), fix(outcome.energy_cotra_j), fix(outcome.energy_compute_j)
    e_loc = float(fix(outcome.energy_local_j))
    latency = min(outcome.task_latency_s, t_cap)
    return dataclasses.replace(
        outcome,
        latency_rsu_s=np.minimum(outcome.latency_rsu_s, t_cap),
        upload_s=np.minimum(outcome.upload_s, t_cap),
        task_latency_s=latency,
        energy_local_j=e_loc,
        energy_upload_j=e_up,
        energy_cotra_j=e_co,
        energy_compute_j=e_cp,
        task_energy_j=e_loc + math.fsum(e_up) + math.fsum(e_co) + math.fsum(e_cp),
    )


@dataclass(frozen=True)
class SlotOutcome:
    slot: int
    decisions: tuple[SplitDecision, ...]
    rates: np.ndarray
    queue_delays: np.ndarray
    outcomes: tuple[TaskOutcome, ...]
    flows: SlotFlows
    objective: SlotObjective
    queues_before: QueueState
    queues_after: QueueState
    realized_drift: float
    drift_bound: float
    bound_tolerance: float

    @property
    def reward(self) -> float:
        return self.objective.reward

    @property
    def e_total(self) -> float:
        return self.flows.e_total

    @property
    def mean_latency_s(self) -> float:
        return float(np.mean([o.task_latency_s for o in self.outcomes]))

    @property
    def lemma_holds(self) -> bool:
        return self.realized_drift <= self.drift_bound + self.bound_tolerance


def env_step(
    world: WorldState, raw_actions, rng: np.random.Generator, cfg: ScenarioConfig
) -> tuple[WorldState, np.ndarray, SlotOutcome]:
    """Advance one slot.

    Order: project actions, rates from the slot's channel draw, mode
    selection and task evaluation with windowed queue delays, queue update,
    reward, then mobility and the next slot's tasks and channels (drawn from
    ``rng``). Every agent receives the same reward.
    """
    n, k = world.num_cvs, len(world.rsus)
    decisions = project_actions(raw_actions, cfg)
    bandwidth = np.array([d.bandwidth_ratios for d in decisions]).reshape(n, k)
    rates = link_rates(world, bandwidth, cfg)

    no_delay = np.zeros(1 + k)
    local_in = np.zeros(n)
    rsu_in = np.zeros((n, k))
    for i, (d, task) in enumerate(zip(decisions, world.tasks)):
        # the mode choice does not depend on queueing delay
        eta = evaluate_task(d, task, rates[i], no_delay, cfg).mode_selector
        local_in[i] = queues.local_arrival(d, task)
        rsu_in[i] = queues.rsu_arrivals(d, task, eta)

    z = world.queues
    delays = z.delays(local_in, rsu_in, cfg)
    outcomes = tuple(
        cap_outcome(evaluate_task(d, task, rates[i], delays[i], cfg), task, cfg)
        for i, (d, task) in enumerate(zip(decisions, world.tasks))
    )

    local_service = np.array([cv.cpu_hz for cv in world.vehicles]) * cfg.slot_duration_s
    grants = np.array([d.rsu_cpu_hz for d in decisions]).reshape(n, k)
    rsu_service = grants.sum(axis=0) * cfg.slot_duration_s
    e_total = math.fsum(o.task_energy_j for o in outcomes)
    flows = SlotFlows(local_in, local_service, rsu_in, rsu_service, e_total)

    objective = lyapunov.evaluate_slot(z, outcomes, flows, cfg)
    z_next = z.step(local_in, local_service / cfg.slot_duration_s, rsu_in, rsu_service / cfg.slot_duration_s, e_total, cfg)
    realized, bound, tol = lyapunov.lemma_slack(z, z_next, flows, cfg)

    vehicles = tuple(scenario.advance_mobility(cv, cfg) for cv in world.vehicles)
    channels, cover, tasks = _slot_draws(vehicles, world.rsus, rng, cfg)
    next_world = WorldState(
        slot=world.slot + 1,
        vehicles=vehicles,
        rsus=world.rsus,
        tasks=tasks,
        channels=channels,
        in_coverage=cover,
        queues=z_next,
    )
    outcome = SlotOutcome(
        slot=world.slot,
        decisions=tuple(decisions),
        rates=rates,
        queue_delays=delays,
        outcomes=outcomes,
        flows=flows,
        objective=objective,
        queues_before=z,
        queues_after=z_next,
        realized_drift=realized,
        drift_bound=bound,
        bound_tolerance=tol,
    )
    return next_world, np.full(n, objective.reward), outcome


# ---------------------------------------------------------------- observations


def obs_dim(cfg: ScenarioConfig) -> int:
    k = cfg.num_rsus
    return 6 + 3 * k + 1 + k + 1 + 3


def dt_block(rsu_backlog) -> np.ndarray:
    """RSU-level queue aggregate the twin provides: (sum, mean, max)."""
    q = np.asarray(rsu_backlog, dtype=float)
    return np.array([q.sum(), q.mean(), q.max()])


def make_observation(world: WorldState, agent_id: int, dt_enabled: bool, cfg: ScenarioConfig) -> np.ndarray:
    """Raw SI observation of one agent.

    Layout: own task bits, instruction bits, CPU, x, y, speed; per RSU x,
    lateral offset and offload capacity; own local backlog; every RSU
    backlog; the virtual energy queue; the twin aggregate (zeros when the
    twin is disabled).
    """
    cv = world.vehicles[agent_id]
    task = world.tasks[agent_id]
    z = world.queues
    parts = [
        [task.task_bits, task.instr_bits, cv.cpu_hz, cv.x_m, cv.y_m, cv.speed_mps],
        [v for r in world.rsus for v in (r.x_m, r.lateral_m, r.cpu_hz - cfg.twin_reserve_hz)],
        [z.local_backlog[agent_id]],
        list(z.rsu_backlog),
        [z.virtual_energy],
        dt_block(z.rsu_backlog) if dt_enabled else np.zeros(3),
    ]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _pow2(x: float) -> float:
    return float(2.0 ** round(math.log2(max(x, 1e-300))))


@dataclass(frozen=True)
class ObservationScaler:
    """Per-field division by a power of two fixed by the config.

    Scales are powers of two so that ``inverse(transform(x)) == x`` holds bit
    for bit.
    """

    scale: np.ndarray

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "ObservationScaler":
        k = cfg.num_rsus
        road = cfg.road_length_m
        lateral = max(cfg.num_lanes * cfg.lane_width_m / 2, cfg.rsu_lateral_offset_m)
        cap = cfg.rsu_capacity_hz
        local_cycles = cfg.cv_cpu_range_hz[1] * cfg.slot_duration_s
        rsu_cycles = cap * cfg.slot_duration_s
        ref = (
            [max(cfg.task_bits_range[1], 1.0), max(cfg.instr_bits_range[1], 1.0), cfg.cv_cpu_range_hz[1],
             road, lateral, cfg.speed_range_mps[1]]
            + [road, lateral, cap] * k
            + [local_cycles]
            + [rsu_cycles] * k
            + [cfg.energy_budget_w]
            + [rsu_cycles * k, rsu_cycles, rsu_cycles]
        )
        return cls(np.array([_pow2(v) for v in ref]))

    def transform(self, obs: np.ndarray) -> np.ndarray:
        return np.asarray(obs) / self.scale

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        return np.asarray(scaled) * self.scale


def global_state(observations: np.ndarray) -> np.ndarray:
    """Critic input: every agent's observation, concatenated in agent order."""
    return np.asarray(observations).reshape(-1)


# ---------------------------------------------------------------- episode wrapper


@dataclass
class StepResult:
    observations: np.ndarray
    state: np.ndarray
    rewards: np.ndarray
    done: bool
    outcome: SlotOutcome


class VecEnv:
    """Episodic wrapper around :func:`env_step` with scaled observations.

    Each episode draws from its own generator seeded by ``(seed, episode)``,
    so episodes are reproducible individually and independent of any
    policy randomness.
    """

    def __init__(self, cfg: ScenarioConfig, dt_enabled: bool = True, seed: int | None = None):
        self.cfg = cfg
        self.dt_enabled = dt_enabled
        self.seed = cfg.seed if seed is None else int(seed)
        self.scaler = ObservationScaler.from_config(cfg)
        self.episode = -1
        self.world: WorldState | None = None
        self.rng: np.random.Generator | None = None

    @property
    def num_agents(self) -> int:
        return self.cfg.num_cvs

    @property
    def obs_dim(self) -> int:
        return obs_dim(self.cfg)

    @property
    def state_dim(self) -> int:
        return self.cfg.num_cvs * self.obs_dim

    @property
    def action_dim(self) -> int:
        return self.cfg.action_dim

    def reset(self, episode: int | None = None, local_backlog=None, rsu_backlog=None):
        """Start an episode; returns (scaled observations (N, D), global state)."""
        self.episode = self.episode + 1 if episode is None else int(episode)
        self.rng = np.random.default_rng([self.seed, self.episode])
        self.world = initial_world(self.rng, self.cfg, local_backlog, rsu_backlog)
        obs = self.observe()
        return obs, global_state(obs)

    def raw_observations(self) -> np.ndarray:
        return np.stack([make_observation(self.world, i, self.dt_enabled, self.cfg) for i in range(self.num_agents)])

    def observe(self) -> np.ndarray:
        return self.scaler.transform(self.raw_observations())

    def step(self, raw_actions) -> StepResult:
        if self.world is None:
            raise RuntimeError("call reset() before step()")
        if self.world.slot >= self.cfg.episode_slots:
            raise RuntimeError("episode is over; call reset()")
        self.world, rewards, outcome = env_step(self.world, raw_actions, self.rng, self.cfg)
        obs = self.observe()
        done = self.world.slot >= self.cfg.episode_slots
        return StepResult(obs, global_state(obs), rewards, done, outcome)


def obs_hash(obs: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(obs, dtype=np.float64).tobytes()).hexdigest()[:16]


def trace_columns(cfg: ScenarioConfig) -> tuple[str, ...]:
    k = cfg.num_rsus
    return (
        ("slot", "agent", "obs_hash", "local_ratio")
        + tuple(f"rsu_ratio_{j}" for j in range(k))
        + tuple(f"bandwidth_{j}" for j in range(k))
        + tuple(f"rsu_cpu_hz_{j}" for j in range(k))
        + tuple(f"eta_{j}" for j in range(k))
        + ("reward", "latency_s", "energy_j", "deadline_met", "cost", "p2")
    )


def trace_rows(outcome: SlotOutcome, observations: np.ndarray, cfg: ScenarioConfig) -> list[dict]:
    """One row per agent for this slot; ``observations`` are those the agents acted on."""
    rows = []
    for i, (d, o) in enumerate(zip(outcome.decisions, outcome.outcomes)):
        row = {"slot": outcome.slot, "agent": i, "obs_hash": obs_hash(observations[i]), "local_ratio": d.local_ratio}
        for j in range(cfg.num_rsus):
            row[f"rsu_ratio_{j}"] = float(d.rsu_ratios[j])
            row[f"bandwidth_{j}"] = float(d.bandwidth_ratios[j])
            row[f"rsu_cpu_hz_{j}"] = float(d.rsu_cpu_hz[j])
            row[f"eta_{j}"] = int(o.mode_selector[j])
        row.update(
            reward=outcome.reward,
            latency_s=o.task_latency_s,
            energy_j=o.task_energy_j,
            deadline_met=int(o.task_latency_s <= cfg.t_max_s),
            cost=lyapunov.per_cv_cost(o.task_latency_s, o.task_energy_j, cfg),
            p2=outcome.objective.p2_value,
        )
        rows.append(row)
    return rows
