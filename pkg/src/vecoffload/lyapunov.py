"""Per-slot cost, quadratic Lyapunov function, drift bound and the drift-plus-penalty reward.

Physical backlogs are stored in CPU cycles. Squaring cycle counts gives
numbers near 1e20 that would swamp the cost term, so every quadratic and
drift expression here measures task backlogs in ``cfg.queue_unit_cycles``
(1e9 by default, i.e. gigacycles). The virtual energy queue stays in joules.
Setting ``queue_unit_cycles=1`` recovers the raw-cycle expressions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .compute import TaskOutcome
from .config import ScenarioConfig
from .queues import QueueState


@dataclass(frozen=True)
class SlotFlows:
    """Everything that moves through the queues in one slot, in cycles and joules.

    Attributes:
        local_arrivals: (N,) cycles entering each local queue.
        local_service: (N,) cycles each CV can serve, C_i * tau.
        rsu_arrivals: (N, K) cycles CV i sends to RSU k.
        rsu_service: (K,) cycles each RSU serves, summed grants times tau.
        e_total: System energy of the slot in joules.
    """

    local_arrivals: np.ndarray
    local_service: np.ndarray
    rsu_arrivals: np.ndarray
    rsu_service: np.ndarray
    e_total: float


@dataclass(frozen=True)
class DriftTerms:
    local_terms: np.ndarray
    rsu_terms: np.ndarray
    virtual_terms: np.ndarray
    b_local: float
    b_rsu: float
    b_virtual: float

    @property
    def total(self) -> float:
        return math.fsum(self.local_terms) + math.fsum(self.rsu_terms) + math.fsum(self.virtual_terms)

    @property
    def bound_constant(self) -> float:
        return self.b_local + self.b_rsu + self.b_virtual


@dataclass(frozen=True)
class SlotObjective:
    cost: float
    local_drift_terms: np.ndarray
    rsu_drift_terms: np.ndarray
    virtual_terms: np.ndarray
    penalty_weighted_cost: float
    p2_value: float
    deadline_penalty: float
    reward: float
    lyapunov_value: float
    bound_constant_b: float


def per_cv_cost(latency_s: float, energy_j: float, cfg: ScenarioConfig) -> float:
    return cfg.alpha * latency_s + (1.0 - cfg.alpha) * energy_j


def slot_cost(outcomes: Sequence[TaskOutcome], cfg: ScenarioConfig) -> float:
    """System cost: the alpha-weighted latency/energy sum over all CVs."""
    return math.fsum(per_cv_cost(o.task_latency_s, o.task_energy_j, cfg) for o in outcomes)


def lyapunov_value(z: QueueState, cfg: ScenarioConfig) -> float:
    """Half the sum of squared backlogs; the virtual queue counts once per CV."""
    u = cfg.queue_unit_cycles
    loc = np.asarray(z.local_backlog) / u
    rsu = np.asarray(z.rsu_backlog) / u
    virt = z.virtual_per_cv
    return 0.5 * math.fsum(np.concatenate([loc**2, rsu**2, virt**2]))


def drift_bound_terms(z: QueueState, flows: SlotFlows, cfg: ScenarioConfig) -> DriftTerms:
    """Backlog-weighted mismatch terms and the squared-mismatch constant B.

    Squaring ``max(q - s + a, 0) <= |q - s + a|`` gives
    ``(q'^2 - q^2) / 2 <= q (a - s) + (a - s)^2 / 2`` for every queue; the
    first part is returned per queue, the second summed into B.
    """
    u = cfg.queue_unit_cycles
    loc_q = np.asarray(z.local_backlog) / u
    loc_gap = (np.asarray(flows.local_arrivals, dtype=float) - np.asarray(flows.local_service, dtype=float)) / u
    rsu_q = np.asarray(z.rsu_backlog) / u
    rsu_in = np.asarray(flows.rsu_arrivals, dtype=float).sum(axis=0)
    rsu_gap = (rsu_in - np.asarray(flows.rsu_service, dtype=float)) / u
    virt = z.virtual_per_cv
    e_gap = flows.e_total - cfg.energy_budget_w
    return DriftTerms(
        local_terms=loc_q * loc_gap,
        rsu_terms=rsu_q * rsu_gap,
        virtual_terms=virt * e_gap,
        b_local=0.5 * math.fsum(loc_gap**2),
        b_rsu=0.5 * math.fsum(rsu_gap**2),
        b_virtual=0.5 * len(virt) * e_gap * e_gap,
    )


def p2_objective(z: QueueState, outcomes: Sequence[TaskOutcome], flows: SlotFlows, cfg: ScenarioConfig) -> float:
    """V times the slot cost plus the drift terms; the constant B is left out."""
    return cfg.lyapunov_v * slot_cost(outcomes, cfg) + drift_bound_terms(z, flows, cfg).total


def deadline_penalty(outcomes: Sequence[TaskOutcome], cfg: ScenarioConfig) -> float:
    """Soft penalty on deadline excess, ``c * sum(max(0, T_i - T_max))``."""
    return cfg.deadline_penalty * math.fsum(max(0.0, o.task_latency_s - cfg.t_max_s) for o in outcomes)


def slot_reward(z: QueueState, outcomes: Sequence[TaskOutcome], flows: SlotFlows, cfg: ScenarioConfig) -> float:
    """Team reward: negated P2 value minus the deadline penalty."""
    return -p2_objective(z, outcomes, flows, cfg) - deadline_penalty(outcomes, cfg)


def evaluate_slot(
    z: QueueState, outcomes: Sequence[TaskOutcome], flows: SlotFlows, cfg: ScenarioConfig
) -> SlotObjective:
    """All objective quantities of one slot, evaluated at the pre-update backlog ``z``."""
    cost = slot_cost(outcomes, cfg)
    drift = drift_bound_terms(z, flows, cfg)
    weighted = cfg.lyapunov_v * cost
    p2 = weighted + drift.total
    penalty = deadline_penalty(outcomes, cfg)
    return SlotObjective(
        cost=cost,
        local_drift_terms=drift.local_terms,
        rsu_drift_terms=drift.rsu_terms,
        virtual_terms=drift.virtual_terms,
        penalty_weighted_cost=weighted,
        p2_value=p2,
        deadline_penalty=penalty,
        reward=-p2 - penalty,
        lyapunov_value=lyapunov_value(z, cfg),
        bound_constant_b=drift.bound_constant,
    )


def lemma_slack(z: QueueState, z_next: QueueState, flows: SlotFlows, cfg: ScenarioConfig) -> tuple[float, float, float]:
    """Return ``(realized drift, drift terms + B, tolerance)`` for one slot.

    The inequality holds exactly in real arithmetic. The tolerance absorbs
    rounding in the squares and is relative to the largest term involved,
    floored at 1e-9 absolute.
    """
    drift = drift_bound_terms(z, flows, cfg)
    before = lyapunov_value(z, cfg)
    after = lyapunov_value(z_next, cfg)
    realized = after - before
    bound = drift.total + drift.bound_constant
    scale = max(
        1.0,
        before,
        after,
        float(np.abs(drift.local_terms).sum() + np.abs(drift.rsu_terms).sum() + np.abs(drift.virtual_terms).sum()),
        drift.bound_constant,
    )
    return realized, bound, 1e-9 * scale


def energy_chain(e_totals, v_final: float, cfg: ScenarioConfig) -> tuple[float, float]:
    """Time-average budget excess and ``V(T)/T`` over a trajectory started at V=0.

    Telescoping the virtual queue update gives ``lhs <= rhs`` for any
    trajectory.
    """
    e = np.asarray(e_totals, dtype=float)
    horizon = len(e)
    if horizon == 0:
        raise ValueError("energy chain needs at least one slot")
    lhs = math.fsum(e) / horizon - cfg.energy_budget_w
    return lhs, v_final / horizon


SLOT_COLUMNS = ("slot", "cost", "p2", "reward", "drift", "bound_b", "lyapunov")


def slot_row(slot: int, obj: SlotObjective) -> dict:
    drift = math.fsum(obj.local_drift_terms) + math.fsum(obj.rsu_drift_terms) + math.fsum(obj.virtual_terms)
    return {
        "slot": slot,
        "cost": obj.cost,
        "p2": obj.p2_value,
        "reward": obj.reward,
        "drift": drift,
        "bound_b": obj.bound_constant_b,
        "lyapunov": obj.lyapunov_value,
    }
