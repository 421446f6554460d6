"""Fluid (cycle-denominated) task queues, the virtual energy queue and Little's-law delays."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compute import BRANCH_EPS, SplitDecision, TaskSpec
from .config import ScenarioConfig


@dataclass(frozen=True)
class Window:
    """Last ``size`` (backlog, arrival) samples of one queue, oldest first."""

    size: int
    pairs: tuple[tuple[float, float], ...] = ()

    def push(self, backlog: float, arrival: float) -> "Window":
        pairs = self.pairs + ((float(backlog), float(arrival)),)
        return Window(self.size, pairs[-self.size :])

    def __len__(self) -> int:
        return len(self.pairs)


def little_delay(history, slot_duration_s: float = 1.0) -> float:
    """Windowed backlog mean over windowed arrival mean, in seconds.

    ``history`` is a :class:`Window` or a sequence of (backlog, arrival)
    pairs. An idle window (zero mean arrival) has zero delay.
    """
    pairs = history.pairs if isinstance(history, Window) else tuple(history)
    if not pairs:
        raise ValueError("little_delay needs a non-empty history")
    backlog = math.fsum(p[0] for p in pairs) / len(pairs)
    arrival = math.fsum(p[1] for p in pairs) / len(pairs)
    if arrival <= 0.0:
        return 0.0
    return backlog / arrival * slot_duration_s


def step_local_queue(q: float, arrivals: float, cpu_hz: float, cfg: ScenarioConfig) -> float:
    return max(q - cpu_hz * cfg.slot_duration_s + arrivals, 0.0)


def step_rsu_queue(q: float, arrivals_per_cv, rsu_cpu_hz: float, cfg: ScenarioConfig) -> float:
    return max(q - rsu_cpu_hz * cfg.slot_duration_s + math.fsum(arrivals_per_cv), 0.0)


def step_virtual_queue(v: float, e_total: float, cfg: ScenarioConfig) -> float:
    return max(v - cfg.energy_budget_w + e_total, 0.0)


def local_arrival(split: SplitDecision, task: TaskSpec) -> float:
    ratio = split.local_ratio if split.local_ratio > BRANCH_EPS else 0.0
    return ratio * task.task_bits * task.intensity


def rsu_arrivals(split: SplitDecision, task: TaskSpec, eta) -> np.ndarray:
    """Cycles each RSU receives from this task; InstrT shares add the transform work."""
    ratios = np.where(np.asarray(split.rsu_ratios) > BRANCH_EPS, split.rsu_ratios, 0.0)
    eta = np.asarray(eta, dtype=float)
    return ratios * task.task_bits * (eta * task.cotra_intensity + task.intensity)


@dataclass(frozen=True)
class QueueState:
    """Backlog snapshot: per-CV local queues, per-RSU queues and the virtual energy queue.

    The virtual energy queue is driven by system-wide energy, so every CV's
    replica is identical; one value is stored and ``virtual_per_cv`` exposes
    the per-CV view. ``rsu_history[i][k]`` pairs RSU k's shared backlog with
    CV i's own arrivals to it.
    """

    local_backlog: np.ndarray
    rsu_backlog: np.ndarray
    virtual_energy: float
    local_history: tuple[Window, ...] = field(default=())
    rsu_history: tuple[tuple[Window, ...], ...] = field(default=())

    @classmethod
    def initial(cls, cfg: ScenarioConfig, local_backlog=None, rsu_backlog=None) -> "QueueState":
        n, k, m = cfg.num_cvs, cfg.num_rsus, cfg.window_m
        loc = np.zeros(n) if local_backlog is None else np.asarray(local_backlog, dtype=float).copy()
        rsu = np.zeros(k) if rsu_backlog is None else np.asarray(rsu_backlog, dtype=float).copy()
        return cls(
            local_backlog=loc,
            rsu_backlog=rsu,
            virtual_energy=0.0,
            local_history=tuple(Window(m) for _ in range(n)),
            rsu_history=tuple(tuple(Window(m) for _ in range(k)) for _ in range(n)),
        )

    @property
    def num_cvs(self) -> int:
        return len(self.local_backlog)

    @property
    def virtual_per_cv(self) -> np.ndarray:
        return np.full(self.num_cvs, self.virtual_energy)

    def delays(self, local_arrivals, rsu_arrivals_matrix, cfg: ScenarioConfig) -> np.ndarray:
        """Queueing delay per (CV, branch) with this slot's sample included.

        Returns an (N, 1 + K) array; column 0 is the local queue.
        """
        n, k = self.num_cvs, len(self.rsu_backlog)
        out = np.zeros((n, 1 + k))
        tau = cfg.slot_duration_s
        for i in range(n):
            w = self.local_history[i].push(self.local_backlog[i], local_arrivals[i])
            out[i, 0] = little_delay(w, tau)
            for j in range(k):
                w = self.rsu_history[i][j].push(self.rsu_backlog[j], rsu_arrivals_matrix[i, j])
                out[i, 1 + j] = little_delay(w, tau)
        return out

    def step(
        self,
        local_arrivals,
        local_service_hz,
        rsu_arrivals_matrix,
        rsu_service_hz,
        e_total: float,
        cfg: ScenarioConfig,
    ) -> "QueueState":
        """Advance every queue one slot and record this slot's samples in the windows."""
        local_arrivals = np.asarray(local_arrivals, dtype=float)
        rsu_arrivals_matrix = np.asarray(rsu_arrivals_matrix, dtype=float)
        n, k = self.num_cvs, len(self.rsu_backlog)
        loc = np.array(
            [step_local_queue(self.local_backlog[i], local_arrivals[i], local_service_hz[i], cfg) for i in range(n)]
        )
        rsu = np.array(
            [step_rsu_queue(self.rsu_backlog[j], rsu_arrivals_matrix[:, j], rsu_service_hz[j], cfg) for j in range(k)]
        )
        local_hist = tuple(
            self.local_history[i].push(self.local_backlog[i], local_arrivals[i]) for i in range(n)
        )
        rsu_hist = tuple(
            tuple(self.rsu_history[i][j].push(self.rsu_backlog[j], rsu_arrivals_matrix[i, j]) for j in range(k))
            for i in range(n)
        )
        return QueueState(
            local_backlog=loc,
            rsu_backlog=rsu,
            virtual_energy=step_virtual_queue(self.virtual_energy, e_total, cfg),
            local_history=local_hist,
            rsu_history=rsu_hist,
        )


def drain_bound(q0: float, service: float, max_arrival: float, slots: int) -> float:
    """Upper bound on a backlog after ``slots`` steps when arrivals stay below service.

    Every step removes at least ``service - max_arrival``, so the backlog is
    at most ``max(q0 - t * gap, 0)`` and reaches zero within
    ``ceil(q0 / gap)`` slots.
    """
    gap = service - max_arrival
    if gap <= 0:
        raise ValueError("drain bound needs arrivals strictly below service")
    return max(q0 - slots * gap, 0.0)


def drain_slots(q0: float, service: float, max_arrival: float) -> int:
    gap = service - max_arrival
    if gap <= 0:
        raise ValueError("drain bound needs arrivals strictly below service")
    return math.ceil(q0 / gap)


QUEUE_TRACE_COLUMNS = ("slot", "queue_id", "backlog", "arrival", "delay_estimate")


def queue_trace_rows(
    slot: int, state: QueueState, local_arrivals, rsu_arrivals_matrix, delays, e_total: float
) -> list[dict]:
    """CSV rows for one slot: local queues ``cv<i>``, RSU queues ``rsu<k>``, virtual ``energy``."""
    rows = []
    for i, q in enumerate(state.local_backlog):
        rows.append(
            {"slot": slot, "queue_id": f"cv{i}", "backlog": float(q),
             "arrival": float(local_arrivals[i]), "delay_estimate": float(delays[i, 0])}
        )
    rsu_arr = np.asarray(rsu_arrivals_matrix).sum(axis=0)
    for k, q in enumerate(state.rsu_backlog):
        # shared queue: report the mean delay seen by the CVs that used it
        used = np.asarray(rsu_arrivals_matrix)[:, k] > 0
        delay = float(delays[used, 1 + k].mean()) if used.any() else 0.0
        rows.append(
            {"slot": slot, "queue_id": f"rsu{k}", "backlog": float(q),
             "arrival": float(rsu_arr[k]), "delay_estimate": delay}
        )
    rows.append(
        {"slot": slot, "queue_id": "energy", "backlog": float(state.virtual_energy),
         "arrival": float(e_total), "delay_estimate": 0.0}
    )
    return rows
