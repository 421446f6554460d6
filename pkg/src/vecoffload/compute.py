"""Closed-form latency and energy of one CV's task in one slot.

A task is split between local execution and the RSUs. Each RSU branch is
uploaded either as raw data (DataT) or as instructions that the RSU
expands from its own sensing after a coordinate transform (InstrT); the
faster of the two is used. Infeasible links are reported with an infinite
time rather than an exception so that optimisers can penalise them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig

INF = math.inf
# Softmax projections never produce exact zeros; shares at or below this are idle.
BRANCH_EPS = 1e-6


@dataclass(frozen=True)
class TaskSpec:
    task_bits: float
    instr_bits: float
    cpu_hz: float
    intensity: float
    cotra_intensity: float
    t_max_s: float


@dataclass(frozen=True)
class SplitDecision:
    """One CV's feasible decision: task split, bandwidth shares, RSU compute grants."""

    local_ratio: float
    rsu_ratios: np.ndarray
    bandwidth_ratios: np.ndarray
    rsu_cpu_hz: np.ndarray

    def violations(self, cfg: ScenarioConfig, tol: float = 1e-9) -> list[str]:
        """Return the list of violated constraints (empty when feasible)."""
        problems = []
        ratios = np.concatenate([[self.local_ratio], self.rsu_ratios])
        if np.any(ratios < -tol) or np.any(ratios > 1 + tol):
            problems.append("split ratio outside [0, 1]")
        if abs(ratios.sum() - 1.0) > tol:
            problems.append("split ratios do not sum to 1")
        b = np.asarray(self.bandwidth_ratios)
        if np.any(b < -tol) or np.any(b > 1 + tol) or b.sum() > 1 + tol:
            problems.append("bandwidth shares exceed the unit budget")
        f = np.asarray(self.rsu_cpu_hz)
        if np.any(f < 0) or np.any(f > cfg.rsu_capacity_hz * (1 + tol)):
            problems.append("RSU compute grant exceeds available capacity")
        return problems


@dataclass(frozen=True)
class TaskOutcome:
    latency_local_s: float
    latency_rsu_s: np.ndarray
    upload_s: np.ndarray
    mode_selector: np.ndarray
    task_latency_s: float
    energy_local_j: float
    energy_upload_j: np.ndarray
    energy_cotra_j: np.ndarray
    energy_compute_j: np.ndarray
    task_energy_j: float
    deadline_met: bool
    feasible: bool


def local_latency(local_ratio: float, task: TaskSpec) -> float:
    return local_ratio * task.task_bits * task.intensity / task.cpu_hz


def local_energy(latency: float, cpu_hz: float, cfg: ScenarioConfig) -> float:
    return cfg.kappa_cv * latency * cpu_hz**3


def _transfer_time(bits: float, rate: float) -> float:
    if bits == 0.0:
        return 0.0
    if rate <= 0.0:
        return INF
    return bits / rate


def datat_upload(ratio: float, task: TaskSpec, rate: float, cfg: ScenarioConfig) -> tuple[float, float]:
    """Raw-data upload of an RSU share: (time, transmit energy)."""
    time = _transfer_time(ratio * task.task_bits, rate)
    return time, time * cfg.tx_power_w


def instr_upload(instr_bits: float, rate: float) -> float:
    return _transfer_time(instr_bits, rate)


def instruction_shares(rsu_ratios, instr_bits: float) -> np.ndarray:
    """Apportion the instruction volume across RSUs in proportion to their task shares."""
    r = np.asarray(rsu_ratios, dtype=float)
    total = r.sum()
    if total <= 0.0:
        return np.zeros_like(r)
    return instr_bits * r / total


def _rsu_work(ratio: float, task: TaskSpec, intensity: float, rsu_cpu_hz: float, cfg: ScenarioConfig):
    cycles = ratio * task.task_bits * intensity
    if cycles == 0.0:
        return 0.0, 0.0
    if rsu_cpu_hz <= 0.0:
        return INF, INF
    time = cycles / rsu_cpu_hz
    return time, cfg.kappa_rsu * time * rsu_cpu_hz**3


def cotra(ratio: float, task: TaskSpec, rsu_cpu_hz: float, cfg: ScenarioConfig) -> tuple[float, float]:
    """Coordinate-transform preprocessing for InstrT: (time, RSU energy)."""
    return _rsu_work(ratio, task, task.cotra_intensity, rsu_cpu_hz, cfg)


def rsu_compute(ratio: float, task: TaskSpec, rsu_cpu_hz: float, cfg: ScenarioConfig) -> tuple[float, float]:
    return _rsu_work(ratio, task, task.intensity, rsu_cpu_hz, cfg)


def select_mode(datat_time: float, instr_time: float) -> tuple[float, int]:
    """Pick the faster upload mode.

    Returns ``(upload_time, eta)`` with ``eta = 1`` iff InstrT is strictly
    faster; ties go to DataT. Both infinite yields ``(inf, 0)``.
    """
    if instr_time < datat_time:
        return instr_time, 1
    return datat_time, 0


def evaluate_task(
    split: SplitDecision,
    task: TaskSpec,
    rates,
    queue_delays,
    cfg: ScenarioConfig,
) -> TaskOutcome:
    """Compose local and per-RSU latency/energy for one task.

    Args:
        split: Feasible split, bandwidth and compute decision.
        task: The task generated this slot.
        rates: Per-RSU uplink rate in bit/s.
        queue_delays: Queueing delay per branch, local first then one per RSU.
        cfg: Scenario configuration.
    """
    rates = np.asarray(rates, dtype=float)
    queue_delays = np.asarray(queue_delays, dtype=float)
    num_rsus = len(split.rsu_ratios)

    local_ratio = split.local_ratio if split.local_ratio > BRANCH_EPS else 0.0
    d_loc = local_latency(local_ratio, task)
    e_loc = local_energy(d_loc, task.cpu_hz, cfg)
    t_loc = d_loc + queue_delays[0] if local_ratio > 0.0 else 0.0

    ratios = np.where(np.asarray(split.rsu_ratios) > BRANCH_EPS, split.rsu_ratios, 0.0)
    instr = instruction_shares(ratios, task.instr_bits)

    upload = np.zeros(num_rsus)
    eta = np.zeros(num_rsus, dtype=int)
    t_rsu = np.zeros(num_rsus)
    e_up = np.zeros(num_rsus)
    e_co = np.zeros(num_rsus)
    e_cp = np.zeros(num_rsus)
    feasible = True

    for k in range(num_rsus):
        ratio = ratios[k]
        if ratio == 0.0:
            continue
        f = split.rsu_cpu_hz[k]
        datat_time, datat_energy = datat_upload(ratio, task, rates[k], cfg)
        co_time, co_energy = cotra(ratio, task, f, cfg)
        instr_time = co_time
        if cfg.instr_includes_transmit:
            instr_time = co_time + instr_upload(instr[k], rates[k])
        upload[k], eta[k] = select_mode(datat_time, instr_time)
        cp_time, cp_energy = rsu_compute(ratio, task, f, cfg)
        t_rsu[k] = upload[k] + cp_time + queue_delays[1 + k]
        # Only the energy of the chosen mode is charged.
        e_up[k] = datat_energy if eta[k] == 0 else 0.0
        e_co[k] = co_energy if eta[k] == 1 else 0.0
        e_cp[k] = cp_energy
        if not math.isfinite(t_rsu[k]):
            feasible = False

    t_task = max(t_loc, float(t_rsu.max()) if num_rsus else 0.0)
    e_task = e_loc + float((e_up + e_co + e_cp).sum())
    return TaskOutcome(
        latency_local_s=t_loc,
        latency_rsu_s=t_rsu,
        upload_s=upload,
        mode_selector=eta,
        task_latency_s=t_task,
        energy_local_j=e_loc,
        energy_upload_j=e_up,
        energy_cotra_j=e_co,
        energy_compute_j=e_cp,
        task_energy_j=e_task,
        deadline_met=t_task <= task.t_max_s,
        feasible=feasible,
    )
