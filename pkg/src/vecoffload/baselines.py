"""Non-learning reference policies.

Every policy reads the world snapshot and returns raw logits of shape
(N, 1 + 3K), so its output goes through the same projection as a learned
policy's samples.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import scenario
from .compute import BRANCH_EPS
from .config import ScenarioConfig
from .env import INFEASIBLE_DEADLINES, WorldState

POLICY_KINDS = ("random", "all_local", "all_edge_nearest", "uniform_split", "greedy_grid")
SATURATION_LOGIT = 10.0
# share floor used when turning an exact zero into a logit
_LOG_FLOOR = 1e-12


def grid_simplex(parts: int, step: float) -> np.ndarray:
    """All vectors of ``parts`` multiples of ``step`` summing to one, in lexicographic order."""
    units = round(1.0 / step)
    if not math.isclose(units * step, 1.0):
        raise ValueError("grid step must divide 1")
    rows = [c for c in itertools.product(range(units + 1), repeat=parts) if sum(c) == units]
    return np.array(rows, dtype=float) / units


@dataclass(frozen=True)
class _Candidates:
    split: np.ndarray
    bandwidth: np.ndarray
    fraction: np.ndarray
    split_idx: np.ndarray
    bw_idx: np.ndarray
    frac_idx: np.ndarray


@functools.lru_cache(maxsize=16)
def _candidate_table(k: int, step: float, fractions: tuple[float, ...]) -> _Candidates:
    splits = grid_simplex(1 + k, step)
    bws = grid_simplex(k, step)
    fr_idx = np.array(list(itertools.product(range(len(fractions)), repeat=k)), dtype=int).reshape(-1, k)
    si, bi, fi = np.meshgrid(np.arange(len(splits)), np.arange(len(bws)), np.arange(len(fr_idx)), indexing="ij")
    si, bi, fi = si.ravel(), bi.ravel(), fi.ravel()
    return _Candidates(
        split=splits[si],
        bandwidth=bws[bi],
        fraction=np.asarray(fractions, dtype=float)[fr_idx[fi]],
        split_idx=np.rint(splits[si] / step).astype(int),
        bw_idx=np.rint(bws[bi] / step).astype(int),
        frac_idx=fr_idx[fi],
    )


@dataclass(frozen=True)
class GreedyGrid:
    """Per-slot P2 minimiser over a coarse grid.

    Split and bandwidth shares are grid points of their simplices; compute
    requests are fractions of an equal share ``capacity / N`` of each RSU,
    so the joint request never triggers rescaling. With no rescaling and
    per-CV delay windows the P2 objective separates over CVs, and each CV's
    candidate is chosen independently.
    """

    step: float = 0.25
    compute_fractions: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)

    def candidates(self, cfg: ScenarioConfig) -> "_Candidates":
        """Candidate (split, bandwidth, fraction) rows plus their grid indices."""
        return _candidate_table(cfg.num_rsus, self.step, tuple(self.compute_fractions))

    def scores(self, world: WorldState, agent: int, cfg: ScenarioConfig, cands=None) -> np.ndarray:
        """P2 contribution of every candidate for one CV, up to a candidate-independent constant.

        Each RSU branch depends only on its own share, bandwidth and compute
        fraction (and the local share, when instruction upload time is
        counted), so branch latency, energy and drift are tabulated on the
        grid once and gathered per candidate.
        """
        c = self.candidates(cfg) if cands is None else cands
        n = world.num_cvs
        task = world.tasks[agent]
        cv = world.vehicles[agent]
        z = world.queues
        u = cfg.queue_unit_cycles
        tau = cfg.slot_duration_s
        g = task.task_bits
        t_cap = INFEASIBLE_DEADLINES * task.t_max_s
        e_cap = cfg.tx_power_w * t_cap
        levels = np.arange(round(1.0 / self.step) + 1) * self.step

        # local branch, indexed by the local share level
        loc = np.where(levels > BRANCH_EPS, levels, 0.0)
        d_loc = loc * g * task.intensity / task.cpu_hz
        e_loc = cfg.kappa_cv * d_loc * task.cpu_hz**3
        lam_loc = loc * g * task.intensity
        t_loc = np.where(loc > 0, d_loc + _window_delay(z.local_history[agent], z.local_backlog[agent], lam_loc, tau), 0.0)
        drift_loc = z.local_backlog[agent] / u * (lam_loc - cv.cpu_hz * tau) / u

        # RSU branch tables with axes (own share, local share, bandwidth, fraction)
        share = loc[:, None, None, None]
        rest = 1.0 - levels[None, :, None, None]
        b = levels[None, None, :, None]
        f = np.asarray(self.compute_fractions)[None, None, None, :] * cfg.rsu_capacity_hz / n
        active = share > 0
        shape = (len(levels), len(levels), len(levels), f.shape[-1])
        t_tab, e_tab, d_tab = [], [], []
        with np.errstate(divide="ignore", invalid="ignore"):
            for k in range(cfg.num_rsus):
                rate = scenario.v2i_rate(b, world.channels.small_scale_gain[agent, k],
                                         world.channels.pathloss_linear[agent, k], cfg)
                rate = rate if world.in_coverage[agent, k] else np.zeros_like(rate)
                bits = share * g
                datat = np.where(active, np.where(rate > 0, bits / rate, np.inf), 0.0)
                co = np.where(active, bits * task.cotra_intensity / f, 0.0)
                instr_time = co
                if cfg.instr_includes_transmit:
                    instr = np.where(rest > 0, task.instr_bits * share / np.where(rest > 0, rest, 1.0), 0.0)
                    instr_time = co + np.where(instr > 0, np.where(rate > 0, instr / rate, np.inf), 0.0)
                eta = instr_time < datat
                upload = np.where(eta, instr_time, datat)
                cp = np.where(active, bits * task.intensity / f, 0.0)
                lam = bits * (eta * task.cotra_intensity + task.intensity)
                delay = _window_delay(z.rsu_history[agent][k], z.rsu_backlog[k], lam, tau)
                t_tab.append(np.broadcast_to(np.where(active, upload + cp + delay, 0.0), shape))
                e_up = np.where(eta, 0.0, datat * cfg.tx_power_w)
                e_co = np.where(eta, cfg.kappa_rsu * co * f**3, 0.0)
                e_cp = cfg.kappa_rsu * cp * f**3
                e = sum(np.where(np.isfinite(x), x, e_cap) for x in (e_up, e_co, e_cp))
                e_tab.append(np.broadcast_to(e, shape))
                grant = np.where(active, f, 0.0)
                d_tab.append(np.broadcast_to(z.rsu_backlog[k] / u * (lam - grant * tau) / u, shape))

        i0 = c.split_idx[:, 0]
        latency = t_loc[i0]
        energy = e_loc[i0].copy()
        drift = drift_loc[i0].copy()
        for k in range(cfg.num_rsus):
            idx = (c.split_idx[:, 1 + k], i0, c.bw_idx[:, k], c.frac_idx[:, k])
            latency = np.maximum(latency, t_tab[k][idx])
            energy += e_tab[k][idx]
            drift += d_tab[k][idx]
        latency = np.minimum(latency, t_cap)
        cost = cfg.alpha * latency + (1.0 - cfg.alpha) * energy
        drift = drift + n * z.virtual_energy * energy
        penalty = cfg.deadline_penalty * np.maximum(0.0, latency - cfg.t_max_s)
        return cfg.lyapunov_v * cost + drift + penalty

    def choose(self, world: WorldState, cfg: ScenarioConfig):
        """Index and (split, bandwidth, fraction) of each CV's best candidate."""
        cands = self.candidates(cfg)
        picks = []
        for i in range(world.num_cvs):
            j = int(np.argmin(self.scores(world, i, cfg, cands)))
            picks.append((j, cands.split[j], cands.bandwidth[j], cands.fraction[j]))
        return picks

    def act(self, world: WorldState, cfg: ScenarioConfig, rng=None) -> np.ndarray:
        n = world.num_cvs
        out = np.zeros((n, cfg.action_dim))
        for i, (_, split, bw, frac) in enumerate(self.choose(world, cfg)):
            out[i] = decision_logits(split, bw, frac / n)
        return out


def _window_delay(window, backlog: float, arrival: np.ndarray, tau: float) -> np.ndarray:
    """Little's-law delay for a vector of candidate arrivals pushed onto ``window``."""
    kept = window.pairs[-(window.size - 1) :] if window.size > 1 else ()
    count = len(kept) + 1
    q_mean = (math.fsum(p[0] for p in kept) + backlog) / count
    a_mean = (math.fsum(p[1] for p in kept) + arrival) / count
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(a_mean > 0, q_mean / a_mean * tau, 0.0)


def decision_logits(split, bandwidth, capacity_fraction) -> np.ndarray:
    """Raw logits whose projection reproduces the given shares (zeros map to ~1e-12)."""
    split = np.log(np.maximum(np.asarray(split, dtype=float), _LOG_FLOOR))
    bw = np.log(np.maximum(np.asarray(bandwidth, dtype=float), _LOG_FLOOR))
    p = np.clip(np.asarray(capacity_fraction, dtype=float), _LOG_FLOOR, 1.0 - _LOG_FLOOR)
    return np.concatenate([split, bw, np.log(p) - np.log1p(-p)])


def nearest_rsu(world: WorldState, agent: int) -> int:
    cv = world.vehicles[agent]
    return int(np.argmin([abs(r.x_m - cv.x_m) for r in world.rsus]))


class HeuristicPolicy:
    """Fixed rule selected by name; see :data:`POLICY_KINDS`."""

    def __init__(self, kind: str, grid_step: float = 0.25):
        if kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {kind!r}; choose from {', '.join(POLICY_KINDS)}")
        self.kind = kind
        self.greedy = GreedyGrid(step=grid_step)

    def act(self, world: WorldState, cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
        n, k, a = world.num_cvs, cfg.num_rsus, cfg.action_dim
        if self.kind == "random":
            return rng.standard_normal((n, a))
        if self.kind == "uniform_split":
            return np.zeros((n, a))
        if self.kind == "greedy_grid":
            return self.greedy.act(world, cfg)
        out = np.zeros((n, a))
        out[:, : 1 + k] = -SATURATION_LOGIT
        if self.kind == "all_local":
            out[:, 0] = SATURATION_LOGIT
        else:
            for i in range(n):
                out[i, 1 + nearest_rsu(world, i)] = SATURATION_LOGIT
        return out

    def __repr__(self) -> str:
        return f"HeuristicPolicy({self.kind!r})"
