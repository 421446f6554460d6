"""Road geometry, vehicle mobility, the sensing-enhanced V2I channel and task generation."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .compute import TaskSpec
from .config import ScenarioConfig

PATHLOSS_CONST_DB = -38.4
PATHLOSS_SLOPE_DB = 21.0
MIN_DISTANCE_M = 1.0


@dataclass(frozen=True)
class VehicleState:
    id: int
    x_m: float
    y_m: float
    speed_mps: float
    cpu_hz: float


@dataclass(frozen=True)
class RsuState:
    id: int
    x_m: float
    lateral_m: float
    height_m: float
    cpu_hz: float


@dataclass(frozen=True)
class ChannelDraw:
    """Small-scale gain |h|^2 and linear pathloss g, scalars or (CV, RSU) arrays."""

    small_scale_gain: np.ndarray | float
    pathloss_linear: np.ndarray | float


def lane_center(lane: int, cfg: ScenarioConfig) -> float:
    """Lateral coordinate of a lane centre, measured from the road centreline."""
    return (lane - cfg.num_lanes / 2 + 0.5) * cfg.lane_width_m


def make_rsus(cfg: ScenarioConfig) -> tuple[RsuState, ...]:
    # RSUs sit symmetrically about the middle of the road
    mid = cfg.road_length_m / 2
    offset = (cfg.num_rsus - 1) / 2
    return tuple(
        RsuState(
            id=k,
            x_m=mid + (k - offset) * cfg.rsu_spacing_m,
            lateral_m=cfg.rsu_lateral_offset_m,
            height_m=cfg.rsu_height_m,
            cpu_hz=cfg.rsu_cpu_hz,
        )
        for k in range(cfg.num_rsus)
    )


def spawn_vehicles(rng: np.random.Generator, cfg: ScenarioConfig) -> tuple[VehicleState, ...]:
    """Place ``num_cvs`` vehicles uniformly on the road with fixed lanes."""
    out = []
    for i in range(cfg.num_cvs):
        x = rng.uniform(0.0, cfg.road_length_m)
        lane = int(rng.integers(cfg.num_lanes))
        speed = rng.uniform(*cfg.speed_range_mps)
        cpu = rng.uniform(*cfg.cv_cpu_range_hz)
        out.append(VehicleState(i, float(x), lane_center(lane, cfg), float(speed), float(cpu)))
    return tuple(out)


def advance_mobility(state: VehicleState, cfg: ScenarioConfig) -> VehicleState:
    """Move one slot forward along the road, re-entering at the start past the end."""
    x = (state.x_m + state.speed_mps * cfg.slot_duration_s) % cfg.road_length_m
    return replace(state, x_m=x)


def distance(cv: VehicleState, rsu: RsuState, cfg: ScenarioConfig | None = None) -> float:
    """3-D CV-to-RSU distance.

    With ``cfg.static_distance`` the longitudinal term is the RSU coordinate
    alone (the vehicle's own position is ignored), reproducing the
    time-invariant simplification.
    """
    if cfg is not None and cfg.static_distance:
        dx = rsu.x_m
    else:
        dx = rsu.x_m - cv.x_m
    dy = cv.y_m - rsu.lateral_m
    return math.sqrt(dx * dx + dy * dy + rsu.height_m**2)


def pathloss_linear(dis):
    """Large-scale gain 10^((-38.4 - 21 log10 d) / 10), with d floored at 1 m."""
    d = np.maximum(np.asarray(dis, dtype=float), MIN_DISTANCE_M)
    g = 10.0 ** ((PATHLOSS_CONST_DB - PATHLOSS_SLOPE_DB * np.log10(d)) / 10.0)
    return float(g) if g.ndim == 0 else g


def draw_channel(
    cv: VehicleState, rsu: RsuState, rng: np.random.Generator, cfg: ScenarioConfig | None = None
) -> ChannelDraw:
    re, im = rng.normal(0.0, math.sqrt(0.5), size=2)
    return ChannelDraw(float(re * re + im * im), pathloss_linear(distance(cv, rsu, cfg)))


def draw_channels(
    vehicles, rsus, rng: np.random.Generator, cfg: ScenarioConfig
) -> ChannelDraw:
    """Draw every (CV, RSU) link at once; gains and pathloss are (N, K) arrays."""
    parts = rng.normal(0.0, math.sqrt(0.5), size=(len(vehicles), len(rsus), 2))
    gain = (parts**2).sum(axis=-1)
    dis = distance_matrix(vehicles, rsus, cfg)
    return ChannelDraw(gain, pathloss_linear(dis))


def distance_matrix(vehicles, rsus, cfg: ScenarioConfig) -> np.ndarray:
    return np.array([[distance(cv, r, cfg) for r in rsus] for cv in vehicles], dtype=float).reshape(
        len(vehicles), len(rsus)
    )


def v2i_rate(b_ratio, small_scale_gain, pathloss, cfg: ScenarioConfig):
    """Uplink rate Θ·b·B·log2(1 + P|h|²g/σ²) in bit/s (vectorises over arrays)."""
    snr = cfg.tx_power_w * np.asarray(small_scale_gain) * np.asarray(pathloss) / cfg.noise_power_w
    rate = cfg.enhancement_factor * np.asarray(b_ratio, dtype=float) * cfg.bandwidth_hz * np.log2(1.0 + snr)
    return float(rate) if np.ndim(rate) == 0 else rate


def link_rate(
    cv: VehicleState, rsu: RsuState, b_ratio: float, draw: ChannelDraw, cfg: ScenarioConfig
) -> float:
    """Rate of a single link from its channel draw."""
    return v2i_rate(b_ratio, draw.small_scale_gain, draw.pathloss_linear, cfg)


def spawn_task(cv: VehicleState, rng: np.random.Generator, cfg: ScenarioConfig) -> TaskSpec:
    task_bits = rng.uniform(*cfg.task_bits_range)
    instr_bits = rng.uniform(*cfg.instr_bits_range)
    intensity = rng.uniform(*cfg.task_intensity_range)
    cotra = rng.uniform(*cfg.cotra_intensity_range)
    return TaskSpec(
        task_bits=float(task_bits),
        instr_bits=float(instr_bits),
        cpu_hz=cv.cpu_hz,
        intensity=float(intensity),
        cotra_intensity=float(cotra),
        t_max_s=cfg.t_max_s,
    )
