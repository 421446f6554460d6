"""Scenario configuration and its YAML file format.

All quantities are SI: metres, hertz, watts, joules, seconds, bits. Task and
instruction sizes are in bits, computation intensities in cycles per bit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import yaml

DEFAULT_CONFIG_PATH = Path(__file__).with_name("default_config.yaml")

_INTERVAL_FIELDS = (
    "speed_range_mps",
    "cv_cpu_range_hz",
    "task_bits_range",
    "instr_bits_range",
    "task_intensity_range",
    "cotra_intensity_range",
)

_POSITIVE_FIELDS = (
    "lane_width_m",
    "road_length_m",
    "rsu_spacing_m",
    "rsu_height_m",
    "rsu_lateral_offset_m",
    "rsu_coverage_m",
    "bandwidth_hz",
    "noise_power_w",
    "tx_power_w",
    "slot_duration_s",
    "rsu_cpu_hz",
    "twin_reserve_hz",
    "kappa_cv",
    "kappa_rsu",
    "lyapunov_v",
    "energy_budget_w",
    "t_max_s",
    "queue_unit_cycles",
)


class ConfigError(ValueError):
    """Raised for invalid or unknown configuration entries."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Immutable scenario description.

    Defaults follow the simulation table of the reference setup (four-lane
    700 m road, 3 RSUs at 150 m spacing, 20 MHz, 20 GHz RSUs, ...). Values
    the setup leaves open (twin reserve, instruction size, energy budget,
    deadline, window length) carry documented choices.
    """

    # topology
    num_cvs: int = 5
    num_rsus: int = 3
    num_lanes: int = 4
    lane_width_m: float = 3.75
    road_length_m: float = 700.0
    rsu_spacing_m: float = 150.0
    rsu_height_m: float = 10.0
    rsu_lateral_offset_m: float = 9.75
    rsu_coverage_m: float = 200.0
    static_distance: bool = False

    # radio
    bandwidth_hz: float = 20e6
    noise_power_w: float = 1e-13
    tx_power_w: float = 1.0
    enhancement_factor: float = 1.5

    # time and mobility
    slot_duration_s: float = 1.0
    episode_slots: int = 30
    speed_range_mps: tuple[float, float] = (12.0, 16.0)

    # compute
    cv_cpu_range_hz: tuple[float, float] = (2e9, 3e9)
    rsu_cpu_hz: float = 20e9
    twin_reserve_hz: float = 2e9
    kappa_cv: float = 1e-26
    kappa_rsu: float = 1e-28

    # tasks
    task_bits_range: tuple[float, float] = (1e6, 3e6)
    instr_bits_range: tuple[float, float] = (1e4, 5e4)
    task_intensity_range: tuple[float, float] = (1500.0, 2000.0)
    cotra_intensity_range: tuple[float, float] = (100.0, 500.0)
    t_max_s: float = 2.0
    instr_includes_transmit: bool = False

    # objective
    alpha: float = 0.6
    lyapunov_v: float = 5.0
    energy_budget_w: float = 400.0
    deadline_penalty: float = 10.0
    queue_unit_cycles: float = 1e9
    window_m: int = 5

    seed: int = 0

    def __post_init__(self) -> None:
        for name in _INTERVAL_FIELDS:
            value = getattr(self, name)
            try:
                lo, hi = (float(v) for v in value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name} must be a [low, high] pair, got {value!r}") from exc
            object.__setattr__(self, name, (lo, hi))
        self.validate()

    def validate(self) -> None:
        for name in ("num_cvs", "num_rsus", "num_lanes", "episode_slots", "window_m"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in _POSITIVE_FIELDS:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.enhancement_factor < 1.0:
            raise ConfigError("enhancement_factor must be >= 1")
        if self.twin_reserve_hz >= self.rsu_cpu_hz:
            raise ConfigError("twin_reserve_hz must be below rsu_cpu_hz")
        if self.deadline_penalty < 0:
            raise ConfigError("deadline_penalty must be >= 0")
        for name in _INTERVAL_FIELDS:
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name}: lower bound exceeds upper bound")
            if lo < 0:
                raise ConfigError(f"{name}: negative bound")
        for name in ("speed_range_mps", "cv_cpu_range_hz"):
            if getattr(self, name)[0] <= 0:
                raise ConfigError(f"{name} must be strictly positive")
        task_lo, task_hi = self.task_bits_range
        instr_hi = self.instr_bits_range[1]
        if task_hi == 0.0:
            if instr_hi != 0.0:
                raise ConfigError("instruction size must be zero when task size is zero")
        elif instr_hi >= task_lo:
            raise ConfigError("instr_bits_range max must be below task_bits_range min")

    @property
    def rsu_capacity_hz(self) -> float:
        """Compute available to offloaded work after the twin reserve."""
        return self.rsu_cpu_hz - self.twin_reserve_hz

    @property
    def action_dim(self) -> int:
        return 1 + 3 * self.num_rsus

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)


def load_config(path: str | Path | None = None) -> ScenarioConfig:
    """Read a YAML key/value file into a ScenarioConfig.

    ``None`` loads the bundled default file. Missing keys fall back to the
    dataclass defaults; unknown keys raise :class:`ConfigError`.
    """
    path = DEFAULT_CONFIG_PATH if path is None else Path(path)
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return ScenarioConfig.from_dict(data)


def dump_config(cfg: ScenarioConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
