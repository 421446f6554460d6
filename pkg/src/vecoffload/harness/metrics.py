"""Steady-state learning metrics, seed aggregation and CSV persistence."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

STEADY_WINDOW = 50
CONVERGENCE_FRACTION = 0.95


@dataclass(frozen=True)
class SteadyMetrics:
    steady: float
    cv: float
    convergence_episode: int


def steady_metrics(values: Sequence[float], window: int = STEADY_WINDOW) -> SteadyMetrics:
    """Steady value, coefficient of variation and convergence episode of a per-episode log.

    The steady value is the mean of the last ``window`` entries and the
    coefficient of variation is their population std over ``|mean|``. The
    convergence episode (1-based) is the first whose value reaches 95% of the
    steady value, read as ``steady - 0.05 |steady|`` so that it also means
    "within 5%" for negative rewards.
    """
    x = np.asarray(values, dtype=float)
    if len(x) < window:
        raise ValueError(f"need at least {window} episodes, got {len(x)}")
    tail = x[-window:]
    steady = math.fsum(tail) / window
    std = math.sqrt(math.fsum((tail - steady) ** 2) / window)
    cv = std / abs(steady) if steady != 0 else (0.0 if std == 0 else math.inf)
    target = steady - (1.0 - CONVERGENCE_FRACTION) * abs(steady)
    hits = np.nonzero(x >= target)[0]
    return SteadyMetrics(steady, cv, int(hits[0]) + 1)


def aggregate(values: Iterable[float]) -> tuple[float, float]:
    """Mean and population std over seeds; order-independent up to rounding of fsum."""
    x = sorted(float(v) for v in values)
    if not x:
        raise ValueError("nothing to aggregate")
    mean = math.fsum(x) / len(x)
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in x) / len(x))


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _parse(text: str):
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[dict]) -> Path:
    """Write rows with shortest round-trip float formatting and ``\\n`` line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
    return path


def read_csv(path: str | Path) -> list[dict]:
    """Inverse of :func:`write_csv`: integers and floats come back as numbers."""
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]
