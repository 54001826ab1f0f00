"""Excursion sets ``{t : X(t) >= u}`` on a lattice and their volumes."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .simulation import GridField


@dataclass(frozen=True)
class ThresholdVector:
    levels: tuple

    def __post_init__(self):
        lv = tuple(float(x) for x in np.atleast_1d(np.asarray(self.levels, dtype=float)))
        if not lv:
            raise ValueError("at least one threshold is required")
        if any(not math.isfinite(x) for x in lv):
            raise ValueError("thresholds must be finite")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError("thresholds must be strictly increasing")
        object.__setattr__(self, "levels", lv)

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def as_array(self):
        return np.array(self.levels)


def as_thresholds(u) -> ThresholdVector:
    return u if isinstance(u, ThresholdVector) else ThresholdVector(tuple(np.atleast_1d(u)))


@dataclass(frozen=True)
class ExcursionStats:
    thresholds: ThresholdVector
    volumes: np.ndarray
    window_volume: float
    n_points: int

    def to_dict(self):
        return {"thresholds": list(self.thresholds.levels), "volumes": [float(v) for v in self.volumes],
                "window_volume": self.window_volume, "n_points": self.n_points}

    def to_json(self):
        return json.dumps(self.to_dict())

    def csv_rows(self, seed=None):
        """Rows ``(seed, u_k, S_k, window volume)``."""
        return [(seed, u, float(s), self.window_volume) for u, s in zip(self.thresholds.levels, self.volumes)]


def excursion_mask(fld: GridField, u: float) -> np.ndarray:
    return fld.values >= u


def excursion_volume(fld: GridField, u: float) -> float:
    return fld.spec.cell_volume * int(np.count_nonzero(fld.values >= u))


def level_counts(values: np.ndarray, levels) -> np.ndarray:
    """Number of values ``>= u_k`` for each increasing level, in one pass over the data."""
    levels = np.asarray(levels, dtype=float)
    # bin = number of levels <= value; value >= u_k iff bin > k
    bins = np.searchsorted(levels, values.reshape(-1), side="right")
    hist = np.bincount(bins, minlength=len(levels) + 1)
    return hist[::-1].cumsum()[::-1][1:]


def excursion_vector(fld: GridField, u) -> ExcursionStats:
    u = as_thresholds(u)
    counts = level_counts(fld.values, u.levels)
    return ExcursionStats(u, fld.spec.cell_volume * counts.astype(float), fld.spec.volume, fld.spec.n_points)


def centered_statistic(stats: ExcursionStats, p) -> np.ndarray:
    """``(S - |W| p) / sqrt(|W|)`` componentwise."""
    p = np.asarray(p, dtype=float).reshape(-1)
    if p.shape != stats.volumes.shape:
        raise ValueError(f"expected {len(stats.volumes)} tail probabilities, got {len(p)}")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("tail probabilities must lie in [0, 1]")
    v = stats.window_volume
    return (stats.volumes - v * p) / math.sqrt(v)
