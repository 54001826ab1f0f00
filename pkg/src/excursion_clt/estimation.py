"""Subwindow estimator of the limiting covariance matrix from one realization."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceModel
from .errors import ConfigError
from .excursion import as_thresholds
from .simulation import GridField, GridSpec
from .theory import CovMatrix, GaussianMarginal, indicator_cov_table


@dataclass(frozen=True)
class SubwindowTiling:
    """Non-overlapping cubic subwindows on a regular grid, centred in the window.

    ``tile_points`` lattice points per axis make up one tile; ``offsets``
    is the leftover margin (in points) before the first tile on each axis.
    """

    spec: GridSpec
    edge: float
    tile_points: int
    counts: tuple
    offsets: tuple

    @property
    def n_tiles(self) -> int:
        return int(np.prod(self.counts))

    @property
    def subwindow_volume(self) -> float:
        return self.tile_points ** self.spec.dim * self.spec.cell_volume

    @property
    def margins(self) -> tuple:
        return tuple(n - c * self.tile_points for n, c in zip(self.spec.shape, self.counts))

    def translations(self) -> np.ndarray:
        """Lower corner of every tile, in window coordinates (row-major tile order)."""
        h = self.spec.mesh
        axes = [self.spec.origin[k] + h * (self.offsets[k] + self.tile_points * np.arange(self.counts[k]))
                for k in range(self.spec.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, self.spec.dim)

    def to_dict(self):
        return {"edge": self.edge, "tile_points": self.tile_points, "counts": list(self.counts),
                "n_tiles": self.n_tiles, "margins": list(self.margins), "offsets": list(self.offsets)}


def make_tiling(spec: GridSpec, edge: float) -> SubwindowTiling:
    k = edge / spec.mesh
    if not edge > 0 or abs(k - round(k)) > 1e-9 * max(1.0, k):
        raise ConfigError([("subwindow_edge", f"edge {edge} must be a positive multiple of the mesh {spec.mesh}")])
    k = int(round(k))
    counts = tuple(n // k for n in spec.shape)
    if any(c == 0 for c in counts) or int(np.prod(counts)) < 2:
        raise ConfigError([("subwindow_edge", f"edge {edge} fits fewer than 2 subwindows in grid {spec.shape}")])
    offsets = tuple((n - c * k) // 2 for n, c in zip(spec.shape, counts))
    return SubwindowTiling(spec, float(edge), k, counts, offsets)


@dataclass(frozen=True)
class SubwindowMeans:
    values: np.ndarray   # (N, r) per-tile excursion fractions
    thresholds: tuple

    @property
    def grand_means(self) -> np.ndarray:
        return self.values.mean(axis=0)


def _tile_view(arr: np.ndarray, tiling: SubwindowTiling) -> np.ndarray:
    k = tiling.tile_points
    sl = tuple(slice(o, o + c * k) for o, c in zip(tiling.offsets, tiling.counts))
    sub = arr[sl]
    shape = []
    for c in tiling.counts:
        shape += [c, k]
    sub = sub.reshape(shape)
    d = len(tiling.counts)
    order = [2 * i for i in range(d)] + [2 * i + 1 for i in range(d)]
    return sub.transpose(order).reshape(tiling.n_tiles, -1)


def subwindow_means(fld: GridField, tiling: SubwindowTiling, u) -> SubwindowMeans:
    if fld.spec.shape != tiling.spec.shape or fld.spec.mesh != tiling.spec.mesh:
        raise ValueError("tiling was built for a different grid")
    u = as_thresholds(u)
    tiles = _tile_view(fld.values, tiling)
    bins = np.searchsorted(np.asarray(u.levels), tiles, side="right")
    per_tile = tiles.shape[1]
    fr = np.empty((tiling.n_tiles, len(u)))
    for j in range(len(u)):
        fr[:, j] = np.count_nonzero(bins > j, axis=1) / per_tile
    return SubwindowMeans(fr, u.levels)


def subwindow_estimate(means: SubwindowMeans, subwindow_volume: float) -> CovMatrix:
    """``|V| / (N - 1) * sum_j (mu_j - mean)(mu_j - mean)^T``."""
    x = np.asarray(means.values, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("at least two subwindows are required")
    c = x - x.mean(axis=0)
    est = subwindow_volume / (n - 1) * (c.T @ c)
    est = 0.5 * (est + est.T)
    return CovMatrix(est, "estimated", means.thresholds, {"n_tiles": n, "subwindow_volume": subwindow_volume})


def estimate_sigma(fld: GridField, u, edge: float) -> CovMatrix:
    tiling = make_tiling(fld.spec, edge)
    est = subwindow_estimate(subwindow_means(fld, tiling, u), tiling.subwindow_volume)
    est.meta["tiling"] = tiling.to_dict()
    return est


def expected_subwindow_estimate(model: CovarianceModel, u, tiling: SubwindowTiling) -> CovMatrix:
    """Exact expectation of the estimator for a stationary Gaussian field on the lattice.

    With ``K`` points per tile and ``c_lm`` the lattice indicator
    covariance, ``E[estimate] = |V| * N/(N-1) * (Var(tile mean) -
    Var(grand mean))``, where both variances are triangular-weighted lag
    sums of ``c_lm``. The gap between this and the limiting matrix is the
    finite-subwindow bias.
    """
    if not math.isfinite(model.support_radius):
        warnings.warn("lag sums are truncated at the practical range times 8 for a non-compact model")
        reach = 8 * model.practical_range
    else:
        reach = model.support_radius
    spec = tiling.spec
    h = spec.mesh
    kmax = int(math.ceil(reach / h))
    lag = np.arange(-kmax, kmax + 1)
    grids = np.meshgrid(*([lag] * spec.dim), indexing="ij")
    dist = h * np.sqrt(sum(g.astype(float) ** 2 for g in grids))
    rho = model.radial_correlation(dist)

    def weight(length):
        w = np.ones_like(dist)
        for g in grids:
            w = w * np.clip(1.0 - np.abs(g) / length, 0.0, None)
        return w

    k = tiling.tile_points
    per_tile = k ** spec.dim
    total = per_tile * tiling.n_tiles
    # the union of tiles is a box with counts[i] * k points per axis
    w_tile = weight(k)
    union_w = np.ones_like(dist)
    for g, c in zip(grids, tiling.counts):
        union_w = union_w * np.clip(1.0 - np.abs(g) / (c * k), 0.0, None)
    z = GaussianMarginal.from_model(model).standardize(as_thresholds(u).as_array())
    r = len(z)
    out = np.zeros((r, r))
    n = tiling.n_tiles
    for i in range(r):
        for j in range(i, r):
            c = indicator_cov_table(rho, z[i], z[j])
            var_tile = float((c * w_tile).sum()) / per_tile
            var_all = float((c * union_w).sum()) / total
            out[i, j] = out[j, i] = tiling.subwindow_volume * n / (n - 1) * (var_tile - var_all)
    return CovMatrix(out, "estimated", tuple(as_thresholds(u).levels), {"expected": True, "tiling": tiling.to_dict()})
