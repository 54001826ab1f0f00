"""Lattice grids, Gaussian field simulation and field dump I/O."""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft

from .covariance import CovarianceModel
from .errors import SimulationError

MAX_POINTS = 100_000_000
DENSE_FALLBACK_POINTS = 64 * 64
NEGATIVE_EIG_TOL = 1e-10
MAX_PAD_RETRIES = 3

_MASK64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    # splitmix64 finalizer
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(base_seed: int, index: int) -> int:
    """Per-replication seed ``base XOR mix(index)``; independent of execution order."""
    return (int(base_seed) & _MASK64) ^ _mix64(int(index))


@dataclass(frozen=True)
class GridSpec:
    """Regular lattice ``origin + h * (i_1, ..., i_d)`` filling a rectangular window.

    Each axis holds ``floor(side / h)`` points; each point stands for the
    cell ``[x, x + h)`` so the window volume is ``prod(counts) * h**d``.
    """

    dim: int
    sides: tuple
    mesh: float = 1.0
    origin: tuple | None = None

    def __post_init__(self):
        sides = tuple(float(s) for s in np.broadcast_to(self.sides, (self.dim,)))
        object.__setattr__(self, "sides", sides)
        origin = (0.0,) * self.dim if self.origin is None else tuple(float(o) for o in self.origin)
        object.__setattr__(self, "origin", origin)
        if self.dim < 1 or len(origin) != self.dim:
            raise ValueError("grid dimension and origin length disagree")
        if not self.mesh > 0 or any(not s > 0 for s in sides):
            raise ValueError("mesh and sides must be positive")
        if any(n < 2 for n in self.shape):
            raise ValueError(f"each axis needs at least 2 lattice points, got {self.shape}")
        if self.n_points > MAX_POINTS:
            raise ValueError(f"grid has {self.n_points} points, above the limit {MAX_POINTS}")

    @property
    def shape(self) -> tuple:
        return tuple(int(math.floor(s / self.mesh + 1e-9)) for s in self.sides)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.mesh ** self.dim

    @property
    def volume(self) -> float:
        return self.n_points * self.cell_volume

    def axis(self, k: int) -> np.ndarray:
        return self.origin[k] + self.mesh * np.arange(self.shape[k])

    def points(self) -> np.ndarray:
        grids = np.meshgrid(*[self.axis(k) for k in range(self.dim)], indexing="ij")
        return np.stack(grids, axis=-1)

    def to_dict(self):
        return {"dim": self.dim, "sides": list(self.sides), "mesh": self.mesh, "origin": list(self.origin)}

    @classmethod
    def square(cls, n: int, dim: int = 2, mesh: float = 1.0):
        return cls(dim, (n * mesh,) * dim, mesh)


@dataclass
class GridField:
    spec: GridSpec
    values: np.ndarray
    model: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.spec.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.spec.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


# ---------------------------------------------------------------------------
# Gaussian fields


def _embedding_sizes(shape, factor):
    return tuple(max(2 * (n - 1), 2) * factor for n in shape)


def _embedding_spectrum(model: CovarianceModel, spec: GridSpec, sizes):
    lags = []
    for k, m in enumerate(sizes):
        i = np.arange(m)
        lags.append(np.minimum(i, m - i) * spec.mesh)
    r2 = np.zeros(sizes)
    for k, lag in enumerate(lags):
        shape = [1] * spec.dim
        shape[k] = -1
        r2 = r2 + lag.reshape(shape) ** 2
    c = model.radial(np.sqrt(r2))
    return scipy.fft.fftn(c).real


def _dense_sample(model, spec, rng):
    pts = spec.points().reshape(-1, spec.dim)
    diff = pts[:, None, :] - pts[None, :, :]
    cov = model.radial(np.linalg.norm(diff, axis=-1))
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals, 0.0, None)
    z = rng.standard_normal(len(vals))
    return (vecs @ (np.sqrt(vals) * z)).reshape(spec.shape)


def simulate_gaussian(model: CovarianceModel, spec: GridSpec, seed: int) -> GridField:
    """Stationary Gaussian field with covariance ``model`` sampled at the lattice points.

    Circulant embedding on a torus of ``2(n - 1)`` points per axis; the
    padding is doubled (up to three times) while the embedded spectrum has
    negative eigenvalues below ``-1e-10 * max``. Grids of at most 64^2
    points fall back to a dense eigendecomposition.
    """
    if model.dim != spec.dim:
        raise ValueError(f"model dimension {model.dim} != grid dimension {spec.dim}")
    rng = np.random.default_rng(int(seed) & _MASK64)
    factor = 1
    lam = None
    for _ in range(MAX_PAD_RETRIES + 1):
        sizes = _embedding_sizes(spec.shape, factor)
        spectrum = _embedding_spectrum(model, spec, sizes)
        if spectrum.min() >= -NEGATIVE_EIG_TOL * spectrum.max():
            lam = np.clip(spectrum, 0.0, None)
            break
        factor *= 2
    if lam is not None:
        total = int(np.prod(sizes))
        z = rng.standard_normal(sizes) + 1j * rng.standard_normal(sizes)
        y = scipy.fft.fftn(np.sqrt(lam / total) * z)
        values = y.real[tuple(slice(0, n) for n in spec.shape)]
        method = {"method": "circulant_embedding", "embedding": list(sizes)}
    elif spec.n_points <= DENSE_FALLBACK_POINTS:
        values = _dense_sample(model, spec, rng)
        method = {"method": "dense"}
    else:
        raise SimulationError(
            "circulant embedding has negative eigenvalues even with padding "
            f"{_embedding_sizes(spec.shape, factor // 2)}, and the grid ({spec.n_points} points) "
            f"is too large for the dense fallback (limit {DENSE_FALLBACK_POINTS}); "
            f"minimum padding tried {_embedding_sizes(spec.shape, 1)}"
        )
    values = np.ascontiguousarray(values) + model.mean
    return GridField(spec, values, {"type": "gaussian", **model.to_dict(), **method}, int(seed))


# ---------------------------------------------------------------------------
# dump format: 32-byte header + float64 little-endian values + JSON sidecar

MAGIC = b"XFLD"
VERSION = 1
_HEADER = struct.Struct("<4sII3Id")


def write_field(fld: GridField, path) -> Path:
    path = Path(path)
    if fld.spec.dim > 3:
        raise ValueError("field dumps support at most 3 dimensions")
    counts = list(fld.spec.shape) + [1] * (3 - fld.spec.dim)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, fld.spec.dim, *counts, fld.spec.mesh))
        fh.write(np.ascontiguousarray(fld.values, dtype="<f8").tobytes())
    sidecar = {"grid": fld.spec.to_dict(), "model": fld.model, "seed": fld.seed, "format": "XFLD", "version": VERSION}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def read_field(path) -> GridField:
    """Read a binary dump, or a CSV written by ``write_field_csv`` (by suffix)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_field_csv(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: file too short for a field header")
    magic, version, dim, n1, n2, n3, mesh = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    shape = (n1, n2, n3)[:dim]
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if values.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {int(np.prod(shape))} values, found {values.size}")
    side = path.with_suffix(path.suffix + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    grid = meta.get("grid")
    if grid:
        spec = GridSpec(grid["dim"], tuple(grid["sides"]), grid["mesh"], tuple(grid["origin"]))
    else:
        spec = GridSpec(dim, tuple(n * mesh for n in shape), mesh)
    return GridField(spec, values.reshape(shape).copy(), meta.get("model", {}), meta.get("seed"))


def write_field_csv(fld: GridField, path) -> Path:
    """One row per lattice point: coordinates then value (d <= 2 only)."""
    if fld.spec.dim > 2:
        raise ValueError("CSV export is limited to d <= 2")
    path = Path(path)
    pts = fld.spec.points().reshape(-1, fld.spec.dim)
    names = ["x", "y"][: fld.spec.dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["value"])
        for p, v in zip(pts, fld.values.reshape(-1)):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
    return path


def read_field_csv(path) -> GridField:
    """Inverse of ``write_field_csv``; the lattice is recovered from the coordinates."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2 or rows[0][-1] != "value":
        raise ValueError(f"{path}: expected a header ending in 'value' and at least one row")
    dim = len(rows[0]) - 1
    try:
        data = np.array(rows[1:], dtype=float)
    except ValueError:
        raise ValueError(f"{path}: non-numeric entries")
    axes = [np.unique(data[:, k]) for k in range(dim)]
    shape = tuple(len(a) for a in axes)
    if data.shape[0] != int(np.prod(shape)):
        raise ValueError(f"{path}: coordinates do not form a full lattice")
    mesh = float(axes[0][1] - axes[0][0]) if shape[0] > 1 else 1.0
    order = np.lexsort(data[:, :dim].T[::-1])
    spec = GridSpec(dim, tuple(n * mesh for n in shape), mesh, tuple(float(a[0]) for a in axes))
    if not np.allclose(spec.points().reshape(-1, dim), data[order, :dim]):
        raise ValueError(f"{path}: coordinates are not a regular lattice")
    return GridField(spec, data[order, dim].reshape(shape).copy(), {}, None)
