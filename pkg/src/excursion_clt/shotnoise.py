"""Shot-noise fields: Poisson germs with i.i.d. non-negative marks and a radial response."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy import integrate, optimize
from numba import njit
from scipy.special import gamma, gammaincc

from .errors import MonteCarloBudgetError, SimulationError, UnsupportedCaseError
from .quadrature import DEFAULT_QUAD, QuadratureSpec, gauss_legendre, sphere_factor, unit_ball_volume
from .simulation import GridField, GridSpec, _MASK64

DEFAULT_TRUNCATION_TOL = 1e-6
MAX_BUFFER = 1e4


@dataclass(frozen=True)
class MarkDistribution:
    kind: str = "constant"
    value: float = 1.0       # constant mark
    mean_: float = 1.0       # exponential mean
    mu: float = 0.0          # lognormal log-mean
    sigma: float = 1.0       # lognormal log-sd

    def __post_init__(self):
        if self.kind not in ("constant", "exponential", "lognormal"):
            raise ValueError(f"unknown mark distribution {self.kind!r}")
        if self.kind == "constant" and not self.value >= 0:
            raise ValueError("constant mark must be non-negative")
        if self.kind == "exponential" and not self.mean_ > 0:
            raise ValueError("exponential mark mean must be positive")
        if self.kind == "lognormal" and not self.sigma > 0:
            raise ValueError("lognormal sigma must be positive")

    def mean(self) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "exponential":
            return self.mean_
        return math.exp(self.mu + 0.5 * self.sigma ** 2)

    def second_moment(self) -> float:
        if self.kind == "constant":
            return self.value ** 2
        if self.kind == "exponential":
            return 2.0 * self.mean_ ** 2
        return math.exp(2 * self.mu + 2 * self.sigma ** 2)

    def sample(self, rng, n):
        if self.kind == "constant":
            return np.full(n, float(self.value))
        if self.kind == "exponential":
            return rng.exponential(self.mean_, n)
        return rng.lognormal(self.mu, self.sigma, n)

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "constant":
            d["value"] = self.value
        elif self.kind == "exponential":
            d["mean"] = self.mean_
        else:
            d.update(mu=self.mu, sigma=self.sigma)
        return d


@dataclass(frozen=True)
class Response:
    """Radial response ``a*exp(-b r)`` (``exp_decay``) or ``a*min(1, r**-b)`` (``capped_power``)."""

    kind: str = "exp_decay"
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in ("exp_decay", "capped_power"):
            raise ValueError(f"unknown response {self.kind!r}")
        if not (self.a > 0 and self.b > 0):
            raise ValueError("response parameters a and b must be positive")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "exp_decay":
            return self.a * np.exp(-self.b * r)
        with np.errstate(divide="ignore"):
            return self.a * np.minimum(1.0, np.where(r > 0, r, 1.0) ** (-self.b))

    def radial_moment(self, dim, power=1, lo=0.0):
        """``integral over ||y|| > lo of phi(y)**power dy`` (inf when divergent)."""
        c = sphere_factor(dim)
        a, b = self.a ** power, self.b * power
        if self.kind == "exp_decay":
            return c * a * gamma(dim) / b ** dim * gammaincc(dim, b * lo)
        if b <= dim:
            return math.inf
        inner = c * a * (1.0 - min(lo, 1.0) ** dim) / dim if lo < 1.0 else 0.0
        return inner + c * a * max(lo, 1.0) ** (dim - b) / (b - dim)

    def inverse(self, y):
        """Smallest radius at which the response has dropped to ``y``."""
        if y >= self.a:
            return 0.0
        if self.kind == "exp_decay":
            return math.log(self.a / y) / self.b
        return (self.a / y) ** (1.0 / self.b)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class ShotNoiseModel:
    intensity: float
    marks: MarkDistribution = MarkDistribution()
    response: Response = Response()
    dim: int = 2
    buffer: float | None = None

    def __post_init__(self):
        if not self.intensity >= 0:
            raise ValueError("intensity must be non-negative")
        if self.dim not in (1, 2, 3):
            raise ValueError("only dimensions 1, 2 and 3 are supported")
        if self.buffer is not None and not self.buffer > 0:
            raise ValueError("buffer radius must be positive")

    def mean(self) -> float:
        """Campbell mean ``lambda * E xi * integral of phi``."""
        return self.intensity * self.marks.mean() * self.response.radial_moment(self.dim, 1)

    def variance(self) -> float:
        """Campbell variance ``lambda * E xi^2 * integral of phi^2``."""
        return self.intensity * self.marks.second_moment() * self.response.radial_moment(self.dim, 2)

    def truncation_error(self, radius: float) -> float:
        return self.intensity * self.marks.mean() * self.response.radial_moment(self.dim, 1, lo=radius)

    def required_buffer(self, tol: float = DEFAULT_TRUNCATION_TOL) -> float:
        """Smallest radius whose neglected mean contribution is below ``tol``."""
        if self.intensity == 0 or self.marks.mean() == 0:
            return self.response.inverse(self.response.a) or 1.0
        if not math.isfinite(self.truncation_error(1.0)):
            raise SimulationError(
                f"response {self.response.kind} with b={self.response.b} is not integrable in "
                f"dimension {self.dim}; no finite buffer reaches tolerance {tol}")
        f = lambda r: math.log(self.truncation_error(r)) - math.log(tol)
        if f(0.0) <= 0:
            return 1e-9
        hi = 1.0
        while f(hi) > 0:
            hi *= 2.0
            if hi > 1e12:
                break
        return optimize.brentq(f, 0.0, hi, xtol=1e-10)

    def effective_buffer(self, tol: float = DEFAULT_TRUNCATION_TOL) -> float:
        need = self.required_buffer(tol)
        if self.buffer is not None:
            if self.buffer < need:
                raise SimulationError(
                    f"buffer radius {self.buffer} leaves truncation error "
                    f"{self.truncation_error(self.buffer):.3g} > {tol}; required buffer is {need:.6g}")
            return float(self.buffer)
        if need > MAX_BUFFER:
            raise SimulationError(
                f"truncation tolerance {tol} needs buffer {need:.6g}, above the limit {MAX_BUFFER}")
        return need

    def correlation_cutoff(self, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
        """Lag beyond which the field correlation is negligible (twice the 1e-3 response radius)."""
        return 2.0 * self.response.inverse(1e-3 * self.response.a)

    def to_dict(self):
        return {"type": "shot_noise", "intensity": self.intensity, "marks": self.marks.to_dict(),
                "response": self.response.to_dict(), "dim": self.dim, "buffer": self.buffer}


def _poisson_germs(model, lo, hi, rng):
    vol = float(np.prod(np.asarray(hi) - np.asarray(lo)))
    n = rng.poisson(model.intensity * vol)
    pts = rng.uniform(lo, hi, size=(n, len(lo)))
    return pts, model.marks.sample(rng, n)


@njit(cache=True)
def _accumulate(out, shape, origin, h, pts, marks, radius, kind, a, b):
    # out is the flattened lattice (row-major, up to 3 axes padded with length 1)
    d = pts.shape[1]
    n2, n3 = shape[1], shape[2]
    k = int(math.ceil(radius / h))
    r2max = radius * radius
    for g in range(pts.shape[0]):
        lo = np.zeros(3, np.int64)
        hi = np.zeros(3, np.int64)
        for ax in range(3):
            if ax < d:
                c = int(math.floor((pts[g, ax] - origin[ax]) / h))
                lo[ax] = max(c - k, 0)
                hi[ax] = min(c + k + 1, shape[ax] - 1)
        for i in range(lo[0], hi[0] + 1):
            dx = origin[0] + i * h - pts[g, 0]
            for j in range(lo[1], hi[1] + 1):
                dy = origin[1] + j * h - pts[g, 1] if d > 1 else 0.0
                for l in range(lo[2], hi[2] + 1):
                    dz = origin[2] + l * h - pts[g, 2] if d > 2 else 0.0
                    r2 = dx * dx + dy * dy + dz * dz
                    if r2 > r2max:
                        continue
                    r = math.sqrt(r2)
                    if kind == 0:
                        v = a * math.exp(-b * r)
                    else:
                        v = a if r <= 1.0 else a * r ** (-b)
                    out[(i * n2 + j) * n3 + l] += marks[g] * v


def shot_noise_from_points(model: ShotNoiseModel, spec: GridSpec, points, marks,
                           radius: float | None = None) -> np.ndarray:
    """Lattice values ``sum_i marks_i * phi(t - points_i)``, with ``phi`` cut at ``radius``."""
    points = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, spec.dim))
    marks = np.ascontiguousarray(np.asarray(marks, dtype=float).reshape(-1))
    if radius is None:
        radius = model.effective_buffer()
    shape = np.array(list(spec.shape) + [1] * (3 - spec.dim), dtype=np.int64)
    origin = np.array(list(spec.origin) + [0.0] * (3 - spec.dim))
    out = np.zeros(spec.n_points)
    kind = 0 if model.response.kind == "exp_decay" else 1
    _accumulate(out, shape, origin, float(spec.mesh), points, marks, float(radius), kind,
                float(model.response.a), float(model.response.b))
    return out.reshape(spec.shape)


def simulate_shot_noise(model: ShotNoiseModel, spec: GridSpec, seed: int,
                        tol: float = DEFAULT_TRUNCATION_TOL) -> GridField:
    """Shot-noise field on the lattice; germs are drawn on the window dilated by the buffer."""
    if model.dim != spec.dim:
        raise ValueError(f"model dimension {model.dim} != grid dimension {spec.dim}")
    rng = np.random.default_rng(int(seed) & _MASK64)
    radius = model.effective_buffer(tol)
    lo = np.array(spec.origin) - radius
    hi = np.array(spec.origin) + (np.array(spec.shape) - 1) * spec.mesh + radius
    pts, marks = _poisson_germs(model, lo, hi, rng)
    values = shot_noise_from_points(model, spec, pts, marks, radius)
    meta = {**model.to_dict(), "buffer_used": radius, "germs": int(len(pts))}
    return GridField(spec, values, meta, int(seed))


def marginal_samples(model: ShotNoiseModel, n: int, seed: int, tol: float = DEFAULT_TRUNCATION_TOL,
                     budget: int = 1 << 22):
    """``n`` independent draws of ``X(0)``, generated in blocks of about ``budget`` germs.

    The response is radial, so each germ only needs its distance to the
    origin: uniform in the ball means ``radius * U**(1/d)``.
    """
    rng = np.random.default_rng(int(seed) & _MASK64)
    radius = model.effective_buffer(tol)
    mean_count = model.intensity * unit_ball_volume(model.dim) * radius ** model.dim
    block = max(1, int(budget / max(1.0, mean_count)))
    out = np.empty(n)
    for s in range(0, n, block):
        m = min(block, n - s)
        counts = rng.poisson(mean_count, m)
        total = int(counts.sum())
        dist = radius * rng.uniform(size=total) ** (1.0 / model.dim)
        vals = model.marks.sample(rng, total) * model.response(dist)
        cs = np.concatenate([[0.0], np.cumsum(vals)])
        end = np.cumsum(counts)
        out[s:s + m] = cs[end] - cs[end - counts]
    return out


def tail_probabilities(model: ShotNoiseModel, thresholds, n: int, seed: int):
    """Monte Carlo ``P(X(0) >= u_k)`` with binomial standard errors."""
    x = marginal_samples(model, n, seed)
    u = np.asarray(getattr(thresholds, "levels", thresholds), dtype=float)
    p = (x[:, None] >= u[None, :]).mean(axis=0)
    return p, np.sqrt(p * (1 - p) / n)


class ShotNoisePairEvaluator:
    """Monte Carlo indicator covariances of a shot-noise field at given lags.

    All lags share the same simulated germs (common random numbers), so the
    lag integral of the estimates has a much smaller variance than its
    pointwise parts. Samples are split into ``n_batches`` independent
    batches for standard-error propagation.
    """

    monte_carlo = True

    def __init__(self, model: ShotNoiseModel, thresholds, n_samples: int = 20000, seed: int = 0,
                 n_batches: int = 20, budget: int = 1 << 22):
        self.model = model
        self.u = np.asarray(getattr(thresholds, "levels", thresholds), dtype=float)
        self.n_samples = int(n_samples)
        self.seed = int(seed)
        self.n_batches = int(n_batches)
        self.budget = int(budget)
        if self.n_samples < 2 * self.n_batches:
            raise MonteCarloBudgetError("need at least two samples per batch", 2 * self.n_batches)

    def _values(self, t, n, rng):
        """``X`` at the origin and at every lag, shape ``(n, K + 1)``."""
        model = self.model
        radius = model.effective_buffer()
        locs = np.vstack([np.zeros((1, model.dim)), t])
        lo = locs.min(axis=0) - radius
        hi = locs.max(axis=0) + radius
        out = np.empty((n, len(locs)))
        vol = float(np.prod(hi - lo))
        chunk = max(1, int(self.budget / (max(1.0, model.intensity * vol) * len(locs))))
        for s in range(0, n, chunk):
            m = min(chunk, n - s)
            counts = rng.poisson(model.intensity * vol, m)
            total = int(counts.sum())
            pts = rng.uniform(lo, hi, size=(total, model.dim))
            marks = model.marks.sample(rng, total)
            dist = np.linalg.norm(pts[:, None, :] - locs[None, :, :], axis=-1)
            contrib = marks[:, None] * np.where(dist <= radius, model.response(dist), 0.0)
            # germs are grouped by draw, so per-draw sums are differences of a running sum
            cs = np.vstack([np.zeros((1, len(locs))), np.cumsum(contrib, axis=0)])
            end = np.cumsum(counts)
            out[s:s + m] = cs[end] - cs[end - counts]
        return out

    def batches(self, t):
        t = np.atleast_2d(np.asarray(t, dtype=float))
        rng = np.random.default_rng(self.seed & _MASK64)
        per = self.n_samples // self.n_batches
        r = len(self.u)
        res = np.empty((self.n_batches, len(t), r, r))
        for b in range(self.n_batches):
            x = self._values(t, per, rng)
            ind = (x[:, :, None] >= self.u).astype(float)  # (n, K+1, r)
            i0 = ind[:, 0, :]
            it = ind[:, 1:, :]
            joint = np.einsum("nl,nkm->klm", i0, it) / per
            res[b] = joint - i0.mean(0)[None, :, None] * it.mean(0)[:, None, :]
        return res

    def __call__(self, t):
        return self.batches(t).mean(axis=0)


def _char_exponent(model: ShotNoiseModel, s: float, quad: QuadratureSpec) -> float:
    """``integral over R^d of (cos(s c phi(t)) - 1) dt`` for constant marks ``c``."""
    d = model.dim
    phi = model.response
    c = model.marks.value
    omega = abs(s) * c
    if omega == 0:
        return 0.0
    # substitute y = phi(v); the flat top of the capped response is handled separately
    if phi.kind == "exp_decay":
        g = lambda y: (math.log(phi.a / y) / phi.b) ** (d - 1) / (phi.b * y)
        flat = 0.0
    else:
        g = lambda y: ((phi.a / y) ** (1.0 / phi.b)) ** (d - 1) * (phi.a / y) ** (1.0 / phi.b) / (phi.b * y)
        flat = unit_ball_volume(d) * (math.cos(omega * phi.a) - 1.0)
    y0 = min(phi.a, 1.0 / omega)
    opts = dict(epsabs=1e-12, epsrel=1e-10, limit=max(int(quad.limit), 500))
    low, _ = integrate.quad(lambda y: (math.cos(omega * y) - 1.0) * g(y), 0.0, y0, **opts)
    high = 0.0
    if y0 < phi.a:
        osc, _ = integrate.quad(g, y0, phi.a, weight="cos", wvar=omega, **opts)
        flat_part, _ = integrate.quad(g, y0, phi.a, **opts)
        high = osc - flat_part
    return flat + sphere_factor(d) * (low + high)


def check_bounded_density(model: ShotNoiseModel, quad: QuadratureSpec = DEFAULT_QUAD,
                          s0: float = 4.0, levels: int = 11, rtol: float = 1e-3) -> bool:
    """Check integrability of the characteristic function of ``X(0)`` (constant marks).

    The integral of ``exp(lambda * J(s))`` over ``|s| <= S`` is computed for
    ``S = s0 * 2**k``; it is declared convergent when the last increment
    is below ``rtol`` of the total and the increments are shrinking
    geometrically.
    """
    if model.marks.kind != "constant":
        raise UnsupportedCaseError(
            "the bounded-density check supports constant marks only; declare the density "
            "assumption manually for other mark distributions")
    if model.intensity == 0 or model.marks.value == 0:
        return False
    edges = np.concatenate([[0.0], s0 * 2.0 ** np.arange(levels)])
    incs = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(24, lo, hi)
        vals = np.array([math.exp(model.intensity * _char_exponent(model, s, quad)) for s in x])
        incs.append(2.0 * float(vals @ w))
    incs = np.array(incs)
    total = incs.sum()
    last, prev = incs[-1], incs[-2]
    return bool(last <= rtol * total and last <= 0.75 * prev)
