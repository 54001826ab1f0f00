"""Limiting variances and covariance matrices of excursion volumes.

The Gaussian indicator covariance is evaluated from its integral
representation in the correlation parameter,

    cov(1{U >= u}, 1{V >= v}) = 1/(2 pi) * int_0^rho (1 - r^2)^(-1/2)
        * exp(-(z^2 - 2 r z w + w^2) / (2 (1 - r^2))) dr,

with standardized levels ``z = (u - a)/tau`` and ``w = (v - a)/tau``. The
substitution ``r = sin(s)`` removes the endpoint singularity, and the
exponent is rewritten as

    -(z - w)^2 / (4 (1 - r)) - (z + w)^2 / (4 (1 + r))

using ``1 -/+ sin(s) = 2 sin^2(pi/4 -/+ s/2)`` so it stays accurate as
``|rho| -> 1``. Limiting matrices integrate this covariance over all lags;
for isotropic models that is a single radial quadrature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .covariance import CovarianceModel
from .errors import DegenerateMatrixError, MonteCarloBudgetError
from .quadrature import (
    DEFAULT_QUAD,
    QuadratureSpec,
    checked_quad,
    graded_nodes,
    sphere_factor,
)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class GaussianMarginal:
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("standard deviation must be positive")

    @classmethod
    def from_model(cls, model: CovarianceModel) -> "GaussianMarginal":
        return cls(model.mean, model.std)

    def standardize(self, u):
        return (np.asarray(u, dtype=float) - self.mean) / self.std


def gaussian_tail(z):
    """Standard Gaussian survival function ``1 - Phi(z)``."""
    out = ndtr(-np.asarray(z, dtype=float))
    return out[()] if np.ndim(out) == 0 else out


def _log_integrand(s, z, w):
    """Exponent of the integrand after ``r = sin(s)``; vectorized in ``s``."""
    dm = (z - w) ** 2
    dp = (z + w) ** 2
    out = np.zeros_like(np.asarray(s, dtype=float))
    with np.errstate(divide="ignore"):
        if dm > 0:
            out = out - dm / (8.0 * np.sin(np.pi / 4 - s / 2) ** 2)
        if dp > 0:
            out = out - dp / (8.0 * np.sin(np.pi / 4 + s / 2) ** 2)
    return out


def _indicator_cov_std(z: float, w: float, rho: float, quad: QuadratureSpec) -> float:
    if rho >= 1.0:
        return float(gaussian_tail(max(z, w)) - gaussian_tail(z) * gaussian_tail(w))
    if rho <= -1.0:
        both = max(0.0, float(gaussian_tail(z) + gaussian_tail(w)) - 1.0)
        return both - float(gaussian_tail(z) * gaussian_tail(w))
    if rho == 0.0:
        return 0.0
    upper = math.asin(rho)
    dm = (z - w) ** 2 / 8.0
    dp = (z + w) ** 2 / 8.0
    q4 = math.pi / 4

    def f(s):
        e = 0.0
        if dm > 0:
            a = math.sin(q4 - s / 2)
            if a == 0.0:
                return 0.0
            e -= dm / (a * a)
        if dp > 0:
            b = math.sin(q4 + s / 2)
            if b == 0.0:
                return 0.0
            e -= dp / (b * b)
        return math.exp(e)
    val, _ = checked_quad(
        f, 0.0, upper, QuadratureSpec(min(quad.epsabs, 1e-13), min(quad.epsrel, 1e-12), max(quad.limit, 100)),
        what="indicator covariance",
    )
    return val / TWO_PI


def gaussian_indicator_cov(m: GaussianMarginal, u: float, v: float, rho: float,
                           quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """``cov(1{U >= u}, 1{V >= v})`` for a Gaussian pair with common marginal ``m``."""
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation {rho} outside [-1, 1]")
    z = (u - m.mean) / m.std
    w = (v - m.mean) / m.std
    return _indicator_cov_std(float(z), float(w), float(rho), quad)


_GL_S, _GL_W = np.polynomial.legendre.leggauss(96)


def indicator_cov_table(rho, z: float, w: float) -> np.ndarray:
    """Vectorized standardized indicator covariance at many correlations.

    Uses a fixed 96-point Gauss-Legendre rule in ``s = asin(r)``; the
    integrand is smooth there, and the rule agrees with the adaptive
    scalar routine to roughly 1e-14 (see the test suite).
    """
    rho = np.clip(np.asarray(rho, dtype=float), -1.0, 1.0)
    upper = np.arcsin(rho)
    s = 0.5 * upper[..., None] * (_GL_S + 1.0)
    vals = np.exp(_log_integrand(s, z, w))
    return 0.5 * upper * (vals @ _GL_W) / TWO_PI


def qa_indicator_bound(density_bound: float, cov: float) -> float:
    """Upper bound on indicator covariances of a quasi-associated pair."""
    if not density_bound > 0:
        raise ValueError("density bound must be positive")
    return 3.0 * 2.0 ** (2.0 / 3.0) * density_bound ** (2.0 / 3.0) * abs(cov) ** (1.0 / 3.0)


# ---------------------------------------------------------------------------
# covariance matrices


@dataclass
class CovMatrix:
    entries: np.ndarray
    provenance: str = "theoretical"
    thresholds: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        e = np.array(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError("covariance matrix must be square")
        scale = max(1.0, float(np.max(np.abs(e)))) if e.size else 1.0
        if np.max(np.abs(e - e.T), initial=0.0) > 1e-12 * scale:
            raise ValueError("covariance matrix is not symmetric")
        if self.provenance not in ("theoretical", "estimated"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        self.entries = e
        self.thresholds = tuple(float(x) for x in self.thresholds)
        if self.provenance == "theoretical" and e.size:
            lo = float(np.linalg.eigvalsh(e).min())
            tol = 1e-8 * max(float(np.trace(e)), 0.0)
            if lo < -tol:
                raise DegenerateMatrixError(f"theoretical matrix is not PSD (eigenvalue {lo:.3g})", lo)

    @property
    def order(self) -> int:
        return self.entries.shape[0]

    def to_dict(self):
        return {
            "order": self.order,
            "provenance": self.provenance,
            "thresholds": list(self.thresholds),
            "entries": self.entries.tolist(),
            "meta": self.meta,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["entries"]), d.get("provenance", "theoretical"),
                   tuple(d.get("thresholds", ())), dict(d.get("meta", {})))

    def table(self, digits: int = 4) -> str:
        """Lower-triangular aligned table, one row per threshold."""
        r = self.order
        cells = [[f"{self.entries[i, j]:.{digits}f}" for j in range(i + 1)] for i in range(r)]
        width = max(len(c) for row in cells for c in row)
        return "\n".join("  ".join(c.rjust(width) for c in row) for row in cells)


def inv_sqrt(matrix) -> np.ndarray:
    """Symmetric inverse square root ``M`` with ``M @ S @ M = I``.

    Raises ``DegenerateMatrixError`` when an eigenvalue falls below
    ``1e-10 * trace``.
    """
    s = matrix.entries if isinstance(matrix, CovMatrix) else np.asarray(matrix, dtype=float)
    s = 0.5 * (s + s.T)
    vals, vecs = np.linalg.eigh(s)
    floor = 1e-10 * float(np.trace(s))
    if not floor > 0 or vals.min() <= floor:
        raise DegenerateMatrixError(
            f"matrix is degenerate: smallest eigenvalue {vals.min():.6g} <= floor {floor:.3g}",
            float(vals.min()),
        )
    return (vecs / np.sqrt(vals)) @ vecs.T


# ---------------------------------------------------------------------------
# Gaussian limits


def _tail_cutoff(model: CovarianceModel, quad: QuadratureSpec) -> float:
    """Lag beyond which the ``|rho|/4`` envelope integrates to less than ``epsabs``."""
    d = model.dim
    c = sphere_factor(d)
    rho = model.scalar_correlation()

    def tail(v):
        val, _ = checked_quad(lambda x: x ** (d - 1) * abs(rho(x)) / 4.0, v, math.inf,
                              QuadratureSpec(1e-15, 1e-8, 200), what="envelope tail")
        return c * val

    hi = model.practical_range
    while tail(hi) > quad.epsabs:
        hi *= 2.0
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if tail(mid) > quad.epsabs:
            lo = mid
        else:
            hi = mid
    return hi


def outer_cutoff(model: CovarianceModel, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    if math.isfinite(model.support_radius):
        if quad.cutoff == "analytic_support":
            return model.support_radius
        return min(model.support_radius, _tail_cutoff(model, quad))
    return _tail_cutoff(model, quad)


def sigma_entry_gaussian(m: GaussianMarginal, model: CovarianceModel, ul: float, um: float,
                         quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """One element of the limiting matrix by radial quadrature over the lag length."""
    if model.kind == "white_noise":
        return 0.0
    d = model.dim
    z = (ul - m.mean) / m.std
    w = (um - m.mean) / m.std
    rho = model.scalar_correlation()
    inner = lambda v: v ** (d - 1) * _indicator_cov_std(z, w, rho(v), quad)
    upper = outer_cutoff(model, quad)
    val, _ = checked_quad(inner, 0.0, upper, quad, what=f"sigma({ul}, {um})")
    return sphere_factor(d) * val


def sigma2_gaussian(m: GaussianMarginal, model: CovarianceModel, u: float,
                    quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Limiting variance of the normalized excursion volume at level ``u``."""
    return max(sigma_entry_gaussian(m, model, u, u, quad), 0.0)


def sigma2_mean_level(model: CovarianceModel, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Variance at the mean level, where the inner integral is ``arcsin(rho)``."""
    if model.kind == "white_noise":
        return 0.0
    d = model.dim
    rho = model.scalar_correlation()
    val, _ = checked_quad(lambda v: v ** (d - 1) * math.asin(rho(v)), 0.0,
                          outer_cutoff(model, quad), quad, what="mean-level variance")
    return sphere_factor(d) * val / TWO_PI


def sigma_matrix_gaussian(m: GaussianMarginal, model: CovarianceModel, thresholds,
                          quad: QuadratureSpec = DEFAULT_QUAD) -> CovMatrix:
    u = np.asarray(getattr(thresholds, "levels", thresholds), dtype=float)
    r = len(u)
    out = np.zeros((r, r))
    for i in range(r):
        for j in range(i, r):
            out[i, j] = out[j, i] = sigma_entry_gaussian(m, model, u[i], u[j], quad)
    return CovMatrix(out, "theoretical", tuple(u), {
        "method": "radial quadrature",
        "model": model.to_dict(),
        "quadrature": quad.to_dict(),
    })


# ---------------------------------------------------------------------------
# generic evaluator-based limits


class GaussianPairEvaluator:
    """Indicator covariances ``cov_lm(t)`` of a Gaussian field at lag vectors ``t``."""

    monte_carlo = False

    def __init__(self, model: CovarianceModel, thresholds, marginal: GaussianMarginal | None = None):
        self.model = model
        self.marginal = marginal or GaussianMarginal.from_model(model)
        self.z = self.marginal.standardize(np.asarray(getattr(thresholds, "levels", thresholds), float))

    def __call__(self, t):
        rho = np.atleast_1d(self.model.correlation(t))
        r = len(self.z)
        out = np.empty(rho.shape + (r, r))
        for i in range(r):
            for j in range(i, r):
                out[..., i, j] = out[..., j, i] = indicator_cov_table(rho, self.z[i], self.z[j])
        return out


def sigma_matrix_generic(evaluator, model, thresholds, quad: QuadratureSpec = DEFAULT_QUAD,
                         cutoff: float | None = None, n_panels: int = 14, order: int = 20,
                         tolerance: float | None = None) -> CovMatrix:
    """Limiting matrix from a pointwise indicator-covariance evaluator.

    The field is assumed isotropic, so the lag integral is taken along the
    first axis with the radial weight ``d * omega_d * v^(d-1)`` on a graded
    Gauss-Legendre mesh over ``[0, cutoff]``. Monte Carlo evaluators expose
    ``batches(t)`` returning independent batch estimates, from which the
    standard error of every entry is propagated; if it exceeds
    ``tolerance`` a ``MonteCarloBudgetError`` reports the sample size
    needed.
    """
    u = np.asarray(getattr(thresholds, "levels", thresholds), dtype=float)
    d = model.dim
    if cutoff is None:
        if isinstance(model, CovarianceModel):
            cutoff = outer_cutoff(model, quad)
        else:
            cutoff = model.correlation_cutoff(quad)
    if cutoff <= 0:
        return CovMatrix(np.zeros((len(u), len(u))), "theoretical", tuple(u), {"method": "generic"})
    v, wts = graded_nodes(cutoff, n_panels, order)
    t = np.zeros((len(v), d))
    t[:, 0] = v
    weights = sphere_factor(d) * wts * v ** (d - 1)
    meta = {"method": "generic radial rule", "cutoff": cutoff, "nodes": int(len(v))}
    if getattr(evaluator, "monte_carlo", False):
        batches = np.asarray(evaluator.batches(t))  # (B, K, r, r)
        per_batch = np.einsum("k,bkij->bij", weights, batches)
        est = per_batch.mean(axis=0)
        se = per_batch.std(axis=0, ddof=1) / math.sqrt(per_batch.shape[0])
        est = 0.5 * (est + est.T)
        se = 0.5 * (se + se.T)
        meta["standard_error"] = se.tolist()
        meta["samples"] = int(getattr(evaluator, "n_samples", 0))
        tol = quad.epsabs if tolerance is None else tolerance
        worst = float(se.max())
        if worst > tol:
            need = int(math.ceil(getattr(evaluator, "n_samples", 1) * (worst / tol) ** 2))
            raise MonteCarloBudgetError(
                f"Monte Carlo standard error {worst:.3g} exceeds tolerance {tol:.3g}; "
                f"about {need} samples are required", need)
        return CovMatrix(est, "estimated", tuple(u), meta)
    vals = np.asarray(evaluator(t))
    est = np.einsum("k,kij->ij", weights, vals)
    est = 0.5 * (est + est.T)
    return CovMatrix(est, "theoretical", tuple(u), meta)
