"""Quadrature settings and small shared integration helpers."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, asdict

import numpy as np
from scipy import integrate
from scipy.special import gamma

from .errors import QuadratureError

CUTOFF_POLICIES = ("analytic_support", "tolerance_tail")


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances for the adaptive quadratures.

    ``cutoff`` selects how the outer (lag) integral is truncated: over the
    exact support of a compactly supported correlation, or where the
    ``|rho|/4`` envelope of the remaining tail falls below ``epsabs``.
    Models without compact support always use the tail rule.
    """

    epsabs: float = 1e-10
    epsrel: float = 1e-10
    limit: int = 200
    cutoff: str = "analytic_support"

    def __post_init__(self):
        if not (self.epsabs > 0 and self.epsrel > 0):
            raise ValueError("quadrature tolerances must be positive")
        if int(self.limit) < 1:
            raise ValueError("quadrature limit must be >= 1")
        if self.cutoff not in CUTOFF_POLICIES:
            raise ValueError(f"unknown cutoff policy {self.cutoff!r}")

    def to_dict(self):
        return asdict(self)


DEFAULT_QUAD = QuadratureSpec()


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / gamma(d / 2 + 1)


def sphere_factor(d: int) -> float:
    """``d * omega_d``: surface area of the unit sphere in R^d (2 for d = 1)."""
    return d * unit_ball_volume(d)


def checked_quad(func, a, b, quad: QuadratureSpec, what="integral", points=None, **kw):
    """``scipy.integrate.quad`` that raises instead of warning on failure."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(
                func, a, b, epsabs=quad.epsabs, epsrel=quad.epsrel,
                limit=int(quad.limit), points=points, **kw,
            )
        except integrate.IntegrationWarning as exc:
            # retry silently to recover the estimate for the diagnostic
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                val, err = integrate.quad(
                    func, a, b, epsabs=quad.epsabs, epsrel=quad.epsrel,
                    limit=int(quad.limit), points=points, **kw,
                )
            # roundoff-limited results at the requested tolerance are fine
            if err <= 100 * max(quad.epsabs, quad.epsrel * abs(val)):
                return val, err
            raise QuadratureError(
                f"{what} did not converge: estimate {val!r}, error {err:.3g} ({exc})",
                estimate=val, error=err,
            ) from None
    return val, err


def gauss_legendre(n: int, a: float = 0.0, b: float = 1.0):
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def graded_nodes(upper: float, n_panels: int = 12, order: int = 16, ratio: float = 0.35):
    """Composite Gauss-Legendre nodes on ``[0, upper]``, refined geometrically toward 0.

    The integrands met here have algebraic endpoint behaviour at lag zero,
    which a geometric mesh resolves at a modest node count.
    """
    edges = upper * ratio ** np.arange(n_panels - 1, -1, -1)
    edges = np.concatenate([[0.0], edges])
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(order, lo, hi)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)
