"""Stationary isotropic covariance models and dependence diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy import integrate

from .quadrature import QuadratureSpec, DEFAULT_QUAD
from .errors import QuadratureError

KINDS = ("spherical", "exponential", "powered_exponential", "white_noise")


@dataclass(frozen=True)
class CovarianceModel:
    """Isotropic covariance ``R(t) = variance * rho(||t||_2)``.

    ``scale`` is the range ``a`` of the spherical model and the scale ``b``
    of the (powered) exponential models ``exp(-(r/b)**exponent)``; it is
    ignored by ``white_noise``. ``mean`` is the field mean, carried along
    for simulation and for the Gaussian marginal.
    """

    kind: str
    variance: float = 1.0
    scale: float = 1.0
    dim: int = 2
    mean: float = 0.0
    exponent: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}; expected one of {KINDS}")
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        if not self.scale > 0:
            raise ValueError("scale/range must be positive")
        if self.dim not in (1, 2, 3):
            raise ValueError("only dimensions 1, 2 and 3 are supported")
        if self.kind == "powered_exponential" and not 0 < self.exponent <= 2:
            raise ValueError("powered exponential exponent must lie in (0, 2]")
        if not math.isfinite(self.mean):
            raise ValueError("mean must be finite")

    # metadata ---------------------------------------------------------
    @property
    def support_radius(self) -> float:
        """Radius beyond which the covariance vanishes identically (inf if none)."""
        if self.kind == "spherical":
            return float(self.scale)
        if self.kind == "white_noise":
            return 0.0
        return math.inf

    @property
    def tail_exponent(self) -> float:
        # every supported family decays faster than any power
        return math.inf

    @property
    def continuous(self) -> bool:
        return self.kind != "white_noise"

    @property
    def practical_range(self) -> float:
        """Lag at which the correlation has dropped to (about) 5%."""
        if self.kind == "spherical":
            return float(self.scale)
        if self.kind == "exponential":
            return 3.0 * self.scale
        if self.kind == "powered_exponential":
            return self.scale * 3.0 ** (1.0 / self.exponent)
        return 1.0

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def to_dict(self):
        return asdict(self)

    # evaluation -------------------------------------------------------
    def radial_correlation(self, r):
        """Correlation as a function of the Euclidean lag length."""
        r = np.abs(np.asarray(r, dtype=float))
        if self.kind == "spherical":
            x = np.minimum(r / self.scale, 1.0)
            return np.where(r < self.scale, 1.0 - 1.5 * x + 0.5 * x ** 3, 0.0)
        if self.kind == "exponential":
            return np.exp(-r / self.scale)
        if self.kind == "powered_exponential":
            return np.exp(-((r / self.scale) ** self.exponent))
        return np.where(r == 0.0, 1.0, 0.0)

    def radial(self, r):
        return self.variance * self.radial_correlation(r)

    def scalar_correlation(self):
        """Plain-float version of ``radial_correlation`` for tight quadrature loops."""
        b, p = float(self.scale), float(self.exponent)
        if self.kind == "spherical":
            return lambda r: 1.0 - 1.5 * (r / b) + 0.5 * (r / b) ** 3 if r < b else 0.0
        if self.kind == "exponential":
            return lambda r: math.exp(-r / b)
        if self.kind == "powered_exponential":
            return lambda r: math.exp(-((r / b) ** p))
        return lambda r: 1.0 if r == 0.0 else 0.0

    def _lag_norm(self, t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            t = t[None]
        if t.shape[-1] != self.dim:
            raise ValueError(f"lag has last dimension {t.shape[-1]}, model dimension is {self.dim}")
        return np.linalg.norm(t, axis=-1)

    def evaluate(self, t):
        """Covariance ``R(t)`` at lag vector(s) ``t`` of shape ``(..., dim)``."""
        out = self.radial(self._lag_norm(t))
        return out[()] if out.ndim == 0 else out

    def correlation(self, t):
        out = self.radial_correlation(self._lag_norm(t))
        return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class DecayReport:
    alpha_estimate: float
    dim: int
    satisfies_condition_A: bool
    satisfies_condition_B: bool

    @property
    def threshold_A(self):
        return 3 * self.dim

    @property
    def threshold_B(self):
        return self.dim


def decay_report(alpha: float, dim: int) -> DecayReport:
    """Compare a polynomial decay exponent with the thresholds ``3d`` and ``d``."""
    return DecayReport(float(alpha), int(dim), bool(alpha > 3 * dim), bool(alpha > dim))


def check_decay(model: CovarianceModel) -> DecayReport:
    return decay_report(model.tail_exponent, model.dim)


def _abs_box_integral(model, ranges, quad):
    d = model.dim
    a = model.support_radius
    rho = model.scalar_correlation()
    var = model.variance

    def f(*xs):
        return var * abs(rho(math.sqrt(sum(x * x for x in xs))))

    def opts(*rest):
        o = {"epsabs": quad.epsabs, "epsrel": quad.epsrel, "limit": int(quad.limit)}
        if math.isfinite(a):
            s = a * a - sum(x * x for x in rest)
            if s > 0:
                o["points"] = [math.sqrt(s)]
        return o

    val, err = integrate.nquad(f, ranges, opts=[opts] * d)
    if not math.isfinite(val):
        raise QuadratureError("tail box integral diverged", estimate=val, error=err)
    return val


def theta_coefficient(model: CovarianceModel, r: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """Weak-dependence coefficient ``2 * integral of |R(t)| over ||t||_inf >= r``.

    By symmetry the domain reduces to the positive orthant minus ``[0, r)^d``,
    which is the disjoint union of the ``d`` boxes where coordinate ``k`` is
    the first one reaching ``r``.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    if model.kind == "white_noise":
        return 0.0
    a = model.support_radius
    if r >= a:
        # ||t||_2 >= ||t||_inf >= r >= a on the whole domain of integration
        return 0.0
    d = model.dim
    top = a if math.isfinite(a) else math.inf
    total = 0.0
    for k in range(d):
        ranges = [(0.0, r)] * k + [(r, top)] + [(0.0, top)] * (d - k - 1)
        # nquad integrates the first range innermost
        total += _abs_box_integral(model, ranges, quad)
    return 2.0 * 2 ** d * total
