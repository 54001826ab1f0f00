"""Full-dimensional (Cartesian) quadrature of the Gaussian limiting matrix.

This is an independent route to the entries computed radially in
``theory``: the lag integral runs over ``R^d`` in Cartesian coordinates by
nested adaptive quadrature (via the positive orthant), with the
correlation-parameter integral done by a fixed Gauss-Legendre rule inside
a compiled integrand. It exists to cross-check the isotropic reduction and
is much slower.
"""

from __future__ import annotations

import math

import numpy as np
from numba import cfunc, njit, types, carray
from scipy import LowLevelCallable, integrate

from .covariance import CovarianceModel
from .quadrature import QuadratureSpec
from .theory import GaussianMarginal

_KIND_CODES = {"spherical": 0, "exponential": 1, "powered_exponential": 2}
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(64)


@njit(cache=True)
def _rho(v, kind, scale, expo):
    if kind == 0:
        if v >= scale:
            return 0.0
        x = v / scale
        return 1.0 - 1.5 * x + 0.5 * x * x * x
    if kind == 1:
        return math.exp(-v / scale)
    return math.exp(-((v / scale) ** expo))


@njit(cache=True)
def _cov_std(rho, z, w):
    if rho == 0.0:
        return 0.0
    if rho > 1.0:
        rho = 1.0
    upper = math.asin(rho)
    dm = (z - w) * (z - w) / 8.0
    dp = (z + w) * (z + w) / 8.0
    q4 = math.pi / 4.0
    acc = 0.0
    for k in range(_NODES.shape[0]):
        s = 0.5 * upper * (_NODES[k] + 1.0)
        e = 0.0
        ok = True
        if dm > 0.0:
            a = math.sin(q4 - 0.5 * s)
            if a == 0.0:
                ok = False
            else:
                e -= dm / (a * a)
        if dp > 0.0 and ok:
            b = math.sin(q4 + 0.5 * s)
            if b == 0.0:
                ok = False
            else:
                e -= dp / (b * b)
        if ok:
            acc += _WEIGHTS[k] * math.exp(e)
    return 0.5 * upper * acc / (2.0 * math.pi)


@cfunc(types.double(types.intc, types.CPointer(types.double)), cache=True)
def _integrand(n, xx):
    # layout: d coordinates, then z, w, kind, scale, exponent
    a = carray(xx, n)
    d = n - 5
    s2 = 0.0
    for i in range(d):
        s2 += a[i] * a[i]
    rho = _rho(math.sqrt(s2), int(a[d + 2]), a[d + 3], a[d + 4])
    return _cov_std(rho, a[d], a[d + 1])


_LLC = LowLevelCallable(_integrand.ctypes)


def sigma_entry_cartesian(m: GaussianMarginal, model: CovarianceModel, ul: float, um: float,
                          quad: QuadratureSpec = QuadratureSpec(1e-13, 1e-11, 400)) -> float:
    """Entry ``sigma_lm`` by d-dimensional Cartesian quadrature."""
    if model.kind not in _KIND_CODES:
        raise ValueError(f"no compiled correlation for kind {model.kind!r}")
    d = model.dim
    z = (ul - m.mean) / m.std
    w = (um - m.mean) / m.std
    args = (z, w, float(_KIND_CODES[model.kind]), float(model.scale), float(model.exponent))
    a = model.support_radius
    opts = {"epsabs": quad.epsabs, "epsrel": quad.epsrel, "limit": int(quad.limit)}

    if math.isfinite(a):
        def make_range(k):
            # coordinate k ranges over the part of the ball left by the outer ones
            def rng(*outer):
                rest = outer[: d - 1 - k]
                s = a * a - sum(x * x for x in rest)
                return (0.0, math.sqrt(s) if s > 0 else 0.0)
            return rng
        ranges = [make_range(k) for k in range(d)]
    else:
        ranges = [(0.0, math.inf)] * d
    val, _ = integrate.nquad(_LLC, ranges, args=args, opts=[opts] * d)
    return 2 ** d * val
