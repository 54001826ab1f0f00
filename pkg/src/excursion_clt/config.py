"""YAML experiment configuration: schema checks, defaults and normalization.

Schema (all keys optional unless noted)::

    model:                      # required
      type: gaussian            # gaussian | shot_noise
      covariance: spherical     # spherical | exponential | powered_exponential | white_noise
      variance: 1.0
      scale: 10.0               # range a (spherical) or scale b
      mean: 0.0
      exponent: 1.0             # powered_exponential only
      # shot_noise instead takes
      intensity: 1.0
      marks: {kind: constant, value: 1.0}
      response: {kind: exp_decay, a: 1.0, b: 1.0}
      buffer: null              # null -> smallest radius meeting truncation_tol
      truncation_tol: 1.0e-6
    grid:                       # required
      dim: 2
      size: 512                 # points per axis, or a list (one per axis)
      mesh: 1.0
    thresholds: [-1, 0, 1]      # required, strictly increasing
    experiment:
      replications: 100
      seed: 0
      subwindow_edge: null      # null -> 1.5 practical ranges rounded up to the mesh
      normalization: theoretical_sigma
      workers: 1
      tail_samples: 200000      # shot noise: Monte Carlo tail probabilities
      theory_samples: 20000     # shot noise: Monte Carlo pair probabilities
      growth: []                # optional list of grid sizes for a window-growth study
    quadrature:
      epsabs: 1.0e-10
      epsrel: 1.0e-10
      limit: 200
      cutoff: analytic_support
    sigma: null                 # optional r x r matrix used instead of the computed one
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from pathlib import Path

import numpy as np
import yaml

from .covariance import KINDS, CovarianceModel
from .errors import ConfigError, SimulationError
from .quadrature import QuadratureSpec
from .shotnoise import DEFAULT_TRUNCATION_TOL, MarkDistribution, Response, ShotNoiseModel
from .simulation import GridSpec, MAX_POINTS

EDGE_FACTOR = 1.5

_TOP = {"model", "grid", "thresholds", "experiment", "quadrature", "sigma"}
_GAUSS_KEYS = {"type", "covariance", "variance", "scale", "mean", "exponent"}
_SHOT_KEYS = {"type", "intensity", "marks", "response", "buffer", "truncation_tol"}
_GRID_KEYS = {"dim", "size", "mesh"}
_EXP_KEYS = {"replications", "seed", "subwindow_edge", "normalization", "workers",
             "tail_samples", "theory_samples", "growth"}
_QUAD_KEYS = {"epsabs", "epsrel", "limit", "cutoff"}


class _Checker:
    def __init__(self):
        self.errors = []

    def fail(self, key, msg):
        self.errors.append((key, msg))

    def mapping(self, raw, key, allowed, required=False):
        v = raw.get(key) if isinstance(raw, dict) else None
        if v is None:
            if required:
                self.fail(key, "is required")
            return {}
        if not isinstance(v, dict):
            self.fail(key, "must be a mapping")
            return {}
        for extra in sorted(set(v) - allowed):
            self.fail(f"{key}.{extra}", "unknown key")
        return v

    def number(self, sec, path, key, default, lo=None, integer=False, strict=False):
        v = sec.get(key, default)
        where = f"{path}.{key}"
        if v is None:
            return None
        if isinstance(v, str):
            # YAML 1.1 reads exponent forms like 1e-06 as strings
            try:
                v = float(v)
            except ValueError:
                pass
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(where, f"must be a number, got {v!r}")
            return default
        if integer and (not isinstance(v, int) and not float(v).is_integer()):
            self.fail(where, f"must be an integer, got {v!r}")
            return default
        v = int(v) if integer else float(v)
        if not math.isfinite(v):
            self.fail(where, "must be finite")
            return default
        if lo is not None and (v <= lo if strict else v < lo):
            self.fail(where, f"must be {'>' if strict else '>='} {lo}, got {v}")
        return v

    def choice(self, sec, path, key, default, options):
        v = sec.get(key, default)
        if v not in options:
            self.fail(f"{path}.{key}", f"must be one of {list(options)}, got {v!r}")
            return default
        return v


def normalize_config(raw) -> dict:
    """Validate ``raw`` and return the fully resolved configuration.

    Every default is written out, so feeding the result back in returns an
    identical dictionary. All violations are collected into one ConfigError.
    """
    c = _Checker()
    if not isinstance(raw, dict) or not raw:
        raise ConfigError([("<root>", "configuration is empty or not a mapping")])
    for extra in sorted(set(raw) - _TOP):
        c.fail(extra, "unknown key")

    model_raw = raw.get("model")
    mtype = model_raw.get("type", "gaussian") if isinstance(model_raw, dict) else "gaussian"
    if mtype not in ("gaussian", "shot_noise"):
        c.fail("model.type", f"must be 'gaussian' or 'shot_noise', got {mtype!r}")
        mtype = "gaussian"
    msec = c.mapping(raw, "model", _GAUSS_KEYS if mtype == "gaussian" else _SHOT_KEYS, required=True)

    gsec = c.mapping(raw, "grid", _GRID_KEYS, required=True)
    dim = c.number(gsec, "grid", "dim", 2, integer=True)
    if dim not in (1, 2, 3):
        c.fail("grid.dim", f"must be 1, 2 or 3, got {dim}")
        dim = 2
    mesh = c.number(gsec, "grid", "mesh", 1.0, lo=0, strict=True)
    size = gsec.get("size")
    sizes = None
    if size is None:
        if gsec:
            c.fail("grid.size", "is required")
    else:
        vals = size if isinstance(size, list) else [size] * dim
        if len(vals) != dim:
            c.fail("grid.size", f"needs {dim} entries, got {len(vals)}")
        elif any(isinstance(v, bool) or not isinstance(v, int) or v < 2 for v in vals):
            c.fail("grid.size", f"entries must be integers >= 2, got {size!r}")
        elif math.prod(vals) > MAX_POINTS:
            c.fail("grid.size", f"{math.prod(vals)} points exceed the limit {MAX_POINTS}")
        else:
            sizes = [int(v) for v in vals]

    model = None
    if mtype == "gaussian":
        kind = c.choice(msec, "model", "covariance", "spherical", KINDS)
        nm = {
            "type": "gaussian",
            "covariance": kind,
            "variance": c.number(msec, "model", "variance", 1.0, lo=0, strict=True),
            "scale": c.number(msec, "model", "scale", 1.0, lo=0, strict=True),
            "mean": c.number(msec, "model", "mean", 0.0),
            "exponent": c.number(msec, "model", "exponent", 1.0, lo=0, strict=True),
        }
        try:
            model = CovarianceModel(kind, nm["variance"], nm["scale"], dim, nm["mean"], nm["exponent"])
        except ValueError as e:
            c.fail("model", str(e))
    else:
        marks = msec.get("marks") or {}
        resp = msec.get("response") or {}
        if not isinstance(marks, dict):
            c.fail("model.marks", "must be a mapping")
            marks = {}
        if not isinstance(resp, dict):
            c.fail("model.response", "must be a mapping")
            resp = {}
        nm = {
            "type": "shot_noise",
            "intensity": c.number(msec, "model", "intensity", 1.0, lo=0),
            "buffer": c.number(msec, "model", "buffer", None, lo=0, strict=True),
            "truncation_tol": c.number(msec, "model", "truncation_tol", DEFAULT_TRUNCATION_TOL, lo=0, strict=True),
        }
        try:
            mk = MarkDistribution(marks.get("kind", "constant"), float(marks.get("value", 1.0)),
                                  float(marks.get("mean", 1.0)), float(marks.get("mu", 0.0)),
                                  float(marks.get("sigma", 1.0)))
            rs = Response(resp.get("kind", "exp_decay"), float(resp.get("a", 1.0)), float(resp.get("b", 1.0)))
            model = ShotNoiseModel(nm["intensity"], mk, rs, dim, nm["buffer"])
            nm["marks"] = mk.to_dict()
            nm["response"] = rs.to_dict()
            if nm["buffer"] is None:
                nm["buffer"] = model.effective_buffer(nm["truncation_tol"])
        except (TypeError, ValueError) as e:
            c.fail("model", str(e))
        except SimulationError as e:
            c.fail("model.buffer", str(e))

    th = raw.get("thresholds")
    thresholds = None
    if th is None:
        c.fail("thresholds", "is required")
    else:
        vals = th if isinstance(th, list) else [th]
        if not vals or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in vals):
            c.fail("thresholds", f"must be a non-empty list of numbers, got {th!r}")
        elif any(not math.isfinite(v) for v in vals):
            c.fail("thresholds", "thresholds must be finite")
        elif any(b <= a for a, b in zip(vals, vals[1:])):
            c.fail("thresholds", "thresholds must be strictly increasing")
        else:
            thresholds = [float(v) for v in vals]

    esec = c.mapping(raw, "experiment", _EXP_KEYS)
    exp = {
        "replications": c.number(esec, "experiment", "replications", 100, lo=2, integer=True),
        "seed": c.number(esec, "experiment", "seed", 0, lo=0, integer=True),
        "normalization": c.choice(esec, "experiment", "normalization", "theoretical_sigma",
                                  ("theoretical_sigma", "self_normalized")),
        "workers": c.number(esec, "experiment", "workers", 1, lo=1, integer=True),
        "tail_samples": c.number(esec, "experiment", "tail_samples", 200_000, lo=1, integer=True),
        "theory_samples": c.number(esec, "experiment", "theory_samples", 20_000, lo=1, integer=True),
    }
    edge = c.number(esec, "experiment", "subwindow_edge", None, lo=0, strict=True)
    if edge is None and model is not None:
        edge = default_edge(model, mesh)
    exp["subwindow_edge"] = edge
    growth = esec.get("growth", [])
    if not isinstance(growth, list) or any(isinstance(g, bool) or not isinstance(g, int) or g < 2 for g in growth):
        c.fail("experiment.growth", f"must be a list of integer grid sizes, got {growth!r}")
        growth = []
    elif any(b <= a for a, b in zip(growth, growth[1:])):
        c.fail("experiment.growth", "window sizes must strictly increase")
    exp["growth"] = [int(g) for g in growth]

    qsec = c.mapping(raw, "quadrature", _QUAD_KEYS)
    quad = {
        "epsabs": c.number(qsec, "quadrature", "epsabs", 1e-10, lo=0, strict=True),
        "epsrel": c.number(qsec, "quadrature", "epsrel", 1e-10, lo=0, strict=True),
        "limit": c.number(qsec, "quadrature", "limit", 200, lo=1, integer=True),
        "cutoff": c.choice(qsec, "quadrature", "cutoff", "analytic_support",
                           ("analytic_support", "tolerance_tail")),
    }

    sigma = raw.get("sigma")
    if sigma is not None:
        try:
            s = np.asarray(sigma, dtype=float)
            r = len(thresholds) if thresholds else s.shape[0]
            if s.shape != (r, r):
                c.fail("sigma", f"must be a {r}x{r} matrix")
            else:
                sigma = s.tolist()
        except (TypeError, ValueError):
            c.fail("sigma", "must be a numeric matrix")

    if c.errors:
        raise ConfigError(c.errors)
    return {
        "model": nm,
        "grid": {"dim": dim, "size": sizes, "mesh": mesh},
        "thresholds": thresholds,
        "experiment": exp,
        "quadrature": quad,
        "sigma": sigma,
    }


def default_edge(model, mesh: float) -> float:
    """Subwindow edge of ``EDGE_FACTOR`` practical ranges, rounded up to a mesh multiple."""
    if isinstance(model, CovarianceModel):
        reach = model.practical_range
    else:
        reach = model.response.inverse(0.05 * model.response.a)
    return mesh * math.ceil(EDGE_FACTOR * reach / mesh - 1e-9)


def apply_overrides(raw: dict, seed=None, reps=None, grid=None, thresholds=None, edge=None,
                    threads=None) -> dict:
    raw = copy.deepcopy(raw) if raw else {}
    exp = raw.setdefault("experiment", {}) if isinstance(raw.get("experiment", {}), dict) else raw["experiment"]
    if seed is not None:
        exp["seed"] = seed
    if reps is not None:
        exp["replications"] = reps
    if edge is not None:
        exp["subwindow_edge"] = edge
    if threads is not None:
        exp["workers"] = threads
    if grid is not None:
        g = raw.setdefault("grid", {})
        if isinstance(g, dict):
            g["size"] = grid
    if thresholds is not None:
        raw["thresholds"] = thresholds
    return raw


def load_raw(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([("--config", f"config file not found: {path}")])
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError([("--config", f"{path}: invalid YAML: {e}")]) from None
    return data or {}


def load_config(path) -> dict:
    return normalize_config(load_raw(path))


def config_hash(norm: dict) -> str:
    return hashlib.sha256(json.dumps(norm, sort_keys=True).encode()).hexdigest()


def build_model(norm: dict):
    m = norm["model"]
    dim = norm["grid"]["dim"]
    if m["type"] == "gaussian":
        return CovarianceModel(m["covariance"], m["variance"], m["scale"], dim, m["mean"], m["exponent"])
    mk = m["marks"]
    marks = MarkDistribution(mk["kind"], mk.get("value", 1.0), mk.get("mean", 1.0), mk.get("mu", 0.0),
                             mk.get("sigma", 1.0))
    return ShotNoiseModel(m["intensity"], marks, Response(**m["response"]), dim, m["buffer"])


def build_grid(norm: dict, size=None) -> GridSpec:
    g = norm["grid"]
    sizes = g["size"] if size is None else [size] * g["dim"]
    if sizes is None:
        raise ConfigError([("grid.size", "is required for this command")])
    return GridSpec(g["dim"], tuple(n * g["mesh"] for n in sizes), g["mesh"])


def build_quad(norm: dict) -> QuadratureSpec:
    return QuadratureSpec(**norm["quadrature"])


def build_experiment(norm: dict, size=None):
    from .harness import ExperimentConfig
    from .theory import CovMatrix

    e = norm["experiment"]
    sigma = None
    if norm["sigma"] is not None:
        sigma = CovMatrix(np.array(norm["sigma"]), "theoretical", tuple(norm["thresholds"]), {"supplied": True})
    return ExperimentConfig(
        model=build_model(norm), grid=build_grid(norm, size), thresholds=norm["thresholds"],
        replications=e["replications"], seed=e["seed"], subwindow_edge=e["subwindow_edge"],
        normalization=e["normalization"], quad=build_quad(norm), sigma=sigma,
        tail_samples=e["tail_samples"], theory_samples=e["theory_samples"], workers=e["workers"],
    )
