"""Monte Carlo experiments on the CLT for excursion volumes."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .covariance import CovarianceModel
from .errors import DegenerateMatrixError, DomainError
from .estimation import estimate_sigma, make_tiling
from .excursion import ThresholdVector, as_thresholds, centered_statistic, excursion_vector
from .quadrature import DEFAULT_QUAD, QuadratureSpec
from .shotnoise import ShotNoiseModel, ShotNoisePairEvaluator, simulate_shot_noise, tail_probabilities
from .simulation import GridSpec, derive_seed, simulate_gaussian
from .theory import CovMatrix, GaussianMarginal, gaussian_tail, inv_sqrt, sigma_matrix_gaussian, sigma_matrix_generic

log = logging.getLogger(__name__)

NORMALIZATIONS = ("theoretical_sigma", "self_normalized")
DECILES = np.arange(1, 10) / 10.0
# seed-stream indices reserved for auxiliary Monte Carlo (outside replication indices)
_TAIL_STREAM = 1 << 40
_THEORY_STREAM = (1 << 40) + 1


@dataclass
class ExperimentConfig:
    model: CovarianceModel | ShotNoiseModel
    grid: GridSpec
    thresholds: ThresholdVector
    replications: int = 100
    seed: int = 0
    subwindow_edge: float | None = None
    normalization: str = "theoretical_sigma"
    quad: QuadratureSpec = DEFAULT_QUAD
    sigma: CovMatrix | None = None
    tail_samples: int = 200_000
    theory_samples: int = 20_000
    workers: int = 1

    def __post_init__(self):
        self.thresholds = as_thresholds(self.thresholds)
        if self.replications < 2:
            raise ValueError("at least 2 replications are required")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if self.normalization == "self_normalized" and self.subwindow_edge is None:
            raise ValueError("self-normalized mode needs a subwindow edge")
        if self.model.dim != self.grid.dim:
            raise ValueError("model and grid dimensions differ")

    @property
    def is_gaussian(self) -> bool:
        return isinstance(self.model, CovarianceModel)


@dataclass
class NormalityDiagnostics:
    ks_statistic: np.ndarray
    ks_pvalue: np.ndarray
    component_variance: np.ndarray
    qq_probabilities: np.ndarray
    qq_sample: np.ndarray
    qq_theoretical: np.ndarray

    @property
    def qq_relative_deviation(self) -> np.ndarray:
        return (self.qq_sample - self.qq_theoretical) / self.qq_theoretical

    def to_dict(self):
        return {
            "ks_statistic": self.ks_statistic.tolist(),
            "ks_pvalue": self.ks_pvalue.tolist(),
            "component_variance": self.component_variance.tolist(),
            "qq": {
                "probabilities": self.qq_probabilities.tolist(),
                "sample": self.qq_sample.tolist(),
                "chi2": self.qq_theoretical.tolist(),
                "relative_deviation": self.qq_relative_deviation.tolist(),
            },
        }


def normality_diagnostics(whitened) -> NormalityDiagnostics:
    """Per-component KS tests against N(0, 1) and a chi-square decile QQ summary."""
    z = np.asarray(whitened, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[0] < 20:
        raise ValueError(f"normality diagnostics need at least 20 vectors, got {z.shape[0]}")
    ks = [stats.kstest(z[:, k], "norm") for k in range(z.shape[1])]
    sq = (z ** 2).sum(axis=1)
    return NormalityDiagnostics(
        np.array([k.statistic for k in ks]),
        np.array([k.pvalue for k in ks]),
        z.var(axis=0, ddof=1),
        DECILES.copy(),
        np.quantile(sq, DECILES),
        stats.chi2.ppf(DECILES, z.shape[1]),
    )


def mean_error_matrix(estimates, reference) -> np.ndarray:
    """Percent error of the entrywise mean of ``estimates``; NaN where the reference is 0."""
    ref = reference.entries if isinstance(reference, CovMatrix) else np.asarray(reference, float)
    mats = [e.entries if isinstance(e, CovMatrix) else np.asarray(e, float) for e in estimates]
    if any(m.shape != ref.shape for m in mats):
        raise ValueError("all estimates must have the order of the reference")
    mean = np.mean(mats, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ref != 0, 100.0 * (mean - ref) / ref, np.nan)


@dataclass
class ExperimentReport:
    config: dict
    seeds: list
    tail_probabilities: np.ndarray
    tail_standard_errors: np.ndarray
    volumes: np.ndarray
    centered: np.ndarray
    sample_mean: np.ndarray
    sample_cov: np.ndarray
    normalization: str = "theoretical_sigma"
    sigma: CovMatrix | None = None
    whitened_theory: np.ndarray | None = None
    sigma_hat: np.ndarray | None = None
    whitened_self: np.ndarray | None = None
    excluded_self: list = field(default_factory=list)
    excluded_theory: list = field(default_factory=list)
    mean_sigma_hat: np.ndarray | None = None
    mean_error: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    runtime: float = 0.0

    @property
    def whitened(self):
        if self.normalization == "self_normalized":
            return self.whitened_self
        return self.whitened_theory

    def to_dict(self):
        def arr(x):
            if x is None:
                return None
            return [_json_num(v) for v in np.asarray(x, float).reshape(-1)] if np.ndim(x) <= 1 else \
                [arr(row) for row in x]
        return {
            "config": self.config,
            "normalization": self.normalization,
            "replications": len(self.seeds),
            "seeds": [int(s) for s in self.seeds],
            "tail_probabilities": arr(self.tail_probabilities),
            "tail_standard_errors": arr(self.tail_standard_errors),
            "sample_mean": arr(self.sample_mean),
            "sample_cov": arr(self.sample_cov),
            "sigma": None if self.sigma is None else self.sigma.to_dict(),
            "mean_sigma_hat": arr(self.mean_sigma_hat),
            "mean_error_percent": arr(self.mean_error),
            "excluded_self_normalized": [int(i) for i in self.excluded_self],
            "excluded_theoretical": [int(i) for i in self.excluded_theory],
            "diagnostics": self.diagnostics,
        }


def _json_num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def _sample_cov(x):
    c = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    return 0.5 * (c + c.T)


def _replicate(cfg: ExperimentConfig, index: int, p: np.ndarray):
    seed = derive_seed(cfg.seed, index)
    if cfg.is_gaussian:
        fld = simulate_gaussian(cfg.model, cfg.grid, seed)
    else:
        fld = simulate_shot_noise(cfg.model, cfg.grid, seed)
    st = excursion_vector(fld, cfg.thresholds)
    t = centered_statistic(st, p)
    est = None
    if cfg.subwindow_edge is not None:
        est = estimate_sigma(fld, cfg.thresholds, cfg.subwindow_edge).entries
    return seed, st.volumes, t, est


def theoretical_sigma(cfg: ExperimentConfig) -> CovMatrix | None:
    if cfg.sigma is not None:
        return cfg.sigma
    if cfg.is_gaussian:
        return sigma_matrix_gaussian(GaussianMarginal.from_model(cfg.model), cfg.model, cfg.thresholds, cfg.quad)
    if cfg.normalization == "theoretical_sigma":
        ev = ShotNoisePairEvaluator(cfg.model, cfg.thresholds, cfg.theory_samples,
                                    derive_seed(cfg.seed, _THEORY_STREAM))
        return sigma_matrix_generic(ev, cfg.model, cfg.thresholds, cfg.quad, tolerance=math.inf)
    return None


def tail_vector(cfg: ExperimentConfig):
    u = cfg.thresholds.as_array()
    if cfg.is_gaussian:
        m = cfg.model
        return np.asarray(gaussian_tail((u - m.mean) / m.std), float), np.zeros(len(u))
    return tail_probabilities(cfg.model, u, cfg.tail_samples, derive_seed(cfg.seed, _TAIL_STREAM))


def run_experiment(cfg: ExperimentConfig, config_dict: dict | None = None) -> ExperimentReport:
    """Simulate ``cfg.replications`` fields and collect CLT diagnostics.

    Each replication ``i`` uses ``derive_seed(cfg.seed, i)``; results are
    folded in index order so the report does not depend on ``workers``.
    """
    start = time.perf_counter()
    if cfg.subwindow_edge is not None:
        make_tiling(cfg.grid, cfg.subwindow_edge)  # fail before simulating
        if not math.isfinite(getattr(cfg.model, "support_radius", math.inf)):
            warnings.warn("subwindow estimator consistency is only established for finite-range "
                          "dependence; this model has unbounded support", stacklevel=2)
    p, p_se = tail_vector(cfg)
    sigma = theoretical_sigma(cfg)
    idx = range(cfg.replications)
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(lambda i: _replicate(cfg, i, p), idx))
    else:
        results = [_replicate(cfg, i, p) for i in idx]

    seeds = [r[0] for r in results]
    volumes = np.array([r[1] for r in results])
    centered = np.array([r[2] for r in results])
    r = len(cfg.thresholds)
    rep = ExperimentReport(
        config=config_dict if config_dict is not None else describe_config(cfg),
        seeds=seeds, tail_probabilities=p, tail_standard_errors=p_se,
        volumes=volumes, centered=centered,
        sample_mean=centered.mean(axis=0), sample_cov=_sample_cov(centered),
        normalization=cfg.normalization, sigma=sigma,
    )

    if sigma is not None:
        try:
            m = inv_sqrt(sigma)
            rep.whitened_theory = centered @ m
        except DegenerateMatrixError:
            if cfg.normalization == "theoretical_sigma":
                raise
            log.warning("theoretical matrix is degenerate; skipping theoretical whitening")
            rep.excluded_theory = list(range(cfg.replications))

    if cfg.subwindow_edge is not None:
        hats = np.array([res[3] for res in results])
        rep.sigma_hat = hats
        rep.mean_sigma_hat = hats.mean(axis=0)
        if sigma is not None:
            rep.mean_error = mean_error_matrix(hats, sigma)
        z = np.full((cfg.replications, r), np.nan)
        for i, (t, h) in enumerate(zip(centered, hats)):
            try:
                z[i] = inv_sqrt(h) @ t
            except DegenerateMatrixError:
                rep.excluded_self.append(i)
        if len(rep.excluded_self) == cfg.replications:
            raise DomainError("every replication had a degenerate subwindow estimate")
        rep.whitened_self = z

    for name, z in (("theoretical_sigma", rep.whitened_theory), ("self_normalized", rep.whitened_self)):
        if z is None:
            continue
        ok = z[np.all(np.isfinite(z), axis=1)]
        if len(ok) >= 20:
            rep.diagnostics[name] = normality_diagnostics(ok).to_dict()
    rep.runtime = time.perf_counter() - start
    return rep


def describe_config(cfg: ExperimentConfig) -> dict:
    model = cfg.model.to_dict()
    if cfg.is_gaussian:
        model = {"type": "gaussian", **model}
    return {
        "model": model,
        "grid": cfg.grid.to_dict(),
        "thresholds": list(cfg.thresholds.levels),
        "replications": cfg.replications,
        "seed": cfg.seed,
        "subwindow_edge": cfg.subwindow_edge,
        "normalization": cfg.normalization,
        "quadrature": cfg.quad.to_dict(),
        "tail_samples": cfg.tail_samples,
        "theory_samples": cfg.theory_samples,
    }


def validate_vh_sequence(grids) -> None:
    """Rectangles grow in the Van Hove sense iff every side grows; reject stalled sides."""
    grids = list(grids)
    if len(grids) < 2:
        raise ValueError("a growth study needs at least two windows")
    for a, b in zip(grids, grids[1:]):
        if a.dim != b.dim:
            raise ValueError("all windows must share the dimension")
        if any(sb <= sa for sa, sb in zip(a.sides, b.sides)):
            raise ValueError(f"window sides must strictly increase: {a.sides} -> {b.sides}")


def run_growth_study(cfg: ExperimentConfig, grids) -> list:
    validate_vh_sequence(grids)
    out = []
    for g in grids:
        c = ExperimentConfig(**{**cfg.__dict__, "grid": g})
        out.append(run_experiment(c))
    return out


# ---------------------------------------------------------------------------
# output files


def _fmt(v):
    v = float(v)
    return repr(v) if math.isfinite(v) else ""


def write_report(rep: ExperimentReport, out_dir, bins: int = 30) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    paths["report"] = out / "report.json"
    paths["report"].write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    paths["timing"] = out / "timing.json"
    paths["timing"].write_text(json.dumps({"runtime_seconds": rep.runtime}))

    u = rep.config["thresholds"]
    r = len(u)
    header = ["replication", "seed"] + [f"S_{k}" for k in range(r)] + [f"T_{k}" for k in range(r)]
    if rep.whitened_theory is not None:
        header += [f"Z_theory_{k}" for k in range(r)]
    if rep.whitened_self is not None:
        header += [f"Z_self_{k}" for k in range(r)]
        header += [f"sigma_hat_{i}{j}" for i in range(r) for j in range(i, r)]
    paths["replications"] = out / "replications.csv"
    with open(paths["replications"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, seed in enumerate(rep.seeds):
            row = [i, seed] + [_fmt(x) for x in rep.volumes[i]] + [_fmt(x) for x in rep.centered[i]]
            if rep.whitened_theory is not None:
                row += [_fmt(x) for x in rep.whitened_theory[i]]
            if rep.whitened_self is not None:
                row += [_fmt(x) for x in rep.whitened_self[i]]
                row += [_fmt(rep.sigma_hat[i, a, b]) for a in range(r) for b in range(a, r)]
            w.writerow(row)

    z = rep.whitened
    if z is not None:
        z = z[np.all(np.isfinite(z), axis=1)]
        paths["histogram"] = out / "histogram.csv"
        with open(paths["histogram"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["component", "bin_left", "bin_right", "density", "normal_density"])
            for k in range(r):
                dens, edges = np.histogram(z[:, k], bins=bins, range=(-4, 4), density=True)
                mid = 0.5 * (edges[:-1] + edges[1:])
                for a, b, dv, m in zip(edges[:-1], edges[1:], dens, stats.norm.pdf(mid)):
                    w.writerow([k, _fmt(a), _fmt(b), _fmt(dv), _fmt(m)])
        paths["qq"] = out / "qq.csv"
        sq = np.sort((z ** 2).sum(axis=1))
        probs = (np.arange(1, len(sq) + 1) - 0.5) / len(sq)
        with open(paths["qq"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["probability", "sample_squared_norm", "chi2_quantile"])
            for pr, s, q in zip(probs, sq, stats.chi2.ppf(probs, r)):
                w.writerow([_fmt(pr), _fmt(s), _fmt(q)])
    return paths
