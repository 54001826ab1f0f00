"""Command-line front end: ``excursion-clt {simulate,theory,estimate,experiment}``.

Exit status is 0 on success, 1 on a domain failure (degenerate matrix,
quadrature or simulation failure; a one-line JSON object goes to stderr)
and 2 on configuration or usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import config as cfgmod
from .covariance import CovarianceModel
from .errors import ConfigError, DomainError
from .estimation import estimate_sigma
from .harness import run_experiment, validate_vh_sequence, write_report
from .shotnoise import ShotNoisePairEvaluator, simulate_shot_noise
from .simulation import derive_seed, read_field, simulate_gaussian, write_field, write_field_csv
from .theory import GaussianMarginal, sigma_matrix_gaussian, sigma_matrix_generic

log = logging.getLogger("excursion_clt")


def _thresholds(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"thresholds must be comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file (or a manifest.json from an earlier run)")
    common.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    common.add_argument("--seed", type=int, help="override experiment.seed")
    common.add_argument("--reps", type=int, help="override experiment.replications")
    common.add_argument("--threads", type=int, help="override experiment.workers")
    common.add_argument("--edge", type=float, help="override experiment.subwindow_edge")
    common.add_argument("--grid", type=int, help="override grid.size (points per axis)")
    common.add_argument("--thresholds", type=_thresholds,
                        help="override thresholds, e.g. --thresholds=-1,0,1")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="excursion-clt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="simulate fields and write dumps")
    s.add_argument("--format", choices=("bin", "csv"), default="bin")
    sub.add_parser("theory", parents=[common], help="compute the limiting covariance matrix")
    e = sub.add_parser("estimate", parents=[common], help="subwindow estimate from a field dump")
    e.add_argument("--field", required=True, help="field dump written by 'simulate'")
    sub.add_parser("experiment", parents=[common], help="run the Monte Carlo harness")
    return p


def _versions():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _load(args) -> dict:
    raw = {}
    if args.config:
        raw = cfgmod.load_raw(args.config)
        if isinstance(raw, dict) and "config_hash" in raw and "config" in raw:
            raw = raw["config"]
    elif args.command != "estimate":
        raise ConfigError([("--config", "a config file is required")])
    overrides = dict(seed=args.seed, reps=args.reps, grid=args.grid, thresholds=args.thresholds,
                     edge=args.edge, threads=args.threads)
    if args.command == "estimate" and not args.config:
        return raw
    return cfgmod.normalize_config(cfgmod.apply_overrides(raw, **overrides))


def _write_manifest(out: Path, command: str, norm: dict, argv, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    man = {"command": command, "config_hash": cfgmod.config_hash(norm), "seed": norm["experiment"]["seed"],
           "versions": _versions(), "argv": list(argv), "config": norm}
    if extra:
        man.update(extra)
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True))
    (out / "config.normalized.json").write_text(json.dumps(norm, indent=2, sort_keys=True))


def cmd_simulate(args, norm, argv):
    out = Path(args.out)
    model = cfgmod.build_model(norm)
    grid = cfgmod.build_grid(norm)
    seed = norm["experiment"]["seed"]
    n = norm["experiment"]["replications"] if args.reps is not None else 1
    _write_manifest(out, "simulate", norm, argv)
    for i in range(n):
        s = derive_seed(seed, i)
        if isinstance(model, CovarianceModel):
            fld = simulate_gaussian(model, grid, s)
        else:
            fld = simulate_shot_noise(model, grid, s, norm["model"]["truncation_tol"])
        if args.format == "csv":
            path = write_field_csv(fld, out / f"field_{i:04d}.csv")
        else:
            path = write_field(fld, out / f"field_{i:04d}.bin")
        print(path)
    return 0


def cmd_theory(args, norm, argv):
    model = cfgmod.build_model(norm)
    quad = cfgmod.build_quad(norm)
    u = norm["thresholds"]
    if isinstance(model, CovarianceModel):
        sigma = sigma_matrix_gaussian(GaussianMarginal.from_model(model), model, u, quad)
    else:
        e = norm["experiment"]
        ev = ShotNoisePairEvaluator(model, u, e["theory_samples"], derive_seed(e["seed"], (1 << 40) + 1))
        sigma = sigma_matrix_generic(ev, model, u, quad, tolerance=float("inf"))
    out = Path(args.out)
    _write_manifest(out, "theory", norm, argv)
    (out / "sigma.json").write_text(sigma.to_json(indent=2))
    print(sigma.table())
    return 0


def cmd_estimate(args, norm, argv):
    fld = read_field(args.field)
    u = args.thresholds or (norm.get("thresholds") if norm else None)
    if not u:
        raise ConfigError([("thresholds", "give --thresholds or a config with thresholds")])
    edge = args.edge or (norm["experiment"]["subwindow_edge"] if norm else None)
    if edge is None:
        raise ConfigError([("subwindow_edge", "give --edge or a config")])
    est = estimate_sigma(fld, u, edge)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if norm:
        _write_manifest(out, "estimate", norm, argv, {"field": str(args.field)})
    (out / "sigma_hat.json").write_text(est.to_json(indent=2))
    print(est.table())
    return 0


def cmd_experiment(args, norm, argv):
    out = Path(args.out)
    growth = norm["experiment"]["growth"]
    _write_manifest(out, "experiment", norm, argv)
    if growth:
        grids = [cfgmod.build_grid(norm, g) for g in growth]
        validate_vh_sequence(grids)
        for g, grid in zip(growth, grids):
            rep = run_experiment(cfgmod.build_experiment(norm, g), norm)
            write_report(rep, out / f"window_{g}")
            log.info("window %d done in %.1fs", g, rep.runtime)
        print(out)
        return 0
    rep = run_experiment(cfgmod.build_experiment(norm), norm)
    paths = write_report(rep, out)
    log.info("%d replications in %.1fs", len(rep.seeds), rep.runtime)
    print(paths["report"])
    return 0


COMMANDS = {"simulate": cmd_simulate, "theory": cmd_theory, "estimate": cmd_estimate,
            "experiment": cmd_experiment}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    level = logging.ERROR if args.quiet else (logging.INFO if args.verbose == 1 else
                                              logging.DEBUG if args.verbose > 1 else logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        norm = _load(args)
        return COMMANDS[args.command](args, norm, argv)
    except ConfigError as e:
        for key, msg in e.errors:
            print(f"config error: {key}: {msg}" if key else f"config error: {msg}", file=sys.stderr)
        return 2
    except DomainError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
