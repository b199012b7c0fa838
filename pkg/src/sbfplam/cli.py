"""Command-line interface: ``sbfplam fit | simulate | boston``.

Exit codes: 0 success, 1 usage or configuration error, 2 domain or
numerical error.
"""

import argparse
import logging
import os
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from .adapt import TuningWarning, asam_fit
from .data import BOSTON_SCHEMA, IngestError, IngestSchema, load_dataset
from .errors import SbfPlamError
from .kernels import default_bandwidth
from .plam import pl_fit, sam_fit, standard_errors
from .report import fit_report, write_csv, write_curves, write_json
from .sbf import SbfConfig
from .simlab import (
    STANDARD_BANDWIDTHS,
    DgpConfig,
    default_threads,
    efficiency_ratio,
    make_estimators,
    run_mc,
    theoretical_ratio,
)

log = logging.getLogger("sbfplam")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _setup_logging():
    level = os.environ.get("SBF_PLAM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _split(values):
    out = []
    for v in values or []:
        out.extend(s.strip() for s in v.split(",") if s.strip())
    return out


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _score_bandwidth(text):
    return "auto" if text == "auto" else _positive_float(text)


def _bandwidths(data, given):
    if not given:
        return tuple(default_bandwidth(data.z[:, j]) for j in range(data.d))
    if len(given) == 1:
        return tuple(given) * data.d
    if len(given) != data.d:
        raise UsageError(f"{len(given)} --bandwidth values for {data.d} nonparametric columns")
    return tuple(given)


def _fit_and_report(data, estimator, h, grid_size, a, b):
    config = SbfConfig(h, grid_size=grid_size)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TuningWarning)
        if estimator == "sam":
            fit = sam_fit(data, config)
            return fit_report(fit, data)
        if estimator == "pl":
            fit = pl_fit(data, h, grid_size=grid_size)
            return fit_report(fit, data)
        eff = asam_fit(data, config, a=a, b=b)
        return fit_report(eff.base, data, efficient=eff)


def cmd_fit(args):
    np.random.seed(args.seed)
    schema = IngestSchema(
        response=args.response,
        parametric=_split(args.parametric),
        nonparametric=_split(args.nonparametric),
        log_transform=_split(args.log),
        drop_rule=args.drop,
    )
    data = load_dataset(args.data, schema)
    h = _bandwidths(data, args.bandwidth)
    report = _fit_and_report(data, args.estimator, h, args.grid_size,
                             args.score_bandwidth, args.score_floor)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = args.prefix or args.estimator
    write_json(report, out / f"{stem}_report.json")
    write_curves(report, out / f"{stem}_curves.csv")
    _print_coefficients(report)
    return 0


def _print_coefficients(report):
    print(f"{report['estimator']}: n={report['n']}  R2={report['generalized_r2']:.4f}")
    for c in report["coefficients"]:
        print(f"  {c['name']:>10s} {c['estimate']:+.4f}  se {c['std_error']:.4f}  z {c['z_value']:+.2f}")
    for w in report["warnings"]:
        print(f"  warning: {w}")


def cmd_boston(args):
    data = load_dataset(args.csv, BOSTON_SCHEMA)
    h = _bandwidths(data, args.bandwidth)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for est in ("sam", "asam"):
        rep = _fit_and_report(data, est, h, args.grid_size, args.score_bandwidth,
                              args.score_floor)
        write_json(rep, out / f"boston_{est}.json")
        write_curves(rep, out / f"boston_{est}_curves.csv")
        reports[est] = rep
        _print_coefficients(rep)
    rows = []
    for k, name in enumerate(data.x_names):
        s = reports["sam"]["coefficients"][k]
        a = reports["asam"]["coefficients"][k]
        rows.append([name, s["estimate"], s["std_error"], abs(s["z_value"]),
                     a["estimate"], a["std_error"], abs(a["z_value"])])
    write_csv(out / "boston_comparison.csv",
              ["coefficient", "sam_estimate", "sam_se", "sam_abs_z",
               "asam_estimate", "asam_se", "asam_abs_z"], rows)
    return 0


# Simulation configs ------------------------------------------------------------
_DGP_FIELDS = {f.name for f in fields(DgpConfig)}
_TOP_KEYS = {"dgp", "sweep", "estimators", "bandwidths", "bandwidth_pairs",
             "a_grid", "b", "replicates", "seed", "grid_size", "output_dir",
             "threads", "name"}


def load_study(path):
    """Parse and validate a simulation YAML file; raises UsageError with field info."""
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise UsageError(f"cannot read config {path}: {err}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise UsageError(f"{path}: invalid YAML{where}: {getattr(err, 'problem', err)}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: top level must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise UsageError(f"{path}: unknown key(s) {sorted(unknown)}")
    dgp = raw.get("dgp") or {}
    bad = set(dgp) - _DGP_FIELDS
    if bad:
        raise UsageError(f"{path}: unknown dgp field(s) {sorted(bad)}")
    sweep = raw.get("sweep") or {}
    if len(sweep) > 1:
        raise UsageError(f"{path}: sweep may vary a single dgp field")
    for key, vals in sweep.items():
        if key not in _DGP_FIELDS:
            raise UsageError(f"{path}: sweep field {key!r} is not a dgp field")
        if not isinstance(vals, list) or not vals:
            raise UsageError(f"{path}: sweep.{key} must be a non-empty list")
    try:
        base = DgpConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in dgp.items()})
        cells = []
        if sweep:
            (key, vals), = sweep.items()
            for v in vals:
                cells.append((key, v, DgpConfig(**{**base.__dict__, key: v})))
        else:
            cells.append((None, None, base))
    except (TypeError, ValueError) as err:
        raise UsageError(f"{path}: dgp: {err}") from None
    if "bandwidth_pairs" in raw:
        pairs = [tuple(float(v) for v in p) for p in raw["bandwidth_pairs"]]
    else:
        hs = raw.get("bandwidths", list(STANDARD_BANDWIDTHS))
        pairs = [(a, b) for a in hs for b in hs]
    for p in pairs:
        if not all(0 < v < 1 for v in p):
            raise UsageError(f"{path}: bandwidths must lie in (0, 1), got {p}")
    reps = raw.get("replicates", 500)
    if not isinstance(reps, int) or reps < 2:
        raise UsageError(f"{path}: replicates must be an integer >= 2")
    b = raw.get("b", 0.01)
    if not isinstance(b, (int, float)) or not b > 0:
        raise UsageError(f"{path}: b must be > 0")
    ests = raw.get("estimators", ["sam", "pl"])
    a_grid = raw.get("a_grid", [])
    for e in ests:
        if str(e).lower() not in ("sam", "pl", "asam"):
            raise UsageError(f"{path}: unknown estimator {e!r}")
    return {
        "name": raw.get("name", Path(path).stem),
        "cells": cells,
        "estimators": ests,
        "pairs": pairs,
        "a_grid": a_grid,
        "b": float(b),
        "replicates": reps,
        "seed": int(raw.get("seed", 0)),
        "grid_size": int(raw.get("grid_size", 101)),
        "output_dir": raw.get("output_dir"),
        "threads": raw.get("threads"),
    }


def _a_values(a_grid, cfg):
    if isinstance(a_grid, dict):
        return list(a_grid.get(cfg.error_dist, []))
    return list(a_grid)


def run_study(study, out_dir, threads=1):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mse_rows, best_rows, box_rows, ratio_rows = [], [], [], []
    for key, value, cfg in study["cells"]:
        a_vals = _a_values(study["a_grid"], cfg)
        estimators = make_estimators(study["estimators"], a_vals, study["b"])
        template = SbfConfig((0.1,) * cfg.d, grid_size=study["grid_size"])
        res = run_mc(cfg, estimators, study["pairs"], study["replicates"],
                     study["seed"], template, threads)
        mse = res.mse_table
        label = "" if key is None else f"{key}={value}"
        for e, name in enumerate(res.estimator_names):
            a = getattr(estimators[e], "a", "")
            for b_idx, pair in enumerate(res.bandwidth_grid):
                for k in range(cfg.p):
                    row = [label, cfg.error_dist, name, pair[0], pair[1], f"beta{k + 1}",
                           mse[e, b_idx, k], res.failure_rate[e, b_idx],
                           int(res.flagged[e, b_idx])]
                    mse_rows.append(row)
                    box_rows.append([label, cfg.error_dist, name.split("(")[0],
                                     "" if a in ("", None) else a, pair[0], pair[1],
                                     f"beta{k + 1}", mse[e, b_idx, k]])
            for k in range(cfg.p):
                best = res.best_mse(e, k)
                pair = res.best_pair(e, k) if np.isfinite(best) else ("", "")
                best_rows.append([label, cfg.error_dist, name, f"beta{k + 1}", best,
                                  pair[0], pair[1], res.median_mse(e, k)])
        if "SAM" in res.estimator_names and "PL" in res.estimator_names:
            for k in range(cfg.p):
                ratio = efficiency_ratio(res, res, k, "SAM", "PL")
                ratio_rows.append([label, cfg.C, f"beta{k + 1}", ratio,
                                   theoretical_ratio(cfg.C) if cfg.p == 1 else ""])
    write_csv(out / "mse_table.csv",
              ["cell", "error_dist", "estimator", "h1", "h2", "parameter", "mse",
               "failure_rate", "flagged"], mse_rows)
    write_csv(out / "best_mse.csv",
              ["cell", "error_dist", "estimator", "parameter", "best_mse", "h1", "h2",
               "median_mse"], best_rows)
    write_csv(out / "boxplot_data.csv",
              ["cell", "error_dist", "estimator", "a", "h1", "h2", "parameter", "mse"],
              box_rows)
    if ratio_rows:
        write_csv(out / "efficiency_ratio.csv",
                  ["cell", "C", "parameter", "ratio_sam_over_pl", "reference_formula"],
                  ratio_rows)
    return ratio_rows


def cmd_simulate(args):
    study = load_study(args.config)
    out_dir = args.out_dir or study["output_dir"] or "."
    threads = args.threads or study["threads"] or default_threads()
    for row in run_study(study, out_dir, threads):
        print(f"{row[0] or 'ratio'} {row[2]}: SAM/PL best-MSE ratio {row[3]:.4f}")
    return 0


def build_parser():
    parser = _Parser(prog="sbfplam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--bandwidth", type=_positive_float, action="append",
                       help="bandwidth per nonparametric column (repeatable)")
        p.add_argument("--grid-size", type=int, default=101)
        p.add_argument("--score-bandwidth", type=_score_bandwidth, default="auto")
        p.add_argument("--score-floor", type=_positive_float, default=0.01)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out-dir", default=".")

    p = sub.add_parser("fit", help="fit a model to a CSV file")
    p.add_argument("data")
    p.add_argument("--response", required=True)
    p.add_argument("--parametric", action="append", required=True)
    p.add_argument("--nonparametric", action="append", required=True)
    p.add_argument("--log", action="append")
    p.add_argument("--drop", default=None, help="e.g. 'MEDV == 50'")
    p.add_argument("--estimator", choices=("sam", "asam", "pl"), default="sam")
    p.add_argument("--prefix", default=None)
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="run a Monte Carlo study from a YAML config")
    p.add_argument("config")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("boston", help="Boston housing SAM/ASAM analysis")
    p.add_argument("csv")
    common(p)
    p.set_defaults(func=cmd_boston)
    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, IngestError, FileNotFoundError) as err:
        print(f"sbfplam: error: {err}", file=sys.stderr)
        return 1
    except (SbfPlamError, np.linalg.LinAlgError) as err:
        print(f"sbfplam: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
