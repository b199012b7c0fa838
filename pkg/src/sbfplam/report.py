"""Serialisable fit reports (JSON) and component-curve tables (CSV)."""

import csv
import json

import numpy as np

from .data import to_original_scale
from .plam import generalized_r2, standard_errors

SCHEMA_VERSION = 1


def _num(x):
    x = float(x)
    return x if np.isfinite(x) else None


def fit_report(fit, data, efficient=None, warnings=()):
    """Build the report dictionary for a SAM/PL fit, or an ASAM fit via ``efficient``.

    Keys: ``schema_version``, ``estimator``, ``n``, ``coefficients`` (list of
    ``name``/``estimate``/``std_error``/``z_value``), ``generalized_r2``,
    ``bandwidths``, ``tuning`` (``a``, ``b`` or null), ``convergence``,
    ``components`` (per Z column: ``z``, ``z_original``, ``value``),
    ``diagnostics`` and ``warnings``.
    """
    base = fit
    if efficient is not None:
        beta = efficient.beta_tilde
        se = np.sqrt(np.diag(efficient.cov_beta))
        tag = "ASAM"
        tuning = {"a": _num(efficient.score.a), "b": _num(efficient.score.b)}
        warnings = list(warnings) + list(efficient.warnings)
    else:
        beta = fit.beta
        se = standard_errors(fit)
        tag = fit.estimator_tag
        tuning = None
    coefs = [
        {"name": name, "estimate": _num(b), "std_error": _num(s),
         "z_value": _num(b / s) if s > 0 else None}
        for name, b, s in zip(data.x_names, beta, se)
    ]
    components = {}
    convergence = None
    if base.additive is not None:
        add = base.additive
        convergence = {"iterations": int(add.iterations),
                       "final_delta": _num(add.final_delta),
                       "converged": bool(add.converged)}
        for j, name in enumerate(data.z_names):
            z = add.grid.points
            orig = to_original_scale(data, j, z) if name in data.rescale_records else z
            components[name] = {
                "z": [_num(v) for v in z],
                "z_original": [_num(v) for v in orig],
                "value": [_num(v) for v in add.components[j]],
            }
    return {
        "schema_version": SCHEMA_VERSION,
        "estimator": tag,
        "n": int(data.n),
        "response": data.y_name,
        "coefficients": coefs,
        "intercept": _num(base.intercept),
        "generalized_r2": _num(generalized_r2(base, data)),
        "sigma2": _num(base.sigma2),
        "bandwidths": {name: _num(h) for name, h in zip(data.z_names, base.bandwidths)},
        "tuning": tuning,
        "convergence": convergence,
        "components": components,
        "diagnostics": {
            "gram_condition_number": _num(base.gram_condition),
            "pseudo_error_skewness": _num(efficient.skewness) if efficient else None,
        },
        "warnings": list(warnings),
    }


def write_json(report, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=False)
        fh.write("\n")


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if np.isnan(x) else format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_curves(report, path):
    comps = report["components"]
    if not comps:
        write_csv(path, ["z"], [])
        return
    names = list(comps)
    header = ["z"] + [f"m_{name}" for name in names]
    z = comps[names[0]]["z"]
    rows = [[z[g]] + [comps[nm]["value"][g] for nm in names] for g in range(len(z))]
    write_csv(path, header, rows)
