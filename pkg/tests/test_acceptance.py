"""Acceptance criteria 1-9, each at its stated tolerance.

Every test records a single pass/fail line (shown in the terminal summary)
before asserting.  The Monte Carlo criteria take several minutes in total.
"""

import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from sbfplam.adapt import TuningWarning, asam_fit, phi_hat, g_hat, g_hat_prime, ScoreEstimate
from sbfplam.data import BOSTON_SCHEMA, load_dataset
from sbfplam.kernels import default_bandwidth
from sbfplam.plam import Dataset, generalized_r2, sam_fit, standard_errors
from sbfplam.sbf import SbfConfig, build_projection, sbf_direct_oracle, sbf_fit, sbf_multi
from sbfplam.simlab import (
    STANDARD_BANDWIDTH_GRID,
    DgpConfig,
    default_threads,
    efficiency_ratio,
    info_bound_mc,
    make_estimators,
    run_mc,
    theoretical_ratio,
)

BOSTON = Path(__file__).parent / "data" / "boston.csv"
THREADS = default_threads()


def test_sbf_oracle_equivalence(acceptance_log):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        Z = rng.uniform(size=(100, 2))
        y = np.sin(2 * np.pi * Z[:, 0]) + Z[:, 1] ** 2 + 0.5 * rng.normal(size=100)
        config = SbfConfig((0.15, 0.15), grid_size=26)
        proj = build_projection(Z, config)
        diff = np.abs(sbf_fit(y, proj, config).components
                      - sbf_direct_oracle(y, proj).components)
        worst = max(worst, float(diff.max()))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-8 and elapsed < 5.0
    acceptance_log(1, "SBF oracle equivalence", ok,
                   f"max sup-norm difference {worst:.2e} (< 1e-8), {elapsed:.2f} s (< 5 s)")
    assert ok


def test_linearity_and_constraints(acceptance_log):
    rng = np.random.default_rng(100)
    n = 300
    Z = rng.uniform(size=(n, 3))
    X = rng.normal(size=(n, 2)) + Z[:, :2]
    y = X @ [1.0, -2.0] + np.cos(3 * Z[:, 2]) + rng.normal(size=n)
    config = SbfConfig((0.12, 0.15, 0.2))
    proj = build_projection(Z, config)
    fy, *fx = sbf_multi(np.column_stack([y, X]), proj, config)
    worst_identity = 0.0
    worst_constraint = 0.0
    w = proj.grid.weights
    for beta in rng.normal(scale=3.0, size=(10, 2)):
        direct = sbf_multi((y - X @ beta)[:, None], proj, config)[0]
        combo = fy.components - sum(b * f.components for b, f in zip(beta, fx))
        combo_m0 = fy.m0 - sum(b * f.m0 for b, f in zip(beta, fx))
        worst_identity = max(worst_identity, float(np.abs(direct.components - combo).max()),
                             abs(direct.m0 - combo_m0))
        for j in range(3):
            worst_constraint = max(worst_constraint,
                                   abs(float(np.sum(w * proj.q_marg[j] * direct.components[j]))))
    ok = worst_identity < 1e-9 and worst_constraint < 1e-8
    acceptance_log(2, "linearity and constraints", ok,
                   f"profile identity {worst_identity:.2e} (< 1e-9), "
                   f"centring {worst_constraint:.2e} (< 1e-8)")
    assert ok


def test_exact_recovery(acceptance_log):
    rng = np.random.default_rng(200)
    n = 200
    Z = rng.uniform(size=(n, 2))
    X = np.column_stack([rng.normal(size=n) + Z[:, 0], rng.binomial(1, 0.4, n)])
    beta0 = np.array([1.5, 0.8])
    fit = sam_fit(Dataset(X @ beta0, X, Z), SbfConfig((0.15, 0.2)))
    err = float(np.max(np.abs(fit.beta - beta0)))
    ok = err < 1e-8
    acceptance_log(3, "exact recovery", ok, f"|beta - beta0|_inf = {err:.2e} (< 1e-8)")
    assert ok


TARGET_RATIOS = {1.0: 0.7818, 2.0: 0.5868, 3.0: 0.4082}


def test_efficiency_ratio_reproduction(acceptance_log):
    parts, ok = [], True
    for C, target in TARGET_RATIOS.items():
        start = time.perf_counter()
        res = run_mc(DgpConfig(n=400, p=1, C=C, rho=0.0), make_estimators(["sam", "pl"]),
                     STANDARD_BANDWIDTH_GRID, replicates=200, base_seed=0, threads=THREADS)
        ratio = efficiency_ratio(res, res, 0, "SAM", "PL")
        elapsed = time.perf_counter() - start
        good = abs(ratio - target) <= 0.12 and elapsed < 15 * 60
        ok &= good
        parts.append(f"C={C:g} ratio {ratio:.3f} vs {target} +/- 0.12 ({elapsed:.0f} s)")
    acceptance_log(4, "efficiency-ratio reproduction", ok, "; ".join(parts))
    assert ok


def test_information_bound_oracle(acceptance_log):
    parts, ok = [], True
    for C in (1.0, 2.0, 3.0):
        rep = info_bound_mc(DgpConfig(C=C), 100_000, rng=np.random.default_rng(int(C)))
        target = theoretical_ratio(C)
        psd = rep.gap_min_eigenvalue >= -1e-3 * np.trace(rep.I_plam)
        good = abs(rep.ratio - target) <= 0.08 and psd
        ok &= good
        parts.append(f"C={C:g} ratio {rep.ratio:.3f} vs {target:.3f} +/- 0.08"
                     f"{'' if psd else ' (ordering violated)'}")
    eq = info_bound_mc(DgpConfig(C=1.0, x1_design="additive"), 100_000,
                       rng=np.random.default_rng(10))
    rel = abs(eq.I_pl[0, 0] / eq.I_plam[0, 0] - 1.0)
    ok &= rel <= 0.10
    parts.append(f"additive case relative gap {rel:.3f} (<= 0.10)")
    acceptance_log(5, "information-bound oracle", ok, "; ".join(parts))
    assert ok


def test_five_dimensional_comparison(acceptance_log):
    res = run_mc(DgpConfig(n=400, d=5, p=2, C=1.0), make_estimators(["sam", "pl"]),
                 STANDARD_BANDWIDTH_GRID, replicates=100, base_seed=0, threads=THREADS)
    sam = [res.best_mse("SAM", k) for k in range(2)]
    pl = [res.best_mse("PL", k) for k in range(2)]
    smallest = res.bandwidth_grid.index((0.05, 0.05))
    fail_sam = res.failure_rate[res.index("SAM"), smallest]
    fail_pl = res.failure_rate[res.index("PL"), smallest]
    mse_ok = all(s < p for s, p in zip(sam, pl))
    ok = mse_ok and fail_pl > fail_sam
    acceptance_log(6, "d=5 comparison", ok,
                   f"best MSE SAM {sam[0]:.4f}/{sam[1]:.4f} vs PL {pl[0]:.4f}/{pl[1]:.4f}; "
                   f"failure rate at (0.05, 0.05) PL {fail_pl:.2f} vs SAM {fail_sam:.2f}")
    assert ok


A_GRIDS = {"t3": (0.3, 0.4, 0.5, 0.6, 0.7, 0.8), "mixture": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)}


def test_asam_gains(acceptance_log):
    base = dict(n=400, p=2, d=2, C=1.0, rho=0.8)
    parts, ok = [], True
    for law, a_grid in A_GRIDS.items():
        res = run_mc(DgpConfig(error_dist=law, **base),
                     make_estimators(["sam", "asam"], a_grid=a_grid, b=0.01),
                     STANDARD_BANDWIDTH_GRID, replicates=100, base_seed=0, threads=THREADS)
        sam_med = res.median_mse("SAM", 0)
        meds = [res.median_mse(f"ASAM(a={a:g})", 0) for a in a_grid]
        good = all(m < sam_med for m in meds)
        ok &= good
        parts.append(f"{law}: SAM median {sam_med:.4f}, ASAM medians "
                     + "/".join(f"{m:.4f}" for m in meds))
    res = run_mc(DgpConfig(error_dist="gaussian", **base),
                 make_estimators(["sam", "asam"], b=0.01),
                 STANDARD_BANDWIDTH_GRID, replicates=100, base_seed=0, threads=THREADS)
    sam_best = res.best_mse("SAM", 0)
    asam_best = res.best_mse("ASAM(a=SJ)", 0)
    good = asam_best <= 1.15 * sam_best
    ok &= good
    parts.append(f"gaussian: ASAM(SJ) {asam_best:.4f} vs 1.15 x SAM {1.15 * sam_best:.4f}")
    acceptance_log(7, "ASAM gains", ok, "; ".join(parts))
    assert ok


def test_score_estimator_sanity(acceptance_log):
    eps = np.random.default_rng(2024).standard_normal(2000)
    s = ScoreEstimate(eps, 0.4, 0.01)
    e = np.linspace(-1.5, 1.5, 301)
    sup = float(np.max(np.abs(phi_hat(s, e) + e)))
    t = np.linspace(-4, 4, 81)
    fd = (g_hat(s, t + 1e-5) - g_hat(s, t - 1e-5)) / 2e-5
    fd_err = float(np.max(np.abs(g_hat_prime(s, t) - fd)))
    ok = sup <= 0.15 and fd_err <= 1e-6
    acceptance_log(8, "score-estimator sanity", ok,
                   f"sup |phi + e| on [-1.5, 1.5] = {sup:.3f} (<= 0.15), "
                   f"finite-difference error {fd_err:.1e} (<= 1e-6)")
    assert ok


def test_boston_reproduction(acceptance_log):
    start = time.perf_counter()
    data = load_dataset(BOSTON, BOSTON_SCHEMA)
    h = tuple(default_bandwidth(data.z[:, j]) for j in range(data.d))
    config = SbfConfig(h)
    sam = sam_fit(data, config)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TuningWarning)
        asam = asam_fit(data, config, a="auto", b=0.01)
    elapsed = time.perf_counter() - start
    b1 = float(sam.beta[0])
    r2 = generalized_r2(sam, data)
    se_sam = standard_errors(sam)
    se_asam = np.sqrt(np.diag(asam.cov_beta))
    checks = [data.n == 490, -7.2 <= b1 <= -5.2, r2 >= 0.80,
              bool(np.all(se_asam < se_sam)), elapsed < 30]
    ok = all(checks)
    acceptance_log(9, "Boston reproduction", ok,
                   f"n {data.n}; SAM beta_LSTAT {b1:.3f} in [-7.2, -5.2]; R2 {r2:.3f} (>= 0.80); "
                   f"SE ASAM {se_asam[0]:.3f}/{se_asam[1]:.3f} vs SAM "
                   f"{se_sam[0]:.3f}/{se_sam[1]:.3f} (must be smaller); {elapsed:.1f} s (< 30 s)")
    assert ok
