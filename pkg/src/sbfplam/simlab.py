"""Monte Carlo designs, experiment runner and information-bound oracle.

The data-generating process: ``Z`` is a truncated normal on ``[0,1]^d``
centred at 0.5 with covariance ``{(1-rho) I + rho 11^T} / 4``,
``X1 = C Z1 (1 - 2 Z2) + U`` and ``X2 ~ Bernoulli(logistic(exp((Z1+Z2)/2)
+ sin(2 pi Z1) - X1^2))``, and
``Y = m0 + X^T beta + m1(Z1) + m2(Z2) + sum_{j>=3} Zj^2 + eps``.
"""

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, stats
from scipy.special import expit

from .adapt import one_step
from .errors import SamplerError, SbfPlamError
from .kernels import kernel_weights, make_grid, nw_full
from .plam import Dataset, pl_fit, sam_fit
from .sbf import SbfConfig, build_projection, sbf_multi

log = logging.getLogger(__name__)

ERROR_LAWS = ("gaussian", "t3", "mixture")
STANDARD_BANDWIDTHS = tuple(round(0.05 * k, 2) for k in range(1, 7))
STANDARD_BANDWIDTH_GRID = tuple((a, b) for a in STANDARD_BANDWIDTHS for b in STANDARD_BANDWIDTHS)


@dataclass(frozen=True)
class DgpConfig:
    n: int = 400
    d: int = 2
    p: int = 1
    C: float = 1.0
    rho: float = 0.0
    error_dist: str = "gaussian"
    m0: float = 3.0
    beta: tuple = (1.5, 0.8)
    u_var: float = 0.5
    x1_design: str = "interaction"

    def __post_init__(self):
        if self.n < 50:
            raise ValueError("n must be at least 50")
        if self.d < 2:
            raise ValueError("the design needs d >= 2")
        if self.p not in (1, 2):
            raise ValueError("p must be 1 or 2")
        if self.C < 0:
            raise ValueError("C must be non-negative")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.error_dist not in ERROR_LAWS:
            raise ValueError(f"error_dist must be one of {ERROR_LAWS}")
        if self.x1_design not in ("interaction", "additive"):
            raise ValueError("x1_design must be 'interaction' or 'additive'")
        if not self.u_var > 0:
            raise ValueError("u_var must be positive")

    @property
    def sigma(self):
        return ((1 - self.rho) * np.eye(self.d) + self.rho * np.ones((self.d, self.d))) / 4

    @property
    def truth(self):
        return np.asarray(self.beta[: self.p], dtype=float)

    @property
    def include_x2(self):
        return self.p == 2


# Sampling ------------------------------------------------------------------------
def sample_truncated_mvnormal(mean, cov, rng, size=None, min_acceptance=1e-4):
    """Draw from ``N(mean, cov)`` restricted to ``[0,1]^d`` by rejection.

    Returns a ``d``-vector when ``size`` is None, else a ``size x d`` array.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = mean.size
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as err:
        raise SamplerError("covariance is not positive definite") from err
    want = 1 if size is None else int(size)
    out = np.empty((want, d))
    filled = 0
    drawn = accepted = 0
    while filled < want:
        batch = max(64, int(1.2 * (want - filled) / max(accepted / drawn, min_acceptance))
                    if drawn else 4 * want)
        batch = min(batch, 5_000_000)
        z = mean + rng.standard_normal((batch, d)) @ chol.T
        ok = np.all((z >= 0.0) & (z <= 1.0), axis=1)
        drawn += batch
        accepted += int(ok.sum())
        if drawn >= 10_000 and accepted / drawn < min_acceptance:
            raise SamplerError(
                f"rejection acceptance {accepted / drawn:.2e} below {min_acceptance}; "
                "use a Gibbs or minimax-tilting sampler instead")
        take = z[ok][: want - filled]
        out[filled:filled + take.shape[0]] = take
        filled += take.shape[0]
    return out[0] if size is None else out


def draw_errors(law, size, rng):
    if law == "gaussian":
        return rng.standard_normal(size)
    if law == "t3":
        return rng.standard_t(3, size)
    if law == "mixture":
        sign = np.where(rng.random(size) < 0.5, -1.5, 1.5)
        return sign + 0.6 * rng.standard_normal(size)
    raise ValueError(f"unknown error law {law!r}")


def error_density(law):
    """Return ``(g, g')`` as vectorised callables."""
    if law == "gaussian":
        return stats.norm.pdf, lambda t: -t * stats.norm.pdf(t)
    if law == "t3":
        def gp(t):
            return stats.t.pdf(t, 3) * (-4.0 * t / (3.0 + t * t))
        return (lambda t: stats.t.pdf(t, 3)), gp
    if law == "mixture":
        def g(t):
            return 0.5 * (stats.norm.pdf(t, -1.5, 0.6) + stats.norm.pdf(t, 1.5, 0.6))

        def gp(t):
            return 0.5 * (-(t + 1.5) / 0.36 * stats.norm.pdf(t, -1.5, 0.6)
                          - (t - 1.5) / 0.36 * stats.norm.pdf(t, 1.5, 0.6))
        return g, gp
    raise ValueError(f"unknown error law {law!r}")


def fisher_information(law):
    """Location Fisher information ``int g'^2 / g`` of the error law."""
    if law == "gaussian":
        return 1.0
    g, gp = error_density(law)

    def integrand(t):
        gt = g(t)
        return gp(t) ** 2 / gt if gt > 0 else 0.0

    val, _ = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-12, epsrel=1e-10,
                            limit=200)
    return float(val)


def m1(z):
    return np.sin(2 * np.pi * (z - 0.5))


def m2(z):
    return z - 0.5 + np.sin(2 * np.pi * (z - 0.5))


def x1_mean(cfg, Z):
    """Conditional mean ``E(X1 | Z)``."""
    if cfg.x1_design == "additive":
        return cfg.C * Z[:, 0]
    return cfg.C * Z[:, 0] * (1.0 - 2.0 * Z[:, 1])


def gen_dataset(cfg, rng):
    Z = sample_truncated_mvnormal(np.full(cfg.d, 0.5), cfg.sigma, rng, cfg.n)
    U = math.sqrt(cfg.u_var) * rng.standard_normal(cfg.n)
    X1 = x1_mean(cfg, Z) + U
    cols = [X1]
    if cfg.include_x2:
        prob = expit(np.exp((Z[:, 0] + Z[:, 1]) / 2) + np.sin(2 * np.pi * Z[:, 0]) - X1 ** 2)
        cols.append((rng.random(cfg.n) < prob).astype(float))
    X = np.column_stack(cols)
    eps = draw_errors(cfg.error_dist, cfg.n, rng)
    Y = cfg.m0 + X @ cfg.truth + m1(Z[:, 0]) + m2(Z[:, 1]) + eps
    if cfg.d > 2:
        Y = Y + np.sum(Z[:, 2:] ** 2, axis=1)
    return Dataset(Y, X, Z, "Y", [f"X{j + 1}" for j in range(cfg.p)],
                   [f"Z{j + 1}" for j in range(cfg.d)])


# Estimators ------------------------------------------------------------------------
def expand_bandwidths(pair, d):
    """Bandwidth vector for ``d`` coordinates from an ``(h1, h2)`` pair.

    ``h1`` smooths ``Z1``; ``h2`` smooths ``Z2`` and any further coordinates.
    """
    pair = tuple(float(v) for v in np.atleast_1d(pair))
    if len(pair) == d:
        return pair
    if len(pair) == 1:
        return pair * d
    return (pair[0],) + (pair[1],) * (d - 1)


class ReplicateContext:
    """Per-replicate caches of kernel weights and SAM fits."""

    def __init__(self, data, template):
        self.data = data
        self.template = template
        self.grid = make_grid(template.grid_size)
        self._weights = {}
        self._sam = {}

    def weights(self, h):
        out = []
        for j, hj in enumerate(h):
            key = (j, hj)
            if key not in self._weights:
                self._weights[key] = kernel_weights(
                    self.data.z[:, j], hj, self.grid, self.template.kernel)
            out.append(self._weights[key])
        return out

    def sam(self, h):
        if h not in self._sam:
            try:
                cfg = self.template.with_bandwidths(h)
                self._sam[h] = sam_fit(self.data, cfg, self.weights(h))
            except SbfPlamError as err:
                self._sam[h] = err
        res = self._sam[h]
        if isinstance(res, Exception):
            raise res
        return res


@dataclass(frozen=True)
class SamEstimator:
    name: str = "SAM"

    def __call__(self, ctx, h):
        return ctx.sam(h).beta


@dataclass(frozen=True)
class PlEstimator:
    name: str = "PL"

    def __call__(self, ctx, h):
        return pl_fit(ctx.data, h, ctx.template.kernel, ctx.template.grid_size).beta


@dataclass(frozen=True)
class AsamEstimator:
    a: object = "auto"
    b: float = 0.01

    @property
    def name(self):
        return "ASAM(a=SJ)" if self.a in (None, "auto") else f"ASAM(a={self.a:g})"

    def __call__(self, ctx, h):
        return one_step(ctx.sam(h), self.a, self.b).beta_tilde


def make_estimators(names, a_grid=(), b=0.01):
    out = []
    for name in names:
        key = name.lower()
        if key == "sam":
            out.append(SamEstimator())
        elif key == "pl":
            out.append(PlEstimator())
        elif key == "asam":
            if len(a_grid):
                out.extend(AsamEstimator(float(a), b) for a in a_grid)
            else:
                out.append(AsamEstimator("auto", b))
        else:
            raise ValueError(f"unknown estimator {name!r}")
    return out


# Monte Carlo ------------------------------------------------------------------------
@dataclass
class McResults:
    """Replicate estimates indexed ``[estimator, bandwidth pair, replicate, parameter]``."""

    estimator_names: list
    bandwidth_grid: list
    truth: np.ndarray
    estimates: np.ndarray
    seeds: np.ndarray
    failures: np.ndarray = field(repr=False)
    dgp: DgpConfig = None

    @property
    def replicates(self):
        return self.estimates.shape[2]

    def index(self, estimator):
        if isinstance(estimator, int):
            return estimator
        return self.estimator_names.index(estimator)

    @property
    def failure_rate(self):
        return self.failures.mean(axis=2)

    @property
    def flagged(self):
        return self.failure_rate > 0.5

    @property
    def mse_table(self):
        """MSE over successful replicates, shape ``(E, B, p)``; NaN when none succeed."""
        err2 = (self.estimates - self.truth) ** 2
        with np.errstate(invalid="ignore"):
            ok = np.isfinite(err2)
            count = ok.sum(axis=2)
            total = np.where(ok, err2, 0.0).sum(axis=2)
            return np.where(count > 0, total / np.maximum(count, 1), np.nan)

    def best_mse(self, estimator, param_index=0):
        e = self.index(estimator)
        mse = self.mse_table[e, :, param_index].copy()
        mse[self.flagged[e]] = np.nan
        if np.all(np.isnan(mse)):
            return np.nan
        return float(np.nanmin(mse))

    def best_pair(self, estimator, param_index=0):
        e = self.index(estimator)
        mse = self.mse_table[e, :, param_index].copy()
        mse[self.flagged[e]] = np.nan
        return self.bandwidth_grid[int(np.nanargmin(mse))]

    def median_mse(self, estimator, param_index=0):
        e = self.index(estimator)
        return float(np.nanmedian(self.mse_table[e, :, param_index]))


def _run_replicate(args):
    cfg, estimators, grid, template, seed = args
    rng = np.random.default_rng(seed)
    data = gen_dataset(cfg, rng)
    ctx = ReplicateContext(data, template)
    est = np.full((len(estimators), len(grid), cfg.p), np.nan)
    fail = np.zeros((len(estimators), len(grid)), dtype=bool)
    for b, pair in enumerate(grid):
        h = expand_bandwidths(pair, cfg.d)
        for e, estimator in enumerate(estimators):
            try:
                val = np.asarray(estimator(ctx, h), dtype=float)
            except (SbfPlamError, np.linalg.LinAlgError) as err:
                log.debug("replicate seed %d, %s at %s failed: %s",
                          seed, getattr(estimator, "name", estimator), h, err)
                fail[e, b] = True
                continue
            if not np.all(np.isfinite(val)):
                fail[e, b] = True
                continue
            est[e, b] = val
    return est, fail


def run_mc(cfg, estimators, bandwidth_grid=STANDARD_BANDWIDTH_GRID, replicates=500,
           base_seed=0, template=None, threads=1):
    """Monte Carlo study of the given estimators over a bandwidth grid.

    Replicate ``r`` draws its data from ``default_rng(base_seed + r)``, so
    results do not depend on ``threads`` or execution order.  Estimator
    failures (e.g. empty PL windows) are recorded per cell, not raised.
    """
    if replicates < 2:
        raise ValueError("need at least two replicates")
    grid = [tuple(p) for p in bandwidth_grid]
    template = template or SbfConfig((0.1,) * cfg.d)
    seeds = np.arange(replicates) + int(base_seed)
    jobs = [(cfg, list(estimators), grid, template, int(s)) for s in seeds]
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(_run_replicate, jobs, chunksize=max(1, replicates // (4 * threads))))
    else:
        outs = [_run_replicate(job) for job in jobs]
    est = np.stack([o[0] for o in outs], axis=2)
    fail = np.stack([o[1] for o in outs], axis=2)
    names = [getattr(e, "name", str(e)) for e in estimators]
    res = McResults(names, grid, cfg.truth, est, seeds, fail, cfg)
    for e, name in enumerate(names):
        bad = np.flatnonzero(res.flagged[e])
        if bad.size:
            log.info("%s: %d bandwidth cell(s) with >50%% failures", name, bad.size)
    return res


def efficiency_ratio(results_num, results_den, param_index=0, num_estimator=0,
                     den_estimator=None):
    """Best MSE of one estimator divided by the best MSE of another."""
    if den_estimator is None:
        den_estimator = num_estimator if results_num is results_den else 0
    num = results_num.best_mse(num_estimator, param_index)
    den = results_den.best_mse(den_estimator, param_index)
    if not den > 0:
        raise ZeroDivisionError("best MSE of the reference estimator is zero")
    return num / den


def theoretical_ratio(C, constant=0.1707):
    return 1.0 / (1.0 + constant * C * C)


# Information bounds ---------------------------------------------------------------------
@dataclass
class InfoBoundReport:
    I_plam: np.ndarray
    I_pl: np.ndarray
    ratio: float
    mc_n: int
    fisher_g: float
    eval_n: int = 0

    @property
    def gap_min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.I_plam - self.I_pl)[0])


def info_bound_mc(cfg, mc_n, config=None, rng=None, eval_n=20000, pl_bandwidth=0.05):
    """Monte Carlo estimate of the information bounds with and without additivity.

    ``eta`` (additive projection of ``E(X | Z)``) comes from smooth
    backfitting the X columns on all ``mc_n`` draws.  ``E(X | Z)`` is the
    product-kernel smoother fitted on the draws outside a held-out block of
    ``eval_n`` rows, evaluated on that block; both matrices are averaged over
    the block so their difference is paired.
    """
    if mc_n < 10_000:
        raise ValueError("mc_n must be at least 10^4")
    rng = np.random.default_rng() if rng is None else rng
    config = config or SbfConfig((0.05,) * cfg.d)
    data = gen_dataset(replace(cfg, n=mc_n), rng)
    proj = build_projection(data.z, config)
    fits = sbf_multi(data.x, proj, config, labels=list(data.x_names))
    eta = np.column_stack([f.m0 + f.additive_at(data.z) for f in fits])
    eval_n = min(eval_n, mc_n // 2)
    hold, rest = np.arange(eval_n), np.arange(eval_n, mc_n)
    cond = nw_full(data.x[rest], data.z[rest], pl_bandwidth, data.z[hold],
                   config.kernel, make_grid(config.grid_size))
    cond = cond.reshape(eval_n, -1)
    ig = fisher_information(cfg.error_dist)
    r_add = data.x[hold] - eta[hold]
    r_full = data.x[hold] - cond
    i_plam = ig * r_add.T @ r_add / eval_n
    i_pl = ig * r_full.T @ r_full / eval_n
    ratio = float(i_pl[0, 0] / i_plam[0, 0]) if cfg.p == 1 else float(
        np.linalg.det(i_pl) / np.linalg.det(i_plam))
    return InfoBoundReport(i_plam, i_pl, ratio, mc_n, ig, eval_n)


def default_threads():
    return os.cpu_count() or 1
