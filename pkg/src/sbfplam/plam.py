"""Partially linear additive model estimators.

``sam_fit`` is the Gaussian-profile estimator: residualise ``Y`` and every
column of ``X`` on ``Z`` by smooth backfitting and regress residual on
residual.  ``pl_fit`` is the partially linear comparator that residualises
with a full ``d``-dimensional product-kernel smoother instead.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConcurvityError, DegenerateWindowError
from .kernels import EPANECHNIKOV, get_kernel, make_grid, nw_full
from .sbf import AdditiveFit, build_projection, evaluate_additive, sbf_multi

CONDITION_LIMIT = 1e10


@dataclass
class Dataset:
    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    y_name: str = "Y"
    x_names: list = None
    z_names: list = None
    rescale_records: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.x = np.asarray(self.x, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        if self.z.ndim == 1:
            self.z = self.z[:, None]
        n = self.y.size
        if self.x.shape[0] != n or self.z.shape[0] != n:
            raise ValueError("y, x and z must have the same number of rows")
        p, d = self.x.shape[1], self.z.shape[1]
        if n <= p + d + 5:
            raise ValueError(f"n = {n} too small for p = {p}, d = {d}")
        for name, arr in (("y", self.y), ("x", self.x), ("z", self.z)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains missing or non-finite values")
        if np.any(self.z < 0.0) or np.any(self.z > 1.0):
            raise ValueError("z entries must lie in [0, 1]")
        if self.x_names is None:
            self.x_names = [f"X{j + 1}" for j in range(p)]
        if self.z_names is None:
            self.z_names = [f"Z{j + 1}" for j in range(d)]

    @property
    def n(self):
        return self.y.size

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def d(self):
        return self.z.shape[1]


@dataclass
class PlamFit:
    beta: np.ndarray
    intercept: float
    additive: Optional[AdditiveFit]
    residuals: np.ndarray
    sigma2: float
    cov_beta: np.ndarray
    estimator_tag: str
    x_tilde: np.ndarray = field(repr=False)
    y_tilde: np.ndarray = field(repr=False)
    bandwidths: tuple = ()
    x_names: list = None
    gram_condition: float = 1.0
    diagonal_curve: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self):
        return self.residuals.size


def _profile_least_squares(x_tilde, y_tilde, tag):
    n, p = x_tilde.shape
    gram = x_tilde.T @ x_tilde
    eig = np.linalg.eigvalsh(gram)
    cond = eig[-1] / eig[0] if eig[0] > 0 else np.inf
    if not eig[-1] > 0 or cond > CONDITION_LIMIT:
        raise ConcurvityError(
            f"{tag}: residualised X is (nearly) explained by Z; smallest Gram "
            f"eigenvalue {eig[0]:.3g}, condition number {cond:.3g}",
            min_eigenvalue=float(eig[0]), condition_number=float(cond),
        )
    beta = np.linalg.solve(gram, x_tilde.T @ y_tilde)
    raw = y_tilde - x_tilde @ beta
    shift = raw.mean()
    resid = raw - shift
    sigma2 = float(resid @ resid / (n - p))
    cov = sigma2 * np.linalg.inv(gram)
    cov = 0.5 * (cov + cov.T)
    return beta, shift, resid, sigma2, cov, float(cond)


def sam_fit(data, config, weights=None):
    """Gaussian-profile (SAM) estimate of the parametric coefficients.

    Parameters
    ----------
    data : Dataset
    config : SbfConfig
        Backfitting settings; ``config.bandwidths`` has one entry per Z column.
    weights : list, optional
        Precomputed kernel weight matrices for ``data.z`` (see
        :func:`sbfplam.sbf.build_projection`).

    Returns
    -------
    PlamFit
        ``additive`` holds ``mhat_Y - mhat_X^T beta`` with the intercept
        shift folded into ``m0``, so that
        ``Y = X beta + evaluate_additive(additive, Z) + residuals``.
    """
    proj = build_projection(data.z, config, weights)
    cols = np.column_stack([data.y, data.x])
    fits = sbf_multi(cols, proj, config, labels=[data.y_name] + list(data.x_names))
    fitted = np.column_stack([f.m0 + f.additive_at(data.z) for f in fits])
    y_tilde = data.y - fitted[:, 0]
    x_tilde = data.x - fitted[:, 1:]
    beta, shift, resid, sigma2, cov, cond = _profile_least_squares(
        x_tilde, y_tilde, "SAM")
    fy, fx = fits[0], fits[1:]
    m0 = fy.m0 - sum(b * f.m0 for b, f in zip(beta, fx)) + shift
    comps = fy.components - sum(b * f.components for b, f in zip(beta, fx))
    additive = AdditiveFit(float(m0), comps, fy.grid, fy.iterations,
                           fy.final_delta, fy.converged, fy.deltas)
    return PlamFit(beta, float(m0), additive, resid, sigma2, cov, "SAM",
                   x_tilde, y_tilde, config.bandwidths, list(data.x_names), cond)


def pl_fit(data, h, kernel=EPANECHNIKOV, grid_size=101):
    """Profile kernel estimator for the partially linear model (PL).

    ``Y`` and ``X`` are residualised by leave-one-out product-kernel
    Nadaraya-Watson smoothing on all of ``Z``.  Small bandwidths in high
    dimension leave empty windows and raise :class:`DegenerateWindowError`.
    """
    kernel = get_kernel(kernel)
    h = tuple(float(v) for v in np.broadcast_to(np.atleast_1d(h), (data.d,)))
    grid = make_grid(grid_size)
    cols = np.column_stack([data.y, data.x])
    smooth = nw_full(cols, data.z, h, data.z, kernel, grid, leave_one_out=True)
    y_tilde = data.y - smooth[:, 0]
    x_tilde = data.x - smooth[:, 1:]
    beta, shift, resid, sigma2, cov, cond = _profile_least_squares(
        x_tilde, y_tilde, "PL")
    diag = _diagonal_curve(data, beta, h, kernel, grid)
    intercept = float(np.mean(data.y - data.x @ beta))
    return PlamFit(beta, intercept, None, resid, sigma2, cov, "PL",
                   x_tilde, y_tilde, h, list(data.x_names), cond, diag)


def _diagonal_curve(data, beta, h, kernel, grid):
    """Full-dimensional smooth of ``Y - X beta`` along the grid diagonal (NaN where empty)."""
    pts = np.repeat(grid.points[:, None], data.d, axis=1)
    target = data.y - data.x @ beta
    out = np.full(grid.size, np.nan)
    keep = np.arange(grid.size)
    for _ in range(2):
        try:
            out[keep] = nw_full(target, data.z, h, pts[keep], kernel, grid)
            break
        except DegenerateWindowError as err:
            keep = np.setdiff1d(keep, keep[err.indices])
            if keep.size == 0:
                break
    return out


def standard_errors(fit):
    return np.sqrt(np.diag(fit.cov_beta))


def fitted_values(fit, data):
    if fit.additive is None:
        return data.y - fit.residuals
    return data.x @ fit.beta + evaluate_additive(fit.additive, data.z)


def generalized_r2(fit, data):
    """``1 - RSS / TSS`` with fitted values ``X beta + m0 + sum_j m_j(Z_j)``."""
    tss = np.sum((data.y - data.y.mean()) ** 2)
    if not tss > 0:
        raise ValueError("generalized R^2 undefined for constant response")
    rss = np.sum((data.y - fitted_values(fit, data)) ** 2)
    return float(1.0 - rss / tss)
