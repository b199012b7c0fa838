"""Kernel smoothing primitives on the unit interval.

Boundary-corrected kernels, grid quadrature, one- and two-dimensional
density estimates, marginal and product-kernel Nadaraya-Watson smoothers,
and bandwidth rules.

Smoothing weights are stored as an ``n x G`` matrix ``W`` with
``W[i, g] = K_h(z_g, Z_i)``: the first argument of the boundary kernel is
the grid (evaluation) variable, normalised so that each row integrates to
one under the grid quadrature.  That makes every quadrature identity used
by the backfitting solver hold to rounding error.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import brentq
from scipy.spatial import cKDTree
from scipy.special import ndtr

from .errors import (
    ConstantColumnError,
    DegenerateWindowError,
    EmptySampleError,
    InvalidBandwidthError,
)

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_CHUNK = 20000


# Base kernels ----------------------------------------------------------------
@dataclass(frozen=True)
class Kernel:
    """Symmetric base kernel ``K0``.

    ``kind`` is ``"epanechnikov"`` (support [-1, 1]) or ``"gaussian"``.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in ("epanechnikov", "gaussian"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")

    @property
    def support_radius(self):
        return 1.0 if self.kind == "epanechnikov" else math.inf

    @property
    def compact(self):
        return self.kind == "epanechnikov"

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "epanechnikov":
            return np.where(np.abs(u) < 1.0, 0.75 * (1.0 - u * u), 0.0)
        return np.exp(-0.5 * u * u) / _SQRT_2PI

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "epanechnikov":
            return np.where(np.abs(u) < 1.0, -1.5 * u, 0.0)
        return -u * np.exp(-0.5 * u * u) / _SQRT_2PI

    def cdf(self, t):
        """Integral of ``K0`` over ``(-inf, t]``."""
        t = np.asarray(t, dtype=float)
        if self.kind == "epanechnikov":
            s = np.clip(t, -1.0, 1.0)
            return 0.75 * (s - s ** 3 / 3.0) + 0.5
        return ndtr(t)


EPANECHNIKOV = Kernel("epanechnikov")
GAUSSIAN = Kernel("gaussian")


def get_kernel(kernel):
    if isinstance(kernel, Kernel):
        return kernel
    name = str(kernel).lower()
    if name in ("gaussian-density", "gauss", "normal"):
        name = "gaussian"
    return Kernel(name)


def base_kernel_eval(k, u):
    """Evaluate the base kernel ``K0(u)``."""
    return get_kernel(k)(u)


def _check_bandwidth(h):
    h = float(h)
    if not np.isfinite(h) or h <= 0.0:
        raise InvalidBandwidthError(f"bandwidth must be positive, got {h!r}")
    return h


def boundary_factor(k, v, h):
    """Analytic factor ``c(v)`` making ``u -> K_h(u, v)`` integrate to one on [0, 1]."""
    k = get_kernel(k)
    h = _check_bandwidth(h)
    v = np.asarray(v, dtype=float)
    mass = k.cdf((1.0 - v) / h) - k.cdf(-v / h)
    with np.errstate(divide="ignore"):
        return 1.0 / mass


def boundary_kernel_eval(k, u, v, h):
    """Boundary-corrected kernel ``K_h(u, v) = c(v) h^-1 K0((u - v) / h)``.

    ``c(v)`` is computed in closed form (polynomial integral for the
    Epanechnikov kernel, normal CDF for the Gaussian one) and equals one
    whenever the window around ``v`` lies inside [0, 1].
    """
    k = get_kernel(k)
    h = _check_bandwidth(h)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return boundary_factor(k, v, h) * k((u - v) / h) / h


# Grid ------------------------------------------------------------------------
@dataclass(frozen=True)
class Grid:
    """Equally spaced grid on [0, 1] with trapezoid weights summing to one."""

    points: np.ndarray
    weights: np.ndarray = field(repr=False)

    @property
    def size(self):
        return self.points.shape[0]

    def integrate(self, values, axis=-1):
        return np.tensordot(values, self.weights, axes=([axis], [0]))


def make_grid(size=101):
    size = int(size)
    if size < 2:
        raise ValueError("grid needs at least two points")
    points = np.linspace(0.0, 1.0, size)
    weights = np.full(size, 1.0 / (size - 1))
    weights[0] = weights[-1] = 0.5 / (size - 1)
    return Grid(points, weights)


# Smoothing weights -------------------------------------------------------------
def grid_normalizers(obs, h, grid, kernel=EPANECHNIKOV):
    """Per-observation boundary factors ``c`` computed with the grid quadrature.

    ``c_i = 1 / sum_g w_g h^-1 K0((z_g - obs_i) / h)``, the quadrature
    analogue of :func:`boundary_factor`.
    """
    kernel = get_kernel(kernel)
    h = _check_bandwidth(h)
    obs = np.asarray(obs, dtype=float)
    out = np.empty(obs.shape[0])
    for lo in range(0, obs.shape[0], _CHUNK):
        u = (grid.points[None, :] - obs[lo:lo + _CHUNK, None]) / h
        out[lo:lo + _CHUNK] = kernel(u) @ grid.weights / h
    bad = np.flatnonzero(out <= 0.0)
    if bad.size:
        raise DegenerateWindowError(
            f"bandwidth {h:g} leaves {bad.size} observation(s) without grid support",
            bad,
        )
    return 1.0 / out


def kernel_weights(obs, h, grid, kernel=EPANECHNIKOV):
    """Return the ``n x G`` weight matrix ``K_h(z_g, obs_i)``.

    Compact kernels give a CSR matrix, the Gaussian kernel a dense array.
    """
    kernel = get_kernel(kernel)
    h = _check_bandwidth(h)
    obs = np.asarray(obs, dtype=float)
    c = grid_normalizers(obs, h, grid, kernel)
    blocks = []
    for lo in range(0, obs.shape[0], _CHUNK):
        u = (grid.points[None, :] - obs[lo:lo + _CHUNK, None]) / h
        block = kernel(u) * (c[lo:lo + _CHUNK, None] / h)
        blocks.append(sparse.csr_matrix(block) if kernel.compact else block)
    if kernel.compact:
        return sparse.vstack(blocks, format="csr")
    return np.vstack(blocks)


def _dense(a):
    return a.toarray() if sparse.issparse(a) else np.asarray(a)


def density_guard(n, h):
    """Denominator threshold ``1e-10 / (n h)`` below which a window is degenerate."""
    return 1e-10 / (n * float(np.prod(h)))


# Density estimation ---------------------------------------------------------------
def kde_1d(samples, h, grid, kernel=EPANECHNIKOV, weights=None):
    """Boundary-corrected kernel density estimate on the grid."""
    samples = np.asarray(samples, dtype=float).ravel()
    if samples.size == 0:
        raise EmptySampleError("kde_1d needs at least one sample")
    W = kernel_weights(samples, h, grid, kernel) if weights is None else weights
    return np.asarray(W.sum(axis=0)).ravel() / samples.size


def kde_2d(samples_j, samples_k, h_j, h_k, grid, kernel=EPANECHNIKOV,
           weights=None):
    """Product boundary-kernel density estimate on the ``G x G`` grid."""
    samples_j = np.asarray(samples_j, dtype=float).ravel()
    samples_k = np.asarray(samples_k, dtype=float).ravel()
    if samples_j.shape != samples_k.shape:
        raise ValueError(
            f"paired samples differ in length: {samples_j.size} != {samples_k.size}"
        )
    if samples_j.size == 0:
        raise EmptySampleError("kde_2d needs at least one sample")
    if weights is None:
        Wj = kernel_weights(samples_j, h_j, grid, kernel)
        Wk = kernel_weights(samples_k, h_k, grid, kernel)
    else:
        Wj, Wk = weights
    return _dense(Wj.T @ Wk) / samples_j.size


# Regression ---------------------------------------------------------------------
def nw_marginal(responses, z_col, h, grid, kernel=EPANECHNIKOV, weights=None):
    """Local-constant regression of ``responses`` on one coordinate.

    ``responses`` may be a vector or an ``n x c`` matrix; the result has
    shape ``(G,)`` or ``(G, c)`` accordingly.
    """
    responses = np.asarray(responses, dtype=float)
    z_col = np.asarray(z_col, dtype=float).ravel()
    n = z_col.size
    if n == 0:
        raise EmptySampleError("nw_marginal needs at least one observation")
    if responses.shape[0] != n:
        raise ValueError("responses and z_col differ in length")
    W = kernel_weights(z_col, h, grid, kernel) if weights is None else weights
    den = np.asarray(W.sum(axis=0)).ravel() / n
    bad = np.flatnonzero(den <= density_guard(n, h))
    if bad.size:
        raise DegenerateWindowError(
            f"empty smoothing window at grid index {bad[0]} "
            f"(z={grid.points[bad[0]]:.4g}, h={float(h):g})",
            bad,
        )
    num = _dense(W.T @ responses) / n
    if num.ndim == 2:
        return num / den[:, None]
    return num / den


def _product_weights_dense(Z, h, eval_points, kernel, c):
    out = np.ones((eval_points.shape[0], Z.shape[0]))
    for j in range(Z.shape[1]):
        u = (eval_points[:, j, None] - Z[None, :, j]) / h[j]
        out *= kernel(u) * (c[j][None, :] / h[j])
    return out


def nw_full(responses, Z, h, eval_points, kernel=EPANECHNIKOV, grid=None,
            leave_one_out=False):
    """Product-kernel Nadaraya-Watson estimate of ``E(W | Z)``.

    Uses the same boundary-corrected kernels as the marginal smoother (the
    boundary factors are the grid-quadrature ones from ``grid``, default a
    101-point grid), so for ``d = 1`` it coincides with :func:`nw_marginal`.

    With ``leave_one_out=True`` the rows of ``eval_points`` must be the
    rows of ``Z`` and observation ``i`` is dropped from its own window.

    Raises
    ------
    DegenerateWindowError
        If any evaluation point has an (almost) empty kernel window; the
        offending rows are listed in ``indices``.
    """
    kernel = get_kernel(kernel)
    responses = np.asarray(responses, dtype=float)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if Z.shape[0] == 1 and responses.shape[0] != 1:
        Z = Z.T
    eval_points = np.asarray(eval_points, dtype=float).reshape(-1, Z.shape[1])
    n, d = Z.shape
    h = np.broadcast_to(np.asarray(h, dtype=float), (d,)).copy()
    for hj in h:
        _check_bandwidth(hj)
    if responses.shape[0] != n:
        raise ValueError("responses and Z differ in length")
    if leave_one_out and eval_points.shape[0] != n:
        raise ValueError("leave_one_out needs eval_points == Z")
    grid = make_grid() if grid is None else grid
    c = [grid_normalizers(Z[:, j], h[j], grid, kernel) for j in range(d)]
    resp2 = responses.reshape(n, -1)
    m = eval_points.shape[0]

    if kernel.compact:
        num, den = _nw_full_sparse(resp2, Z, h, eval_points, kernel, c,
                                   leave_one_out)
    else:
        num = np.empty((m, resp2.shape[1]))
        den = np.empty(m)
        for lo in range(0, m, 2000):
            Kw = _product_weights_dense(Z, h, eval_points[lo:lo + 2000], kernel, c)
            if leave_one_out:
                idx = np.arange(lo, min(lo + 2000, m))
                Kw[idx - lo, idx] = 0.0
            num[lo:lo + 2000] = Kw @ resp2
            den[lo:lo + 2000] = Kw.sum(axis=1)
    den = den / n
    num = num / n
    bad = np.flatnonzero(den <= density_guard(n, h))
    if bad.size:
        raise DegenerateWindowError(
            f"{bad.size} evaluation point(s) have empty product-kernel windows "
            f"(first row {bad[0]})",
            bad,
        )
    out = num / den[:, None]
    return out.ravel() if responses.ndim == 1 else out


def _nw_full_sparse(resp2, Z, h, eval_points, kernel, c, leave_one_out,
                    chunk=1000):
    data_tree = cKDTree(Z / h)
    m = eval_points.shape[0]
    den = np.zeros(m)
    num = np.zeros((m, resp2.shape[1]))
    for lo in range(0, m, chunk):
        pts = eval_points[lo:lo + chunk]
        pairs = cKDTree(pts / h).sparse_distance_matrix(
            data_tree, max_distance=1.0, p=np.inf, output_type="ndarray"
        )
        rows = pairs["i"].astype(np.intp)
        cols = pairs["j"].astype(np.intp)
        if leave_one_out:
            keep = rows + lo != cols
            rows, cols = rows[keep], cols[keep]
        w = np.ones(rows.size)
        for j in range(Z.shape[1]):
            u = (pts[rows, j] - Z[cols, j]) / h[j]
            w *= kernel(u) * c[j][cols] / h[j]
        size = pts.shape[0]
        den[lo:lo + size] = np.bincount(rows, weights=w, minlength=size)
        for k in range(resp2.shape[1]):
            num[lo:lo + size, k] = np.bincount(
                rows, weights=w * resp2[cols, k], minlength=size)
    return num, den


# Bandwidth rules ------------------------------------------------------------------
def rot_bandwidth(z_col, lower=0.01, upper=0.5):
    """Rule-of-thumb bandwidth ``1.06 sd n^(-1/5)`` clamped to ``[lower, upper]``."""
    z_col = np.asarray(z_col, dtype=float).ravel()
    if z_col.size < 2:
        raise EmptySampleError("need at least two observations")
    sd = np.std(z_col, ddof=1)
    if not np.ptp(z_col) > 0.0:
        raise ConstantColumnError("cannot choose a bandwidth for a constant column")
    h = 1.06 * sd * z_col.size ** (-0.2)
    return float(np.clip(h, lower, upper))


def default_bandwidth(z_col):
    """Rule of thumb raised to the largest gap between sorted observations.

    The raised value keeps every grid point inside some kernel window, which
    the plain rule does not guarantee on skewed columns.
    """
    z_col = np.asarray(z_col, dtype=float).ravel()
    gap = float(np.max(np.diff(np.sort(z_col))))
    return float(min(max(rot_bandwidth(z_col), gap), 0.99))


class BandwidthFallbackWarning(UserWarning):
    pass


def silverman_bandwidth(samples):
    samples = np.asarray(samples, dtype=float).ravel()
    q75, q25 = np.percentile(samples, [75, 25])
    scale = min(np.std(samples, ddof=1), (q75 - q25) / 1.34)
    return 0.9 * scale * samples.size ** (-0.2)


def _binned_pair_counts(x, nb):
    xmin, xmax = x.min(), x.max()
    dd = (xmax - xmin) * 1.01 / nb
    idx = np.minimum(np.floor((x - xmin) / dd).astype(np.intp), nb - 1)
    counts = np.bincount(idx, minlength=nb).astype(float)
    full = np.correlate(counts, counts, mode="full")[nb - 1:]
    full[0] = 0.5 * (np.sum(counts * counts) - x.size)
    return dd, full


def _phi4(h, n, dd, cnt):
    delta = (np.arange(cnt.size) * dd / h) ** 2
    ok = delta < 1000.0
    term = np.exp(-delta[ok] / 2) * (delta[ok] ** 2 - 6 * delta[ok] + 3)
    s = 2.0 * np.sum(term * cnt[ok]) + 3.0 * n
    return s / (n * (n - 1) * h ** 5 * _SQRT_2PI)


def _phi6(h, n, dd, cnt):
    delta = (np.arange(cnt.size) * dd / h) ** 2
    ok = delta < 1000.0
    d = delta[ok]
    term = np.exp(-d / 2) * (d ** 3 - 15 * d ** 2 + 45 * d - 15)
    s = 2.0 * np.sum(term * cnt[ok]) - 15.0 * n
    return s / (n * (n - 1) * h ** 7 * _SQRT_2PI)


def sj_bandwidth(samples, nb=1000):
    """Sheather-Jones solve-the-equation bandwidth for a Gaussian-kernel KDE.

    Pairwise distances are binned on ``nb`` bins.  The root is searched on
    ``[0.01, 10] * scale * n^(-1/5)``; when no sign change is found the
    Silverman bandwidth ``0.9 min(sd, IQR/1.34) n^(-1/5)`` is returned and a
    :class:`BandwidthFallbackWarning` is issued.
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 10:
        raise EmptySampleError(f"sj_bandwidth needs at least 10 samples, got {n}")
    q75, q25 = np.percentile(x, [75, 25])
    scale = min(np.std(x, ddof=1), (q75 - q25) / 1.349)
    if not scale > 0.0:
        raise ConstantColumnError("samples have zero spread")

    def fallback(reason):
        warnings.warn(f"Sheather-Jones failed ({reason}); using Silverman rule",
                      BandwidthFallbackWarning, stacklevel=3)
        return float(silverman_bandwidth(x))

    dd, cnt = _binned_pair_counts(x, nb)
    a = 1.24 * scale * n ** (-1 / 7)
    b = 1.23 * scale * n ** (-1 / 9)
    c1 = 1.0 / (2.0 * math.sqrt(math.pi) * n)
    td = -_phi6(b, n, dd, cnt)
    if not np.isfinite(td) or td <= 0.0:
        return fallback("non-positive sixth-derivative functional")
    alph2 = 1.357 * (_phi4(a, n, dd, cnt) / td) ** (1 / 7)
    if not np.isfinite(alph2):
        return fallback("non-finite pilot constant")

    def fsd(h):
        sd_h = _phi4(alph2 * h ** (5 / 7), n, dd, cnt)
        if sd_h <= 0.0:
            return -h
        return (c1 / sd_h) ** 0.2 - h

    base = scale * n ** (-0.2)
    lo, hi = 0.01 * base, 10.0 * base
    flo, fhi = fsd(lo), fsd(hi)
    if flo * fhi > 0.0:
        return fallback("no root in search bracket")
    return float(brentq(fsd, lo, hi, xtol=1e-12 * base, rtol=1e-12))
