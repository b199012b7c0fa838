"""Local-constant smooth backfitting on [0, 1]^d.

The solver works on a grid discretisation of the backfitting integral
equations.  For coordinate ``j`` the update is

    m_j(z) <- mtilde_j(z) - sum_{k != j} int m_k(u) qhat_jk(z, u) / qhat_j(z) du - m_0

followed by re-centring so that ``int m_j qhat_j = 0``.  Densities are
computed once per design (:func:`build_projection`) and reused for any
number of response vectors.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, SingularSystemError, SparseRegionError
from .kernels import (
    EPANECHNIKOV,
    Kernel,
    _dense,
    density_guard,
    get_kernel,
    kernel_weights,
    make_grid,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SbfConfig:
    bandwidths: tuple
    grid_size: int = 101
    tolerance: float = 1e-8
    max_iterations: int = 500
    kernel: Kernel = EPANECHNIKOV
    local_linear: bool = False

    def __post_init__(self):
        h = tuple(float(v) for v in np.atleast_1d(self.bandwidths))
        object.__setattr__(self, "bandwidths", h)
        object.__setattr__(self, "kernel", get_kernel(self.kernel))
        if not all(0.0 < v < 1.0 for v in h):
            raise ValueError(f"bandwidths must lie in (0, 1), got {h}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.grid_size < 2:
            raise ValueError("grid_size must be at least 2")
        if self.local_linear:
            raise NotImplementedError(
                "local-linear smooth backfitting is not implemented; "
                "only the local-constant variant is available"
            )

    def with_bandwidths(self, bandwidths):
        return SbfConfig(bandwidths, self.grid_size, self.tolerance,
                         self.max_iterations, self.kernel)


@dataclass(frozen=True)
class ProjectionOperator:
    """Marginal and pairwise density estimates of a fixed design.

    ``proj[j][k]`` holds the ``G x G`` matrix
    ``w_l qhat_jk(z_g, z_l) / qhat_j(z_g)`` used by the update for ``j``.
    """

    grid: object
    q_marg: np.ndarray
    q_biv: dict
    bandwidths: tuple
    n: int
    weights: list = field(repr=False)
    proj: dict = field(repr=False)

    @property
    def d(self):
        return self.q_marg.shape[0]


@dataclass
class AdditiveFit:
    m0: float
    components: np.ndarray
    grid: object = field(repr=False)
    iterations: int = 0
    final_delta: float = 0.0
    converged: bool = True
    deltas: list = field(default_factory=list, repr=False)

    @property
    def d(self):
        return self.components.shape[0]

    def component_at(self, j, z):
        return np.interp(z, self.grid.points, self.components[j])

    def additive_at(self, Z):
        """Sum of interpolated components (without ``m0``) at the rows of ``Z``."""
        Z = np.atleast_2d(Z)
        return sum(self.component_at(j, Z[:, j]) for j in range(self.d))


def build_projection(Z, config, weights=None):
    """Precompute marginal and pairwise densities for the design ``Z``.

    ``weights`` optionally supplies the per-coordinate kernel weight
    matrices (as returned by :func:`kernel_weights`) so callers that sweep
    bandwidth grids can reuse them.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    n, d = Z.shape
    if n < 10:
        raise ValueError(f"need at least 10 observations, got {n}")
    if np.any(Z < 0.0) or np.any(Z > 1.0):
        raise ValueError("Z entries must lie in [0, 1]")
    h = config.bandwidths
    if len(h) != d:
        raise ValueError(f"{len(h)} bandwidths given for {d} coordinates")
    grid = make_grid(config.grid_size)
    if weights is None:
        weights = [kernel_weights(Z[:, j], h[j], grid, config.kernel)
                   for j in range(d)]
    q_marg = np.vstack([np.asarray(W.sum(axis=0)).ravel() / n for W in weights])
    for j in range(d):
        bad = np.flatnonzero(q_marg[j] <= density_guard(n, h[j]))
        if bad.size:
            g = bad[0]
            raise SparseRegionError(
                f"no data near Z{j + 1} = {grid.points[g]:.4g} "
                f"(grid index {g}) at bandwidth {h[j]:g}",
                coordinate=j, grid_index=int(g),
            )
    q_biv, proj = {}, {}
    for j in range(d):
        for k in range(j + 1, d):
            q = _dense(weights[j].T @ weights[k]) / n
            q_biv[j, k] = q
            q_biv[k, j] = q.T
    for (j, k), q in q_biv.items():
        proj[j, k] = q * grid.weights[None, :] / q_marg[j][:, None]
    return ProjectionOperator(grid, q_marg, q_biv, h, n, list(weights), proj)


def _marginal_fits(responses, proj):
    return [
        (_dense(W.T @ responses) / proj.n) / q[:, None]
        for W, q in zip(proj.weights, proj.q_marg)
    ]


def _solve(responses, proj, config):
    """Gauss-Seidel sweeps on an ``n x c`` response matrix."""
    d, G = proj.d, proj.grid.size
    c = responses.shape[1]
    m0 = responses.mean(axis=0)
    rhs = [mt - m0[None, :] for mt in _marginal_fits(responses, proj)]
    mass = [proj.grid.weights * q for q in proj.q_marg]
    comps = np.zeros((d, G, c))
    deltas = []
    if d == 1:
        comps[0] = rhs[0] - mass[0] @ rhs[0]
        return m0, comps, 1, 0.0, True, [0.0]
    delta = np.inf
    it = 0
    while it < config.max_iterations:
        it += 1
        delta = 0.0
        for j in range(d):
            new = rhs[j].copy()
            for k in range(d):
                if k != j:
                    new -= proj.proj[j, k] @ comps[k]
            new -= mass[j] @ new
            delta = max(delta, float(np.max(np.abs(new - comps[j]))))
            comps[j] = new
        deltas.append(delta)
        if delta <= config.tolerance:
            break
    converged = delta <= config.tolerance
    if len(deltas) > 4 and np.any(np.diff(deltas[3:]) > 0):
        log.debug("backfitting update sizes not monotone after sweep 3: %s",
                  deltas[:10])
    return m0, comps, it, delta, converged, deltas


def sbf_multi(response_matrix, proj, config, labels=None):
    """Backfit every column of ``response_matrix`` against the shared design.

    All columns are swept together, so the returned fits are exactly linear
    in the responses.
    """
    R = np.asarray(response_matrix, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    if R.shape[0] != proj.n:
        raise ValueError(f"responses have {R.shape[0]} rows, design has {proj.n}")
    if R.shape[1] < 1:
        raise ValueError("need at least one response column")
    m0, comps, it, delta, converged, deltas = _solve(R, proj, config)
    if not converged:
        names = labels or [f"column {i}" for i in range(R.shape[1])]
        raise ConvergenceError(
            f"smooth backfitting did not converge in {it} sweeps for "
            f"{', '.join(names)} (last update {delta:.3g})",
            final_delta=delta, iterations=it,
        )
    return [
        AdditiveFit(float(m0[i]), comps[:, :, i].copy(), proj.grid, it, delta,
                    True, list(deltas))
        for i in range(R.shape[1])
    ]


def sbf_fit(responses, proj, config):
    """Smooth backfitting estimate for a single response vector."""
    responses = np.asarray(responses, dtype=float).ravel()
    return sbf_multi(responses[:, None], proj, config)[0]


def sbf_direct_oracle(responses, proj):
    """Solve the discretised backfitting system as one dense linear system.

    Test oracle: stacks the ``d G`` update equations with the ``d``
    centring constraints and solves by least squares.
    """
    responses = np.asarray(responses, dtype=float).ravel()
    d, G = proj.d, proj.grid.size
    if d * G > 2000:
        raise ValueError("direct oracle limited to d * G <= 2000 unknowns")
    m0 = responses.mean()
    rhs = np.concatenate(
        [mt[:, 0] - m0 for mt in _marginal_fits(responses[:, None], proj)]
    )
    A = np.eye(d * G)
    for (j, k), P in proj.proj.items():
        A[j * G:(j + 1) * G, k * G:(k + 1) * G] = P
    C = np.zeros((d, d * G))
    for j in range(d):
        C[j, j * G:(j + 1) * G] = proj.grid.weights * proj.q_marg[j]
    M = np.vstack([A, C])
    b = np.concatenate([rhs, np.zeros(d)])
    sol, _, rank, sv = np.linalg.lstsq(M, b, rcond=None)
    if rank < d * G or sv[-1] <= 1e-10 * sv[0]:
        raise SingularSystemError(
            f"discretised backfitting system is singular "
            f"(rank {rank} of {d * G}, smallest singular value {sv[-1]:.3g})"
        )
    return AdditiveFit(float(m0), sol.reshape(d, G), proj.grid, 0, 0.0, True)


def evaluate_additive(fit, z):
    """``m0 + sum_j m_j(z_j)`` with linear interpolation between grid nodes.

    ``z`` may be a single ``d``-vector or an ``N x d`` matrix.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        return float(fit.m0 + fit.additive_at(z[None, :])[0])
    return fit.m0 + fit.additive_at(z)
