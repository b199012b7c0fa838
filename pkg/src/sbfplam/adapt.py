"""Adaptive one-step efficient estimator (ASAM).

Starting from the Gaussian-profile fit, the error density is estimated
from the pseudo-errors with a floored kernel estimate ``ghat``, the score
``ghat'/ghat`` is symmetrised, and a single Newton-type step is taken
along the estimated efficient score.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import skew

from .errors import InformationError
from .kernels import GAUSSIAN, get_kernel, sj_bandwidth
from .plam import sam_fit

log = logging.getLogger(__name__)

SKEW_LIMIT = 0.5


class TuningWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ScoreEstimate:
    """Kernel error-density estimate with floor ``b`` and bandwidth ``a``."""

    pseudo_errors: np.ndarray
    a: float
    b: float
    kernel: object = GAUSSIAN

    def __post_init__(self):
        if not self.a > 0 or not self.b > 0:
            raise ValueError(f"a and b must be positive (a={self.a}, b={self.b})")
        object.__setattr__(self, "pseudo_errors",
                           np.asarray(self.pseudo_errors, dtype=float).ravel())
        object.__setattr__(self, "kernel", get_kernel(self.kernel))

    def _sums(self, t, chunk=4_000_000):
        """Kernel sums ``sum L(u)`` and ``sum L'(u)``, ``u = (t - e_i) / a``."""
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        s0 = np.empty(flat.size)
        s1 = np.empty(flat.size)
        step = max(1, chunk // max(self.pseudo_errors.size, 1))
        for lo in range(0, flat.size, step):
            u = (flat[lo:lo + step, None] - self.pseudo_errors) / self.a
            k = self.kernel(u)
            s0[lo:lo + step] = k.sum(axis=-1)
            if self.kernel.kind == "gaussian":
                s1[lo:lo + step] = -(u * k).sum(axis=-1)
            else:
                s1[lo:lo + step] = self.kernel.derivative(u).sum(axis=-1)
        return s0.reshape(t.shape), s1.reshape(t.shape)

    def g(self, t):
        n = self.pseudo_errors.size
        return self.b + self._sums(t)[0] / (n * self.a)

    def g_prime(self, t):
        n = self.pseudo_errors.size
        return self._sums(t)[1] / (n * self.a ** 2)

    def phi(self, e):
        """Symmetrised score ``[(g'/g)(e) - (g'/g)(-e)] / 2``; odd in ``e``."""
        e = np.asarray(e, dtype=float)
        n = self.pseudo_errors.size
        s0, s1 = self._sums(np.stack([e, -e]))
        ratio = (s1 / self.a) / (self.b * n * self.a + s0)
        return 0.5 * (ratio[0] - ratio[1])


def g_hat(s, t):
    return s.g(t)


def g_hat_prime(s, t):
    return s.g_prime(t)


def phi_hat(s, e):
    return s.phi(e)


@dataclass
class EfficientFit:
    beta_tilde: np.ndarray
    info_hat: np.ndarray
    base: object
    cov_beta: np.ndarray
    score: ScoreEstimate = field(repr=False)
    warnings: list = field(default_factory=list)
    skewness: float = 0.0
    estimator_tag: str = "ASAM"

    @property
    def beta(self):
        return self.beta_tilde


def pseudo_errors(fit, data=None):
    """Pseudo-errors ``Ytilde - Xtilde^T betahat`` (centred) from a SAM fit."""
    if fit.estimator_tag != "SAM":
        raise ValueError("pseudo-errors are defined for the SAM fit")
    return fit.residuals.copy()


def info_hat(s, x_tilde):
    """Estimated information: residualised Gram times the mean squared score."""
    x_tilde = np.asarray(x_tilde, dtype=float)
    if x_tilde.ndim == 1:
        x_tilde = x_tilde[:, None]
    n = x_tilde.shape[0]
    scores = s.phi(s.pseudo_errors)
    factor = float(np.mean(scores ** 2))
    if not factor > 0:
        raise InformationError(
            "all estimated scores are zero; information is not invertible "
            "(try a larger score bandwidth a or floor b)")
    info = (x_tilde.T @ x_tilde / n) * factor
    if np.linalg.matrix_rank(info) < info.shape[0]:
        raise InformationError("residualised Gram matrix is singular")
    return info


def validate_tuning(a, b, h, n):
    """Check finite-sample versions of the rate conditions on ``a``, ``b``, ``h``.

    Warns when ``sqrt(n) h_j b min(a^2, b^2) < 1`` or
    ``a^2 / (h_j log(n)^2) < 0.1`` for some ``j``.  Advisory only.
    """
    out = []
    logn2 = math.log(n) ** 2
    for j, hj in enumerate(np.atleast_1d(h)):
        first = math.sqrt(n) * hj * b * min(a * a, b * b)
        if first < 1.0:
            out.append(f"h[{j}]={hj:g}: sqrt(n) h b min(a^2, b^2) = {first:.3g} < 1")
        second = a * a / (hj * logn2)
        if second < 0.1:
            out.append(f"h[{j}]={hj:g}: a^2 / (h log(n)^2) = {second:.3g} < 0.1")
    return out


def one_step(base, a, b=0.01, kernel=GAUSSIAN):
    """One-step update from an existing SAM fit; ``a`` may be ``"auto"``."""
    eps = pseudo_errors(base)
    if a is None or a == "auto":
        a = sj_bandwidth(eps)
    s = ScoreEstimate(eps, float(a), float(b), kernel)
    info = info_hat(s, base.x_tilde)
    n = eps.size
    step = np.linalg.solve(info, base.x_tilde.T @ s.phi(eps) / n)
    cov = np.linalg.inv(info) / n
    cov = 0.5 * (cov + cov.T)
    return EfficientFit(base.beta - step, info, base, cov, s,
                        skewness=float(skew(eps)))


def asam_fit(data, config, a="auto", b=0.01, kernel=GAUSSIAN, weights=None):
    """Adaptive efficient estimator.

    Runs :func:`sam_fit`, estimates the error score from its pseudo-errors
    (bandwidth ``a`` from Sheather-Jones when ``"auto"``) and applies the
    one-step correction.  Tuning-rate and skewness diagnostics are collected
    in ``EfficientFit.warnings`` and issued as :class:`TuningWarning`.
    """
    base = sam_fit(data, config, weights)
    try:
        fit = one_step(base, a, b, kernel)
    except InformationError as err:
        raise InformationError(f"{err}; consider a larger a or b") from err
    notes = validate_tuning(fit.score.a, b, config.bandwidths, data.n)
    eps = fit.score.pseudo_errors
    scaled_info = float(np.mean(fit.score.phi(eps) ** 2) * np.var(eps))
    if scaled_info < 1.0:
        # any density has I_g var >= 1, so a smaller value means the floor or
        # bandwidth flattens the score
        notes.append(
            f"estimated information times error variance is {scaled_info:.3g} < 1; "
            "the score estimate is over-smoothed (consider smaller a or b)")
    if abs(fit.skewness) > SKEW_LIMIT:
        notes.append(
            f"pseudo-error skewness {fit.skewness:.3g} exceeds {SKEW_LIMIT}; "
            "the symmetric-error score may be misspecified")
    for msg in notes:
        warnings.warn(msg, TuningWarning, stacklevel=2)
    fit.warnings = notes
    return fit
