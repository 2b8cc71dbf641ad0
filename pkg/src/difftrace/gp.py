"""Local (finite-box) diffusion estimation from trajectory segments.

The observation model is a latent random walk with iid normal steps of
variance sigma2 plus iid normal observation noise of variance a2.  After
conditioning on (and centering at) the first observation, a segment is a
zero-mean Gaussian vector with covariance

    K[i, j] = min(i, j) * sigma2 + a2 * [i == j]      (1-based indices).

The posterior over (sigma2, a2) under half-normal priors is maximized in
log-parameter space; the diffusion coefficient is sigma2 / (2 dt) and its
Laplace variance comes from the curvature at the mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator

from .trajectory import UnwrappedTrajectory

__all__ = [
    "GpParams",
    "GpDataset",
    "LocalEstimate",
    "gram_matrix",
    "loglik_dense",
    "loglik_increment",
    "log_posterior",
    "map_estimate",
    "dataset_from_segments",
    "LocalDiffusionEstimator",
]

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_PRIOR_SCALE = 0.5  # half-normal scale on sigma2 and a2, A^2
_JITTER = 1e-10


@dataclass
class GpParams:
    """Step variance sigma2 and observation-noise variance a2, both A^2."""

    sigma2: float
    a2: float

    def __post_init__(self):
        if self.sigma2 < 0 or self.a2 < 0:
            raise ValueError("variances must be non-negative")


@dataclass
class GpDataset:
    """Pooled 1-D centered series (first observation already dropped).

    Each entry is one spatial dimension of one segment of one molecule;
    independence across entries lets the likelihood sum over them.
    """

    series: list[np.ndarray]
    dt: float

    def __post_init__(self):
        self.series = [np.asarray(y, dtype=float).ravel() for y in self.series]
        if any(y.size < 1 for y in self.series):
            raise ValueError("every series needs at least one observation")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def n_obs(self) -> int:
        return sum(y.size for y in self.series)


@dataclass
class LocalEstimate:
    """MAP diffusion coefficient with Laplace posterior variance."""

    d_md: float              # A^2/ps
    s_md: float              # (A^2/ps)^2
    a2_hat: float            # A^2
    n_obs: int
    converged: bool
    sigma2_hat: float = 0.0  # A^2 per step
    hess_fallback: bool = False
    message: str = ""


def gram_matrix(n: int, p: GpParams) -> np.ndarray:
    """Covariance of a centered segment of length n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    idx = np.arange(1, n + 1)
    return p.sigma2 * np.minimum.outer(idx, idx) + p.a2 * np.eye(n)


def _mvn_logpdf_cholesky(factor_fn, solve_fn, logdet_fn, y):
    """Shared jitter-and-retry skeleton for the two likelihood routes."""
    try:
        fac = factor_fn(0.0)
    except scipy.linalg.LinAlgError:
        try:
            fac = factor_fn(_JITTER)
        except scipy.linalg.LinAlgError:
            raise scipy.linalg.LinAlgError(
                "covariance factorization failed even with jitter"
            ) from None
    quad = float(y @ solve_fn(fac, y))
    return -0.5 * (y.size * LOG_2PI + logdet_fn(fac) + quad)


def loglik_dense(y, p: GpParams) -> float:
    """Multivariate-normal log likelihood via dense Cholesky, O(n^3)."""
    y = np.asarray(y, dtype=float).ravel()
    K = gram_matrix(y.size, p)

    def factor(jitter):
        return scipy.linalg.cho_factor(
            K + jitter * np.eye(y.size) if jitter else K,
            lower=True, check_finite=False,
        )

    return _mvn_logpdf_cholesky(
        factor,
        lambda fac, v: scipy.linalg.cho_solve(fac, v, check_finite=False),
        lambda fac: 2.0 * float(np.sum(np.log(np.diag(fac[0])))),
        y,
    )


def loglik_increment(y, p: GpParams) -> float:
    """Same value as loglik_dense in O(n) via the increment representation.

    The map y -> (y_1, y_2 - y_1, ...) has unit Jacobian and tridiagonal
    covariance: Var(y_1) = sigma2 + a2, Var(diff) = sigma2 + 2 a2, and
    adjacent covariances -a2.  A banded Cholesky then gives the density.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    z = np.empty(n)
    z[0] = y[0]
    np.subtract(y[1:], y[:-1], out=z[1:])
    diag = np.full(n, p.sigma2 + 2.0 * p.a2)
    diag[0] = p.sigma2 + p.a2

    def factor(jitter):
        ab = np.zeros((2, n))
        ab[0, 1:] = -p.a2
        ab[1] = diag + jitter
        return scipy.linalg.cholesky_banded(ab, lower=False, check_finite=False)

    return _mvn_logpdf_cholesky(
        factor,
        lambda fac, v: scipy.linalg.cho_solve_banded((fac, False), v, check_finite=False),
        lambda fac: 2.0 * float(np.sum(np.log(fac[1]))),
        z,
    )


def _log_half_normal(x: float, scale: float) -> float:
    if x < 0:
        return -math.inf
    return 0.5 * math.log(2.0 / math.pi) - math.log(scale) - 0.5 * (x / scale) ** 2


def log_posterior(
    data: GpDataset,
    p: GpParams,
    prior_scale: float = DEFAULT_PRIOR_SCALE,
    method: str = "increment",
) -> float:
    """Pooled log likelihood plus half-normal log priors (constants kept)."""
    loglik = loglik_increment if method == "increment" else loglik_dense
    total = sum(loglik(y, p) for y in data.series)
    total += _log_half_normal(p.sigma2, prior_scale)
    total += _log_half_normal(p.a2, prior_scale)
    return total


def _fd_hessian(f, x: np.ndarray, rel_step: float) -> np.ndarray:
    """Central finite-difference Hessian with per-coordinate relative steps."""
    k = x.size
    h = rel_step * np.maximum(np.abs(x), rel_step)
    H = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return H


def map_estimate(
    data: GpDataset,
    prior_scale: float = DEFAULT_PRIOR_SCALE,
    max_iter: int = 300,
    start: tuple[float, float] | None = None,
    pin_log_a2: float = -30.0,
    hess_rel_step: float = 1e-5,
) -> LocalEstimate:
    """MAP fit of (sigma2, a2) with a Laplace variance for the mode.

    Optimizes the log posterior over (log sigma2, log a2) with L-BFGS-B;
    positivity is enforced by the parameterization.  The Laplace step takes
    a central-difference Hessian of the negative log posterior in the
    original coordinates, because the reported variance is for sigma2 and
    d_md = sigma2 / (2 dt) is linear in it.  If the optimizer pushes
    log a2 below `pin_log_a2`, a2 is pinned to zero and the curvature is
    taken over sigma2 alone.
    """
    from scipy.optimize import minimize

    n_obs = data.n_obs
    if n_obs < 10:
        raise ValueError("need at least 10 pooled observations")

    if start is None:
        ssq, cnt = 0.0, 0
        for y in data.series:
            ssq += y[0] ** 2 + float(np.sum(np.diff(y) ** 2))
            cnt += y.size
        v = ssq / cnt if cnt else 0.0
        start = (max(v / 2.0, 1e-10), max(v / 4.0, 1e-10))
    u0 = np.log(np.asarray(start, dtype=float))

    def neg_log_post(u):
        p = GpParams(sigma2=math.exp(u[0]), a2=math.exp(u[1]))
        return -log_posterior(data, p, prior_scale=prior_scale)

    res = minimize(
        neg_log_post,
        u0,
        method="L-BFGS-B",
        bounds=[(-46.0, 23.0)] * 2,
        options={"maxiter": max_iter, "ftol": 1e-14, "gtol": 1e-9},
    )
    sigma2_hat = math.exp(res.x[0])
    a2_hat = 0.0 if res.x[1] < pin_log_a2 else math.exp(res.x[1])
    converged = bool(res.success)
    message = str(res.message)

    # Laplace curvature in original coordinates.
    if a2_hat == 0.0:
        def f1(x):
            return -log_posterior(data, GpParams(sigma2=float(x[0]), a2=0.0),
                                  prior_scale=prior_scale)
        H = _fd_hessian(f1, np.array([sigma2_hat]), hess_rel_step)
        var_sigma2 = 1.0 / H[0, 0] if H[0, 0] > 0 else math.inf
        hess_fallback = not H[0, 0] > 0
    else:
        def f2(x):
            return -log_posterior(data, GpParams(sigma2=float(x[0]), a2=float(x[1])),
                                  prior_scale=prior_scale)
        H = _fd_hessian(f2, np.array([sigma2_hat, a2_hat]), hess_rel_step)
        det = H[0, 0] * H[1, 1] - H[0, 1] ** 2
        var_sigma2 = H[1, 1] / det if det > 0 else math.nan
        hess_fallback = False
        if not (math.isfinite(var_sigma2) and var_sigma2 > 0):
            # Degenerate joint curvature: fall back to the sigma2 diagonal.
            var_sigma2 = 1.0 / H[0, 0] if H[0, 0] > 0 else math.inf
            hess_fallback = True
    if not math.isfinite(var_sigma2):
        converged = False
        message = message + "; degenerate curvature"

    scale = 2.0 * data.dt
    return LocalEstimate(
        d_md=sigma2_hat / scale,
        s_md=var_sigma2 / scale**2,
        a2_hat=a2_hat,
        n_obs=n_obs,
        converged=converged,
        sigma2_hat=sigma2_hat,
        hess_fallback=hess_fallback,
        message=message,
    )


def dataset_from_segments(segments: list[UnwrappedTrajectory], dims: int = 3) -> GpDataset:
    """Pool origin-based segments into per-dimension series.

    Segments must share dt and start at the origin (as produced by
    ``trajectory.segment``); the leading zero observation is dropped, which
    implements conditioning on the first frame.
    """
    if not segments:
        raise ValueError("no segments given")
    dt = segments[0].dt
    series = []
    for seg in segments:
        if seg.dt != dt:
            raise ValueError("segments have differing dt")
        if not np.allclose(seg.positions[0], 0.0, atol=1e-9):
            raise ValueError("segments must start at the origin (re-based)")
        for m in range(seg.n_mols):
            for k in range(dims):
                series.append(seg.positions[1:, m, k].copy())
    return GpDataset(series=series, dt=dt)


class LocalDiffusionEstimator(BaseEstimator):
    """Estimator wrapper over map_estimate.

    fit() accepts a GpDataset (whose dt wins) or a list of 1-D centered
    series interpreted at the constructor's dt.  Fitted attributes mirror
    LocalEstimate fields with trailing underscores.
    """

    def __init__(self, dt: float = 0.5, prior_scale: float = DEFAULT_PRIOR_SCALE,
                 max_iter: int = 300):
        self.dt = dt
        self.prior_scale = prior_scale
        self.max_iter = max_iter

    def fit(self, X, y=None):
        data = X if isinstance(X, GpDataset) else GpDataset(series=list(X), dt=self.dt)
        est = map_estimate(data, prior_scale=self.prior_scale, max_iter=self.max_iter)
        self.estimate_ = est
        self.d_md_ = est.d_md
        self.s_md_ = est.s_md
        self.a2_hat_ = est.a2_hat
        self.n_obs_ = est.n_obs
        self.converged_ = est.converged
        return self
