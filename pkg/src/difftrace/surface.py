"""Log-log polynomial summary surface for D over temperature and pressure.

The model is ordinary least squares of log D on the seven-term basis
{1, T', P', T'^2, P'^2, T'P', P'^3} with T' = ln(T/K) and P' = ln(P/atm);
evaluation exponentiates the fitted polynomial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = ["SurfaceCoeffs", "eval_surface", "fit_surface", "DiffusionSurface",
           "REFERENCE_COEFFS"]

COEF_NAMES = ("c0", "cT", "cP", "cT2", "cP2", "cTP", "cP3")


@dataclass
class SurfaceCoeffs:
    """Coefficients on the natural-log basis, plus fit diagnostics.

    r2 and resid_se are on the log scale; rmse is on the A^2/ps scale;
    df is the residual degrees of freedom (n - 7).
    """

    c0: float
    cT: float
    cP: float
    cT2: float
    cP2: float
    cTP: float
    cP3: float
    r2: float | None = None
    rmse: float | None = None
    resid_se: float | None = None
    df: int | None = None

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in COEF_NAMES])


# Published reference fit for hydroxyl-radical diffusion in water over
# 263-298 K and 1-10000 atm (A^2/ps).
REFERENCE_COEFFS = SurfaceCoeffs(
    c0=-4.410203e02,
    cT=1.476812e02,
    cP=8.225372e-01,
    cT2=-1.238130e01,
    cP2=2.814801e-02,
    cTP=-1.582325e-01,
    cP3=-2.622113e-03,
)


def _basis(T, P) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    P = np.asarray(P, dtype=float)
    if np.any(T <= 0) or np.any(P <= 0):
        raise ValueError("temperature and pressure must be positive")
    tp = np.log(T)
    pp = np.log(P)
    return np.stack(
        [np.ones_like(tp), tp, pp, tp**2, pp**2, tp * pp, pp**3], axis=-1
    )


def eval_surface(c: SurfaceCoeffs, T, P):
    """Evaluate the surface at (T in K, P in atm); returns A^2/ps."""
    out = np.exp(_basis(T, P) @ c.as_array())
    return float(out) if out.ndim == 0 else out


def fit_surface(points) -> SurfaceCoeffs:
    """Least-squares fit of the 7-coefficient surface.

    points: iterable of (T, P, D) rows (or an (n, 3) array), needing at
    least 8 rows spanning two distinct temperatures and two distinct
    pressures, with all D > 0.  Solved by SVD-based least squares rather
    than normal equations; the log-T basis columns are nearly collinear
    over narrow temperature ranges.
    """
    pts = np.asarray(list(points) if not isinstance(points, np.ndarray) else points,
                     dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be (T, P, D) rows")
    n = pts.shape[0]
    if n < 8:
        raise ValueError("need at least 8 points")
    T, P, D = pts[:, 0], pts[:, 1], pts[:, 2]
    if np.unique(T).size < 2 or np.unique(P).size < 2:
        raise ValueError("points must span at least 2 temperatures and 2 pressures")
    if np.any(D <= 0):
        raise ValueError("all D must be positive")
    X = _basis(T, P)
    y = np.log(D)
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < 7:
        raise ValueError("rank-deficient design matrix; spread the (T, P) grid")
    resid = y - X @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    df = n - 7
    resid_se = math.sqrt(ss_res / df) if df > 0 else math.nan
    rmse = float(np.sqrt(np.mean((D - np.exp(X @ coef)) ** 2)))
    return SurfaceCoeffs(*coef, r2=r2, rmse=rmse, resid_se=resid_se, df=df)


class DiffusionSurface(RegressorMixin, BaseEstimator):
    """sklearn-style regressor over the log-log polynomial basis.

    fit(X, y) takes X of shape (n, 2) with columns (T in K, P in atm) and
    y the diffusion coefficients in A^2/ps; predict returns A^2/ps.
    """

    def fit(self, X, y):
        X = check_array(X)
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[1] != 2:
            raise ValueError("X must have two columns: temperature, pressure")
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y lengths differ")
        self.coeffs_ = fit_surface(np.column_stack([X, y]))
        self.r2_ = self.coeffs_.r2
        self.rmse_ = self.coeffs_.rmse
        return self

    def predict(self, X):
        check_is_fitted(self, "coeffs_")
        X = check_array(X)
        return eval_surface(self.coeffs_, X[:, 0], X[:, 1])
