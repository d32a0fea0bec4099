"""Unpenalized linear models: least squares and low-dimensional logistic.

These are the adjustment-stage learners: the designs they see are a
handful of derived columns, so direct factorizations are appropriate.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .base import LearnerError, LinearFit, RankDeficient

__all__ = ["fit_ols", "fit_logistic_lowdim"]


def _augment(X: np.ndarray, intercept: bool) -> np.ndarray:
    if intercept:
        return np.column_stack([np.ones(X.shape[0]), X])
    return X


def fit_ols(X: np.ndarray, y: np.ndarray, intercept: bool = True) -> LinearFit:
    """Least squares via pivoted QR; raises on rank deficiency.

    Residuals are orthogonal to the design columns to factorization
    accuracy.  The error message for a rank-deficient design names the
    offending columns (original indices; -1 for the intercept).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise LearnerError(f"X {X.shape} and y {y.shape} do not align")
    A = _augment(X, intercept)
    n, d = A.shape
    if d > n:
        raise LearnerError(f"more columns ({d}) than rows ({n})")

    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, d) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < d:
        offending = sorted(int(piv[i]) - (1 if intercept else 0) for i in range(rank, d))
        raise RankDeficient(f"design is rank deficient; offending columns: {offending}")

    rhs = Q.T @ y
    sol_piv = scipy.linalg.solve_triangular(R, rhs)
    sol = np.empty(d)
    sol[piv] = sol_piv
    if intercept:
        b0, coef = float(sol[0]), sol[1:]
    else:
        b0, coef = 0.0, sol
    resid = y - A @ sol
    return LinearFit(
        intercept=b0,
        coef=coef,
        family="gaussian",
        lam=0.0,
        sigma2=float(np.mean(resid**2)),
    )


def fit_logistic_lowdim(
    X: np.ndarray,
    y: np.ndarray,
    max_iter: int = 100,
    grad_tol: float = 1e-6,
    intercept: bool = True,
    offset: np.ndarray | None = None,
) -> LinearFit:
    """Maximum-likelihood logistic regression by damped Newton (IRLS).

    Converged means the mean log-likelihood gradient is below
    ``grad_tol`` in max-norm.  Perfect separation shows up as diverging
    coefficients: the last iterate is returned with a ``"separation"``
    flag instead of raising, since saturated fits are still usable as
    clipped probability models.

    Constant columns alias the intercept and are dropped (coefficient 0,
    ``"dropped_constant_columns"`` flag).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise LearnerError(f"X {X.shape} and y {y.shape} do not align")
    if not np.all((y == 0) | (y == 1)):
        raise LearnerError("logistic regression requires a 0/1 response")
    n, p = X.shape
    if p > 50:
        raise LearnerError(f"low-dimensional solver capped at 50 columns, got {p}")

    col_sd = X.std(axis=0)
    usable = col_sd > 1e-12 * np.maximum(1.0, np.abs(X.mean(axis=0)))
    flags: tuple[str, ...] = () if np.all(usable) else ("dropped_constant_columns",)
    dropped = tuple(int(j) for j in np.flatnonzero(~usable))
    A = _augment(X[:, usable], intercept)
    d = A.shape[1]
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)

    theta = np.zeros(d)
    converged = False
    separated = False
    for _ in range(max_iter):
        eta = np.clip(off + A @ theta, -35, 35)
        prob = 1.0 / (1.0 + np.exp(-eta))
        grad = A.T @ (y - prob) / n
        if np.max(np.abs(grad)) <= grad_tol:
            converged = True
            break
        if np.max(np.abs(theta)) > 1e4 or np.max(np.abs(off + A @ theta)) > 300:
            separated = True
            break
        w = np.maximum(prob * (1 - prob), 1e-10)
        H = (A * w[:, None]).T @ A / n
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        # halve until the log-likelihood does not decrease
        ll_old = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
        scale = 1.0
        for _ in range(30):
            cand = theta + scale * step
            eta_c = np.clip(off + A @ cand, -35, 35)
            ll_new = float(np.sum(y * eta_c - np.logaddexp(0.0, eta_c)))
            if ll_new >= ll_old - 1e-12:
                break
            scale *= 0.5
        theta = theta + scale * step
    else:
        # iteration cap with a still-moving fit: treat like separation
        eta = np.clip(off + A @ theta, -35, 35)
        prob = 1.0 / (1.0 + np.exp(-eta))
        grad = A.T @ (y - prob) / n
        if np.max(np.abs(grad)) <= grad_tol:
            converged = True
        else:
            separated = True

    if converged and not separated:
        # a saturated, perfectly classifying fit is separation that merely
        # drove the gradient under tolerance before the norm guard hit
        eta = np.clip(off + A @ theta, -35, 35)
        margins = eta * (2 * y - 1)
        if np.all(margins > 9.2):
            separated = True
    if separated:
        flags += ("separation",)

    if intercept:
        b0, coef_used = float(theta[0]), theta[1:]
    else:
        b0, coef_used = 0.0, theta
    coef = np.zeros(p)
    coef[usable] = coef_used
    return LinearFit(
        intercept=b0,
        coef=coef,
        family="logistic",
        lam=0.0,
        dropped=dropped,
        flags=flags,
    )
