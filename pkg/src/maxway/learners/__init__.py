"""From-scratch supervised learners: lasso, OLS, logistic, random forest.

Everything here is a pure function of (data, config, rng) and returns a
frozen fit object; :func:`predict` and :func:`top_k_features` dispatch
on the fit type.
"""

from __future__ import annotations

import numpy as np

from .base import (
    DimensionMismatch,
    LearnerError,
    LinearFit,
    NoConvergence,
    RankDeficient,
)
from .forest import ForestConfig, ForestFit, fit_forest, forest_predict
from .lasso import LambdaSelection, fit_lasso, lambda_max, lasso_kkt_gap
from .linear import fit_logistic_lowdim, fit_ols

__all__ = [
    "LearnerError",
    "NoConvergence",
    "RankDeficient",
    "DimensionMismatch",
    "LinearFit",
    "LambdaSelection",
    "ForestConfig",
    "ForestFit",
    "fit_lasso",
    "lasso_kkt_gap",
    "lambda_max",
    "fit_ols",
    "fit_logistic_lowdim",
    "fit_forest",
    "predict",
    "linear_predictor",
    "top_k_features",
]


def predict(fit, X: np.ndarray) -> np.ndarray:
    """Response-scale predictions: X @ coef + intercept for gaussian fits,
    expit of that for logistic fits, mean tree output for forests."""
    if isinstance(fit, ForestFit):
        return forest_predict(fit, X)
    if isinstance(fit, LinearFit):
        eta = fit.linear_predictor(X)
        if fit.family == "logistic":
            return 1.0 / (1.0 + np.exp(-np.clip(eta, -35, 35)))
        return eta
    raise TypeError(f"cannot predict from {type(fit).__name__}")


def linear_predictor(fit: LinearFit, X: np.ndarray) -> np.ndarray:
    """Link-scale predictions (identical to predict for gaussian fits)."""
    return fit.linear_predictor(X)


def top_k_features(fit, k: int) -> list[int]:
    """Indices of the k most important features, most important first.

    Linear fits rank by |coefficient|, forests by impurity importance;
    exact ties go to the lower index.
    """
    if isinstance(fit, ForestFit):
        scores = np.asarray(fit.importance, dtype=float)
    elif isinstance(fit, LinearFit):
        scores = np.abs(fit.coef)
    else:
        raise TypeError(f"cannot rank features of {type(fit).__name__}")
    if k > scores.shape[0]:
        raise LearnerError(f"k={k} exceeds feature count {scores.shape[0]}")
    order = sorted(range(scores.shape[0]), key=lambda j: (-scores[j], j))
    return [int(j) for j in order[:k]]
