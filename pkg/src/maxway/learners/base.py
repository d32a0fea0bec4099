"""Shared learner types and error classes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class LearnerError(RuntimeError):
    """Base class for learner failures."""


class NoConvergence(LearnerError):
    """Optimizer hit its iteration cap; message reports the final KKT gap."""


class RankDeficient(LearnerError):
    """Least-squares design is rank deficient; message names the columns."""


class DimensionMismatch(LearnerError):
    """Prediction matrix has the wrong number of columns."""


@dataclass(frozen=True)
class LinearFit:
    """A fitted (possibly penalized) generalized linear model.

    ``coef`` is always on the original feature scale, with the intercept
    separate.  ``lam`` is the l1 penalty of the internally standardized
    problem (0 for unpenalized fits).  ``dropped`` lists columns removed
    because they had zero variance after standardization; their
    coefficients are 0.  ``flags`` carries quality markers such as
    ``"separation"`` or ``"dropped_constant_columns"``.
    """

    intercept: float
    coef: np.ndarray
    family: str  # "gaussian" | "logistic"
    lam: float = 0.0
    sigma2: Optional[float] = None
    dropped: tuple[int, ...] = ()
    flags: tuple[str, ...] = ()
    selection: Optional["object"] = None
    objective_trace: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        coef = np.array(self.coef, dtype=float, copy=True)
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)
        if self.sigma2 is not None and self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")

    @property
    def n_features(self) -> int:
        return self.coef.shape[0]

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"fit has {self.n_features} features, X has shape {X.shape}"
            )
        return self.intercept + X @ self.coef
