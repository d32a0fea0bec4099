"""Test statistics restricted to (y, exposure-or-residual, g, h).

The call signatures only accept residual pairs and summary columns, so
a statistic structurally cannot peek at the full covariate matrix; the
engines own the mapping from raw data to these inputs.

All statistics are nonnegative.  The forest importance statistic embeds
its forest rng in the spec's evaluator, so the *same* randomized
function is applied to the observed exposure and to every resample;
anything else would break exchangeability of the scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .conditioners import SufficientStats
from .data import RngHandle
from .learners import ForestConfig, fit_forest

__all__ = [
    "ResidualPair",
    "StatSpec",
    "stat_d0",
    "stat_dI",
    "stat_inner_product",
    "stat_rf_importance",
    "make_stat_evaluator",
]


@dataclass(frozen=True)
class ResidualPair:
    """Response and exposure residuals of equal length."""

    eps_y: np.ndarray
    eps_x: np.ndarray

    def __post_init__(self):
        ey = np.asarray(self.eps_y, dtype=float)
        ex = np.asarray(self.eps_x, dtype=float)
        if ey.shape != ex.shape or ey.ndim != 1:
            raise ValueError(f"residual shapes differ: {ey.shape} vs {ex.shape}")
        if not (np.all(np.isfinite(ey)) and np.all(np.isfinite(ex))):
            raise ValueError("residuals must be finite")
        object.__setattr__(self, "eps_y", ey)
        object.__setattr__(self, "eps_x", ex)


@dataclass(frozen=True)
class StatSpec:
    """Which statistic to run and its knobs.

    kinds: ``d0`` (absolute residual inner product), ``dI`` (main +
    averaged interaction coefficients), ``inner_product`` (|x'y| on the
    raw exposure), ``rf_importance`` (forest importance share of the
    exposure residual).
    """

    kind: str = "d0"
    di_intercept: bool = False
    forest_config: ForestConfig = field(
        default_factory=lambda: ForestConfig(n_trees=100)
    )

    def __post_init__(self):
        if self.kind not in ("d0", "dI", "inner_product", "rf_importance"):
            raise ValueError(f"unknown statistic kind {self.kind!r}")

    @property
    def needs_residuals(self) -> bool:
        return self.kind in ("d0", "dI", "rf_importance")


def stat_d0(res: ResidualPair) -> float:
    """|eps_y' eps_x|: the absolute empirical partial covariance."""
    return float(abs(res.eps_y @ res.eps_x))


def stat_inner_product(y: np.ndarray, x_or_r: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    v = np.asarray(x_or_r, dtype=float)
    if y.shape != v.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {v.shape}")
    return float(abs(v @ y))


def stat_dI(
    res: ResidualPair,
    Z_top: np.ndarray,
    intercept: bool = False,
    flags: Optional[set] = None,
) -> float:
    """Squared main-effect coefficient plus the mean squared interaction
    coefficients from regressing eps_y on (eps_x, eps_x * Z_top).

    A rank-deficient design (possible with binary exposures at small n)
    falls back to a tiny ridge instead of failing, recording
    ``"dI_ridge_fallback"`` in ``flags``.
    """
    Z_top = np.asarray(Z_top, dtype=float)
    n, k = Z_top.shape
    if res.eps_y.shape[0] != n:
        raise ValueError("residuals and Z_top row counts differ")
    if n <= k + 1 + (1 if intercept else 0):
        raise ValueError(f"need n > k+1 rows, got n={n}, k={k}")
    D = np.column_stack([res.eps_x, res.eps_x[:, None] * Z_top])
    if intercept:
        D = np.column_stack([np.ones(n), D])
    DtD = D.T @ D
    rank = np.linalg.matrix_rank(DtD)
    if rank < D.shape[1]:
        lam = 1e-8 * np.trace(DtD) / D.shape[1]
        if lam <= 0:
            lam = 1e-12
        beta = np.linalg.solve(DtD + lam * np.eye(D.shape[1]), D.T @ res.eps_y)
        if flags is not None:
            flags.add("dI_ridge_fallback")
    else:
        beta = np.linalg.solve(DtD, D.T @ res.eps_y)
    if intercept:
        beta = beta[1:]
    return float(beta[0] ** 2 + np.mean(beta[1:] ** 2)) if k else float(beta[0] ** 2)


def stat_rf_importance(
    res: ResidualPair,
    Z_top: np.ndarray,
    config: ForestConfig,
    rng: RngHandle,
) -> float:
    """Importance share of the exposure residual in a forest of eps_y on
    (eps_x, Z_top); 0 when the target admits no splits."""
    Z_top = np.asarray(Z_top, dtype=float)
    design = np.column_stack([res.eps_x, Z_top])
    fit = fit_forest(design, res.eps_y, task="regression", config=config, rng=rng)
    return float(fit.importance[0])


def make_stat_evaluator(
    spec: StatSpec,
    y: np.ndarray,
    stats: SufficientStats,
    x_to_eps: Callable[[np.ndarray], np.ndarray],
    stat_rng: RngHandle,
    flags: Optional[set] = None,
) -> Callable[[np.ndarray], float]:
    """Close over everything fixed across resamples.

    The returned callable maps one exposure (or transformed exposure)
    vector to the statistic value.  ``x_to_eps`` converts that vector to
    the exposure residual for residual-based statistics; the engines
    supply it from the exposure family.
    """
    y = np.asarray(y, dtype=float)
    if spec.kind == "inner_product":
        return lambda v: stat_inner_product(y, v)

    eps_y = y - stats.y_hat()
    Z_top = stats.g[:, 1:]

    if spec.kind == "d0":
        def eval_d0(v):
            return stat_d0(ResidualPair(eps_y, x_to_eps(v)))
        return eval_d0
    if spec.kind == "dI":
        if Z_top.shape[1] == 0:
            raise ValueError("dI requires top-k columns in g")
        def eval_di(v):
            return stat_dI(ResidualPair(eps_y, x_to_eps(v)), Z_top,
                           intercept=spec.di_intercept, flags=flags)
        return eval_di

    def eval_rf(v):
        return stat_rf_importance(ResidualPair(eps_y, x_to_eps(v)), Z_top,
                                  spec.forest_config, stat_rng)
    return eval_rf
