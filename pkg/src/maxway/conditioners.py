"""Low-dimensional summaries of Z and the adjusted resampling distribution.

Two summaries drive everything downstream:

* ``g(Z)`` captures what Z says about the response.  It is the fitted
  link/prediction column of a response model plus the k most important
  raw covariate columns, so a single matrix carries both the fitted
  direction and the raw features the statistic may want to interact
  with.
* ``h(Z)`` captures what Z says about the exposure beyond a residual
  transform.  Continuous exposure families subtract the fitted mean
  (so the transformed exposure needs no h at all, and h is empty);
  binary families keep the exposure as-is and expose the fitted
  link/probability as a one-column h.

The resampling ("adjustment") distribution is the fitted conditional
law of the transformed exposure given (g, h): a gaussian around a
low-dimensional regression for continuous families, a clipped Bernoulli
from a low-dimensional logistic or forest fit for binary families.  Its
noise variance is, by default, re-estimated on the labeled testing
rows so resamples match the scale of the observed exposure even when
the exposure model itself is off.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import ceil, log
from typing import Any, Optional

import numpy as np

from .data import LabeledData, RngHandle, SurrogateData, UnlabeledData
from .learners import (
    ForestConfig,
    ForestFit,
    LambdaSelection,
    LinearFit,
    fit_forest,
    fit_lasso,
    fit_logistic_lowdim,
    fit_ols,
    predict,
    top_k_features,
)

__all__ = [
    "SufficientStats",
    "Transform",
    "FittedXModel",
    "GModel",
    "MaxwayDistribution",
    "default_k",
    "fit_g_model",
    "build_g_lasso",
    "build_g_forest",
    "build_g_surrogate",
    "fit_x_model",
    "build_h_and_transform",
    "fit_maxway",
    "sample_maxway",
]

X_FAMILIES = ("gaussian_linear", "logistic", "forest_gaussian", "forest_binary")


def default_k(p: int, log_base: str = "natural") -> int:
    """Reduced dimensionality used when none is requested: ceil(2 log p)."""
    lp = log(p) if log_base == "natural" else log(p, 10)
    return max(1, ceil(2 * lp))


def _expit(eta: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -35, 35)))


@dataclass(frozen=True)
class SufficientStats:
    """Evaluated summary columns for one dataset (g and/or h may be empty)."""

    g: np.ndarray
    h: np.ndarray
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("g", "h"):
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            if arr.ndim != 2:
                raise ValueError(f"{name} must be 2-d, got shape {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.g.shape[0] != self.h.shape[0]:
            raise ValueError("g and h row counts differ")

    @property
    def n(self) -> int:
        return self.g.shape[0]

    def with_h(self, h: np.ndarray, extra: Optional[dict] = None) -> "SufficientStats":
        prov = dict(self.provenance)
        if extra:
            prov.update(extra)
        return SufficientStats(self.g, h, prov)

    def y_hat(self) -> np.ndarray:
        """Fitted response implied by the first g column (link applied)."""
        if self.g.shape[1] == 0:
            raise ValueError("no g columns to predict the response from")
        col = self.g[:, 0]
        if self.provenance.get("g_response_transform") == "expit":
            return _expit(col)
        return col

    def design(self) -> np.ndarray:
        """Adjustment-regression design: g columns then h columns."""
        return np.hstack([self.g, self.h])


def empty_stats(n: int) -> SufficientStats:
    return SufficientStats(np.empty((n, 0)), np.empty((n, 0)))


@dataclass(frozen=True)
class Transform:
    """Exposure transform applied before resampling.

    ``identity`` passes the exposure through (binary families);
    ``residual_linear`` / ``residual_model`` subtract a fitted mean so
    the result is residual-like and needs no h.
    """

    kind: str  # "identity" | "residual_linear" | "residual_model"
    model: Optional[Any] = None

    def __post_init__(self):
        if self.kind not in ("identity", "residual_linear", "residual_model"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind != "identity" and self.model is None:
            raise ValueError(f"{self.kind} requires a fitted mean model")

    def apply(self, x: np.ndarray, Z: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return np.asarray(x, dtype=float)
        return np.asarray(x, dtype=float) - predict(self.model, Z)


# ------------------------------------------------------------------ #
# Exposure model
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class FittedXModel:
    """A sampleable conditional law of the exposure given Z.

    ``sigma2`` is the residual variance used for gaussian sampling; it
    can be re-estimated later (see :meth:`with_sigma2`) without
    refitting.  Binary families ignore it.
    """

    family: str
    fit: Any  # LinearFit | ForestFit
    sigma2: Optional[float] = None
    eps_clip: float = 1e-6

    def __post_init__(self):
        if self.family not in X_FAMILIES:
            raise ValueError(f"unknown exposure family {self.family!r}")

    @property
    def is_binary(self) -> bool:
        return self.family in ("logistic", "forest_binary")

    def mean(self, Z: np.ndarray) -> np.ndarray:
        """Conditional mean of the exposure (probability for binary)."""
        if self.family == "logistic":
            return _expit(self.fit.linear_predictor(Z))
        return predict(self.fit, Z)

    def prob(self, Z: np.ndarray) -> np.ndarray:
        if not self.is_binary:
            raise ValueError("prob() is only defined for binary families")
        return np.clip(self.mean(Z), self.eps_clip, 1.0 - self.eps_clip)

    def transform(self) -> Transform:
        if self.is_binary:
            return Transform("identity")
        kind = "residual_linear" if isinstance(self.fit, LinearFit) else "residual_model"
        return Transform(kind, self.fit)

    def h_columns(self, Z: np.ndarray) -> np.ndarray:
        """h(Z): empty for residual-transformed families, the fitted link
        (lasso) or probability (forest) for binary families."""
        n = Z.shape[0]
        if not self.is_binary:
            return np.empty((n, 0))
        if self.family == "logistic":
            return self.fit.linear_predictor(Z)[:, None]
        return predict(self.fit, Z)[:, None]

    def with_sigma2(self, sigma2: float) -> "FittedXModel":
        return replace(self, sigma2=float(sigma2))

    def sample(self, Z: np.ndarray, M: int, rng: RngHandle) -> np.ndarray:
        """M independent exposure draws as one (M, n) matrix.

        Rows are i.i.d.; the whole matrix comes from a single derived
        generator, which keeps the per-resample cost at vectorized speed
        even for very large M.
        """
        n = Z.shape[0]
        gen = rng.generator()
        if self.is_binary:
            prob = self.prob(Z)
            return (gen.random((M, n)) < prob).astype(float)
        if self.sigma2 is None:
            raise ValueError("gaussian exposure model has no sigma2")
        mu = self.mean(Z)
        return mu + np.sqrt(self.sigma2) * gen.standard_normal((M, n))

    def log_density_matrix(self, x: np.ndarray, Z: np.ndarray) -> np.ndarray:
        """L[i, j] = log density of value x[j] at row i (up to constants)."""
        x = np.asarray(x, dtype=float)
        if self.is_binary:
            prob = self.prob(Z)
            logp, log1p = np.log(prob), np.log1p(-prob)
            return np.outer(logp, np.ones_like(x)) * x + np.outer(log1p, np.ones_like(x)) * (1 - x)
        if self.sigma2 is None:
            raise ValueError("gaussian exposure model has no sigma2")
        mu = self.mean(Z)
        return -((x[None, :] - mu[:, None]) ** 2) / (2.0 * self.sigma2)


def fit_x_model(
    unlab: UnlabeledData,
    family: str,
    rng: RngHandle,
    forest_config: Optional[ForestConfig] = None,
    selection: Optional[LambdaSelection] = None,
) -> FittedXModel:
    """Learn the exposure model on unlabeled (x, Z) samples."""
    if family not in X_FAMILIES:
        raise ValueError(f"unknown exposure family {family!r}")
    if family == "gaussian_linear":
        fit = fit_lasso(unlab.Z, unlab.x, family="gaussian", selection=selection, rng=rng)
        resid = unlab.x - predict(fit, unlab.Z)
        return FittedXModel(family, fit, sigma2=float(np.mean(resid**2)))
    if family == "logistic":
        fit = fit_lasso(unlab.Z, unlab.x, family="logistic", selection=selection, rng=rng)
        return FittedXModel(family, fit)
    cfg = forest_config or ForestConfig()
    if family == "forest_gaussian":
        fit = fit_forest(unlab.Z, unlab.x, task="regression", config=cfg, rng=rng)
        resid = unlab.x - predict(fit, unlab.Z)
        return FittedXModel(family, fit, sigma2=float(np.mean(resid**2)))
    fit = fit_forest(unlab.Z, unlab.x, task="classification", config=cfg, rng=rng)
    return FittedXModel(family, fit)


def build_h_and_transform(
    unlab: UnlabeledData,
    family: str,
    rng: RngHandle,
    forest_config: Optional[ForestConfig] = None,
) -> tuple[SufficientStats, Transform, FittedXModel]:
    """One-shot form: h evaluated on the training rows, plus the transform
    and the exposure model for reuse on other datasets."""
    model = fit_x_model(unlab, family, rng, forest_config=forest_config)
    h = model.h_columns(unlab.Z)
    stats = SufficientStats(np.empty((unlab.n, 0)), h, {"x_family": family})
    return stats, model.transform(), model


# ------------------------------------------------------------------ #
# Response summary g
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class GModel:
    """Fitted response summary, evaluable on any covariate matrix."""

    fit: Any  # LinearFit | ForestFit
    top_k: tuple[int, ...]
    learner: str  # "lasso" | "forest" | "surrogate_lasso" | "surrogate_forest"
    response_transform: str  # "identity" | "expit"

    def evaluate(self, Z: np.ndarray) -> SufficientStats:
        Z = np.asarray(Z, dtype=float)
        if isinstance(self.fit, LinearFit):
            lead = self.fit.linear_predictor(Z)
        else:
            lead = predict(self.fit, Z)
        g = np.column_stack([lead, Z[:, list(self.top_k)]]) if self.top_k else lead[:, None]
        return SufficientStats(
            g,
            np.empty((Z.shape[0], 0)),
            {
                "g_learner": self.learner,
                "g_top_k": self.top_k,
                "g_response_transform": self.response_transform,
            },
        )


def fit_g_model(
    train_y: np.ndarray,
    train_Z: np.ndarray,
    k: int,
    rng: RngHandle,
    learner: str = "lasso",
    family: str = "auto",
    forest_config: Optional[ForestConfig] = None,
    selection: Optional[LambdaSelection] = None,
) -> GModel:
    """Fit the response summary: a lasso link or forest prediction plus the
    indices of the k most important covariates."""
    train_y = np.asarray(train_y, dtype=float)
    train_Z = np.asarray(train_Z, dtype=float)
    p = train_Z.shape[1]
    if not 1 <= k <= p:
        raise ValueError(f"k must be in [1, {p}], got {k}")
    binary = bool(np.all((train_y == 0) | (train_y == 1)))
    if family == "auto":
        family = "logistic" if binary else "gaussian"

    if learner in ("lasso", "surrogate_lasso"):
        fit = fit_lasso(train_Z, train_y, family=family, selection=selection, rng=rng)
        transform = "expit" if family == "logistic" else "identity"
    elif learner in ("forest", "surrogate_forest"):
        task = "classification" if family == "logistic" else "regression"
        cfg = forest_config or ForestConfig()
        fit = fit_forest(train_Z, train_y, task=task, config=cfg, rng=rng)
        transform = "identity"
    else:
        raise ValueError(f"unknown g learner {learner!r}")
    return GModel(fit, tuple(top_k_features(fit, k)), learner, transform)


def build_g_lasso(
    train_y: np.ndarray,
    train_Z: np.ndarray,
    eval_Z: np.ndarray,
    k: int,
    rng: RngHandle,
    family: str = "auto",
) -> SufficientStats:
    """g = [fitted lasso link, top-k raw columns], evaluated on eval_Z."""
    return fit_g_model(train_y, train_Z, k, rng, learner="lasso", family=family).evaluate(eval_Z)


def build_g_forest(
    train_y: np.ndarray,
    train_Z: np.ndarray,
    eval_Z: np.ndarray,
    k: int,
    rng: RngHandle,
    family: str = "auto",
    forest_config: Optional[ForestConfig] = None,
) -> SufficientStats:
    """g = [forest prediction, top-k columns by impurity importance]."""
    return fit_g_model(
        train_y, train_Z, k, rng, learner="forest", family=family, forest_config=forest_config
    ).evaluate(eval_Z)


def build_g_surrogate(
    surr: SurrogateData,
    eval_Z: np.ndarray,
    k: int,
    learner: str,
    rng: RngHandle,
    forest_config: Optional[ForestConfig] = None,
) -> SufficientStats:
    """g learned from the surrogate label instead of the response.

    Continuous surrogates use a gaussian lasso (the linear index of a
    single-index model) or a regression forest; binary surrogates take
    the logistic/classification route.
    """
    if learner not in ("lasso", "forest", "surrogate_lasso", "surrogate_forest"):
        raise ValueError(f"unknown surrogate g learner {learner!r}")
    base = "lasso" if "lasso" in learner else "forest"
    model = fit_g_model(
        surr.s, surr.Z, k, rng, learner=f"surrogate_{base}", forest_config=forest_config
    )
    stats = model.evaluate(eval_Z)
    prov = dict(stats.provenance)
    prov["surrogate_provenance"] = surr.provenance
    return SufficientStats(stats.g, stats.h, prov)


# ------------------------------------------------------------------ #
# Adjusted resampling distribution
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class MaxwayDistribution:
    """Fitted conditional law of the (transformed) exposure given (g, h)."""

    kind: str  # "gaussian" | "bernoulli"
    model: Any  # mean model (gaussian) or probability model (bernoulli)
    sigma2: Optional[float] = None
    eps_clip: float = 1e-6
    h_role: str = "predictor"  # bernoulli only: "predictor" | "offset"
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("gaussian", "bernoulli"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "gaussian" and (self.sigma2 is None or self.sigma2 <= 0):
            raise ValueError("gaussian kind requires sigma2 > 0")
        if self.h_role not in ("predictor", "offset"):
            raise ValueError(f"unknown h_role {self.h_role!r}")

    def mean_for(self, stats: SufficientStats) -> np.ndarray:
        if self.kind != "gaussian":
            raise ValueError("mean_for is gaussian-only")
        return predict(self.model, stats.design())

    def prob_for(self, stats: SufficientStats) -> np.ndarray:
        if self.kind != "bernoulli":
            raise ValueError("prob_for is bernoulli-only")
        if self.h_role == "offset":
            eta = self.model.linear_predictor(stats.g) + stats.h[:, 0]
            prob = _expit(eta)
        else:
            prob = predict(self.model, stats.design())
        return np.clip(prob, self.eps_clip, 1.0 - self.eps_clip)


def fit_maxway(
    r_or_x: np.ndarray,
    stats: SufficientStats,
    family: str,
    rng: Optional[RngHandle] = None,
    variance_data: Optional[tuple[np.ndarray, SufficientStats]] = None,
    h_role: str = "predictor",
    eps_clip: float = 1e-6,
    sigma2_floor: float = 1e-8,
    forest_config: Optional[ForestConfig] = None,
) -> MaxwayDistribution:
    """Learn the adjustment distribution from training rows.

    ``family`` is one of gaussian_ols / gaussian_forest /
    bernoulli_logistic / bernoulli_forest.  For gaussian kinds,
    ``variance_data = (r_eval, stats_eval)`` re-estimates the noise
    variance on held-out (typically labeled testing) rows; omitted, the
    training residuals are used.
    """
    r_or_x = np.asarray(r_or_x, dtype=float)
    if r_or_x.shape[0] != stats.n:
        raise ValueError("response and summary row counts differ")
    design = stats.design()
    flags: tuple[str, ...] = ()

    if family in ("gaussian_ols", "gaussian_forest"):
        if family == "gaussian_ols":
            if design.shape[1] == 0:
                model = fit_ols(np.empty((stats.n, 0)), r_or_x, intercept=True)
            else:
                model = _ols_drop_collinear(design, r_or_x)
        else:
            cfg = forest_config or ForestConfig()
            model = fit_forest(design, r_or_x, task="regression", config=cfg,
                               rng=rng or RngHandle(0))
        if variance_data is not None:
            r_eval, stats_eval = variance_data
            resid = np.asarray(r_eval, dtype=float) - predict(model, stats_eval.design())
        else:
            resid = r_or_x - predict(model, design)
        sigma2 = float(np.mean(resid**2))
        if sigma2 < sigma2_floor:
            sigma2 = sigma2_floor
            flags += ("VarianceFloorHit",)
        return MaxwayDistribution("gaussian", model, sigma2=sigma2,
                                  eps_clip=eps_clip, flags=flags)

    if family == "bernoulli_logistic":
        if not np.all((r_or_x == 0) | (r_or_x == 1)):
            raise ValueError("bernoulli adjustment requires a 0/1 exposure")
        if h_role == "offset":
            if stats.h.shape[1] != 1:
                raise ValueError("offset role requires exactly one h column")
            model = fit_logistic_lowdim(stats.g, r_or_x, offset=stats.h[:, 0])
        else:
            model = fit_logistic_lowdim(design, r_or_x)
        flags += tuple(f for f in model.flags if f == "separation")
        return MaxwayDistribution("bernoulli", model, eps_clip=eps_clip,
                                  h_role=h_role, flags=flags)

    if family == "bernoulli_forest":
        if h_role == "offset":
            raise ValueError("offset role is undefined for forest probability models")
        cfg = forest_config or ForestConfig()
        model = fit_forest(design, r_or_x, task="classification", config=cfg,
                           rng=rng or RngHandle(0))
        return MaxwayDistribution("bernoulli", model, eps_clip=eps_clip, flags=flags)

    raise ValueError(f"unknown adjustment family {family!r}")


def _ols_drop_collinear(design: np.ndarray, y: np.ndarray) -> LinearFit:
    """OLS that tolerates duplicate/constant summary columns.

    Collinear columns can legitimately appear (e.g. h equal to a g
    column); they are projected out by ridge-free pruning: keep the
    first of each dependent group, refit, and report zero coefficients
    for the pruned ones.
    """
    from .learners import RankDeficient

    try:
        return fit_ols(design, y, intercept=True)
    except RankDeficient:
        pass
    keep: list[int] = []
    A = np.ones((design.shape[0], 1))
    for j in range(design.shape[1]):
        cand = np.column_stack([A, design[:, j]])
        if np.linalg.matrix_rank(cand) > A.shape[1]:
            keep.append(j)
            A = cand
    sub = fit_ols(design[:, keep], y, intercept=True)
    coef = np.zeros(design.shape[1])
    coef[keep] = sub.coef
    return LinearFit(
        intercept=sub.intercept,
        coef=coef,
        family="gaussian",
        lam=0.0,
        sigma2=sub.sigma2,
        flags=sub.flags + ("dropped_collinear_columns",),
    )


def sample_maxway(
    dist: MaxwayDistribution,
    stats: SufficientStats,
    M: int,
    rng: RngHandle,
) -> np.ndarray:
    """M independent resamples of length n; draw m uses stream path [m].

    Coordinates are independent given their (g, h) rows, so the whole
    draw is one vectorized generator call per m.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    n = stats.n
    out = np.empty((M, n))
    if dist.kind == "gaussian":
        mu = dist.mean_for(stats)
        sd = float(np.sqrt(dist.sigma2))
        for m in range(M):
            out[m] = mu + sd * rng.derive(m).generator().standard_normal(n)
    else:
        prob = dist.prob_for(stats)
        for m in range(M):
            out[m] = (rng.derive(m).generator().random(n) < prob).astype(float)
    return out
