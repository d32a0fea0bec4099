"""Synthetic data generators for the three benchmark configurations.

All three share the template: gaussian covariates with AR(1) correlation,
an exposure driven by a few leading covariates plus an
``eta``-controlled set of non-overlapping extras, and a response built
the same way from a disjoint extra set, plus ``gamma`` times an effect
term h(X, Z).  ``gamma = 0`` makes the conditional-independence null
hold by construction, which the validity test suites rely on.

* Config I  — gaussian linear exposure and response.
* Config II — Bernoulli exposure through a logistic link, response as I.
* Config III — p = 40, indicator-based nonlinear exposure and response.

The ``truth`` record carries the exact draws (signs, extra index sets,
coefficient vectors) plus the latent response of the unlabeled rows, so
tests can rebuild exact conditional laws and surrogate labels can be
generated afterwards.

Covariates are drawn through the Cholesky factor of the AR(1)
covariance; for AR(1) that factor coincides with the coefficient map of
the sequential sampler Z_j = rho Z_{j-1} + sqrt(1 - rho^2) e_j, which
the tests exploit as an exact equivalence check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .data import LabeledData, RngHandle, SurrogateData, UnlabeledData, as_handle

__all__ = [
    "BadP",
    "SimConfig",
    "Truth",
    "GeneratedBatch",
    "SurrogateSpec",
    "ar1_cholesky",
    "ar1_sequential",
    "generate",
    "gen_config1",
    "gen_config2",
    "gen_config3",
    "gen_surrogate",
]


class BadP(ValueError):
    """Covariate dimension incompatible with the requested configuration."""


@dataclass(frozen=True)
class SimConfig:
    """One scenario: which configuration, sizes, overlap and effect knobs."""

    config: str  # "I" | "II" | "III"
    p: int
    n: int = 250
    N: int = 1000
    eta: float = 0.0
    gamma: float = 0.0
    h_form: str = "linear"  # linear | linear_plus_interaction | config3_nonlinear
    holdout_n: int = 0
    seed: Union[int, RngHandle] = 0
    # when set, the signs and extra index sets come from this fixed seed
    # instead of `seed`, so a sweep shares one truth across replications
    structure_seed: Optional[int] = None

    def __post_init__(self):
        if self.config not in ("I", "II", "III"):
            raise ValueError(f"unknown configuration {self.config!r}")
        if self.config == "III":
            if self.p != 40:
                raise BadP("configuration III is defined for p = 40")
            if self.h_form not in ("linear", "config3_nonlinear"):
                raise ValueError("configuration III uses the nonlinear effect form")
            object.__setattr__(self, "h_form", "config3_nonlinear")
        else:
            if self.h_form not in ("linear", "linear_plus_interaction"):
                raise ValueError(f"unknown h_form {self.h_form!r} for config {self.config}")
        if self.n < 2 or self.N < 2:
            raise ValueError("n and N must be at least 2")


@dataclass(frozen=True)
class Truth:
    """Exact generating mechanism of one batch."""

    config: str
    ar_rho: float
    nu: np.ndarray  # +/-1 signs, full length p
    I1: tuple[int, ...]  # 0-based extra-exposure indices
    I2: tuple[int, ...]  # 0-based extra-response indices
    x_coef: np.ndarray  # exposure linear coefficients (configs I/II)
    y_coef: np.ndarray  # response linear coefficients (configs I/II)
    eta: float
    gamma: float
    h_form: str
    unlabeled_latent_y: np.ndarray = field(compare=False, default=None)

    def mean_x(self, Z: np.ndarray) -> np.ndarray:
        """Conditional mean of the exposure (probability for config II)."""
        Z = np.asarray(Z, dtype=float)
        if self.config == "III":
            return _config3_x_signal(Z)
        eta_x = Z @ self.x_coef
        if self.config == "II":
            return 1.0 / (1.0 + np.exp(-eta_x))
        return eta_x

    def x_logit(self, Z: np.ndarray) -> np.ndarray:
        if self.config != "II":
            raise ValueError("logits are only defined for configuration II")
        return np.asarray(Z, dtype=float) @ self.x_coef

    def mean_y_null(self, Z: np.ndarray) -> np.ndarray:
        """Conditional mean of the response with the effect switched off."""
        Z = np.asarray(Z, dtype=float)
        if self.config == "III":
            return _config3_y_signal(Z)
        return Z @ self.y_coef

    def effect(self, x: np.ndarray, Z: np.ndarray) -> np.ndarray:
        return _h_effect(self.h_form, np.asarray(x, dtype=float), np.asarray(Z, dtype=float))


@dataclass(frozen=True)
class GeneratedBatch:
    labeled: LabeledData
    unlabeled: UnlabeledData
    truth: Truth
    holdout: Optional[LabeledData] = None

    @property
    def p(self) -> int:
        return self.labeled.p


# ------------------------------------------------------------------ #
# Covariate draws
# ------------------------------------------------------------------ #


def ar1_cholesky(p: int, rho: float) -> np.ndarray:
    """Lower Cholesky factor of the AR(1) correlation matrix."""
    sigma = rho ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    return np.linalg.cholesky(sigma)


def ar1_sequential(eps: np.ndarray, rho: float) -> np.ndarray:
    """Sequential AR(1) map of i.i.d. standard normals; equals eps @ L.T."""
    Z = np.empty_like(eps)
    Z[:, 0] = eps[:, 0]
    scale = np.sqrt(1.0 - rho * rho)
    for j in range(1, eps.shape[1]):
        Z[:, j] = rho * Z[:, j - 1] + scale * eps[:, j]
    return Z


def _h_effect(h_form: str, x: np.ndarray, Z: np.ndarray) -> np.ndarray:
    if h_form == "linear":
        return x
    if h_form == "linear_plus_interaction":
        return x + x * Z[:, :5].sum(axis=1)
    if h_form == "config3_nonlinear":
        i1 = (Z[:, 0] > 0).astype(float)
        i2 = (Z[:, 1] > 0.5).astype(float)
        return (0.5 * x**2 + np.sin(np.pi * (x - 1) / 4)) * (i1 + i2)
    raise ValueError(f"unknown h_form {h_form!r}")


def _config3_indicators(Z: np.ndarray) -> dict[int, np.ndarray]:
    ind = {j: (Z[:, j - 1] > 0).astype(float) for j in range(5, 41)}
    ind[1] = (Z[:, 0] > 0).astype(float)
    ind[2] = (Z[:, 1] > 0.5).astype(float)
    ind[3] = (Z[:, 2] > -0.5).astype(float)
    ind[4] = (np.abs(Z[:, 3]) > 1).astype(float)
    return ind


def _config3_x_signal(Z: np.ndarray) -> np.ndarray:
    I = _config3_indicators(Z)
    return (
        0.5 * (I[1] + I[3])
        + 0.4 * (I[2] + I[4] + I[1] * I[4] + I[2] * I[3])
        + 0.15 * (I[21] + I[22] + I[23] + I[24] + I[21] * I[22] + I[23] * I[24])
    )


def _config3_y_signal(Z: np.ndarray) -> np.ndarray:
    I = _config3_indicators(Z)
    return (
        0.5 * (I[1] + I[4] + I[1] * I[4] + I[2] * I[3])
        + 0.4 * (I[2] + I[3])
        + 0.15 * (I[31] + I[32] + I[33] + I[34] + I[31] * I[32] + I[33] * I[34])
    )


# ------------------------------------------------------------------ #
# Batch generation
# ------------------------------------------------------------------ #

_EXTRA_SET_SIZE = 25  # shrinks automatically when p leaves less room


def _draw_structure(cfg: SimConfig, rng: RngHandle):
    """Index sets and signs shared by every part of the batch."""
    p = cfg.p
    pool = np.arange(5, p)  # 0-based indices of Z_6 .. Z_p
    size = min(_EXTRA_SET_SIZE, pool.size // 2)
    if size < 1:
        raise BadP(f"p = {p} leaves no room for the extra index sets")
    gen = rng.generator()
    picked = gen.choice(pool, size=2 * size, replace=False)
    I1 = tuple(int(j) for j in np.sort(picked[:size]))
    I2 = tuple(int(j) for j in np.sort(picked[size:]))
    nu = gen.choice(np.array([-1.0, 1.0]), size=p)
    x_coef = np.zeros(p)
    y_coef = np.zeros(p)
    x_coef[:5] = 0.3 * nu[:5]
    y_coef[:5] = 0.3 * nu[:5]
    x_coef[list(I1)] += cfg.eta * nu[list(I1)]
    y_coef[list(I2)] += cfg.eta * nu[list(I2)]
    return nu, I1, I2, x_coef, y_coef


def _gen_linear_parts(cfg: SimConfig, truth_coefs, chol, rng: RngHandle, m: int,
                      binary_x: bool):
    """One dataset part for configs I/II: returns (Z, x, y)."""
    x_coef, y_coef = truth_coefs
    gen = rng.generator()
    Z = gen.standard_normal((m, cfg.p)) @ chol.T
    if binary_x:
        prob = 1.0 / (1.0 + np.exp(-(Z @ x_coef)))
        x = (gen.random(m) < prob).astype(float)
    else:
        x = Z @ x_coef + gen.standard_normal(m)
    y = cfg.gamma * _h_effect(cfg.h_form, x, Z) + Z @ y_coef + gen.standard_normal(m)
    return Z, x, y


def _structure_rng(cfg: SimConfig, rng: RngHandle) -> RngHandle:
    if cfg.structure_seed is not None:
        return RngHandle(cfg.structure_seed).derive(0)
    return rng.derive(0)


def _gen_config12(cfg: SimConfig, binary_x: bool) -> GeneratedBatch:
    if cfg.p < 7:
        raise BadP(f"configurations I/II need p >= 7, got {cfg.p}")
    rng = as_handle(cfg.seed)
    nu, I1, I2, x_coef, y_coef = _draw_structure(cfg, _structure_rng(cfg, rng))
    chol = ar1_cholesky(cfg.p, 0.5)
    coefs = (x_coef, y_coef)

    Z, x, y = _gen_linear_parts(cfg, coefs, chol, rng.derive(1), cfg.n, binary_x)
    labeled = LabeledData(y, x, Z, binary_x=binary_x)
    Zu, xu, yu = _gen_linear_parts(cfg, coefs, chol, rng.derive(2), cfg.N, binary_x)
    unlabeled = UnlabeledData(xu, Zu, binary_x=binary_x)
    holdout = None
    if cfg.holdout_n > 0:
        Zh, xh, yh = _gen_linear_parts(cfg, coefs, chol, rng.derive(3), cfg.holdout_n, binary_x)
        holdout = LabeledData(yh, xh, Zh, binary_x=binary_x)

    truth = Truth(
        config="II" if binary_x else "I",
        ar_rho=0.5,
        nu=nu,
        I1=I1,
        I2=I2,
        x_coef=x_coef,
        y_coef=y_coef,
        eta=cfg.eta,
        gamma=cfg.gamma,
        h_form=cfg.h_form,
        unlabeled_latent_y=yu,
    )
    return GeneratedBatch(labeled, unlabeled, truth, holdout)


def gen_config1(cfg: SimConfig) -> GeneratedBatch:
    """Gaussian linear exposure and response over AR(0.5) covariates."""
    if cfg.config != "I":
        raise ValueError("gen_config1 requires cfg.config == 'I'")
    return _gen_config12(cfg, binary_x=False)


def gen_config2(cfg: SimConfig) -> GeneratedBatch:
    """Bernoulli exposure through a logistic link; response as config I."""
    if cfg.config != "II":
        raise ValueError("gen_config2 requires cfg.config == 'II'")
    return _gen_config12(cfg, binary_x=True)


def _gen_config3_part(cfg: SimConfig, chol, rng: RngHandle, m: int):
    gen = rng.generator()
    Z = gen.standard_normal((m, cfg.p)) @ chol.T
    x = _config3_x_signal(Z) + gen.standard_normal(m)
    y = (
        cfg.gamma * _h_effect("config3_nonlinear", x, Z)
        + _config3_y_signal(Z)
        + gen.standard_normal(m)
    )
    return Z, x, y


def gen_config3(cfg: SimConfig) -> GeneratedBatch:
    """Nonlinear indicator-driven exposure and response, p = 40, AR(0.2)."""
    if cfg.config != "III":
        raise ValueError("gen_config3 requires cfg.config == 'III'")
    rng = as_handle(cfg.seed)
    nu, I1, I2, _, _ = _draw_structure(cfg, _structure_rng(cfg, rng))
    chol = ar1_cholesky(cfg.p, 0.2)

    Z, x, y = _gen_config3_part(cfg, chol, rng.derive(1), cfg.n)
    labeled = LabeledData(y, x, Z)
    Zu, xu, yu = _gen_config3_part(cfg, chol, rng.derive(2), cfg.N)
    unlabeled = UnlabeledData(xu, Zu)
    holdout = None
    if cfg.holdout_n > 0:
        Zh, xh, yh = _gen_config3_part(cfg, chol, rng.derive(3), cfg.holdout_n)
        holdout = LabeledData(yh, xh, Zh)

    truth = Truth(
        config="III",
        ar_rho=0.2,
        nu=nu,
        I1=I1,
        I2=I2,
        x_coef=np.zeros(cfg.p),
        y_coef=np.zeros(cfg.p),
        eta=cfg.eta,
        gamma=cfg.gamma,
        h_form="config3_nonlinear",
        unlabeled_latent_y=yu,
    )
    return GeneratedBatch(labeled, unlabeled, truth, holdout)


def generate(cfg: SimConfig) -> GeneratedBatch:
    """Dispatch on cfg.config."""
    if cfg.config == "I":
        return gen_config1(cfg)
    if cfg.config == "II":
        return gen_config2(cfg)
    return gen_config3(cfg)


# ------------------------------------------------------------------ #
# Surrogate labels
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class SurrogateSpec:
    """How to manufacture a surrogate from the latent unlabeled response.

    kinds: ``noisy_copy(param=sd)`` adds gaussian noise (satisfies the
    S-given-Y working assumption); ``threshold_count(param=rate_ratio)``
    draws Poisson counts whose rate depends on the response only through
    its sign; ``imperfect(param=leak_coef)`` leaks the first covariate
    into the surrogate, deliberately violating the assumption.
    """

    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in ("noisy_copy", "threshold_count", "imperfect"):
            raise ValueError(f"unknown surrogate kind {self.kind!r}")

    @property
    def violates_assumption(self) -> bool:
        return self.kind == "imperfect"

    @property
    def provenance(self) -> str:
        return f"{self.kind}({self.param:g})"


def gen_surrogate(batch: GeneratedBatch, spec: SurrogateSpec, rng: RngHandle) -> SurrogateData:
    """Attach a surrogate label to the batch's unlabeled rows."""
    y_latent = batch.truth.unlabeled_latent_y
    if y_latent is None:
        raise ValueError("batch carries no latent response for its unlabeled rows")
    gen = rng.generator()
    n = y_latent.shape[0]
    if spec.kind == "noisy_copy":
        s = y_latent + spec.param * gen.standard_normal(n)
    elif spec.kind == "threshold_count":
        rate = np.where(y_latent > 0, spec.param, 1.0)
        s = gen.poisson(rate).astype(float)
    else:  # imperfect
        s = y_latent + spec.param * batch.unlabeled.Z[:, 0] + 0.5 * gen.standard_normal(n)
    return SurrogateData(
        s,
        batch.unlabeled.x,
        batch.unlabeled.Z,
        binary_x=batch.unlabeled.binary_x,
        provenance=spec.provenance,
    )
