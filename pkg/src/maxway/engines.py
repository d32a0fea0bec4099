"""Randomization-test engines and their exact p-value arithmetic.

Every engine follows the same skeleton: learn nothing inside the
resampling loop, evaluate one statistic on the observed exposure and on
M exchangeable resamples, and report

    p = (1 + #{m : T_m >= T_obs}) / (M + 1)

as an exact rational.  Ties count toward the sum, exactly as written.

Engines differ only in where the resamples come from:

* ``run_modelx_crt``   — the fitted law of the exposure given Z.
* ``run_maxway_core``  — the fitted law of the (transformed) exposure
  given the low-dimensional summaries (g, h); the heart of the method.
* ``run_maxway_out`` / ``run_maxway_in`` — full pipelines that learn g
  on holdout labels or in-sample, the exposure model on unlabeled data,
  and the adjustment on unlabeled data.
* ``run_sassl_maxway`` — g learned from a surrogate label on the
  unlabeled side.
* ``run_cpt``          — permutations of the observed exposure drawn by
  a hub-and-spokes Metropolis chain over pair swaps.
* ``run_model_xy``     — the max of the two directional p-values after
  swapping the exposure and response roles.

The two ``analytic_pvalue_*`` functions are closed-form infinite-M
p-values for the inner-product and residual-product statistics under a
unit-variance gaussian resampler; they exist as independent oracles for
the finite-M machinery and are cross-checked against it in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
from numba import njit
from scipy.special import ndtr

from .conditioners import (
    FittedXModel,
    GModel,
    MaxwayDistribution,
    SufficientStats,
    Transform,
    default_k,
    empty_stats,
    fit_g_model,
    fit_maxway,
    fit_x_model,
    sample_maxway,
)
from .data import LabeledData, RngHandle, SurrogateData, UnlabeledData
from .learners import ForestConfig
from .stats import StatSpec, make_stat_evaluator

__all__ = [
    "CrtResult",
    "EnginePipeline",
    "ENGINE_KINDS",
    "pvalue_from_stats",
    "run_modelx_crt",
    "run_maxway_core",
    "run_maxway_out",
    "run_maxway_in",
    "run_sassl_maxway",
    "run_cpt",
    "run_model_xy",
    "run_engine",
    "analytic_pvalue_inner_product",
    "analytic_pvalue_d0",
    "ZeroNormError",
]

ENGINE_KINDS = (
    "modelx",
    "maxway_in",
    "maxway_out",
    "transformed_maxway",
    "sassl_maxway",
    "cpt",
    "model_xy",
)


class ZeroNormError(ValueError):
    """The analytic p-value normalizer has zero norm."""


@dataclass(frozen=True, eq=False)
class CrtResult:
    """Outcome of one randomization test.

    ``p_value`` is exact; ``float(p_value)`` (or ``.p``) gives the usual
    numeric form.  ``seed_path`` records the stream the engine consumed
    so any run can be replayed.
    """

    p_value: Fraction
    observed_stat: float
    resampled_stats: np.ndarray
    M: int
    engine: str
    seed_path: tuple
    flags: frozenset = frozenset()
    extras: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        arr = np.array(self.resampled_stats, dtype=float, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "resampled_stats", arr)
        if arr.shape != (self.M,):
            raise ValueError(f"expected {self.M} resampled stats, got {arr.shape}")
        expect = pvalue_from_stats(self.observed_stat, arr)
        if expect != self.p_value:
            raise ValueError("p_value does not match the resampled statistics")

    @property
    def p(self) -> float:
        return float(self.p_value)


def pvalue_from_stats(observed: float, resampled: np.ndarray) -> Fraction:
    """(1 + #{m : T_m >= T_obs}) / (M + 1), ties counting."""
    resampled = np.asarray(resampled, dtype=float)
    if resampled.size == 0:
        raise ValueError("need at least one resampled statistic")
    count = int(np.sum(resampled >= observed))
    return Fraction(1 + count, resampled.size + 1)


@dataclass(frozen=True)
class EnginePipeline:
    """Everything an engine run needs besides the data and the stream.

    ``x_family`` names the exposure law (gaussian_linear, logistic,
    forest_gaussian, forest_binary); ``g_learner`` picks how the
    response summary is learned.  ``k=None`` means ceil(2 ln p).
    ``x_model_override`` injects a fixed exposure model (oracles,
    robustness experiments) in place of fitting one.
    """

    engine: str = "maxway_in"
    x_family: str = "gaussian_linear"
    g_learner: str = "lasso"
    stat: StatSpec = field(default_factory=StatSpec)
    k: Optional[int] = None
    M: int = 1000
    variance_source: str = "labeled_test"  # or "unlabeled"
    h_role: str = "predictor"
    eps_clip: float = 1e-6
    sigma2_floor: float = 1e-8
    log_base: str = "natural"
    cpt_steps: Optional[int] = None  # default 50 * n
    g_forest_config: Optional[ForestConfig] = None
    x_forest_config: Optional[ForestConfig] = None
    adj_forest_config: Optional[ForestConfig] = None
    x_model_override: Optional[FittedXModel] = None
    name: Optional[str] = None

    def __post_init__(self):
        if self.engine not in ENGINE_KINDS:
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be >= 1")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.variance_source not in ("labeled_test", "unlabeled"):
            raise ValueError(f"unknown variance_source {self.variance_source!r}")

    @property
    def label(self) -> str:
        return self.name or self.engine

    def resolve_k(self, p: int) -> int:
        return self.k if self.k is not None else default_k(p, self.log_base)


# ------------------------------------------------------------------ #
# Shared plumbing
# ------------------------------------------------------------------ #


def _x_to_eps(x_model: Optional[FittedXModel], stats: SufficientStats,
              in_transformed_space: bool, Z: Optional[np.ndarray] = None):
    """Residualizer handed to the statistics.

    In transformed space (resamples already residual-like) the gaussian
    families are pass-through; binary families subtract the fitted
    probability, which lives in the single h column (link scale for the
    logistic family).  Outside transformed space (model-X / CPT draws of
    the raw exposure) the fitted conditional mean is subtracted.
    """
    if x_model is None:
        return lambda v: v
    if in_transformed_space:
        if not x_model.is_binary:
            return lambda v: v
        if stats.h.shape[1] == 0:
            raise ValueError("binary family needs an h column for residuals")
        h0 = stats.h[:, 0]
        if x_model.family == "logistic":
            prob = 1.0 / (1.0 + np.exp(-np.clip(h0, -35, 35)))
        else:
            prob = h0
        return lambda v: v - prob
    mu = x_model.prob(Z) if x_model.is_binary else x_model.mean(Z)
    return lambda v: v - mu


def _score_all(evaluate: Callable[[np.ndarray], float],
               observed_vec: np.ndarray, draws: np.ndarray):
    observed = evaluate(observed_vec)
    resampled = np.array([evaluate(draws[m]) for m in range(draws.shape[0])])
    return observed, resampled


def _result(engine, observed, resampled, rng, flags, extras=None) -> CrtResult:
    return CrtResult(
        p_value=pvalue_from_stats(observed, resampled),
        observed_stat=float(observed),
        resampled_stats=resampled,
        M=int(resampled.size),
        engine=engine,
        seed_path=(rng.master_seed, rng.stream_path),
        flags=frozenset(flags),
        extras=extras or {},
    )


# ------------------------------------------------------------------ #
# Core engines
# ------------------------------------------------------------------ #


def run_modelx_crt(
    data: LabeledData,
    x_model: FittedXModel,
    stat: StatSpec,
    M: int,
    rng: RngHandle,
    stats: Optional[SufficientStats] = None,
) -> CrtResult:
    """Resample the exposure from its fitted law given Z.

    ``stats`` supplies the summary columns the statistic may need (the
    response model enters only through them).
    """
    if stats is None:
        stats = empty_stats(data.n)
    flags: set = set()
    evaluate = make_stat_evaluator(
        stat, data.y, stats,
        _x_to_eps(x_model, stats, in_transformed_space=False, Z=data.Z),
        rng.derive(1), flags,
    )
    draws = x_model.sample(data.Z, M, rng.derive(0))
    observed, resampled = _score_all(evaluate, data.x, draws)
    return _result("modelx", observed, resampled, rng, flags)


def run_maxway_core(
    data: LabeledData,
    stats: SufficientStats,
    transform: Transform,
    dist: MaxwayDistribution,
    stat: StatSpec,
    M: int,
    rng: RngHandle,
    x_model: Optional[FittedXModel] = None,
    engine_label: str = "maxway",
) -> CrtResult:
    """Transform the observed exposure, resample from the adjusted law,
    score everything identically."""
    if stats.n != data.n:
        raise ValueError("summary and data row counts differ")
    flags: set = set(dist.flags)
    r_obs = transform.apply(data.x, data.Z)
    if x_model is not None:
        x_to_eps = _x_to_eps(x_model, stats, in_transformed_space=True)
    elif transform.kind != "identity":
        x_to_eps = lambda v: v  # already residual-like
    elif stats.h.shape[1] > 0:
        x_to_eps = lambda v: v - stats.h[:, 0]
    else:
        x_to_eps = lambda v: v
    evaluate = make_stat_evaluator(stat, data.y, stats, x_to_eps, rng.derive(1), flags)
    draws = sample_maxway(dist, stats, M, rng.derive(0))
    observed, resampled = _score_all(evaluate, r_obs, draws)
    return _result(engine_label, observed, resampled, rng, flags)


@dataclass(frozen=True)
class _Learned:
    """Intermediate products of a full pipeline run (exposed for tests)."""

    stats_test: SufficientStats
    transform: Transform
    dist: MaxwayDistribution
    x_model: FittedXModel


def _learn_maxway(
    test: LabeledData,
    g_model: GModel,
    unlab: UnlabeledData,
    pipeline: EnginePipeline,
    rng: RngHandle,
) -> _Learned:
    x_model = pipeline.x_model_override or fit_x_model(
        unlab, pipeline.x_family, rng.derive(1), forest_config=pipeline.x_forest_config
    )
    transform = x_model.transform()

    g_test = g_model.evaluate(test.Z)
    stats_test = g_test.with_h(x_model.h_columns(test.Z), {"x_family": pipeline.x_family})
    g_unlab = g_model.evaluate(unlab.Z)
    stats_unlab = g_unlab.with_h(x_model.h_columns(unlab.Z), {"x_family": pipeline.x_family})

    r_unlab = transform.apply(unlab.x, unlab.Z)
    if pipeline.x_family in ("gaussian_linear", "forest_gaussian"):
        adj_family = "gaussian_ols" if pipeline.x_family == "gaussian_linear" else "gaussian_forest"
        variance_data = None
        if pipeline.variance_source == "labeled_test":
            r_test = transform.apply(test.x, test.Z)
            variance_data = (r_test, stats_test)
        dist = fit_maxway(
            r_unlab, stats_unlab, adj_family, rng.derive(2),
            variance_data=variance_data, eps_clip=pipeline.eps_clip,
            sigma2_floor=pipeline.sigma2_floor,
            forest_config=pipeline.adj_forest_config,
        )
    else:
        adj_family = "bernoulli_logistic" if pipeline.x_family == "logistic" else "bernoulli_forest"
        dist = fit_maxway(
            r_unlab, stats_unlab, adj_family, rng.derive(2),
            h_role=pipeline.h_role, eps_clip=pipeline.eps_clip,
            sigma2_floor=pipeline.sigma2_floor,
            forest_config=pipeline.adj_forest_config,
        )
    return _Learned(stats_test, transform, dist, x_model)


def run_maxway_out(
    test: LabeledData,
    holdout: LabeledData,
    unlab: UnlabeledData,
    pipeline: EnginePipeline,
    rng: RngHandle,
) -> CrtResult:
    """Holdout-trained variant: the response summary is learned on labels
    disjoint from the testing rows (caller's responsibility)."""
    k = pipeline.resolve_k(test.p)
    g_model = fit_g_model(
        holdout.y, holdout.Z, k, rng.derive(0), learner=pipeline.g_learner,
        forest_config=pipeline.g_forest_config,
    )
    learned = _learn_maxway(test, g_model, unlab, pipeline, rng)
    return run_maxway_core(
        test, learned.stats_test, learned.transform, learned.dist,
        pipeline.stat, pipeline.M, rng.derive(3),
        x_model=learned.x_model, engine_label=pipeline.label,
    )


def run_maxway_in(
    test: LabeledData,
    unlab: UnlabeledData,
    pipeline: EnginePipeline,
    rng: RngHandle,
) -> CrtResult:
    """In-sample variant: the response summary is learned on the testing
    labels themselves."""
    k = pipeline.resolve_k(test.p)
    g_model = fit_g_model(
        test.y, test.Z, k, rng.derive(0), learner=pipeline.g_learner,
        forest_config=pipeline.g_forest_config,
    )
    learned = _learn_maxway(test, g_model, unlab, pipeline, rng)
    return run_maxway_core(
        test, learned.stats_test, learned.transform, learned.dist,
        pipeline.stat, pipeline.M, rng.derive(3),
        x_model=learned.x_model, engine_label=pipeline.label,
    )


def run_sassl_maxway(
    test: LabeledData,
    surr: SurrogateData,
    pipeline: EnginePipeline,
    rng: RngHandle,
) -> CrtResult:
    """Surrogate-assisted variant: g comes from regressing the surrogate
    label on Z over the large unlabeled sample; the exposure model and
    adjustment come from that sample's (x, Z)."""
    if surr.p != test.p:
        raise ValueError("surrogate and test covariate dimensions differ")
    k = pipeline.resolve_k(test.p)
    base = "lasso" if "lasso" in pipeline.g_learner else "forest"
    g_model = fit_g_model(
        surr.s, surr.Z, k, rng.derive(0), learner=f"surrogate_{base}",
        forest_config=pipeline.g_forest_config,
    )
    unlab = UnlabeledData(surr.x, surr.Z, binary_x=surr.binary_x)
    learned = _learn_maxway(test, g_model, unlab, pipeline, rng)
    result = run_maxway_core(
        test, learned.stats_test, learned.transform, learned.dist,
        pipeline.stat, pipeline.M, rng.derive(3),
        x_model=learned.x_model, engine_label=pipeline.label,
    )
    if surr.provenance:
        flags = result.flags | {f"surrogate:{surr.provenance}"}
        result = replace(result, flags=flags)
    return result


# ------------------------------------------------------------------ #
# Conditional permutation test
# ------------------------------------------------------------------ #


@njit(cache=True, nogil=True)
def _swap_chain(L, perm, pairs_i, pairs_j, log_u):
    """Metropolis pair-swap chain over value assignments.

    perm[i] is the index of the value currently sitting at row i; a
    proposed swap of rows (i, j) is accepted with odds equal to the
    density ratio of the swapped assignment.  The proposal is symmetric,
    so the chain is reversible with respect to the conditional
    permutation law.
    """
    for s in range(pairs_i.shape[0]):
        i = pairs_i[s]
        j = pairs_j[s]
        if i == j:
            continue
        a = perm[i]
        b = perm[j]
        delta = L[i, b] + L[j, a] - L[i, a] - L[j, b]
        if delta >= 0.0 or log_u[s] <= delta:
            perm[i] = b
            perm[j] = a


def _run_swaps(L: np.ndarray, start: np.ndarray, steps: int, rng: RngHandle) -> np.ndarray:
    n = L.shape[0]
    perm = start.copy()
    if n < 2 or steps < 1:
        return perm
    gen = rng.generator()
    pairs = gen.integers(0, n, size=(steps, 2))
    log_u = np.log(gen.random(steps))
    _swap_chain(L, perm, np.ascontiguousarray(pairs[:, 0]),
                np.ascontiguousarray(pairs[:, 1]), log_u)
    return perm


def run_cpt(
    data: LabeledData,
    x_model: FittedXModel,
    stat: StatSpec,
    M: int,
    rng: RngHandle,
    mcmc_steps: Optional[int] = None,
    stats: Optional[SufficientStats] = None,
) -> CrtResult:
    """Conditional permutation test via a hub-and-spokes sampler.

    One chain runs from the observed assignment to a hub state; M
    independent chains of the same length run forward from the hub.
    Reversibility makes the observed ordering exchangeable with the
    spokes, and every resample preserves the exposure multiset exactly.
    Default chain length is 50 * n proposals.
    """
    n = data.n
    steps = mcmc_steps if mcmc_steps is not None else 50 * n
    if stats is None:
        stats = empty_stats(n)
    flags: set = set()
    evaluate = make_stat_evaluator(
        stat, data.y, stats,
        _x_to_eps(x_model, stats, in_transformed_space=False, Z=data.Z),
        rng.derive(1), flags,
    )
    L = x_model.log_density_matrix(data.x, data.Z)
    hub = _run_swaps(L, np.arange(n, dtype=np.int64), steps, rng.derive(0, 0))
    draws = np.empty((M, n))
    for m in range(M):
        perm = _run_swaps(L, hub, steps, rng.derive(0, 1 + m))
        draws[m] = data.x[perm]
    observed, resampled = _score_all(evaluate, data.x, draws)
    return _result("cpt", observed, resampled, rng, flags)


# ------------------------------------------------------------------ #
# Swapped-role max procedure
# ------------------------------------------------------------------ #


def run_model_xy(
    test: LabeledData,
    unlab_for_x: UnlabeledData,
    unlab_for_y: UnlabeledData,
    pipeline: EnginePipeline,
    rng: RngHandle,
    y_family: Optional[str] = None,
    direction_rngs: Optional[tuple[RngHandle, RngHandle]] = None,
) -> CrtResult:
    """Run the adjusted test in both directions and report the larger
    p-value; both sub-p-values are recorded in ``extras``.

    Direction 2 treats the response as the exposure, so
    ``unlab_for_y`` must hold response draws in its ``x`` slot and
    ``y_family`` describes the response's conditional law (default:
    logistic when the response is 0/1, else the pipeline's family kind).
    """
    if direction_rngs is None:
        direction_rngs = (rng.derive(1), rng.derive(2))
    fwd = replace(pipeline, engine="maxway_in", name=None)
    res1 = run_maxway_in(test, unlab_for_x, fwd, direction_rngs[0])

    if y_family is None:
        y_binary = bool(np.all((test.y == 0) | (test.y == 1)))
        if "forest" in pipeline.x_family:
            y_family = "forest_binary" if y_binary else "forest_gaussian"
        else:
            y_family = "logistic" if y_binary else "gaussian_linear"
    swapped = LabeledData(
        y=test.x, x=test.y, Z=test.Z,
        binary_x=bool(np.all((test.y == 0) | (test.y == 1))),
    )
    bwd = replace(pipeline, engine="maxway_in", x_family=y_family,
                  x_model_override=None, name=None)
    res2 = run_maxway_in(swapped, unlab_for_y, bwd, direction_rngs[1])

    winner = res1 if res1.p_value >= res2.p_value else res2
    extras = {
        "p_dir1": float(res1.p_value),
        "p_dir2": float(res2.p_value),
        "reported_direction": 1 if winner is res1 else 2,
    }
    return CrtResult(
        p_value=winner.p_value,
        observed_stat=winner.observed_stat,
        resampled_stats=winner.resampled_stats,
        M=winner.M,
        engine=pipeline.name or "model_xy",
        seed_path=(rng.master_seed, rng.stream_path),
        flags=res1.flags | res2.flags,
        extras=extras,
    )


# ------------------------------------------------------------------ #
# Analytic infinite-M oracles
# ------------------------------------------------------------------ #


def analytic_pvalue_inner_product(y: np.ndarray, x: np.ndarray, mu_x: np.ndarray) -> float:
    """Infinite-M p-value of |x'y| when resamples are N(mu_x, I).

    The resampled inner product is gaussian with mean mu_x'y and
    standard deviation ||y||, so the exceedance probability is the sum
    of the two tail masses outside +/- |x'y|.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    mu_x = np.asarray(mu_x, dtype=float)
    ny = float(np.linalg.norm(y))
    if ny == 0:
        raise ZeroNormError("||y|| is zero")
    t = abs(float(x @ y))
    m = float(mu_x @ y)
    return float(ndtr((-m - t) / ny) + ndtr((m - t) / ny))


def analytic_pvalue_d0(
    y: np.ndarray, x: np.ndarray, mu_x: np.ndarray, mu_y: np.ndarray
) -> float:
    """Infinite-M p-value of |(x - mu_x)'(y - mu_y)| under N(mu_x, I)
    resampling: two gaussian tails at the observed residual product."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    mu_x = np.asarray(mu_x, dtype=float)
    mu_y = np.asarray(mu_y, dtype=float)
    ry = y - mu_y
    nr = float(np.linalg.norm(ry))
    if nr == 0:
        raise ZeroNormError("||y - mu_y|| is zero")
    t = abs(float((x - mu_x) @ ry))
    return float(2.0 * ndtr(-t / nr))


# ------------------------------------------------------------------ #
# Uniform dispatch (harness / CLI entry)
# ------------------------------------------------------------------ #


def run_engine(
    pipeline: EnginePipeline,
    rng: RngHandle,
    test: LabeledData,
    unlab: Optional[UnlabeledData] = None,
    holdout: Optional[LabeledData] = None,
    surrogate: Optional[SurrogateData] = None,
) -> CrtResult:
    """Route one pipeline to its engine given whatever data is on hand.

    model-X and CPT still build the response summary (in-sample, or on
    the holdout when one is supplied) because the residual statistics
    need it; only the resampling law ignores it.
    """
    kind = pipeline.engine
    if kind in ("maxway_in", "transformed_maxway"):
        if unlab is None:
            raise ValueError(f"{kind} requires unlabeled data")
        if kind == "transformed_maxway" and pipeline.x_family not in (
            "gaussian_linear",
            "forest_gaussian",
        ):
            raise ValueError("transformed_maxway requires a residual-transform family")
        return run_maxway_in(test, unlab, pipeline, rng)
    if kind == "maxway_out":
        if unlab is None or holdout is None:
            raise ValueError("maxway_out requires unlabeled and holdout data")
        return run_maxway_out(test, holdout, unlab, pipeline, rng)
    if kind == "sassl_maxway":
        if surrogate is None:
            raise ValueError("sassl_maxway requires surrogate data")
        return run_sassl_maxway(test, surrogate, pipeline, rng)
    if kind in ("modelx", "cpt"):
        if unlab is None and pipeline.x_model_override is None:
            raise ValueError(f"{kind} requires unlabeled data or an exposure model")
        k = pipeline.resolve_k(test.p)
        if pipeline.stat.needs_residuals:
            if holdout is not None:
                g_model = fit_g_model(holdout.y, holdout.Z, k, rng.derive(0),
                                      learner=pipeline.g_learner,
                                      forest_config=pipeline.g_forest_config)
            else:
                g_model = fit_g_model(test.y, test.Z, k, rng.derive(0),
                                      learner=pipeline.g_learner,
                                      forest_config=pipeline.g_forest_config)
            stats = g_model.evaluate(test.Z)
        else:
            stats = empty_stats(test.n)
        x_model = pipeline.x_model_override or fit_x_model(
            unlab, pipeline.x_family, rng.derive(1),
            forest_config=pipeline.x_forest_config,
        )
        if not x_model.is_binary and pipeline.variance_source == "labeled_test":
            resid = test.x - x_model.mean(test.Z)
            x_model = x_model.with_sigma2(
                max(float(np.mean(resid**2)), pipeline.sigma2_floor)
            )
        runner_rng = rng.derive(3)
        if kind == "modelx":
            result = run_modelx_crt(test, x_model, pipeline.stat, pipeline.M,
                                    runner_rng, stats=stats)
        else:
            result = run_cpt(test, x_model, pipeline.stat, pipeline.M, runner_rng,
                             mcmc_steps=pipeline.cpt_steps, stats=stats)
        if pipeline.name:
            result = replace(result, engine=pipeline.name)
        return result
    if kind == "model_xy":
        if unlab is None:
            raise ValueError("model_xy requires unlabeled data for the exposure")
        if holdout is not None:
            unlab_y = UnlabeledData(holdout.y, holdout.Z)
        else:
            raise ValueError("model_xy requires holdout labels to model the response")
        return run_model_xy(test, unlab, unlab_y, pipeline, rng)
    raise ValueError(f"unknown engine {kind!r}")
