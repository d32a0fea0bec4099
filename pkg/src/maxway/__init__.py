"""Conditional randomization tests with response-assisted adjustment.

The package tests the conditional independence of an exposure and a
response given high-dimensional covariates.  Beyond the plain model-X
randomization test, it implements the adjusted variant that resamples
the exposure from its fitted law given low-dimensional summaries of the
covariates (one learned from the response side, one from the exposure
side), which keeps the test calibrated when the exposure model alone is
off.  Comparators (conditional permutation test, swapped-role max
procedure), from-scratch learners, analytic p-value oracles, simulation
generators, and a reproducible experiment harness round out the toolbox.
"""

__version__ = "0.1.0"

from .conditioners import (
    FittedXModel,
    GModel,
    MaxwayDistribution,
    SufficientStats,
    Transform,
    build_g_forest,
    build_g_lasso,
    build_g_surrogate,
    build_h_and_transform,
    default_k,
    fit_g_model,
    fit_maxway,
    fit_x_model,
    sample_maxway,
)
from .data import (
    LabeledData,
    RngHandle,
    SurrogateData,
    UnlabeledData,
    derive_stream,
    read_csv,
    split,
    validate,
    write_csv,
)
from .engines import (
    CrtResult,
    EnginePipeline,
    analytic_pvalue_d0,
    analytic_pvalue_inner_product,
    pvalue_from_stats,
    run_cpt,
    run_engine,
    run_maxway_core,
    run_maxway_in,
    run_maxway_out,
    run_model_xy,
    run_modelx_crt,
    run_sassl_maxway,
)
from .harness import (
    ExperimentPlan,
    ExperimentReport,
    adjusted_power,
    plan_from_dict,
    plan_to_dict,
    report_from_json,
    report_to_csv,
    report_to_json,
    run_plan,
)
from .learners import (
    ForestConfig,
    ForestFit,
    LambdaSelection,
    LinearFit,
    fit_forest,
    fit_lasso,
    fit_logistic_lowdim,
    fit_ols,
    lasso_kkt_gap,
    predict,
    top_k_features,
)
from .simgen import (
    GeneratedBatch,
    SimConfig,
    SurrogateSpec,
    gen_config1,
    gen_config2,
    gen_config3,
    gen_surrogate,
    generate,
)
from .stats import (
    ResidualPair,
    StatSpec,
    stat_d0,
    stat_dI,
    stat_inner_product,
    stat_rf_importance,
)
