"""Replication loops, paired engine comparisons, and report assembly.

A plan sweeps one knob (the unlabeled sample size N, or the effect size
gamma) over a grid; at every grid point it runs ``reps`` replications.
Replication r at grid point g generates its batch from stream path
``[g, r, 0]`` and hands engine e the stream ``[g, r, 1 + e]``, so

* every engine at a given (g, r) sees the *same* batch (paired
  comparison), and
* results are bit-identical at any parallelism level, because nothing
  consumes a shared sequential generator.

Failed replications are recorded (engine, grid point, replication,
error) and excluded from the rates; acceptance-grade runs require the
failure list to be empty.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from .conditioners import default_k
from .data import RngHandle
from .engines import ENGINE_KINDS, EnginePipeline, run_engine
from .learners import ForestConfig
from .simgen import GeneratedBatch, SimConfig, SurrogateSpec, gen_surrogate, generate
from .stats import StatSpec

__all__ = [
    "GridMismatch",
    "ExperimentPlan",
    "ExperimentReport",
    "run_plan",
    "adjusted_power",
    "plan_to_dict",
    "plan_from_dict",
    "report_to_json",
    "report_from_json",
    "report_to_csv",
    "curve_rows",
]


class GridMismatch(ValueError):
    """Reports being combined do not share engines/grids as required."""


@dataclass(frozen=True)
class ExperimentPlan:
    """A full experiment: scenario template, engine lineup, sweep, sizes."""

    sim: SimConfig
    engines: tuple[EnginePipeline, ...]
    reps: int
    sweep_kind: str  # "N" | "gamma"
    sweep_values: tuple[float, ...]
    alpha: float = 0.05
    parallelism: int = 1
    master_seed: int = 0
    surrogate: Optional[SurrogateSpec] = None

    def __post_init__(self):
        object.__setattr__(self, "engines", tuple(self.engines))
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.sweep_kind not in ("N", "gamma"):
            raise ValueError(f"unknown sweep kind {self.sweep_kind!r}")
        if not self.sweep_values:
            raise ValueError("sweep grid must be nonempty")
        if not self.engines:
            raise ValueError("need at least one engine")
        labels = self.labels
        if len(set(labels)) != len(labels):
            raise ValueError(f"engine labels must be unique, got {labels}")
        needs_holdout = any(e.engine in ("maxway_out", "model_xy") for e in self.engines)
        if needs_holdout and self.sim.holdout_n < 2:
            raise ValueError("plan includes a holdout-training engine but sim.holdout_n < 2")
        if any(e.engine == "sassl_maxway" for e in self.engines) and self.surrogate is None:
            raise ValueError("plan includes a surrogate engine but no surrogate spec")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(e.label for e in self.engines)


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    """Per engine and grid point: retained p-values, rejection rate at the
    plan's alpha, the exact binomial standard error, elapsed seconds."""

    plan: ExperimentPlan
    grid: tuple[float, ...]
    labels: tuple[str, ...]
    p_values: dict  # label -> (n_grid, reps) float array, NaN = failed
    elapsed: dict  # label -> (n_grid,) seconds
    flags: dict  # label -> sorted tuple of distinct flags observed
    failures: tuple[str, ...]
    metadata: dict = field(default_factory=dict)

    @property
    def alpha(self) -> float:
        return self.plan.alpha

    def rejection_rate(self, alpha: Optional[float] = None) -> dict:
        a = self.alpha if alpha is None else alpha
        out = {}
        for lab in self.labels:
            pv = self.p_values[lab]
            valid = ~np.isnan(pv)
            with np.errstate(invalid="ignore"):
                out[lab] = np.where(
                    valid.sum(axis=1) > 0,
                    np.nansum(pv <= a, axis=1) / np.maximum(valid.sum(axis=1), 1),
                    np.nan,
                )
        return out

    def std_error(self, alpha: Optional[float] = None) -> dict:
        rates = self.rejection_rate(alpha)
        out = {}
        for lab in self.labels:
            n = (~np.isnan(self.p_values[lab])).sum(axis=1)
            r = rates[lab]
            out[lab] = np.sqrt(r * (1 - r) / np.maximum(n, 1))
        return out

    @property
    def failure_count(self) -> int:
        return len(self.failures)


# ------------------------------------------------------------------ #
# Execution
# ------------------------------------------------------------------ #


def _sim_for(plan: ExperimentPlan, grid_idx: int, rep: int) -> SimConfig:
    value = plan.sweep_values[grid_idx]
    seed = RngHandle(plan.master_seed).derive(grid_idx, rep, 0)
    if plan.sweep_kind == "N":
        return replace(plan.sim, N=int(value), seed=seed)
    return replace(plan.sim, gamma=float(value), seed=seed)


def _make_batch(plan: ExperimentPlan, grid_idx: int, rep: int):
    batch = generate(_sim_for(plan, grid_idx, rep))
    surrogate = None
    if plan.surrogate is not None:
        surr_rng = RngHandle(plan.master_seed).derive(grid_idx, rep, 0, 9)
        surrogate = gen_surrogate(batch, plan.surrogate, surr_rng)
    return batch, surrogate


def _run_replication(plan: ExperimentPlan, grid_idx: int, rep: int):
    """One (grid point, replication) task: shared batch, every engine."""
    batch, surrogate = _make_batch(plan, grid_idx, rep)
    results = []
    for e, pipeline in enumerate(plan.engines):
        rng = RngHandle(plan.master_seed).derive(grid_idx, rep, 1 + e)
        start = time.perf_counter()
        try:
            res = run_engine(
                pipeline,
                rng,
                batch.labeled,
                unlab=batch.unlabeled,
                holdout=batch.holdout,
                surrogate=surrogate,
            )
            results.append((float(res.p_value), sorted(res.flags),
                            time.perf_counter() - start, None))
        except Exception as err:  # recorded, not raised: the sweep continues
            results.append((float("nan"), [], time.perf_counter() - start,
                            f"{type(err).__name__}: {err}"))
    return grid_idx, rep, results


def run_plan(plan: ExperimentPlan, jobs: Optional[int] = None) -> ExperimentReport:
    """Execute the plan; ``jobs`` overrides plan.parallelism.

    The report is a deterministic function of the plan alone: scheduling
    affects only the elapsed-time metadata.
    """
    jobs = plan.parallelism if jobs is None else jobs
    n_grid = len(plan.sweep_values)
    tasks = [(g, r) for g in range(n_grid) for r in range(plan.reps)]

    if jobs == 1:
        raw = [_run_replication(plan, g, r) for g, r in tasks]
    else:
        raw = Parallel(n_jobs=jobs, backend="loky")(
            delayed(_run_replication)(plan, g, r) for g, r in tasks
        )

    labels = plan.labels
    p_values = {lab: np.full((n_grid, plan.reps), np.nan) for lab in labels}
    elapsed = {lab: np.zeros(n_grid) for lab in labels}
    flag_sets: dict[str, set] = {lab: set() for lab in labels}
    failures: list[str] = []
    for grid_idx, rep, results in raw:
        for lab, (p, flags, dt, err) in zip(labels, results):
            p_values[lab][grid_idx, rep] = p
            elapsed[lab][grid_idx] += dt
            flag_sets[lab].update(flags)
            if err is not None:
                failures.append(
                    f"engine={lab} grid={plan.sweep_values[grid_idx]!r} rep={rep}: {err}"
                )

    metadata = {
        "master_seed": plan.master_seed,
        "jobs": jobs,
        "versions": _versions(),
    }
    return ExperimentReport(
        plan=plan,
        grid=tuple(float(v) for v in plan.sweep_values),
        labels=labels,
        p_values=p_values,
        elapsed=elapsed,
        flags={lab: tuple(sorted(flag_sets[lab])) for lab in labels},
        failures=tuple(sorted(failures)),
        metadata=metadata,
    )


def _versions() -> dict:
    import numba
    import scipy

    from . import __version__

    return {
        "maxway": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


# ------------------------------------------------------------------ #
# Power recalibration
# ------------------------------------------------------------------ #


def adjusted_power(
    report: ExperimentReport,
    null_report: ExperimentReport,
    alpha: Optional[float] = None,
) -> dict:
    """Rejection rates after recalibrating each engine's threshold on its
    own null p-values.

    The threshold is the floor(alpha * reps)-th smallest null p-value
    (0 when that index is 0), which makes the empirical null rejection
    equal to alpha up to ties; the alternative p-values are then
    compared against it.  This is the usual empirical-quantile
    adjustment; the raw rates remain available from the report.
    """
    a = report.alpha if alpha is None else alpha
    if null_report.labels != report.labels:
        raise GridMismatch(
            f"engine labels differ: {null_report.labels} vs {report.labels}"
        )
    if len(null_report.grid) != 1:
        raise GridMismatch("null report must have exactly one grid point (gamma = 0)")
    out = {}
    for lab in report.labels:
        null_p = null_report.p_values[lab][0]
        null_p = np.sort(null_p[~np.isnan(null_p)])
        if null_p.size == 0:
            raise GridMismatch(f"engine {lab} has no valid null p-values")
        k = int(np.floor(a * null_p.size))
        thr = 0.0 if k == 0 else float(null_p[k - 1])
        pv = report.p_values[lab]
        valid = ~np.isnan(pv)
        out[lab] = np.where(
            valid.sum(axis=1) > 0,
            np.nansum(pv <= thr, axis=1) / np.maximum(valid.sum(axis=1), 1),
            np.nan,
        )
    return out


# ------------------------------------------------------------------ #
# Plan and report serialization
# ------------------------------------------------------------------ #


def _forest_config_to_dict(cfg: Optional[ForestConfig]):
    if cfg is None:
        return None
    return {
        "n_trees": cfg.n_trees,
        "max_depth": cfg.max_depth,
        "min_leaf": cfg.min_leaf,
        "mtry": cfg.mtry,
        "bootstrap": cfg.bootstrap,
    }


def _forest_config_from_dict(d) -> Optional[ForestConfig]:
    if d is None:
        return None
    return ForestConfig(**d)


def _engine_to_dict(e: EnginePipeline) -> dict:
    return {
        "engine": e.engine,
        "name": e.name,
        "x_family": e.x_family,
        "g_learner": e.g_learner,
        "stat": {
            "kind": e.stat.kind,
            "di_intercept": e.stat.di_intercept,
            "forest_config": _forest_config_to_dict(e.stat.forest_config),
        },
        "k": e.k,
        "M": e.M,
        "variance_source": e.variance_source,
        "h_role": e.h_role,
        "eps_clip": e.eps_clip,
        "sigma2_floor": e.sigma2_floor,
        "log_base": e.log_base,
        "cpt_steps": e.cpt_steps,
        "g_forest_config": _forest_config_to_dict(e.g_forest_config),
        "x_forest_config": _forest_config_to_dict(e.x_forest_config),
        "adj_forest_config": _forest_config_to_dict(e.adj_forest_config),
    }


def _engine_from_dict(d: dict) -> EnginePipeline:
    d = dict(d)
    if d.get("engine") not in ENGINE_KINDS:
        raise ValueError(f"unknown engine kind {d.get('engine')!r}")
    stat = d.pop("stat", "d0")
    if isinstance(stat, str):
        spec = StatSpec(kind=stat)
    else:
        stat = dict(stat)
        fc = _forest_config_from_dict(stat.pop("forest_config", None))
        spec = StatSpec(forest_config=fc, **stat) if fc else StatSpec(**stat)
    for key in ("g_forest_config", "x_forest_config", "adj_forest_config"):
        if key in d:
            d[key] = _forest_config_from_dict(d[key])
    return EnginePipeline(stat=spec, **d)


def plan_to_dict(plan: ExperimentPlan) -> dict:
    sim = plan.sim
    return {
        "sim": {
            "config": sim.config,
            "p": sim.p,
            "n": sim.n,
            "N": sim.N,
            "eta": sim.eta,
            "gamma": sim.gamma,
            "h_form": sim.h_form,
            "holdout_n": sim.holdout_n,
            "structure_seed": sim.structure_seed,
        },
        "engines": [_engine_to_dict(e) for e in plan.engines],
        "reps": plan.reps,
        "alpha": plan.alpha,
        "sweep": {"kind": plan.sweep_kind, "values": list(plan.sweep_values)},
        "parallelism": plan.parallelism,
        "master_seed": plan.master_seed,
        "surrogate": (
            None
            if plan.surrogate is None
            else {"kind": plan.surrogate.kind, "param": plan.surrogate.param}
        ),
    }


def plan_from_dict(d: dict) -> ExperimentPlan:
    sim = SimConfig(**d["sim"])
    engines = tuple(_engine_from_dict(e) for e in d["engines"])
    sweep = d["sweep"]
    surrogate = d.get("surrogate")
    return ExperimentPlan(
        sim=sim,
        engines=engines,
        reps=int(d["reps"]),
        sweep_kind=sweep["kind"],
        sweep_values=tuple(sweep["values"]),
        alpha=float(d.get("alpha", 0.05)),
        parallelism=int(d.get("parallelism", 1)),
        master_seed=int(d.get("master_seed", 0)),
        surrogate=None if surrogate is None else SurrogateSpec(**surrogate),
    )


def report_to_json(report: ExperimentReport, path) -> None:
    rates = report.rejection_rate()
    ses = report.std_error()
    doc = {
        "schema": "maxway-report-v1",
        "plan": plan_to_dict(report.plan),
        "sweep_kind": report.plan.sweep_kind,
        "grid": list(report.grid),
        "engines": list(report.labels),
        "alpha": report.alpha,
        "reps": report.plan.reps,
        "p_values": {lab: report.p_values[lab].tolist() for lab in report.labels},
        "rejection_rate": {lab: rates[lab].tolist() for lab in report.labels},
        "std_error": {lab: ses[lab].tolist() for lab in report.labels},
        "elapsed": {lab: report.elapsed[lab].tolist() for lab in report.labels},
        "flags": {lab: list(report.flags[lab]) for lab in report.labels},
        "failures": list(report.failures),
        "metadata": report.metadata,
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def report_from_json(path) -> ExperimentReport:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != "maxway-report-v1":
        raise ValueError(f"{path}: not a report file")
    plan = plan_from_dict(doc["plan"])
    labels = tuple(doc["engines"])
    return ExperimentReport(
        plan=plan,
        grid=tuple(doc["grid"]),
        labels=labels,
        p_values={lab: np.asarray(doc["p_values"][lab], dtype=float) for lab in labels},
        elapsed={lab: np.asarray(doc["elapsed"][lab], dtype=float) for lab in labels},
        flags={lab: tuple(doc["flags"][lab]) for lab in labels},
        failures=tuple(doc["failures"]),
        metadata=doc.get("metadata", {}),
    )


def report_to_csv(report: ExperimentReport, path) -> None:
    """Tidy per-replication table: engine, grid_value, rep, p_value.

    Byte-identical across runs of the same plan at any parallelism.
    """
    lines = ["engine,grid_value,rep,p_value"]
    for lab in report.labels:
        pv = report.p_values[lab]
        for gi, gval in enumerate(report.grid):
            for rep in range(pv.shape[1]):
                lines.append(f"{lab},{gval!r},{rep},{pv[gi, rep]!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def curve_rows(
    report: ExperimentReport,
    curve: str,
    null_report: Optional[ExperimentReport] = None,
) -> tuple[list[str], list[list]]:
    """Plot-ready rows for one curve kind.

    ``type1-vs-N`` needs an N sweep; ``power-vs-gamma`` needs a gamma
    sweep, and gains an adjusted-power column when a null report is
    supplied.  Returns (header, rows).
    """
    if curve == "type1-vs-N":
        if report.plan.sweep_kind != "N":
            raise GridMismatch("report does not sweep N")
        adjusted = None
    elif curve == "power-vs-gamma":
        if report.plan.sweep_kind != "gamma":
            raise GridMismatch("report does not sweep gamma")
        adjusted = adjusted_power(report, null_report) if null_report is not None else None
    else:
        raise ValueError(f"unknown curve {curve!r}")

    rates = report.rejection_rate()
    ses = report.std_error()
    header = ["engine", "x_value", "y_value", "se"]
    if adjusted is not None:
        header.append("y_adjusted")
    rows = []
    for lab in report.labels:
        for gi, gval in enumerate(report.grid):
            row = [lab, gval, float(rates[lab][gi]), float(ses[lab][gi])]
            if adjusted is not None:
                row.append(float(adjusted[lab][gi]))
            rows.append(row)
    return header, rows
