"""Command-line surface.

Three subcommands:

* ``maxway test``     — run one or more engines on CSV data.
* ``maxway simulate`` — execute an experiment plan (JSON) and emit a
  full JSON report plus a tidy per-replication CSV.
* ``maxway report``   — turn a report JSON into plot-ready curve CSV.

Exit codes: 0 success, 2 input/validation problem, 3 engine failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .data import (
    CsvFormatError,
    DataError,
    LabeledData,
    RngHandle,
    SurrogateData,
    UnlabeledData,
    read_csv,
)
from .engines import ENGINE_KINDS, EnginePipeline, run_engine
from .learners import LearnerError
from .stats import StatSpec

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_ENGINE = 3


class _CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--M", type=int, default=1000, help="number of resamples")
    parser.add_argument("--k", type=int, default=None,
                        help="summary dimensionality (default: ceil(2 ln p))")
    parser.add_argument("--alpha", type=float, default=0.05, help="nominal level")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--jobs", type=int, default=1, help="parallel workers")
    parser.add_argument("--out", type=Path, default=None, help="output path")
    parser.add_argument("--format", choices=("json", "csv"), default="json",
                        help="primary output format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maxway",
        description="Conditional independence testing by adjusted randomization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="run engines on CSV data")
    t.add_argument("labeled", type=Path, help="CSV with y, x and covariate columns")
    t.add_argument("unlabeled", type=Path, help="CSV with x and covariate columns")
    t.add_argument("--holdout", type=Path, default=None,
                   help="labeled CSV for holdout response training")
    t.add_argument("--in-sample", action="store_true",
                   help="train the response summary on the testing data")
    t.add_argument("--surrogate", type=Path, default=None,
                   help="CSV with s, x and covariate columns")
    t.add_argument("--engine", default="maxway_in",
                   help="comma-separated engine list: " + ",".join(ENGINE_KINDS))
    t.add_argument("--stat", choices=("d0", "dI", "rf"), default="d0")
    t.add_argument("--variance-source", choices=("labeled-test", "unlabeled"),
                   default="labeled-test")
    t.add_argument("--cpt-steps", type=int, default=None)
    _add_common(t)

    s = sub.add_parser("simulate", help="run an experiment plan")
    s.add_argument("plan", type=Path, help="plan JSON file")
    s.add_argument("--jobs", type=int, default=None,
                   help="override the plan's parallelism")
    s.add_argument("--out", type=Path, default=None,
                   help="output stem (default: plan name)")

    r = sub.add_parser("report", help="extract plot-ready curves from a report")
    r.add_argument("report", type=Path, help="report JSON file")
    r.add_argument("--curve", choices=("type1-vs-N", "power-vs-gamma"), required=True)
    r.add_argument("--null-report", type=Path, default=None,
                   help="gamma = 0 report for adjusted power")
    r.add_argument("--out", type=Path, default=None, help="curve CSV path")
    return parser


# ------------------------------------------------------------------ #
# test
# ------------------------------------------------------------------ #


def _load(path: Path, want, what: str):
    if not path.exists():
        raise _CliError(f"{what} file not found: {path}")
    try:
        data = read_csv(path)
    except (CsvFormatError, DataError) as err:
        raise _CliError(f"{what}: {err}") from err
    if not isinstance(data, want):
        raise _CliError(
            f"{what}: {path} parsed as {type(data).__name__}, expected {want.__name__}"
        )
    return data


def _result_to_dict(res) -> dict:
    return {
        "engine": res.engine,
        "p_value": float(res.p_value),
        "p_value_exact": f"{res.p_value.numerator}/{res.p_value.denominator}",
        "observed_stat": res.observed_stat,
        "M": res.M,
        "resampled_stats": res.resampled_stats.tolist(),
        "seed": {"master_seed": res.seed_path[0], "stream_path": list(res.seed_path[1])},
        "flags": sorted(res.flags),
        "extras": res.extras,
    }


def cmd_test(args: argparse.Namespace) -> int:
    engines = [e.strip() for e in args.engine.split(",") if e.strip()]
    if not engines:
        raise _CliError("no engine requested")
    for e in engines:
        if e not in ENGINE_KINDS:
            raise _CliError(f"unknown engine {e!r}; choose from {', '.join(ENGINE_KINDS)}")
    if args.M < 1:
        raise _CliError("--M must be >= 1")
    if not 0 < args.alpha < 1:
        raise _CliError("--alpha must be in (0, 1)")

    labeled = _load(args.labeled, LabeledData, "labeled data")
    unlabeled = _load(args.unlabeled, UnlabeledData, "unlabeled data")
    if labeled.p != unlabeled.p:
        raise _CliError(
            f"labeled data has {labeled.p} covariates, unlabeled has {unlabeled.p}"
        )
    holdout = surrogate = None
    if args.holdout is not None:
        holdout = _load(args.holdout, LabeledData, "holdout data")
        if holdout.p != labeled.p:
            raise _CliError("holdout covariate count differs from labeled data")
    if args.surrogate is not None:
        surrogate = _load(args.surrogate, SurrogateData, "surrogate data")
        if surrogate.p != labeled.p:
            raise _CliError("surrogate covariate count differs from labeled data")

    binary = labeled.binary_x and unlabeled.binary_x
    x_family = "logistic" if binary else "gaussian_linear"
    stat = StatSpec({"d0": "d0", "dI": "dI", "rf": "rf_importance"}[args.stat])
    variance_source = args.variance_source.replace("-", "_")

    results = []
    for e_idx, engine in enumerate(engines):
        pipeline = EnginePipeline(
            engine=engine,
            x_family=x_family,
            stat=stat,
            k=args.k,
            M=args.M,
            variance_source=variance_source,
            cpt_steps=args.cpt_steps,
        )
        use_holdout = None if (args.in_sample and engine != "model_xy") else holdout
        if engine == "maxway_out" and use_holdout is None:
            raise _CliError("maxway_out needs --holdout (or drop it / use --in-sample)")
        if engine == "model_xy" and holdout is None:
            raise _CliError("model_xy needs --holdout to model the response")
        if engine == "sassl_maxway" and surrogate is None:
            raise _CliError("sassl_maxway needs --surrogate")
        rng = RngHandle(args.seed).derive(e_idx)
        try:
            res = run_engine(pipeline, rng, labeled, unlab=unlabeled,
                             holdout=use_holdout, surrogate=surrogate)
        except (DataError, ValueError) as err:
            raise _CliError(f"engine {engine}: {err}", EXIT_ENGINE) from err
        except LearnerError as err:
            raise _CliError(f"engine {engine}: {err}", EXIT_ENGINE) from err
        results.append(res)

    out_path = args.out or Path("crt_results.json")
    doc = {
        "alpha": args.alpha,
        "seed": args.seed,
        "results": [_result_to_dict(r) for r in results],
    }
    out_path.write_text(json.dumps(doc, indent=1), encoding="utf-8")
    for res in results:
        sys.stdout.write(f"{res.engine}\t{float(res.p_value)!r}\n")
    return EXIT_OK


# ------------------------------------------------------------------ #
# simulate
# ------------------------------------------------------------------ #


def cmd_simulate(args: argparse.Namespace) -> int:
    if not args.plan.exists():
        raise _CliError(f"plan file not found: {args.plan}")
    try:
        plan = harness.plan_from_dict(json.loads(args.plan.read_text(encoding="utf-8")))
    except (ValueError, KeyError, TypeError) as err:
        raise _CliError(f"invalid plan: {err}") from err

    report = harness.run_plan(plan, jobs=args.jobs)
    stem = args.out or args.plan.with_suffix("")
    json_path = Path(f"{stem}.report.json")
    csv_path = Path(f"{stem}.report.csv")
    harness.report_to_json(report, json_path)
    harness.report_to_csv(report, csv_path)

    rates = report.rejection_rate()
    ses = report.std_error()
    sys.stdout.write(f"wrote {json_path} and {csv_path}\n")
    sys.stdout.write(f"rejection rates at alpha={report.alpha:g} "
                     f"({plan.sweep_kind} sweep, {plan.reps} reps)\n")
    header = "engine".ljust(18) + "".join(f"{v:>12g}" for v in report.grid)
    sys.stdout.write(header + "\n")
    for lab in report.labels:
        cells = "".join(
            f"  {rates[lab][i]:.3f}±{ses[lab][i]:.3f}" for i in range(len(report.grid))
        )
        sys.stdout.write(lab.ljust(18) + cells + "\n")
    if report.failures:
        sys.stdout.write(f"WARNING: {len(report.failures)} failed replications\n")
    return EXIT_OK


# ------------------------------------------------------------------ #
# report
# ------------------------------------------------------------------ #


def cmd_report(args: argparse.Namespace) -> int:
    if not args.report.exists():
        raise _CliError(f"report file not found: {args.report}")
    try:
        report = harness.report_from_json(args.report)
        null_report = None
        if args.null_report is not None:
            null_report = harness.report_from_json(args.null_report)
        header, rows = harness.curve_rows(report, args.curve, null_report)
    except (harness.GridMismatch, ValueError) as err:
        raise _CliError(str(err)) from err
    out_path = args.out or args.report.with_suffix(f".{args.curve}.csv")
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(c) if isinstance(c, str) else repr(float(c)) for c in row))
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    sys.stdout.write(f"wrote {out_path}\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "test":
            return cmd_test(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        return cmd_report(args)
    except _CliError as err:
        sys.stderr.write(f"error: {err}\n")
        return err.code


if __name__ == "__main__":
    sys.exit(main())
