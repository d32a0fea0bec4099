import json

import numpy as np
import pytest

from maxway.data import RngHandle
from maxway.engines import EnginePipeline
from maxway.harness import (
    ExperimentPlan,
    GridMismatch,
    adjusted_power,
    curve_rows,
    plan_from_dict,
    plan_to_dict,
    report_from_json,
    report_to_csv,
    report_to_json,
    run_plan,
)
from maxway.harness import _make_batch
from maxway.learners import ForestConfig
from maxway.simgen import SimConfig, SurrogateSpec
from maxway.stats import StatSpec


def tiny_plan(**kw):
    base = dict(
        sim=SimConfig(config="I", p=10, n=30, N=60, seed=0),
        engines=(EnginePipeline(engine="modelx", M=19, k=2),
                 EnginePipeline(engine="maxway_in", M=19, k=2)),
        reps=4,
        sweep_kind="N",
        sweep_values=(60, 120),
        master_seed=42,
    )
    base.update(kw)
    return ExperimentPlan(**base)


class TestRunPlan:
    def test_single_rep_echo(self):
        plan = tiny_plan(engines=(EnginePipeline(engine="maxway_in", M=19, k=2),),
                         reps=1, sweep_values=(60,))
        report = run_plan(plan)
        pv = report.p_values["maxway_in"]
        assert pv.shape == (1, 1)
        rate = report.rejection_rate()["maxway_in"][0]
        assert rate in (0.0, 1.0)
        assert rate == float(pv[0, 0] <= plan.alpha)

    def test_pairing_contract(self):
        # every engine at a given (grid point, rep) consumes the same batch
        plan = tiny_plan()
        b1, _ = _make_batch(plan, 1, 3)
        b2, _ = _make_batch(plan, 1, 3)
        assert np.array_equal(b1.labeled.y, b2.labeled.y)
        assert np.array_equal(b1.unlabeled.Z, b2.unlabeled.Z)
        b3, _ = _make_batch(plan, 0, 3)
        assert not np.array_equal(b1.labeled.y, b3.labeled.y)

    def test_parallel_equals_serial(self, tmp_path):
        plan = tiny_plan()
        r1 = run_plan(plan, jobs=1)
        r4 = run_plan(plan, jobs=4)
        for lab in plan.labels:
            assert np.array_equal(r1.p_values[lab], r4.p_values[lab])
        report_to_csv(r1, tmp_path / "a.csv")
        report_to_csv(r4, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_std_error_formula(self):
        plan = tiny_plan(reps=6)
        report = run_plan(plan)
        rates = report.rejection_rate()
        ses = report.std_error()
        for lab in plan.labels:
            expect = np.sqrt(rates[lab] * (1 - rates[lab]) / 6)
            assert np.allclose(ses[lab], expect)

    def test_failures_recorded_not_raised(self):
        bad = EnginePipeline(engine="maxway_in", M=9, k=2, name="broken",
                             x_family="forest_gaussian",
                             x_forest_config=ForestConfig(min_leaf=10_000))
        plan = tiny_plan(engines=(EnginePipeline(engine="modelx", M=9, k=2), bad),
                         reps=2, sweep_values=(60,))
        report = run_plan(plan)
        assert report.failure_count == 2
        assert np.all(np.isnan(report.p_values["broken"]))
        assert not np.any(np.isnan(report.p_values["modelx"]))

    def test_duplicate_labels_rejected(self):
        with pytest.raises(ValueError, match="unique"):
            tiny_plan(engines=(EnginePipeline(engine="modelx", M=9),
                               EnginePipeline(engine="modelx", M=19)))


class TestAdjustedPower:
    def engines(self):
        return (EnginePipeline(engine="modelx", M=19, k=2),)

    def make_report(self, p_matrix, sweep_kind="gamma", grid=(0.3,)):
        plan = tiny_plan(engines=self.engines(), reps=p_matrix.shape[1],
                         sweep_kind=sweep_kind, sweep_values=grid)
        from maxway.harness import ExperimentReport

        return ExperimentReport(
            plan=plan, grid=tuple(float(g) for g in grid), labels=plan.labels,
            p_values={"modelx": p_matrix.astype(float)},
            elapsed={"modelx": np.zeros(len(grid))},
            flags={"modelx": ()}, failures=(),
        )

    def test_calibrated_engine_unchanged(self):
        reps = 100
        null_p = (np.arange(reps, dtype=float) + 1) / reps  # exactly uniform grid
        alt_p = np.linspace(0.001, 0.5, reps)
        null = self.make_report(null_p[None, :], grid=(0.0,))
        alt = self.make_report(alt_p[None, :])
        adj = adjusted_power(alt, null)["modelx"][0]
        raw = float(np.mean(alt_p <= 0.05))
        assert adj == pytest.approx(raw)

    def test_total_separation_gives_one(self):
        null_p = np.linspace(0.5, 1.0, 40)
        alt_p = np.linspace(0.001, 0.01, 40)
        null = self.make_report(null_p[None, :], grid=(0.0,))
        alt = self.make_report(alt_p[None, :])
        assert adjusted_power(alt, null)["modelx"][0] == 1.0

    def test_matches_bruteforce_recalibration(self):
        gen = np.random.default_rng(5)
        null_p = gen.random(200)
        alt_p = gen.random(200) * 0.6
        null = self.make_report(null_p[None, :], grid=(0.0,))
        alt = self.make_report(alt_p[None, :])
        adj = adjusted_power(alt, null, alpha=0.05)["modelx"][0]
        # brute force: scan all candidate thresholds, keep the largest with
        # empirical null rejection <= alpha, then apply it
        best = 0.0
        for t in np.sort(null_p):
            if np.mean(null_p <= t) <= 0.05:
                best = max(best, t)
        assert adj == pytest.approx(float(np.mean(alt_p <= best)))

    def test_grid_mismatch(self):
        alt = self.make_report(np.random.default_rng(0).random((1, 10)))
        null2 = self.make_report(np.random.default_rng(1).random((2, 10)),
                                 grid=(0.0, 0.1))
        with pytest.raises(GridMismatch):
            adjusted_power(alt, null2)


class TestSerialization:
    def test_plan_round_trip(self):
        plan = tiny_plan(surrogate=SurrogateSpec("noisy_copy", 0.5),
                         engines=(EnginePipeline(engine="sassl_maxway", M=9, k=2,
                                                 stat=StatSpec("dI")),))
        back = plan_from_dict(plan_to_dict(plan))
        assert back == plan

    def test_report_round_trip(self, tmp_path):
        plan = tiny_plan(reps=2)
        report = run_plan(plan)
        report_to_json(report, tmp_path / "r.json")
        back = report_from_json(tmp_path / "r.json")
        for lab in plan.labels:
            assert np.array_equal(back.p_values[lab], report.p_values[lab])
        assert back.grid == report.grid

    def test_curve_rows_type1(self):
        report = run_plan(tiny_plan(reps=2))
        header, rows = curve_rows(report, "type1-vs-N")
        assert header == ["engine", "x_value", "y_value", "se"]
        assert len(rows) == 2 * 2  # engines x grid

    def test_curve_rows_power_needs_gamma_sweep(self):
        report = run_plan(tiny_plan(reps=2))
        with pytest.raises(GridMismatch):
            curve_rows(report, "power-vs-gamma")

    def test_curve_rows_power_with_null(self):
        plan = tiny_plan(reps=3, sweep_kind="gamma", sweep_values=(0.4,))
        null_plan = tiny_plan(reps=3, sweep_kind="gamma", sweep_values=(0.0,))
        header, rows = curve_rows(run_plan(plan), "power-vs-gamma", run_plan(null_plan))
        assert header[-1] == "y_adjusted"
        assert len(rows[0]) == 5
