"""Tests for experiment grids, reports and reference curves."""

import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from upldp.api.estimator import fit
from upldp.api.harness import (
    CSV_COLUMNS,
    ExperimentSpec,
    ResultRow,
    effective_noise_report,
    read_results,
    run_experiment,
    theory_curves,
    write_results,
)
from upldp.core.accountant import PrivacyBudget
from upldp.core.data import GenConfig, generate
from upldp.core.estimators import FitConfig
from upldp.core.model import ModelConfig
from upldp.exceptions import InvalidConfig
from upldp.internal.globals import set_thread_count

FAST = {"T": 20}


def small_spec(**extra: object) -> ExperimentSpec:
    raw: dict[str, object] = {
        "grid": {"n": [16, 24], "m": [2, 4], "d": [3], "epsilon": [1.0]},
        "estimators": ["mle", "userwise"],
        "reps": 3,
        "master_seed": 5,
        "overrides": {"mle": FAST, "userwise": FAST},
    }
    return ExperimentSpec.from_dict(raw | extra)


class TestExperimentSpec:
    def test_from_dict(self) -> None:
        spec = small_spec()
        assert spec.n == (16, 24)
        assert spec.estimators == ("mle", "userwise")
        assert len(spec.cells()) == 4

    def test_missing_grid_field(self) -> None:
        with pytest.raises(InvalidConfig):
            _ = ExperimentSpec.from_dict({"grid": {"n": [4], "m": [1], "d": [2]}})

    @pytest.mark.parametrize(
        "extra",
        [
            {"reps": 0},
            {"estimators": ["nope"]},
            {"estimators": []},
            {"grid": {"n": [], "m": [1], "d": [2], "epsilon": [1.0]}},
            {"delta": 0.0},
        ],
    )
    def test_rejects_invalid(self, extra: dict[str, object]) -> None:
        with pytest.raises(InvalidConfig):
            _ = small_spec(**extra)

    @pytest.mark.parametrize(
        "raw",
        [
            {"grid": {"n": ["x"], "m": [1], "d": [2], "epsilon": [1.0]}},
            {"grid": {"n": 4, "m": [1], "d": [2], "epsilon": [1.0]}},
            {"grid": {"n": [4], "m": [1], "d": [2], "epsilon": [1.0]}, "overrides": 3},
            [1, 2],
        ],
    )
    def test_rejects_malformed_values(self, raw: object) -> None:
        with pytest.raises(InvalidConfig):
            _ = ExperimentSpec.from_dict(raw)  # pyright: ignore[reportArgumentType]


class TestRunExperiment:
    def test_single_cell(self) -> None:
        spec = ExperimentSpec(n=(8,), m=(2,), d=(3,), epsilon=(1.0,))
        rows = run_experiment(spec)
        assert len(rows) == 1
        assert rows[0].estimator == "mle"
        assert rows[0].error_l2 >= 0

    def test_row_count_and_order(self) -> None:
        """Test a 2x2 grid with 3 reps and 2 estimators gives 24 ordered rows."""
        rows = run_experiment(small_spec())
        assert len(rows) == 24
        keys = [(r.n, r.m, r.rep) for r in rows[::2]]
        assert keys == sorted(keys)
        assert [r.estimator for r in rows[:2]] == ["mle", "userwise"]

    def test_seeds_distinct_across_cells_and_reps(self) -> None:
        rows = run_experiment(small_spec())
        seeds = {(r.n, r.m, r.rep): r.seed for r in rows}
        assert len(set(seeds.values())) == len(seeds) == 12

    def test_same_cell_shares_dataset_across_estimators(self) -> None:
        rows = run_experiment(small_spec())
        assert rows[0].seed == rows[1].seed

    def test_csv_identical_across_runs_and_threads(self, tmp_path: Path) -> None:
        """Test byte-identical CSVs on 1 and 8 threads."""
        spec = small_spec(
            estimators=["mle", "rr", "userwise", "aup"],
            overrides={
                "mle": FAST,
                "rr": FAST,
                "userwise": FAST,
                "aup": {"t_cap": 20},
            },
        )
        outputs = []
        for threads in (1, 8, 8):
            set_thread_count(threads)
            path = tmp_path / f"out-{threads}-{len(outputs)}.csv"
            write_results(run_experiment(spec), path)
            outputs.append(path.read_bytes())
        assert outputs[0] == outputs[1] == outputs[2]

    def test_csv_header(self, tmp_path: Path) -> None:
        path = tmp_path / "rows.csv"
        write_results(run_experiment(small_spec(reps=1)), path)
        header = path.read_text().splitlines()[0]
        assert header == (
            "estimator,n,m,d,epsilon,delta,rep,error_l2,effective_noise_std,"
            "iterations_done,halted_early,wall_seconds,seed"
        )
        assert tuple(header.split(",")) == CSV_COLUMNS

    def test_wall_seconds_only_when_timed(self) -> None:
        untimed = run_experiment(small_spec(reps=1))
        timed = run_experiment(small_spec(reps=1, timing=True))
        assert all(r.wall_seconds == 0.0 for r in untimed)
        assert any(r.wall_seconds > 0.0 for r in timed)

    def test_failed_cell_recorded(self, caplog: pytest.LogCaptureFixture) -> None:
        """Test a cell that cannot be partitioned yields a nan row and a warning."""
        spec = ExperimentSpec(
            n=(3,),
            m=(2,),
            d=(3,),
            epsilon=(1.0,),
            estimators=("aup", "mle"),
            overrides={"aup": {"k": 3}, "mle": FAST},
        )
        with caplog.at_level(logging.WARNING):
            rows = run_experiment(spec)
        failed, ok = rows
        assert math.isnan(failed.error_l2)
        assert failed.iterations_done == 0
        assert failed.failure is not None
        assert ok.failure is None
        assert "failed for aup" in caplog.text

    def test_unknown_override_fails_cell(self) -> None:
        spec = ExperimentSpec(
            n=(8,), m=(2,), d=(3,), epsilon=(1.0,), overrides={"mle": {"bogus": 1}}
        )
        (row,) = run_experiment(spec)
        assert math.isnan(row.error_l2)

    def test_non_integer_override_fails_cell(self) -> None:
        spec = ExperimentSpec(
            n=(8,),
            m=(2,),
            d=(3,),
            epsilon=(1.0,),
            estimators=("mle", "userwise"),
            overrides={"mle": {"T": 2.5}, "userwise": FAST},
        )
        failed, ok = run_experiment(spec)
        assert math.isnan(failed.error_l2)
        assert failed.failure is not None
        assert ok.failure is None


class TestEffectiveNoiseReport:
    def test_layout(self) -> None:
        """Test rows are (estimator, epsilon) and columns are m."""
        spec = ExperimentSpec(
            n=(16,),
            m=(2, 4),
            d=(3,),
            epsilon=(1.0, 3.0),
            estimators=("mle", "userwise"),
            overrides={"userwise": FAST, "mle": FAST},
        )
        table = effective_noise_report(run_experiment(spec))
        assert list(table.columns) == [2, 4]
        assert list(table.index) == [("userwise", 1.0), ("userwise", 3.0)]
        assert (table.loc[("userwise", 1.0)] > table.loc[("userwise", 3.0)]).all()

    def test_noise_free_runs_report_zero(self) -> None:
        spec = ExperimentSpec(
            n=(16,),
            m=(2,),
            d=(3,),
            epsilon=(1.0,),
            estimators=("userwise", "group"),
            overrides={
                "userwise": {"T": 5, "noise_multiplier": 0.0},
                "group": {"T": 5, "noise_multiplier": 0.0},
            },
        )
        table = effective_noise_report(run_experiment(spec))
        assert (table.to_numpy() == 0.0).all()

    def test_requires_private_rows(self) -> None:
        with pytest.raises(InvalidConfig):
            _ = effective_noise_report([])
        spec = ExperimentSpec(n=(8,), m=(2,), d=(3,), epsilon=(1.0,))
        with pytest.raises(InvalidConfig):
            _ = effective_noise_report(run_experiment(spec))

    def test_reads_back_written_rows(self, tmp_path: Path) -> None:
        rows = run_experiment(small_spec(reps=1))
        path = tmp_path / "rows.csv"
        write_results(rows, path)
        loaded = read_results(path)
        assert [r.seed for r in loaded] == [r.seed for r in rows]
        pd.testing.assert_frame_equal(
            effective_noise_report(loaded), effective_noise_report(rows)
        )


class TestTheoryCurves:
    def test_gamma_and_kappa(self) -> None:
        (bounds,) = theory_curves(ModelConfig(d=4, B=1e-12, L=2.0), [(10, 2, 1.0)])
        assert bounds.gamma == pytest.approx(0.25)
        assert bounds.kappa == pytest.approx(1.0)

    def test_gamma_range(self) -> None:
        (bounds,) = theory_curves(ModelConfig(d=4, B=3.0, L=2.0), [(10, 2, 1.0)])
        assert 0 < bounds.gamma < 0.25

    def test_rr_curve_grows_like_sqrt_m(self) -> None:
        """Test m -> 4m doubles the RR bound at fixed n, quadruples it at fixed nm."""
        model = ModelConfig(d=5, B=1.0, L=1.0)
        a, b = theory_curves(model, [(100, 1000, 1.0), (100, 4000, 1.0)])
        assert b.rr_bound / a.rr_bound == pytest.approx(2.0, rel=1e-3)
        c, d = theory_curves(model, [(400, 1000, 1.0), (100, 4000, 1.0)])
        assert d.rr_bound / c.rr_bound == pytest.approx(4.0, rel=1e-3)

    def test_aup_curve_decreases_in_m(self) -> None:
        model = ModelConfig(d=5, B=1.0, L=1.0)
        bounds = theory_curves(model, [(100, m, 1.0) for m in (1, 5, 20, 50)])
        values = [b.aup_bound for b in bounds]
        assert values == sorted(values, reverse=True)
        assert all(b.lower_bound <= b.aup_bound * model.d for b in bounds)

    def test_rejects_alpha(self) -> None:
        with pytest.raises(InvalidConfig):
            _ = theory_curves(ModelConfig(d=2, B=1, L=1), [(1, 1, 1.0)], alpha=1.0)

    @pytest.mark.parametrize("cell", [(10, 2, 0.0), (10, 2, -1.0), (0, 2, 1.0)])
    def test_rejects_degenerate_cells(self, cell: tuple[int, int, float]) -> None:
        with pytest.raises(InvalidConfig):
            _ = theory_curves(ModelConfig(d=2, B=1, L=1), [cell])


@pytest.mark.slow
class TestRates:
    def test_mle_error_slope(self) -> None:
        """Test the non-private error decays like (nm)^-1/2."""
        sizes = [2**10, 2**12, 2**14, 2**16]
        spec = ExperimentSpec(
            n=tuple(s // 4 for s in sizes),
            m=(4,),
            d=(5,),
            epsilon=(1.0,),
            reps=20,
            master_seed=1,
        )
        frame = pd.DataFrame([r.to_record() for r in run_experiment(spec)])
        medians = frame.groupby("n")["error_l2"].median()
        slope = np.polyfit(np.log(medians.index * 4), np.log(medians.to_numpy()), 1)[0]
        assert -0.65 <= slope <= -0.35

    def test_rr_degrades_with_m(self) -> None:
        """Test RR error rises with m at fixed nm because eps/m shrinks."""
        rows: list[ResultRow] = []
        for m in (1, 5, 20, 50):
            spec = ExperimentSpec(
                n=(20_000 // m,),
                m=(m,),
                d=(5,),
                epsilon=(1.0,),
                estimators=("rr",),
                reps=20,
                master_seed=2,
            )
            rows.extend(run_experiment(spec))
        frame = pd.DataFrame([r.to_record() for r in rows])
        medians = frame.groupby("m")["error_l2"].median()
        assert medians[1] < medians[5] < medians[50]
        assert stats.spearmanr(medians.index, medians.to_numpy()).statistic >= 0.8

    def test_aup_default_schedule_is_noise_dominated(self) -> None:
        """Test the constant-1 schedule halts and lands near the zero estimate.

        At nm = 2e4 and eps = 1 the per-step noise std is in the tens while
        the gradient norm is about 0.05, so the iterates wander the B-ball.
        """
        rows: list[ResultRow] = []
        for m in (20, 50):
            spec = ExperimentSpec(
                n=(20_000 // m,),
                m=(m,),
                d=(5,),
                epsilon=(1.0,),
                estimators=("aup",),
                reps=6,
                master_seed=3,
            )
            rows.extend(run_experiment(spec))
        assert all(r.halted_early for r in rows)
        frame = pd.DataFrame([r.to_record() for r in rows])
        medians = frame.groupby("m")["error_l2"].median()
        assert ((medians >= 0.8) & (medians <= 1.5)).all()

    def test_aup_tuned_schedule_beats_zero_estimate(self) -> None:
        """Test one tight full-batch stage at eps = 8 learns theta*."""
        errors = []
        for seed in range(5):
            dataset, truth = generate(GenConfig(n=3000, m=50, d=5, seed=seed))
            result = fit(
                "aup",
                dataset,
                PrivacyBudget(8.0, 1e-5),
                FitConfig(seed=seed),
                {"k": 1, "tau": 0.3, "eta": 5.0, "t_cap": 50},
            )
            assert not result.halted_early
            errors.append(np.linalg.norm(result.theta_hat - truth.theta_star))
        assert np.median(errors) < 0.6 * np.linalg.norm(truth.theta_star)

    def test_aup_fitted_noise_grows_with_m(self) -> None:
        """Test fitted effective noise rises with m at fixed nm for every eps."""
        rows: list[ResultRow] = []
        for m in (5, 10, 20, 50):
            spec = ExperimentSpec(
                n=(20_000 // m,),
                m=(m,),
                d=(5,),
                epsilon=(1.0, 3.0, 8.0),
                estimators=("aup",),
                reps=3,
                master_seed=6,
                overrides={"aup": {"t_cap": 200}},
            )
            rows.extend(run_experiment(spec))
        assert all(r.failure is None for r in rows)
        frame = pd.DataFrame([r.to_record() for r in rows])
        table = frame.pivot_table(
            index="epsilon", columns="m", values="effective_noise_std", aggfunc="median"
        )
        assert (table.diff(axis=1).iloc[:, 1:] > 0).to_numpy().all()

    def test_privacy_costs_utility(self) -> None:
        spec = ExperimentSpec(
            n=(400,),
            m=(10,),
            d=(5,),
            epsilon=(0.5,),
            estimators=("mle", "rr", "userwise", "group", "aup"),
            reps=5,
            master_seed=4,
        )
        frame = pd.DataFrame([r.to_record() for r in run_experiment(spec)])
        medians = frame.groupby("estimator")["error_l2"].median()
        assert (medians.drop("mle") > medians["mle"]).all()
