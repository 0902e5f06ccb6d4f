"""
Tests for metrics, suites, grouped diagnostics, spatial holdout and seed aggregation.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from ambit.baselines import ModelSpec, get_baseline_spec
from ambit.data import PredictionFrame
from ambit.errors import EmptyTaskError, EstimationError
from ambit.evaluation import (
    aggregate_seed_stats,
    calibration_table,
    cpc_hour_averaged,
    mean_ci,
    pair_smape_table,
    quantile_bins,
    quantile_diagnostics,
    reports_frame,
    run_suite,
    select_holdout_zones,
    spatial_holdout,
    time_models,
    zone_error_table,
)
from ambit.metrics import compute_metrics, cpc, objective_score, r2, smape
from ambit.schemas import DataSource, HoldoutSpec, MetricReport, SyntheticCityConfig, SyntheticProcess
from ambit.task import prepare_task

from .conftest import small_config


# ============================================================================
# Fixtures
# ============================================================================

def failing_fit(ctx):
    raise EstimationError("singular", "design matrix is singular")


FAILING = ModelSpec("broken", "Broken", "physical", "always fails", failing_fit)


@pytest.fixture
def pf() -> PredictionFrame:
    frame = pd.DataFrame({
        "origin": [1, 1, 2, 2],
        "dest": [2, 2, 1, 1],
        "hour": pd.to_datetime(["2025-01-06 00:00", "2025-01-06 01:00"] * 2),
        "flow": [0.0, 4.0, 2.0, 2.0],
        "prediction": [0.0, 2.0, 2.0, 6.0],
        "distance_km": [1.0, 1.0, 1.0, 1.0],
    })
    return PredictionFrame(model="m", frame=frame)


# ============================================================================
# Metrics
# ============================================================================

class TestMetrics:
    """Tests for point metrics and their edge cases."""

    def test_perfect_prediction(self):
        y = np.array([0.0, 1.0, 5.0])
        m = compute_metrics(y, y)
        assert m.mae == 0.0 and m.rmse == 0.0
        assert m.r2 == 1.0 and m.smape == 0.0 and m.cpc == 1.0

    def test_negative_predictions_clipped(self):
        m = compute_metrics(np.array([0.0, 2.0]), np.array([-3.0, 2.0]))
        assert m.mae == 0.0

    def test_empty_rows_do_not_count_in_smape(self):
        assert smape(np.array([0.0, 2.0]), np.array([0.0, 0.0])) == pytest.approx(1.0)

    def test_cpc_both_empty(self):
        assert cpc(np.zeros(3), np.zeros(3)) == 1.0

    def test_cpc_value(self):
        assert cpc(np.array([1.0, 3.0]), np.array([2.0, 1.0])) == pytest.approx(2 * 2 / 7)

    def test_r2_undefined_for_constant_target(self):
        assert r2(np.ones(4), np.arange(4.0)) is None

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            compute_metrics(np.zeros(2), np.zeros(3))

    def test_objective_direction(self):
        m = compute_metrics(np.array([1.0, 2.0]), np.array([1.0, 3.0]))
        assert objective_score(m, "mae") == pytest.approx(0.5)
        assert objective_score(m, "cpc") == pytest.approx(-m.cpc)
        assert objective_score(compute_metrics(np.ones(2), np.ones(2)), "r2") == np.inf

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_invariant_under_row_permutation(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.poisson(3.0, 200).astype(float)
        y_hat = rng.gamma(2.0, 1.5, 200)
        perm = rng.permutation(200)
        a = compute_metrics(y, y_hat)
        b = compute_metrics(y[perm], y_hat[perm])
        for name in ("mae", "rmse", "r2", "smape", "cpc"):
            assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_cpc_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.poisson(2.0, 100).astype(float)
        y_hat = rng.gamma(1.0, 2.0, 100)
        assert cpc(y, y_hat) == pytest.approx(cpc(y_hat, y), rel=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_bounds_hold_without_clamping(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.poisson(1.0, 500).astype(float) * rng.integers(0, 2, 500)
        y_hat = rng.exponential(3.0, 500)
        m = compute_metrics(y, y_hat)
        assert m.rmse >= m.mae
        assert 0.0 <= m.smape <= 2.0
        assert 0.0 <= m.cpc <= 1.0

    def test_disjoint_support_gives_extreme_values(self):
        m = compute_metrics(np.array([0.0, 4.0]), np.array([3.0, 0.0]))
        assert m.smape == 2.0
        assert m.cpc == 0.0


# ============================================================================
# Diagnostics
# ============================================================================

class TestDiagnostics:
    """Tests for grouped diagnostics."""

    def test_hour_averaged_cpc(self, pf):
        expected = np.mean([cpc(np.array([0.0, 2.0]), np.array([0.0, 2.0])),
                            cpc(np.array([4.0, 2.0]), np.array([2.0, 6.0]))])
        assert cpc_hour_averaged(pf.frame) == pytest.approx(expected)

    def test_quantile_bins_are_right_closed(self):
        bins, edges = quantile_bins(np.array([1.0, 2.0, 3.0, 4.0]), 2)
        np.testing.assert_allclose(edges, [1.0, 2.5, 4.0])
        np.testing.assert_array_equal(bins, [0, 0, 1, 1])

    def test_constant_flows_use_one_bin(self):
        bins, edges = quantile_bins(np.full(5, 3.0), 4)
        assert (bins == 0).all()
        assert len(edges) == 2

    def test_quantile_bins_need_two(self):
        with pytest.raises(ValueError):
            quantile_bins(np.arange(5.0), 1)

    def test_quantile_diagnostics_cover_every_row(self, pf):
        reports = quantile_diagnostics(pf, n_bins=2)
        assert sum(r.n for r in reports) == 4
        assert all(r.group == "flow_quantile" for r in reports)
        assert reports[0].extras["lower"] == 0.0

    def test_zone_errors(self, pf):
        table = zone_error_table(pf)
        assert list(table["zone_id"]) == [1, 2]
        assert table.loc[0, "mae"] == pytest.approx(1.0)
        assert table.loc[1, "mae"] == pytest.approx(2.0)
        assert table.loc[0, "smape"] == pytest.approx((0.0 + 2 * 2 / 6) / 2)

    def test_pair_smape(self, pf):
        table = pair_smape_table(pf)
        assert len(table) == 2
        assert (table["n"] == 2).all()

    def test_calibration_counts(self, pf):
        table = calibration_table(pf, n_bins=2)
        assert table["n"].sum() == 4
        assert (table["model"] == "m").all()


# ============================================================================
# Suites and Reports
# ============================================================================

class TestSuites:
    """Tests for suite runs with failure isolation."""

    def test_failure_becomes_error_row(self, ctx):
        specs = [get_baseline_spec("gravity_flow"), FAILING, get_baseline_spec("radiation")]
        result = run_suite(specs, ctx, setting="main")
        assert [r.model for r in result.reports] == ["Gravity (flow mass)", "Broken", "Radiation"]
        assert result.reports[1].error == "estimation:singular"
        assert [r.model for r in result.failed] == ["Broken"]
        assert set(result.models) == {"gravity_flow", "radiation"}
        assert all(r.setting == "main" for r in result.reports)

    def test_parallel_keeps_spec_order(self, ctx):
        specs = [get_baseline_spec("radiation"), get_baseline_spec("gravity_flow"), get_baseline_spec("gravity_poi")]
        serial = run_suite(specs, ctx)
        parallel = run_suite(specs, ctx, parallel=True)
        assert [r.model for r in parallel.reports] == [r.model for r in serial.reports]
        for a, b in zip(serial.reports, parallel.reports):
            assert a.mae == pytest.approx(b.mae)

    def test_task_aggregates_shared_across_threads(self, task):
        fresh = task.hold_out([0])
        with ThreadPoolExecutor(max_workers=8) as pool:
            margins = list(pool.map(lambda _: fresh.margins, range(16)))
            masses = list(pool.map(lambda _: fresh.masses("flow_out_total"), range(16)))
        assert all(m is margins[0] for m in margins)
        assert all(m is masses[0] for m in masses)

    def test_fixed_effects_no_worse_than_plain_ppml(self, ctx):
        plain, fe = run_suite([get_baseline_spec("ppml"), get_baseline_spec("ppml_fe")], ctx).reports
        assert plain.error is None and fe.error is None
        assert fe.mae <= plain.mae

    def test_timed_suite(self, ctx):
        report = run_suite([get_baseline_spec("radiation")], ctx, timed=True).reports[0]
        assert report.train_s is not None and report.train_s >= 0
        assert report.pred_s is not None

    def test_time_models_one_row_per_model(self, ctx):
        specs = [get_baseline_spec("radiation"), get_baseline_spec("gravity_flow")]
        result = time_models(specs, ctx)
        assert [r.model for r in result.reports] == [s.label for s in specs]
        for report in result.reports:
            assert report.train_s > 0
            assert report.pred_s > 0

    def test_reports_frame_blanks_failed_metrics(self):
        reports = [
            MetricReport(model="ok", n=3, mae=1.0, rmse=1.0, smape=0.1, cpc=0.9),
            MetricReport(model="bad", error="estimation:singular"),
        ]
        frame = reports_frame(reports, ["model", "mae", "cpc", "error"])
        assert list(frame.columns) == ["model", "mae", "cpc", "error"]
        assert frame.loc[0, "mae"] == 1.0
        assert pd.isna(frame.loc[1, "mae"])


# ============================================================================
# Spatial Holdout
# ============================================================================

class TestSpatialHoldout:
    """Tests for zone selection and refits without held-out zones."""

    def test_fraction_selection_is_seeded(self, task):
        a = select_holdout_zones(task, HoldoutSpec(fraction=0.25, seed=1))
        b = select_holdout_zones(task, HoldoutSpec(fraction=0.25, seed=1))
        assert a == b
        assert len(a) == 2

    def test_unknown_borough(self, task):
        with pytest.raises(EmptyTaskError) as exc:
            select_holdout_zones(task, HoldoutSpec(mode="borough", borough="Atlantis"))
        assert exc.value.code == "empty_task:unknown_borough"

    def test_held_task_excludes_zones_from_training(self, task):
        held = task.hold_out((0, 1))
        train = held.rows("train")
        test = held.rows("test")
        assert not (train["o_idx"].isin([0, 1]) | train["d_idx"].isin([0, 1])).any()
        assert (test["o_idx"].isin([0, 1]) | test["d_idx"].isin([0, 1])).all()
        assert held.training_frame["o_idx"].isin([0, 1]).sum() == 0

    def test_holdout_suite_scores_touching_rows(self, task, config):
        spec = HoldoutSpec(fraction=0.25, seed=2)
        result = spatial_holdout(task, spec, [get_baseline_spec("gravity_flow")], config.models, seed=0,
                                 setting="spatial_holdout")
        report = result.reports[0]
        assert report.error is None
        assert report.group == "holdout"
        assert report.group_value == "2 zones"
        assert report.setting == "spatial_holdout"

    @pytest.mark.slow
    def test_zero_mass_policy_collapses_flow_gravity(self):
        flat = SyntheticCityConfig(n_zones=12, n_hours=24 * 14, seed=5, process=SyntheticProcess(target_mean_flow=6.0))
        config = small_config(data=DataSource(synthetic=flat))
        task = prepare_task(config, 0)
        specs = [get_baseline_spec("gravity_flow"), get_baseline_spec("gravity_poi")]
        result = spatial_holdout(task, HoldoutSpec(fraction=0.25, mass_policy="zero", seed=0), specs,
                                 config.models, seed=0)
        flow, poi = result.reports
        assert flow.error is None and poi.error is None
        # held-out zones have no training flow, so their flow mass is zero
        assert flow.cpc < 0.05
        assert poi.cpc > 0.3


# ============================================================================
# Seed Aggregation
# ============================================================================

class TestSeedStats:
    """Tests for Student-t intervals over seeds."""

    def test_single_value_has_no_interval(self):
        assert mean_ci([2.0]) == (2.0, None)

    def test_half_width(self):
        values = [1.0, 2.0, 3.0]
        mean, half = mean_ci(values, 0.95)
        assert mean == pytest.approx(2.0)
        assert half == pytest.approx(stats.t.ppf(0.975, 2) * 1.0 / np.sqrt(3))

    def test_empty_values(self):
        with pytest.raises(ValueError):
            mean_ci([])

    def test_aggregate_skips_failed_rows(self):
        reports = [
            MetricReport(model="a", seed=0, n=1, mae=1.0, rmse=1.0, cpc=0.5),
            MetricReport(model="a", seed=1, n=1, mae=3.0, rmse=3.0, cpc=0.7),
            MetricReport(model="a", seed=2, error="estimation:singular"),
            MetricReport(model="b", seed=0, n=1, mae=2.0, rmse=2.0, cpc=0.6),
        ]
        agg = {(s.model, s.metric): s for s in aggregate_seed_stats(reports, metrics=("mae", "r2"))}
        assert agg[("a", "mae")].mean == pytest.approx(2.0)
        assert agg[("a", "mae")].n == 2
        assert agg[("b", "mae")].half_width is None
        assert agg[("a", "r2")].mean is None and agg[("a", "r2")].n == 0
