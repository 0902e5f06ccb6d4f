"""
Tests for residual learning on top of physical baselines.
"""

import numpy as np
import pytest

from ambit.baselines import BASE_FEATURE, FitContext, FittedModel
from ambit.errors import EstimationError
from ambit.evaluation import run_suite
from ambit.experiments import load_config
from ambit.metrics import compute_metrics
from ambit.residual import (
    AMBIT_SPECS,
    AmbitModel,
    anchor_label,
    build_residual_frame,
    fit_ambit,
    model_registry,
    reconstruct,
    residual_target,
    run_anchor_ablation,
)
from ambit.schemas import AnchorSpec
from ambit.task import prepare_task

from .conftest import CONFIG_DIR, small_config


class ConstantModel(FittedModel):
    """Predicts one value everywhere."""

    def __init__(self, value: float):
        self.value = value
        self.label = f"constant {value}"
        self.family = "physical"

    def predict(self, task, rows):
        return np.full(len(rows), self.value)

    def to_dict(self):
        return {"label": self.label, "value": self.value}


# ============================================================================
# Target and Reconstruction
# ============================================================================

class TestReconstruction:
    """Tests for the log residual and its inverse."""

    def test_zero_residual_returns_baseline_exactly(self):
        t_base = np.array([0.0, 0.3, 7.123456789, 1e6])
        np.testing.assert_array_equal(reconstruct(t_base, np.zeros(4)), t_base)

    def test_inverse_of_target(self):
        flow = np.array([0.0, 1.0, 5.0, 40.0])
        t_base = np.array([2.0, 1.0, 0.5, 60.0])
        np.testing.assert_allclose(reconstruct(t_base, residual_target(flow, t_base)), flow, atol=1e-9)

    def test_round_trip_on_many_random_pairs(self):
        rng = np.random.default_rng(11)
        n = 100_000
        flow = np.floor(rng.lognormal(1.0, 2.0, n)) * (rng.random(n) > 0.3)
        t_base = rng.lognormal(0.0, 3.0, n) * (rng.random(n) > 0.05)
        out = reconstruct(t_base, residual_target(flow, t_base))
        np.testing.assert_allclose(out, flow, rtol=1e-10, atol=1e-12)

    def test_predictions_never_negative(self):
        out = reconstruct(np.array([0.0, 1.0]), np.array([-5.0, -10.0]))
        assert (out >= 0).all()


# ============================================================================
# Residual Frames
# ============================================================================

class TestResidualFrame:
    """Tests for residual targets and features."""

    def test_base_feature_optional(self, task):
        rows = task.rows("train")
        with_base = build_residual_frame(task, rows, ConstantModel(2.0), AnchorSpec())
        without = build_residual_frame(task, rows, ConstantModel(2.0), AnchorSpec(include_base_feature=False))
        assert BASE_FEATURE in with_base.features.columns
        assert BASE_FEATURE not in without.features.columns
        np.testing.assert_allclose(with_base.features[BASE_FEATURE], np.log1p(2.0))
        np.testing.assert_allclose(with_base.r, np.log1p(rows["flow"]) - np.log1p(2.0))

    def test_invalid_baseline_names_the_row(self, task):
        rows = task.rows("train")
        with pytest.raises(EstimationError) as exc:
            build_residual_frame(task, rows, ConstantModel(-1.0), AnchorSpec())
        assert exc.value.code == "estimation:invalid_baseline"
        assert exc.value.diagnostics["row"] == int(rows.index[0])


# ============================================================================
# Composed Models
# ============================================================================

class TestAmbitModel:
    """Tests for fitting and predicting with the composed model."""

    def test_fit_beats_its_anchor_on_validation(self, ctx, task):
        model = fit_ambit(ctx, AnchorSpec(anchor="gravity_poi"))
        rows = task.rows("val")
        y = task.y("val")
        anchor_mae = np.abs(model.baseline.predict(task, rows) - y).mean()
        assert np.abs(model.predict(task, rows) - y).mean() < anchor_mae
        assert model.label == "AMBIT (Residual + Gravity POI)"

    def test_zero_trees_returns_anchor(self, config, task):
        settings = config.models.model_copy(
            update={"boost": config.models.boost.model_copy(update={"n_estimators": 0})}
        )
        ctx = FitContext(task=task, settings=settings, seed=0)
        model = fit_ambit(ctx, AnchorSpec(anchor="gravity_flow"))
        rows = task.rows("test")
        np.testing.assert_array_equal(model.predict(task, rows), model.baseline.predict(task, rows))
        y = task.y("test")
        assert compute_metrics(y, model.predict(task, rows)) == compute_metrics(y, model.baseline.predict(task, rows))

    def test_anchor_is_shared_within_a_context(self, ctx):
        a = fit_ambit(ctx, AnchorSpec(anchor="gravity_poi"))
        b = fit_ambit(ctx, AnchorSpec(anchor="gravity_poi", include_base_feature=False))
        assert a.baseline is b.baseline

    def test_manifest_references_baseline_and_ensemble(self, ctx):
        model = fit_ambit(ctx, AnchorSpec(anchor="gravity_poi"))
        manifest = model.to_dict()
        assert manifest["family"] == "residual"
        assert manifest["anchor"]["anchor"] == "gravity_poi"
        assert "trees" in manifest["ensemble"]
        assert manifest["baseline"]["label"] == "Gravity (POI mass)"

    def test_design_matches_ensemble_features(self, ctx, task):
        model = fit_ambit(ctx, AnchorSpec())
        assert isinstance(model, AmbitModel)
        design = model.design(task, task.rows("test"))
        assert list(design.columns) == list(model.ensemble.feature_names)


@pytest.mark.slow
class TestDeskBenchmark:
    """Residual model against its anchor and the direct model on the desk-scale city."""

    def test_improves_on_anchor_and_matches_direct_model(self):
        config = load_config(CONFIG_DIR / "desk.toml")
        ctx = FitContext(task=prepare_task(config, 0), settings=config.models, seed=0)
        registry = model_registry()
        result = run_suite([registry["gravity_poi"], registry["xgb_direct"], registry["ambit"]], ctx)
        assert all(r.error is None for r in result.reports)
        anchor, direct, ambit = (r.mae for r in result.reports)
        assert ambit <= 0.7 * anchor
        assert abs(ambit - direct) <= 0.05 * direct


class TestRegistry:
    """Tests for labels and the model registry."""

    def test_labels(self):
        assert anchor_label(AnchorSpec(anchor="gravity_poi", include_base_feature=False)) == \
            "AMBIT (Gravity POI, no base feat)"
        assert anchor_label(AnchorSpec(anchor="ppml")) == "xgb residual gravity ppml"
        assert anchor_label(AnchorSpec(anchor="gravity_flow", include_base_feature=False)).endswith("(no base feat)")

    def test_registry_codes_unique(self):
        registry = model_registry()
        assert "ambit" in registry and "ppml" in registry and "xgb_direct" in registry
        assert len({s.code for s in AMBIT_SPECS}) == len(AMBIT_SPECS)


# ============================================================================
# Anchor Ablation
# ============================================================================

class TestAnchorAblation:
    """Tests for fitting one residual model per anchor and seed."""

    def test_one_row_per_anchor_and_seed(self, config, source):
        anchors = [AnchorSpec(anchor="gravity_flow"), AnchorSpec(anchor="gravity_poi", include_base_feature=False)]
        reports = run_anchor_ablation(config, anchors, seeds=[0, 1], source=source)
        assert len(reports) == 4
        assert {r.seed for r in reports} == {0, 1}
        assert all(r.error is None for r in reports)

    def test_needs_anchors(self, config):
        with pytest.raises(ValueError):
            run_anchor_ablation(config, [], seeds=[0])

    def test_failed_task_becomes_error_rows(self, source):
        config = small_config().model_copy(
            update={"filtering": small_config().filtering.model_copy(update={"min_total": 10**9})}
        )
        reports = run_anchor_ablation(config, [AnchorSpec()], seeds=[0], source=source)
        assert len(reports) == 1
        assert reports[0].error == "empty_task:no_pairs"
