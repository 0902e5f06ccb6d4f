"""
Residual learning on top of a physical baseline.

The learner fits r = log(1 + T) - log(1 + T_base) with squared error and
starting score 0, and predictions are reconstructed as
    T_hat = max(0, exp(log(1 + T_base) + r_hat) - 1)
so an ensemble with no trees returns the baseline itself.
"""

from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd

from .baselines import (
    BASE_FEATURE,
    BASELINE_SPECS,
    FitContext,
    FittedModel,
    ModelSpec,
    baseline_predictions,
)
from .config import logger
from .evaluation import error_report, run_suite, spatial_holdout
from .features import build_feature_frame
from .gbt import Ensemble, train
from .schemas import AnchorName, AnchorSpec, BoostConfig, ExperimentConfig, FeatureConfig, HoldoutSpec, MetricReport
from .task import ODTask, SourceData, load_source, prepare_task

# Registry code of the baseline each anchor is composed on
ANCHOR_BASELINES: dict[AnchorName, str] = {
    "gravity_flow": "gravity_flow",
    "gravity_poi": "gravity_poi",
    "ppml": "ppml",
    "ppml_all": "ppml_all",
    "gravity_time_segmented": "gravity_time",
    "gravity_dc": "gravity_dc",
}

_ANCHOR_NAMES: dict[AnchorName, str] = {
    "gravity_flow": "gravity flow",
    "gravity_poi": "gravity poi",
    "ppml": "gravity ppml",
    "ppml_all": "gravity ppml all",
    "gravity_time_segmented": "gravity time",
    "gravity_dc": "gravity dc",
}


def anchor_label(anchor: AnchorSpec) -> str:
    """Report label of a residual model composed on an anchor."""
    if anchor.anchor == "gravity_poi":
        if anchor.include_base_feature:
            return "AMBIT (Residual + Gravity POI)"
        return "AMBIT (Gravity POI, no base feat)"
    label = f"xgb residual {_ANCHOR_NAMES[anchor.anchor]}"
    return label if anchor.include_base_feature else f"{label} (no base feat)"


# ============================================================================
# Residual target and reconstruction
# ============================================================================

def residual_target(flow: np.ndarray, t_base: np.ndarray) -> np.ndarray:
    return np.log1p(np.asarray(flow, dtype=float)) - np.log1p(np.asarray(t_base, dtype=float))


def reconstruct(t_base: np.ndarray, r_hat: np.ndarray) -> np.ndarray:
    """Non-negative flow from a baseline and a predicted residual; exact where r_hat == 0."""
    t_base = np.asarray(t_base, dtype=float)
    r_hat = np.asarray(r_hat, dtype=float)
    composed = np.expm1(np.log1p(t_base) + r_hat)
    return np.where(r_hat == 0, t_base, np.maximum(composed, 0.0))


@dataclass(frozen=True, eq=False)
class ResidualFrame:
    """Rows with observed flow, baseline prediction, residual target and learner features."""
    rows: pd.DataFrame
    flow: np.ndarray
    t_base: np.ndarray
    r: np.ndarray
    features: pd.DataFrame

    def __len__(self) -> int:
        return len(self.rows)


def residual_features(
    task: ODTask,
    rows: pd.DataFrame,
    t_base: np.ndarray,
    anchor: AnchorSpec,
    config: FeatureConfig,
) -> pd.DataFrame:
    frame = build_feature_frame(task.zones, task.distance_km, rows, config)
    if anchor.include_base_feature:
        frame[BASE_FEATURE] = np.log1p(t_base)
    return frame


def build_residual_frame(
    task: ODTask,
    rows: pd.DataFrame,
    baseline: FittedModel,
    anchor: AnchorSpec,
    config: Optional[FeatureConfig] = None,
) -> ResidualFrame:
    """
    Residual targets and features for rows of a task.

    Raises:
        EstimationError: the baseline predicts NaN or a negative value (names the row)
    """
    if config is None:
        config = FeatureConfig()
    t_base = baseline_predictions(baseline, task, rows)
    flow = rows["flow"].to_numpy(dtype=float)
    return ResidualFrame(
        rows=rows,
        flow=flow,
        t_base=t_base,
        r=residual_target(flow, t_base),
        features=residual_features(task, rows, t_base, anchor, config),
    )


# ============================================================================
# Composed model
# ============================================================================

@dataclass(frozen=True, eq=False)
class AmbitModel(FittedModel):
    """Physical baseline composed with a boosted residual learner."""
    label: str
    baseline: FittedModel
    ensemble: Ensemble
    anchor: AnchorSpec
    features: FeatureConfig
    family: str = "residual"

    def inputs(self, task: ODTask, rows: pd.DataFrame) -> tuple[np.ndarray, pd.DataFrame]:
        """Baseline prediction and residual-learner features per row."""
        t_base = baseline_predictions(self.baseline, task, rows)
        return t_base, residual_features(task, rows, t_base, self.anchor, self.features)

    def design(self, task: ODTask, rows: pd.DataFrame) -> pd.DataFrame:
        return self.inputs(task, rows)[1]

    def predict(self, task: ODTask, rows: pd.DataFrame) -> np.ndarray:
        t_base, frame = self.inputs(task, rows)
        return reconstruct(t_base, self.ensemble.predict_link(frame))

    def to_dict(self) -> dict[str, Any]:
        """Manifest referencing the baseline and the ensemble."""
        return {
            "label": self.label,
            "family": self.family,
            "anchor": self.anchor.model_dump(),
            "baseline": self.baseline.to_dict(),
            "ensemble": self.ensemble.to_dict(),
        }


def fit_ambit(
    ctx: FitContext,
    anchor: AnchorSpec,
    boost: Optional[BoostConfig] = None,
    label: Optional[str] = None,
) -> AmbitModel:
    """
    Fit the anchor on training rows, then boost the residual with validation early stopping.

    Args:
        ctx: Task, settings and seed
        anchor: Baseline to compose on and whether log1p(T_base) is a feature
        boost: Boosting configuration (objective forced to squared, base score 0)
        label: Report label (derived from the anchor when None)
    """
    task = ctx.task
    baseline = ctx.fit(ANCHOR_BASELINES[anchor.anchor])
    features = ctx.settings.features
    config = (boost or ctx.settings.boost).model_copy(
        update={"seed": ctx.seed, "objective": "squared", "base_score": 0.0}
    )

    train_frame = build_residual_frame(task, task.rows("train"), baseline, anchor, features)
    val_frame = build_residual_frame(task, task.rows("val"), baseline, anchor, features)
    ensemble = train(train_frame.features, train_frame.r, val_frame.features, val_frame.r, config)
    label = label or anchor_label(anchor)
    logger.info(f"{label}: {ensemble.best_iteration} residual trees on {len(train_frame)} rows")
    return AmbitModel(label=label, baseline=baseline, ensemble=ensemble, anchor=anchor, features=features)


def ambit_spec(anchor: AnchorSpec, boost: Optional[BoostConfig] = None, code: Optional[str] = None) -> ModelSpec:
    """ModelSpec fitting a residual model on one anchor."""
    label = anchor_label(anchor)
    if code is None:
        code = f"ambit_{anchor.anchor}" + ("" if anchor.include_base_feature else "_nobase")
    return ModelSpec(
        code=code,
        label=label,
        family="residual",
        description=f"Boosted log residual over {ANCHOR_BASELINES[anchor.anchor]}",
        fit=lambda ctx: fit_ambit(ctx, anchor, boost, label),
    )


AMBIT_SPECS: list[ModelSpec] = [
    ambit_spec(AnchorSpec(anchor="gravity_poi"), code="ambit"),
    ambit_spec(AnchorSpec(anchor="gravity_poi", include_base_feature=False), code="ambit_nobase"),
    ambit_spec(AnchorSpec(anchor="gravity_flow")),
    ambit_spec(AnchorSpec(anchor="ppml")),
    ambit_spec(AnchorSpec(anchor="ppml_all")),
    ambit_spec(AnchorSpec(anchor="gravity_time_segmented")),
    ambit_spec(AnchorSpec(anchor="gravity_dc")),
]


def model_registry() -> dict[str, ModelSpec]:
    """Every reportable model by code."""
    return {spec.code: spec for spec in [*BASELINE_SPECS, *AMBIT_SPECS]}


# ============================================================================
# Anchor ablation
# ============================================================================

def run_anchor_ablation(
    config: ExperimentConfig,
    anchors: Sequence[AnchorSpec],
    seeds: Sequence[int],
    holdout: Optional[HoldoutSpec] = None,
    source: Optional[SourceData] = None,
    extra: Sequence[ModelSpec] = (),
) -> list[MetricReport]:
    """
    Fit and score one residual model per (anchor, seed).

    A failing anchor becomes an error row; the others still run. With a holdout
    spec every model is also refit and scored under spatial holdout.

    Args:
        config: Experiment configuration (task and model settings)
        anchors: Anchors to compose on
        seeds: Sampling and training seeds
        holdout: Optional spatial holdout protocol
        source: Preloaded source data
        extra: Additional specs scored alongside the anchors (e.g. a direct model)

    Returns:
        MetricReport rows with setting "main" or "spatial_holdout"
    """
    if not anchors:
        raise ValueError("anchor ablation needs at least one anchor")
    if not seeds:
        raise ValueError("anchor ablation needs at least one seed")
    source = source or load_source(config.data)
    specs = [*extra, *(ambit_spec(a) for a in anchors)]

    reports: list[MetricReport] = []
    for seed in seeds:
        try:
            task = prepare_task(config, seed, source)
        except Exception as e:
            logger.error(f"Task preparation failed for seed {seed}: {e}")
            reports += [error_report(s.label, e, seed=seed, setting="main") for s in specs]
            continue
        settings = config.models
        ctx = FitContext(task=task, settings=settings, seed=seed)
        reports += run_suite(specs, ctx, parallel=config.parallel, setting="main").reports
        if holdout is not None:
            try:
                held = spatial_holdout(task, holdout, specs, settings, seed, config.parallel,
                                       setting="spatial_holdout")
                reports += held.reports
            except Exception as e:
                logger.error(f"Spatial holdout failed for seed {seed}: {e}")
                reports += [error_report(s.label, e, seed=seed, setting="spatial_holdout") for s in specs]
    return reports
