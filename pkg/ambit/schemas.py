"""
Pydantic models for AMBIT parameters, configurations and reports.

This module defines the validated, serializable structures used throughout the pipeline:
- Task construction settings (ingest filters, pair filters, splits, synthetic city process)
- Fitted parameter records for the physical baselines and count GLMs
- Boosting, residual-anchor and holdout configurations
- Metric reports, seed aggregates and attribution summaries
- The top-level ExperimentConfig consumed by the CLI presets
"""

import hashlib
import json
from datetime import datetime
from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .config import (
    BETA_EXP_GRID,
    BETA_GRID,
    CONFIDENCE_LEVEL,
    DEFAULT_MAX_EVAL_ROWS,
    DEFAULT_MAX_TRAIN_ROWS,
    DEFAULT_MIN_PAIR_TOTAL,
    DEFAULT_SEED,
    DEFAULT_TOP_K_PAIRS,
    DELTA_GRID,
    FE_MAX_ROWS,
    FE_RIDGE,
    GAMMA_GRID,
    HIST_MAX_BINS,
    HOLDOUT_FRACTION,
    IO_L_SCALE_GRID,
    IPF_MAX_ITER,
    IPF_TOLERANCE,
    IRLS_MAX_ITER,
    IRLS_TOLERANCE,
    MAX_TRIP_KM,
    MAX_TRIP_MINUTES,
    MIN_TRIP_KM,
    MIN_TRIP_MINUTES,
    RHO_GRID,
    TWEEDIE_POWER,
    ZERO_SAMPLE_HOURS,
    ZERO_SAMPLE_MAX_ROWS,
    ZIP_EM_ITERS,
)


# ============================================================================
# Task Construction
# ============================================================================

class IngestFilters(BaseModel):
    """Duration/distance bounds applied to raw trip records (inclusive)."""
    min_minutes: float = Field(MIN_TRIP_MINUTES, gt=0, description="Shortest accepted trip (minutes)")
    max_minutes: float = Field(MAX_TRIP_MINUTES, gt=0, description="Longest accepted trip (minutes)")
    min_km: float = Field(MIN_TRIP_KM, gt=0, description="Shortest accepted trip (km)")
    max_km: float = Field(MAX_TRIP_KM, gt=0, description="Longest accepted trip (km)")

    @model_validator(mode="after")
    def check_bounds(self) -> "IngestFilters":
        if self.min_minutes > self.max_minutes or self.min_km > self.max_km:
            raise ValueError("lower filter bound exceeds upper bound")
        return self


class FilterConfig(BaseModel):
    """OD-pair filter computed on training-period totals."""
    min_total: int = Field(DEFAULT_MIN_PAIR_TOTAL, ge=0, description="Minimum training-period trips per pair")
    top_k: Optional[int] = Field(DEFAULT_TOP_K_PAIRS, ge=1, description="Keep at most this many pairs (None = no cap)")


class SplitSpec(BaseModel):
    """
    Time-based split with per-split down-sampling.

    Training covers hours before train_end, validation [train_end, val_end),
    test [val_end, test_end).
    """
    model_config = ConfigDict(frozen=True)

    train_end: datetime
    val_end: datetime
    test_end: datetime
    sampling: Literal["random", "stratified_by_flow"] = "random"
    max_train_rows: int = Field(DEFAULT_MAX_TRAIN_ROWS, ge=1)
    max_eval_rows: int = Field(DEFAULT_MAX_EVAL_ROWS, ge=1)
    seed: int = DEFAULT_SEED

    @model_validator(mode="after")
    def check_order(self) -> "SplitSpec":
        if not (self.train_end < self.val_end < self.test_end):
            raise ValueError("split boundaries must satisfy train_end < val_end < test_end")
        return self


class SyntheticProcess(BaseModel):
    """
    Generative parameters of the synthetic city.

    Flows are drawn T ~ Poisson(k * m_o^alpha * m_d^gamma * f(d) * g(hour) * h(o, d, hour)),
    where m is the smoothed POI total of each zone.
    """
    k: Optional[float] = Field(None, gt=0, description="Rate scale; derived from target_mean_flow when None")
    target_mean_flow: float = Field(3.0, gt=0, description="Mean cell rate used to derive k")
    alpha: float = 1.0
    gamma: float = 1.0
    beta: float = Field(1.5, ge=0)
    decay_form: Literal["power", "exponential"] = "power"
    temporal_profile: Literal["flat", "diurnal"] = "flat"
    diurnal_amplitude: float = Field(0.6, ge=0, lt=1)
    weekend_factor: float = Field(1.0, gt=0)
    poi_multiplier_strength: float = Field(0.0, ge=0, description="Strength of the POI/hour multiplier h")
    origin_effect_sd: float = Field(0.0, ge=0, description="Log-scale sd of injected origin multipliers")
    zero_inflation: float = Field(0.0, ge=0, lt=1, description="Probability a cell is a structural zero")
    include_diagonal: bool = False
    keep_zeros: bool = False
    side_km: float = Field(20.0, gt=0)
    n_boroughs: int = Field(4, ge=1, le=9)
    poi_tail: float = Field(1.5, gt=0, description="Pareto shape of POI counts (smaller = heavier tail)")
    poi_scale: float = Field(20.0, gt=0)


class SyntheticCityConfig(BaseModel):
    """Size, seed and process of a synthetic city."""
    n_zones: int = Field(30, ge=2)
    n_hours: int = Field(24 * 42, ge=1)
    start: datetime = datetime(2025, 1, 6)
    seed: int = 7
    process: SyntheticProcess = Field(default_factory=SyntheticProcess)


# ============================================================================
# Spatial Interaction Parameters
# ============================================================================

class GravityParams(BaseModel):
    """Parameters of a gravity model k * m_o^alpha * m_d^gamma * f(d)."""
    model_config = ConfigDict(frozen=True)

    k: float = Field(1.0, gt=0)
    alpha: float = 1.0
    gamma: float = 1.0
    beta: float = Field(1.0, ge=0)
    decay_form: Literal["power", "exponential"] = "power"
    decay_clamped: bool = Field(False, description="OLS decay was negative and refit at 0")


class CompetingDestParams(BaseModel):
    """Competing-destinations extension of a constrained gravity allocation."""
    model_config = ConfigDict(frozen=True)

    base: GravityParams
    rho: float = Field(1.0, ge=0, description="Competition exponent on accessibility")
    delta: float = Field(1.0, ge=0, description="Distance decay inside the accessibility sum")


class TuningRecord(BaseModel):
    """One grid candidate evaluated on the validation split."""
    family: str
    params: dict[str, float]
    metrics: dict[str, Optional[float]] = Field(default_factory=dict)
    chosen: bool = False
    error: Optional[str] = None


class GridConfig(BaseModel):
    """Explicit tuning grids for decay and competition parameters."""
    beta: list[float] = Field(default_factory=lambda: list(BETA_GRID), min_length=1)
    beta_exp: list[float] = Field(default_factory=lambda: list(BETA_EXP_GRID), min_length=1)
    gamma: list[float] = Field(default_factory=lambda: list(GAMMA_GRID), min_length=1)
    rho: list[float] = Field(default_factory=lambda: list(RHO_GRID), min_length=1)
    delta: list[float] = Field(default_factory=lambda: list(DELTA_GRID), min_length=1)
    io_l_scale: list[float] = Field(default_factory=lambda: list(IO_L_SCALE_GRID), min_length=1)


# ============================================================================
# Count GLMs
# ============================================================================

class ZeroAugmentationConfig(BaseModel):
    """How true-zero OD cells are added to the positive training sample."""
    sampled_hours: int = Field(ZERO_SAMPLE_HOURS, ge=1)
    zero_budget: int = Field(ZERO_SAMPLE_MAX_ROWS, ge=0)
    zero_pos_ratio_target: Optional[float] = Field(None, ge=0)
    universe: Literal["all", "task"] = Field("all", description="Zones spanning the materialized matrices")


class ZeroAugmentationStats(BaseModel):
    """Realized counts of a zero-augmented sample."""
    sampled_hours: int
    zero_budget: int
    rows: int
    zeros: int
    positives: int
    zero_pos_ratio: float


class FixedEffectsConfig(BaseModel):
    """One-hot fixed-effect groups for FE-PPML."""
    origin: bool = True
    destination: bool = True
    time: bool = True
    time_col: str = "hour_of_week"
    interactions: bool = True
    interaction_time_col: str = "hour_of_day"
    max_rows: int = Field(FE_MAX_ROWS, ge=1)
    ridge: float = Field(FE_RIDGE, ge=0)


class GlmFit(BaseModel):
    """Fitted count GLM (Poisson, negative binomial or zero-inflated Poisson)."""
    model_config = ConfigDict(frozen=True)

    family: Literal["poisson", "negbin", "zip"] = "poisson"
    columns: list[str]
    coefficients: list[float]
    dispersion: float = Field(0.0, ge=0, description="NB dispersion a in Var = mu + a mu^2")
    inflation: float = Field(0.0, ge=0, le=1, description="ZIP structural-zero probability")
    deviance_trace: list[float] = Field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    ridge: float = Field(0.0, ge=0)
    score_max: float = 0.0
    flags: list[str] = Field(default_factory=list)

    def coef(self, name: str) -> float:
        return self.coefficients[self.columns.index(name)]


# ============================================================================
# Boosting
# ============================================================================

class BoostConfig(BaseModel):
    """
    Gradient-boosted tree configuration.

    Defaults mirror the validated comparator configuration; desk-scale
    experiments override rounds, depth and learning rate.
    """
    n_estimators: int = Field(500, ge=0)
    max_depth: int = Field(8, ge=1)
    learning_rate: float = Field(0.05, gt=0, le=1)
    subsample: float = Field(0.8, gt=0, le=1)
    colsample: float = Field(0.8, gt=0, le=1)
    early_stopping_rounds: int = Field(50, ge=1)
    objective: Literal["squared", "poisson", "tweedie"] = "squared"
    tweedie_power: float = Field(TWEEDIE_POWER, gt=1, lt=2)
    monotone: dict[str, int] = Field(default_factory=dict, description="Feature name -> sign in {-1, 0, +1}")
    seed: int = DEFAULT_SEED
    min_child_weight: float = Field(1.0, ge=0)
    reg_lambda: float = Field(1.0, ge=0, description="Leaf L2 penalty")
    min_split_gain: float = Field(0.0, ge=0)
    max_delta_step: float = Field(0.0, ge=0, description="Cap on |leaf| before shrinkage (0 = none)")
    max_bins: int = Field(HIST_MAX_BINS, ge=2, le=HIST_MAX_BINS)
    base_score: Optional[float] = Field(None, description="Initial link-space prediction (None = objective default)")

    @field_validator("monotone")
    @classmethod
    def check_signs(cls, v: dict[str, int]) -> dict[str, int]:
        for name, sign in v.items():
            if sign not in (-1, 0, 1):
                raise ValueError(f"monotone sign for {name} must be -1, 0 or +1")
        return v


class FeatureConfig(BaseModel):
    """Columns assembled for the boosted learners."""
    include_centroids: bool = True
    include_poi_categories: bool = True


AnchorName = Literal[
    "gravity_flow",
    "gravity_poi",
    "ppml",
    "ppml_all",
    "gravity_time_segmented",
    "gravity_dc",
]


class AnchorSpec(BaseModel):
    """Physical baseline a residual learner is composed on."""
    model_config = ConfigDict(frozen=True)

    anchor: AnchorName = "gravity_poi"
    include_base_feature: bool = True


# ============================================================================
# Evaluation
# ============================================================================

class HoldoutSpec(BaseModel):
    """Spatial holdout protocol."""
    mode: Literal["zone_fraction", "borough"] = "zone_fraction"
    fraction: float = Field(HOLDOUT_FRACTION, gt=0, lt=1)
    borough: Optional[str] = None
    mass_policy: Literal["zero", "borough_imputed"] = "zero"
    seed: int = DEFAULT_SEED

    @model_validator(mode="after")
    def check_borough(self) -> "HoldoutSpec":
        if self.mode == "borough" and not self.borough:
            raise ValueError("borough holdout requires a borough label")
        return self


class MetricValues(BaseModel):
    """Core accuracy metrics of one prediction vector."""
    n: int = Field(0, ge=0)
    mae: float = Field(0.0, ge=0)
    rmse: float = Field(0.0, ge=0)
    r2: Optional[float] = Field(None, description="None when the observed values are constant")
    smape: float = Field(0.0, ge=0, le=2)
    cpc: float = Field(0.0, ge=0, le=1)


class MetricReport(MetricValues):
    """Metric values with grouping keys and optional runtime fields."""
    model: str
    split: str = "test"
    group: Optional[str] = None
    group_value: Optional[str] = None
    setting: Optional[str] = None
    seed: Optional[int] = None
    train_s: Optional[float] = None
    pred_s: Optional[float] = None
    extras: dict[str, float] = Field(default_factory=dict)
    error: Optional[str] = None

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "model": "AMBIT (Residual + Gravity POI)",
                    "split": "test",
                    "n": 2000000,
                    "mae": 1.104,
                    "rmse": 2.218,
                    "r2": 0.656,
                    "smape": 0.41,
                    "cpc": 0.783,
                }
            ]
        }
    }


class SeedAggregate(BaseModel):
    """Mean and Student-t half-width of one metric across seeds."""
    model: str
    metric: str
    mean: Optional[float]
    half_width: Optional[float] = None
    n: int
    confidence: float = CONFIDENCE_LEVEL


class MonotoneReport(BaseModel):
    """Behavioral sweep check of a monotone feature."""
    feature: str
    sign: int
    n_rows: int
    n_grid: int
    violations: int
    max_violation: float = 0.0
    examples: list[dict[str, float]] = Field(default_factory=list)


class WaterfallRecord(BaseModel):
    """Example-level attribution breakdown."""
    selector: str
    row_id: int
    base_value: float
    prediction: float
    contributions: list[tuple[str, float]]
    feature_values: dict[str, float] = Field(default_factory=dict)


class RankStabilityReport(BaseModel):
    """Rank agreement of mean |contribution| between two windows."""
    n_early: int
    n_late: int
    boundary: Optional[str] = None
    ranking_early: list[str]
    ranking_late: list[str]
    spearman_rho: float = Field(..., ge=-1, le=1)
    degenerate: bool = False


# ============================================================================
# Experiment Configuration
# ============================================================================

class DataSource(BaseModel):
    """Where the OD task comes from."""
    kind: Literal["synthetic", "files"] = "synthetic"
    synthetic: SyntheticCityConfig = Field(
        default_factory=lambda: SyntheticCityConfig(
            process=SyntheticProcess(
                temporal_profile="diurnal",
                weekend_factor=0.8,
                poi_multiplier_strength=0.8,
                zero_inflation=0.2,
                target_mean_flow=2.0,
            )
        )
    )
    trips_path: Optional[Path] = None
    zones_path: Optional[Path] = None
    ingest: IngestFilters = Field(default_factory=IngestFilters)

    @model_validator(mode="after")
    def check_paths(self) -> "DataSource":
        if self.kind == "files" and (self.trips_path is None or self.zones_path is None):
            raise ValueError("file data source requires trips_path and zones_path")
        return self


class SamplingConfig(BaseModel):
    """Split boundaries (explicit or as fractions of the hour range) and sampling caps."""
    sampling: Literal["random", "stratified_by_flow"] = "random"
    max_train_rows: int = Field(60_000, ge=1)
    max_eval_rows: int = Field(30_000, ge=1)
    train_fraction: float = Field(0.6, gt=0, lt=1)
    val_fraction: float = Field(0.2, gt=0, lt=1)
    train_end: Optional[datetime] = None
    val_end: Optional[datetime] = None
    test_end: Optional[datetime] = None

    @model_validator(mode="after")
    def check_fractions(self) -> "SamplingConfig":
        if self.train_fraction + self.val_fraction >= 1:
            raise ValueError("train_fraction + val_fraction must leave room for a test window")
        return self


class ModelSettings(BaseModel):
    """Hyperparameters shared by every model family."""
    grids: GridConfig = Field(default_factory=GridConfig)
    tuning_objective: Literal["mae", "rmse", "smape", "r2", "cpc"] = "mae"
    boost: BoostConfig = Field(
        default_factory=lambda: BoostConfig(
            n_estimators=200, max_depth=6, learning_rate=0.1, early_stopping_rounds=20
        )
    )
    features: FeatureConfig = Field(default_factory=FeatureConfig)
    zero_aug: ZeroAugmentationConfig = Field(
        default_factory=lambda: ZeroAugmentationConfig(sampled_hours=100, zero_budget=100_000)
    )
    fe: FixedEffectsConfig = Field(default_factory=FixedEffectsConfig)
    irls_tol: float = Field(IRLS_TOLERANCE, gt=0)
    irls_max_iter: int = Field(IRLS_MAX_ITER, ge=1)
    ipf_tol: float = Field(IPF_TOLERANCE, gt=0)
    ipf_max_iter: int = Field(IPF_MAX_ITER, ge=1)
    zip_em_iters: int = Field(ZIP_EM_ITERS, ge=1)
    count_subsample_rows: int = Field(50_000, ge=1, description="Row cap for NB/ZIP baselines")
    seed: int = DEFAULT_SEED


class ExperimentConfig(BaseModel):
    """Complete, serializable description of one experiment run."""
    preset: Optional[str] = None
    data: DataSource = Field(default_factory=DataSource)
    sampling: SamplingConfig = Field(default_factory=SamplingConfig)
    filtering: FilterConfig = Field(default_factory=lambda: FilterConfig(min_total=100, top_k=600))
    impedance: Literal["euclidean_centroid", "travel_time_proxy"] = "euclidean_centroid"
    models: ModelSettings = Field(default_factory=ModelSettings)
    holdouts: list[HoldoutSpec] = Field(default_factory=lambda: [HoldoutSpec()])
    seeds: list[int] = Field(default_factory=lambda: [DEFAULT_SEED], min_length=1)
    confidence: float = Field(CONFIDENCE_LEVEL, gt=0, lt=1)
    fullmatrix_include_diagonal: bool = False
    output_dir: Optional[Path] = None
    parallel: bool = False

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form (output location and parallelism excluded)."""
        payload = self.model_dump(mode="json", exclude={"output_dir", "parallel"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, overrides: Optional[dict[str, Any]]) -> "ExperimentConfig":
        """Return a copy with nested overrides merged in and re-validated."""
        if not overrides:
            return self
        merged = _deep_merge(self.model_dump(mode="python"), overrides)
        return ExperimentConfig.model_validate(merged)


def _deep_merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out
