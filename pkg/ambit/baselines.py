"""
Fitted model types and the baseline model registry.

Every model the reports name is a ModelSpec: a stable code, the report
label, a family and a fit function taking a FitContext. Fitted models share
one interface, predict(task, rows), so evaluation never needs to know which
family produced a prediction.

Families:
- physical: gravity variants, constrained allocations, radiation, IO/OPS
- glm: PPML variants and fixed-effects PPML
- count: negative binomial and zero-inflated Poisson
- boosted: direct gradient-boosted models (squared, Poisson, Tweedie)
"""

import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Callable, Literal, Optional

import numpy as np
import pandas as pd

from .config import HOURS_PER_DAY, logger
from .errors import EmptyTaskError, EstimationError
from .features import build_feature_frame
from .gbt import Ensemble, train
from .glm import (
    DesignSpec,
    build_gravity_design,
    build_zero_augmented_sample,
    fit_negbin,
    fit_ppml,
    fit_ppml_fe,
    fit_zip,
    predict_glm,
)
from .schemas import (
    BoostConfig,
    CompetingDestParams,
    FeatureConfig,
    GlmFit,
    GravityParams,
    ModelSettings,
    TuningRecord,
)
from .spatial import (
    DecayForm,
    build_opportunity_field,
    fit_gravity_unconstrained,
    gravity_matrix,
    predict_competing_destinations,
    predict_constrained,
    predict_opportunity_models,
    predict_radiation,
    take,
    tune_grid,
)
from .task import ODTask

ModelFamily = Literal["physical", "glm", "count", "boosted", "residual"]

# Hour-of-day slices of margin-driven prediction cubes
SLICE_KEY = "hour_of_day"
BASE_FEATURE = "log1p_t_base"

# Count objectives cap leaf steps the way Poisson boosting usually does
COUNT_MAX_DELTA_STEP = 0.7


# ============================================================================
# Fitted models
# ============================================================================

class FittedModel(ABC):
    """A fitted model; immutable once returned by its ModelSpec."""
    label: str
    family: ModelFamily

    @abstractmethod
    def predict(self, task: ODTask, rows: pd.DataFrame) -> np.ndarray:
        """Non-negative flow predictions for task rows."""

    @abstractmethod
    def to_dict(self) -> dict[str, Any]:
        """JSON-ready description of the fitted parameters."""


@dataclass(frozen=True, eq=False)
class MatrixBaseline(FittedModel):
    """
    Physical baseline materialized as a (slices, n, n) prediction cube.

    slice_key names the row column selecting the slice (None for a single
    static matrix).
    """
    label: str
    cube: np.ndarray
    slice_key: Optional[str] = None
    params: dict[str, Any] = field(default_factory=dict)
    tuning: list[TuningRecord] = field(default_factory=list)
    family: ModelFamily = "physical"

    def predict(self, task: ODTask, rows: pd.DataFrame) -> np.ndarray:
        return np.clip(take(self.cube, rows, self.slice_key), 0.0, None)

    def slice_for(self, hour_of_day: np.ndarray) -> np.ndarray:
        """Slice index per hour of day."""
        if self.slice_key is None:
            return np.zeros(len(hour_of_day), dtype=np.int64)
        return np.asarray(hour_of_day, dtype=np.int64)

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "family": self.family,
            "slice_key": self.slice_key,
            "slices": int(self.cube.shape[0]),
            "params": self.params,
            "tuning": [r.model_dump() for r in self.tuning],
        }


@dataclass(frozen=True, eq=False)
class GlmBaseline(FittedModel):
    """Count GLM predicting from a gravity design over task rows."""
    label: str
    fit: GlmFit
    spec: DesignSpec
    masses_o: np.ndarray
    masses_d: np.ndarray
    impedance: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)
    family: ModelFamily = "glm"

    def predict(self, task: ODTask, rows: pd.DataFrame) -> np.ndarray:
        design = build_gravity_design(rows, self.masses_o, self.masses_d, self.impedance, self.spec)
        return predict_glm(self.fit, design)

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "family": self.family,
            "fit": self.fit.model_dump(),
            "design": self.spec.to_dict(),
            # wall time stays out of serialized reports
            "meta": {k: v for k, v in self.meta.items() if k != "fit_seconds"},
        }


@dataclass(frozen=True, eq=False)
class BoostedModel(FittedModel):
    """Direct boosted model, optionally fed log1p of a physical baseline."""
    label: str
    ensemble: Ensemble
    features: FeatureConfig
    base: Optional[FittedModel] = None
    meta: dict[str, Any] = field(default_factory=dict)
    family: ModelFamily = "boosted"

    def design(self, task: ODTask, rows: pd.DataFrame) -> pd.DataFrame:
        return boost_features(task, rows, self.features, self.base)

    def predict(self, task: ODTask, rows: pd.DataFrame) -> np.ndarray:
        return np.clip(self.ensemble.predict(self.design(task, rows)), 0.0, None)

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "family": self.family,
            "base": self.base.label if self.base is not None else None,
            "ensemble": self.ensemble.to_dict(),
            "meta": self.meta,
        }


def baseline_predictions(model: FittedModel, task: ODTask, rows: pd.DataFrame) -> np.ndarray:
    """
    Baseline predictions that are safe to take log1p of.

    Raises:
        EstimationError: a prediction is NaN, infinite or negative (names the first row)
    """
    t_base = np.asarray(model.predict(task, rows), dtype=float)
    bad = ~np.isfinite(t_base) | (t_base < 0)
    if bad.any():
        pos = int(np.flatnonzero(bad)[0])
        row = rows.index[pos]
        raise EstimationError(
            "invalid_baseline",
            f"{model.label} predicted {t_base[pos]} for row {row}",
            row=int(row),
            value=float(t_base[pos]),
        )
    return t_base


def boost_features(
    task: ODTask,
    rows: pd.DataFrame,
    config: FeatureConfig,
    base: Optional[FittedModel] = None,
) -> pd.DataFrame:
    """Spatial, POI and temporal features, plus log1p(T_base) when a base model is given."""
    frame = build_feature_frame(task.zones, task.distance_km, rows, config)
    if base is not None:
        frame[BASE_FEATURE] = np.log1p(baseline_predictions(base, task, rows))
    return frame


# ============================================================================
# Registry
# ============================================================================

@dataclass
class FitContext:
    """
    Everything a ModelSpec needs to fit on one task and seed.

    Shared intermediates (the zero-augmented sample, anchor baselines) are
    computed once per context, also when specs fit concurrently.
    """
    task: ODTask
    settings: ModelSettings
    seed: int
    _cache: dict[str, Any] = field(default_factory=dict, repr=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    def shared(self, key: str, factory: Callable[[], Any]) -> Any:
        with self._lock:
            if key not in self._cache:
                self._cache[key] = factory()
            return self._cache[key]

    def fit(self, code: str) -> FittedModel:
        """Fit (once) a baseline another model depends on."""
        spec = get_baseline_spec(code)
        return self.shared(f"model:{code}", lambda: spec.fit(self))

    def boost_config(self, **updates: Any) -> BoostConfig:
        return self.settings.boost.model_copy(update={"seed": self.seed, **updates})


FitFn = Callable[[FitContext], FittedModel]


@dataclass(frozen=True)
class ModelSpec:
    """
    One reportable model.

    Attributes:
        code: Stable identifier used in presets and on the command line
        label: Row name in every report
        family: Model family
        description: Human-readable summary
        fit: Fits the model on a FitContext
    """
    code: str
    label: str
    family: ModelFamily
    description: str
    fit: FitFn


# ============================================================================
# Unconstrained gravity
# ============================================================================

def _static(label: str, matrix: np.ndarray, params: dict[str, Any]) -> MatrixBaseline:
    return MatrixBaseline(label=label, cube=matrix[None, :, :], params=params)


def _fit_gravity(label: str, origin_mass: str, dest_mass: str) -> FitFn:
    def fit(ctx: FitContext) -> FittedModel:
        task = ctx.task
        m_o = task.masses(origin_mass).values
        m_d = task.masses(dest_mass).values
        params = fit_gravity_unconstrained(task.rows("train"), m_o, m_d, task.impedance.d)
        matrix = gravity_matrix(params, m_o, m_d, task.impedance.d) * task.pair_mask
        return _static(label, matrix, params.model_dump())
    return fit


def fit_gravity_by_hour(ctx: FitContext) -> FittedModel:
    """One log-OLS gravity fit per hour-of-day segment; empty segments reuse the pooled fit."""
    task = ctx.task
    m_o = task.masses("flow_out_total").values
    m_d = task.masses("flow_in_total").values
    train_rows = task.rows("train")
    pooled = fit_gravity_unconstrained(train_rows, m_o, m_d, task.impedance.d)

    slices = []
    params: dict[str, Any] = {}
    for h in range(HOURS_PER_DAY):
        segment = train_rows[train_rows[SLICE_KEY] == h]
        try:
            fitted = fit_gravity_unconstrained(segment, m_o, m_d, task.impedance.d)
        except (EmptyTaskError, EstimationError) as e:
            logger.warning(f"Hour {h} gravity segment falls back to the pooled fit: {e}")
            fitted = pooled
        params[str(h)] = fitted.model_dump()
        slices.append(gravity_matrix(fitted, m_o, m_d, task.impedance.d) * task.pair_mask)
    return MatrixBaseline(label="Gravity (hour)", cube=np.stack(slices), slice_key=SLICE_KEY, params=params)


# ============================================================================
# Constrained allocations
# ============================================================================

def _tuned(
    ctx: FitContext,
    label: str,
    build: Callable[[dict[str, float]], np.ndarray],
    grid: dict[str, list[float]],
    slice_key: Optional[str] = SLICE_KEY,
) -> MatrixBaseline:
    """Grid-tune a cube builder on validation rows and materialize the chosen cube."""
    task = ctx.task
    val = task.rows("val")
    if val.empty:
        raise EmptyTaskError("empty_window:val", f"{label} needs validation rows for tuning")
    best, trace = tune_grid(
        label,
        lambda p: take(build(p), val, slice_key),
        grid,
        task.y("val"),
        ctx.settings.tuning_objective,
    )
    return MatrixBaseline(label=label, cube=build(best), slice_key=slice_key, params=best, tuning=trace)


def _fit_constrained(
    label: str,
    variant: Literal["origin", "destination", "doubly"],
    decay_form: DecayForm,
    mass: Optional[str],
) -> FitFn:
    def fit(ctx: FitContext) -> FittedModel:
        task = ctx.task
        s = ctx.settings
        masses = task.masses(mass).values if mass else None
        grid = {"beta": s.grids.beta if decay_form == "power" else s.grids.beta_exp}
        if variant != "doubly":
            grid["gamma"] = s.grids.gamma

        def build(p: dict[str, float]) -> np.ndarray:
            return predict_constrained(
                variant, decay_form, p["beta"], task.impedance.d, task.margins,
                masses=masses, gamma=p.get("gamma", 1.0), pair_mask=task.pair_mask,
                tol=s.ipf_tol, max_iter=s.ipf_max_iter,
            )

        return _tuned(ctx, label, build, grid)
    return fit


def _fit_competing(label: str, mass: str) -> FitFn:
    def fit(ctx: FitContext) -> FittedModel:
        task = ctx.task
        g = ctx.settings.grids
        masses = task.masses(mass).values

        def build(p: dict[str, float]) -> np.ndarray:
            params = CompetingDestParams(base=GravityParams(beta=p["beta"]), rho=p["rho"], delta=p["delta"])
            return predict_competing_destinations(params, masses, task.impedance.d, task.margins, task.pair_mask)

        return _tuned(ctx, label, build, {"beta": g.beta, "rho": g.rho, "delta": g.delta})
    return fit


# ============================================================================
# Radiation and intervening opportunities
# ============================================================================

def fit_radiation(ctx: FitContext) -> FittedModel:
    """Parameter-free radiation allocation of the mean hourly outflow."""
    task = ctx.task
    field_ = build_opportunity_field(task.masses("flow_in_total").values, task.impedance.d)
    matrix = predict_radiation(field_, task.mean_outflow, task.pair_mask)
    return _static("Radiation", matrix, {})


def _fit_opportunities(label: str, variant: Literal["IO", "OPS"], mass: str) -> FitFn:
    def fit(ctx: FitContext) -> FittedModel:
        task = ctx.task
        masses = task.masses(mass).values
        field_ = build_opportunity_field(masses, task.impedance.d)
        O = task.margins[0]
        if variant == "OPS":
            cube = predict_opportunity_models("OPS", field_, O, pair_mask=task.pair_mask)
            return MatrixBaseline(label=label, cube=cube, slice_key=SLICE_KEY)

        scale = 1.0 / float(masses.mean())

        def build(p: dict[str, float]) -> np.ndarray:
            return predict_opportunity_models("IO", field_, O, L=p["L_scale"] * scale, pair_mask=task.pair_mask)

        model = _tuned(ctx, label, build, {"L_scale": ctx.settings.grids.io_l_scale})
        return MatrixBaseline(
            label=label, cube=model.cube, slice_key=SLICE_KEY,
            params={**model.params, "L": model.params["L_scale"] * scale}, tuning=model.tuning,
        )
    return fit


# ============================================================================
# Count GLMs
# ============================================================================

def zero_augmented_sample(ctx: FitContext) -> tuple[pd.DataFrame, Any]:
    """The context's zero-augmented training sample and its statistics."""
    task = ctx.task
    cfg = ctx.settings.zero_aug

    def build():
        return build_zero_augmented_sample(
            task.training_frame, task.train_hours, task.universe(cfg.universe), task.n_zones,
            cfg, ctx.seed, include_diagonal=task.include_diagonal,
        )

    return ctx.shared("zero_aug", build)


def _flow_masses(task: ODTask) -> tuple[np.ndarray, np.ndarray]:
    return task.masses("flow_out_total").values, task.masses("flow_in_total").values


def _glm(label: str, fit: GlmFit, spec: DesignSpec, task: ODTask, family: ModelFamily = "glm",
         meta: Optional[dict[str, Any]] = None) -> GlmBaseline:
    m_o, m_d = _flow_masses(task)
    return GlmBaseline(label=label, fit=fit, spec=spec, masses_o=m_o, masses_d=m_d,
                       impedance=task.impedance.d, meta=meta or {}, family=family)


def fit_ppml_positive(ctx: FitContext) -> FittedModel:
    """PPML on strictly positive training flows."""
    task = ctx.task
    s = ctx.settings
    rows = task.rows("train")
    rows = rows[rows["flow"] > 0]
    if rows.empty:
        raise EmptyTaskError("no_positive_flows", "PPML needs at least one positive training flow")
    m_o, m_d = _flow_masses(task)
    design = build_gravity_design(rows, m_o, m_d, task.impedance.d)
    fit = fit_ppml(design, rows["flow"].to_numpy(dtype=float), tol=s.irls_tol, max_iter=s.irls_max_iter)
    return _glm("Gravity (PPML, T>0)", fit, design.spec, task)


def fit_ppml_all(ctx: FitContext) -> FittedModel:
    """PPML on positives plus sampled true zeros."""
    s = ctx.settings
    sample, stats = zero_augmented_sample(ctx)
    m_o, m_d = _flow_masses(ctx.task)
    design = build_gravity_design(sample, m_o, m_d, ctx.task.impedance.d)
    fit = fit_ppml(design, sample["flow"].to_numpy(dtype=float), tol=s.irls_tol, max_iter=s.irls_max_iter)
    return _glm("Gravity (PPML, all)", fit, design.spec, ctx.task, meta={"zero_aug": stats.model_dump()})


def fit_ppml_with_fe(ctx: FitContext) -> FittedModel:
    """
    FE-PPML on a seeded subsample of the training task rows.

    Task rows span every training hour, so each hour-of-week level and each
    zone x hour-of-day cell the test split can reach has training rows.
    """
    s = ctx.settings
    m_o, m_d = _flow_masses(ctx.task)
    fit, spec, meta = fit_ppml_fe(
        ctx.task.rows("train"), m_o, m_d, ctx.task.impedance.d, s.fe, ctx.seed,
        tol=s.irls_tol, max_iter=s.irls_max_iter,
    )
    return _glm("Gravity (PPML + FE)", fit, spec, ctx.task, meta=meta)


def _count_sample(ctx: FitContext) -> pd.DataFrame:
    sample, _ = zero_augmented_sample(ctx)
    cap = ctx.settings.count_subsample_rows
    if len(sample) <= cap:
        return sample
    rng = np.random.default_rng([ctx.seed, 1])
    return sample.iloc[np.sort(rng.choice(len(sample), size=cap, replace=False))]


def fit_negative_binomial(ctx: FitContext) -> FittedModel:
    s = ctx.settings
    sample = _count_sample(ctx)
    m_o, m_d = _flow_masses(ctx.task)
    design = build_gravity_design(sample, m_o, m_d, ctx.task.impedance.d)
    fit = fit_negbin(design, sample["flow"].to_numpy(dtype=float), tol=s.irls_tol, max_iter=s.irls_max_iter)
    return _glm("Negative Binomial", fit, design.spec, ctx.task, family="count", meta={"rows": len(sample)})


def fit_zero_inflated(ctx: FitContext) -> FittedModel:
    s = ctx.settings
    sample = _count_sample(ctx)
    m_o, m_d = _flow_masses(ctx.task)
    design = build_gravity_design(sample, m_o, m_d, ctx.task.impedance.d)
    fit = fit_zip(design, sample["flow"].to_numpy(dtype=float), em_iters=s.zip_em_iters,
                  tol=s.irls_tol, max_iter=s.irls_max_iter)
    return _glm("Zero-inflated Poisson", fit, design.spec, ctx.task, family="count", meta={"rows": len(sample)})


# ============================================================================
# Direct boosted models
# ============================================================================

def fit_boosted(
    ctx: FitContext,
    label: str,
    config: BoostConfig,
    base_code: Optional[str] = None,
    max_rows: Optional[int] = None,
) -> BoostedModel:
    """Train a direct boosted model on raw training flows with validation early stopping."""
    task = ctx.task
    base = ctx.fit(base_code) if base_code else None
    train_rows = task.rows("train")
    if max_rows is not None and len(train_rows) > max_rows:
        rng = np.random.default_rng([ctx.seed, 2])
        train_rows = train_rows.iloc[np.sort(rng.choice(len(train_rows), size=max_rows, replace=False))]
    val_rows = task.rows("val")
    features = ctx.settings.features
    ensemble = train(
        boost_features(task, train_rows, features, base),
        train_rows["flow"].to_numpy(dtype=float),
        boost_features(task, val_rows, features, base),
        val_rows["flow"].to_numpy(dtype=float),
        config,
    )
    return BoostedModel(
        label=label, ensemble=ensemble, features=features, base=base,
        meta={"train_rows": len(train_rows), "objective": config.objective},
    )


def _direct(label: str, objective: str = "squared", base_code: Optional[str] = None,
            fe_sized: bool = False) -> FitFn:
    def fit(ctx: FitContext) -> FittedModel:
        updates: dict[str, Any] = {"objective": objective}
        if objective != "squared":
            updates["max_delta_step"] = COUNT_MAX_DELTA_STEP
        max_rows = ctx.settings.fe.max_rows if fe_sized else None
        return fit_boosted(ctx, label, ctx.boost_config(**updates), base_code, max_rows)
    return fit


# ============================================================================
# Baseline catalogue
# ============================================================================

BASELINE_SPECS: list[ModelSpec] = [
    # Unconstrained gravity
    ModelSpec("gravity_flow", "Gravity (flow mass)", "physical",
              "Log-OLS gravity with training out/in flow masses",
              _fit_gravity("Gravity (flow mass)", "flow_out_total", "flow_in_total")),
    ModelSpec("gravity_poi", "Gravity (POI mass)", "physical",
              "Log-OLS gravity with POI masses", _fit_gravity("Gravity (POI mass)", "poi_total", "poi_total")),
    ModelSpec("gravity_time", "Gravity (hour)", "physical",
              "Log-OLS gravity fitted separately per hour of day", fit_gravity_by_hour),
    # Count GLMs
    ModelSpec("ppml", "Gravity (PPML, T>0)", "glm", "PPML on positive training flows", fit_ppml_positive),
    ModelSpec("ppml_all", "Gravity (PPML, all)", "glm", "PPML with sampled true zeros", fit_ppml_all),
    ModelSpec("ppml_fe", "Gravity (PPML + FE)", "glm",
              "PPML with origin, destination, time and interaction fixed effects", fit_ppml_with_fe),
    # Radiation and constrained allocations
    ModelSpec("radiation", "Radiation", "physical", "Parameter-free radiation model", fit_radiation),
    ModelSpec("gravity_dc", "DC Gravity (hourly)", "physical",
              "Doubly constrained power-decay gravity balanced per hour of day",
              _fit_constrained("DC Gravity (hourly)", "doubly", "power", None)),
    ModelSpec("oc_power", "Origin-constrained (power)", "physical", "Origin-constrained, power decay, flow masses",
              _fit_constrained("Origin-constrained (power)", "origin", "power", "flow_in_total")),
    ModelSpec("oc_power_poi", "Origin-constrained (power, POI)", "physical",
              "Origin-constrained, power decay, POI masses",
              _fit_constrained("Origin-constrained (power, POI)", "origin", "power", "poi_total")),
    ModelSpec("oc_exp", "Origin-constrained (exp)", "physical", "Origin-constrained, exponential decay, flow masses",
              _fit_constrained("Origin-constrained (exp)", "origin", "exponential", "flow_in_total")),
    ModelSpec("oc_exp_poi", "Origin-constrained (exp, POI)", "physical",
              "Origin-constrained, exponential decay, POI masses",
              _fit_constrained("Origin-constrained (exp, POI)", "origin", "exponential", "poi_total")),
    ModelSpec("dest_power", "Destination-constrained (power)", "physical",
              "Destination-constrained, power decay, origin flow masses",
              _fit_constrained("Destination-constrained (power)", "destination", "power", "flow_out_total")),
    ModelSpec("cd", "Competing destinations", "physical", "Competing destinations with flow masses",
              _fit_competing("Competing destinations", "flow_in_total")),
    ModelSpec("cd_poi", "Competing destinations (POI)", "physical", "Competing destinations with POI masses",
              _fit_competing("Competing destinations (POI)", "poi_total")),
    ModelSpec("ops", "OPS (opportunities)", "physical", "Opportunity-priority selection with flow masses",
              _fit_opportunities("OPS (opportunities)", "OPS", "flow_in_total")),
    ModelSpec("io", "Intervening opportunities (flow)", "physical", "Intervening opportunities with flow masses",
              _fit_opportunities("Intervening opportunities (flow)", "IO", "flow_in_total")),
    ModelSpec("ops_poi", "OPS (POI)", "physical", "Opportunity-priority selection with POI masses",
              _fit_opportunities("OPS (POI)", "OPS", "poi_total")),
    ModelSpec("io_poi", "Intervening opportunities (POI)", "physical", "Intervening opportunities with POI masses",
              _fit_opportunities("Intervening opportunities (POI)", "IO", "poi_total")),
    # Count baselines
    ModelSpec("negbin", "Negative Binomial", "count", "NB2 gravity GLM with moment dispersion", fit_negative_binomial),
    ModelSpec("zip", "Zero-inflated Poisson", "count", "ZIP gravity GLM fitted by EM", fit_zero_inflated),
    # Direct boosted models
    ModelSpec("xgb_direct", "XGB Direct", "boosted", "Boosted trees on raw flows (squared error)", _direct("XGB Direct")),
    ModelSpec("xgb_poisson", "XGB (Poisson)", "boosted", "Boosted trees with the Poisson objective",
              _direct("XGB (Poisson)", "poisson")),
    ModelSpec("xgb_tweedie", "XGB (Tweedie)", "boosted", "Boosted trees with the Tweedie objective",
              _direct("XGB (Tweedie)", "tweedie")),
    ModelSpec("xgb_poisson_gravity_poi", "XGB (Poisson + Gravity POI)", "boosted",
              "Poisson boosting with log1p of the POI gravity prediction as a feature",
              _direct("XGB (Poisson + Gravity POI)", "poisson", base_code="gravity_poi")),
    ModelSpec("xgb_tweedie_gravity_poi", "XGB (Tweedie + Gravity POI)", "boosted",
              "Tweedie boosting with log1p of the POI gravity prediction as a feature",
              _direct("XGB (Tweedie + Gravity POI)", "tweedie", base_code="gravity_poi")),
    ModelSpec("xgb_fe_sample", "XGB (FE-sample size)", "boosted",
              "Direct boosted model trained on as many rows as the FE-PPML subsample",
              _direct("XGB (FE-sample size)", fe_sized=True)),
]

_BASELINE_INDEX: dict[str, ModelSpec] = {spec.code: spec for spec in BASELINE_SPECS}


def get_baseline_spec(code: str) -> ModelSpec:
    try:
        return _BASELINE_INDEX[code]
    except KeyError:
        raise KeyError(f"unknown baseline model '{code}'") from None
