"""
Named experiment presets and report emission.

Each preset prepares tasks from an ExperimentConfig, runs a model suite or a
diagnostic, and writes CSV tables plus a manifest linking every output to the
preset name and the config hash. Apart from the runtime preset no report holds
wall-clock values, so identical configs produce byte-identical files.
"""

import json
import sys
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .attribution import (
    attributions_long,
    global_summary,
    rank_stability,
    shap_values,
    waterfall_examples,
)
from .baselines import FitContext, ModelSpec, fit_boosted
from .config import HOURS_PER_DAY, HOURS_PER_WEEK, OUTPUT_ROOT, REPORT_FLOAT_FORMAT, logger
from .errors import ConfigurationError, EmptyTaskError
from .evaluation import (
    SuiteResult,
    aggregate_seed_stats,
    calibration_table,
    cpc_hour_averaged,
    error_report,
    pair_smape_table,
    quantile_diagnostics,
    report_from,
    reports_frame,
    run_suite,
    spatial_holdout,
    time_models,
    zone_error_table,
)
from .gbt import enforce_monotone_check
from .glm import build_zero_augmented_sample
from .residual import ambit_spec, model_registry, run_anchor_ablation
from .schemas import (
    AnchorSpec,
    ExperimentConfig,
    FilterConfig,
    HoldoutSpec,
    MetricReport,
    ModelSettings,
)
from .task import ODTask, SourceData, load_source, prepare_task

MODEL_COLUMNS = ["model", "mae", "rmse", "r2", "cpc"]
FULL_COLUMNS = ["model", "mae", "rmse", "smape", "r2", "cpc"]
ERROR_COLUMN = "error"

FULLMATRIX_NOTE = "not directly comparable to the truncated main task"

PHYSICAL_CODES = [
    "gravity_flow", "gravity_poi", "gravity_time", "ppml", "ppml_all", "ppml_fe", "radiation",
    "gravity_dc", "oc_power", "oc_power_poi", "oc_exp", "oc_exp_poi", "dest_power",
    "cd", "cd_poi", "ops", "io", "ops_poi", "io_poi",
]
CONSTRAINED_CODES = [
    "gravity_dc", "oc_power", "oc_power_poi", "oc_exp", "oc_exp_poi", "dest_power",
    "cd", "cd_poi", "ops", "io", "ops_poi", "io_poi",
]
HEADLINE_CODES = ["ppml", "xgb_direct", "ambit"]
ALL_ANCHORS = ["gravity_flow", "gravity_poi", "ppml", "ppml_all", "gravity_time_segmented", "gravity_dc"]

# Model tiers expected in increasing test R² on the benchmark city
ORDERING_TIERS: list[tuple[str, list[str]]] = [
    ("radiation", ["radiation"]),
    ("constrained", ["gravity_dc", "oc_power", "oc_exp", "dest_power", "cd"]),
    ("ppml", ["ppml"]),
    ("boosted", ["xgb_direct", "ambit"]),
]

# Heavy-tailed POI masses, many structural zeros, flat time profile
BENCHMARK_CITY: dict[str, Any] = {
    "data": {
        "kind": "synthetic",
        "synthetic": {
            "n_zones": 24,
            "n_hours": 672,
            "seed": 11,
            "process": {
                "temporal_profile": "flat",
                "weekend_factor": 1.0,
                "poi_multiplier_strength": 0.0,
                "zero_inflation": 0.7,
                "poi_tail": 1.1,
                "target_mean_flow": 4.0,
            },
        },
    },
    "filtering": {"min_total": 0, "top_k": 300},
}

ZERO_RATIO_SETTINGS = [0.32, 1.0, 3.0]
SHAP_WINDOW_ROWS = 2000
MONOTONE_SWEEP_ROWS = 100
MONOTONE_SWEEP_POINTS = 50


# ============================================================================
# Preset runs
# ============================================================================

def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (pd.Timestamp, datetime, date, Path)):
        return str(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"


@dataclass
class PresetRun:
    """Working state of one preset: config, loaded source, output directory and emitted files."""
    name: str
    config: ExperimentConfig
    out_dir: Path
    source: SourceData
    files: list[str] = field(default_factory=list)
    notes: dict[str, str] = field(default_factory=dict)
    failures: int = 0
    _tasks: dict[tuple, ODTask] = field(default_factory=dict, repr=False)

    @property
    def seed(self) -> int:
        return self.config.seeds[0]

    def task(self, seed: Optional[int] = None, config: Optional[ExperimentConfig] = None) -> ODTask:
        config = config or self.config
        seed = self.seed if seed is None else seed
        key = (config.config_hash(), seed)
        if key not in self._tasks:
            self._tasks[key] = prepare_task(config, seed, self.source)
        return self._tasks[key]

    def context(
        self,
        seed: Optional[int] = None,
        task: Optional[ODTask] = None,
        settings: Optional[ModelSettings] = None,
    ) -> FitContext:
        seed = self.seed if seed is None else seed
        return FitContext(task=task or self.task(seed), settings=settings or self.config.models, seed=seed)

    def suite(self, specs: Sequence[ModelSpec], ctx: Optional[FitContext] = None, **kwargs) -> SuiteResult:
        result = run_suite(specs, ctx or self.context(), parallel=self.config.parallel, **kwargs)
        self.failures += len(result.failed)
        return result

    def holdout(self, spec: HoldoutSpec, specs: Sequence[ModelSpec], seed: Optional[int] = None, **keys):
        seed = self.seed if seed is None else seed
        try:
            result = spatial_holdout(self.task(seed), spec, specs, self.config.models, seed,
                                     self.config.parallel, **keys)
        except Exception as e:
            logger.error(f"Spatial holdout {spec.mode} failed: {e}")
            result = SuiteResult(reports=[error_report(s.label, e, seed=seed, **keys) for s in specs])
        self.failures += len(result.failed)
        return result

    def count_failures(self, reports: Sequence[MetricReport]) -> None:
        self.failures += sum(1 for r in reports if r.error)

    def write_table(self, name: str, frame: pd.DataFrame) -> None:
        path = self.out_dir / name
        frame.to_csv(path, index=False, float_format=REPORT_FLOAT_FORMAT)
        self.files.append(name)
        logger.info(f"Wrote {len(frame)} rows to: {path}")

    def write_reports(self, name: str, reports: Sequence[MetricReport], columns: Sequence[str] = MODEL_COLUMNS):
        cols = list(columns)
        if any(r.error for r in reports):
            cols.append(ERROR_COLUMN)
        self.write_table(name, reports_frame(reports, cols))

    def write_json(self, name: str, payload: Any) -> None:
        (self.out_dir / name).write_text(dumps(payload), encoding="utf-8")
        self.files.append(name)


@dataclass(frozen=True)
class PresetResult:
    name: str
    output_dir: Path
    files: list[str]
    failures: int
    config_hash: str

    @property
    def ok(self) -> bool:
        return self.failures == 0


def specs(*codes: str) -> list[ModelSpec]:
    registry = model_registry()
    return [registry[c] for c in codes]


def relabel(reports: Sequence[MetricReport], labels: dict[str, str]) -> list[MetricReport]:
    return [r.model_copy(update={"model": labels.get(r.model, r.model)}) for r in reports]


# ============================================================================
# Model audits
# ============================================================================

def preset_physical_audit(run: PresetRun) -> None:
    result = run.suite(specs(*PHYSICAL_CODES))
    run.write_reports("physical_audit.csv", result.reports, FULL_COLUMNS)
    run.write_json("physical_models.json", {code: m.to_dict() for code, m in result.models.items()})


def tier_violations(table: pd.DataFrame) -> list[str]:
    """Adjacent tiers where the best lower-tier R² reaches the worst upper-tier R²."""
    r2 = table.dropna(subset=["r2"]).groupby("tier", sort=False)["r2"]
    best, worst = r2.max(), r2.min()
    present = [name for name, _ in ORDERING_TIERS if name in best.index]
    return [f"{lo} >= {hi}" for lo, hi in zip(present, present[1:]) if best[lo] >= worst[hi]]


def preset_ordering(run: PresetRun) -> None:
    """
    Test R² by model tier on the benchmark city.

    Observed rows are positive counts. Margin-calibrated models allocate
    unconditional means, so structural zeros pull them below PPML fitted on
    the observed rows.
    """
    codes = [code for _, tier in ORDERING_TIERS for code in tier]
    tier_of = {code: name for name, tier in ORDERING_TIERS for code in tier}
    result = run.suite(specs(*codes))
    columns = [*MODEL_COLUMNS, ERROR_COLUMN] if result.failed else MODEL_COLUMNS
    table = reports_frame(result.reports, columns)
    table.insert(0, "tier", [tier_of[c] for c in codes])
    run.write_table("ordering.csv", table)

    violations = tier_violations(table)
    if violations:
        logger.warning(f"R² tier ordering violated: {violations}")
        run.notes["ordering"] = "violated: " + "; ".join(violations)
    else:
        run.notes["ordering"] = "holds"


def preset_main(run: PresetRun) -> None:
    result = run.suite(specs("xgb_direct", "ambit", "ppml_all", "ppml_fe", "ppml"))
    run.write_reports("main.csv", result.reports)
    if "ambit" in result.predictions:
        pf = result.predictions["ambit"]
        run.write_table("zone_errors.csv", zone_error_table(pf))
        run.write_table("pair_smape.csv", pair_smape_table(pf))
        run.write_json("ambit_model.json", result.models["ambit"].to_dict())


def preset_ppml_sensitivity(run: PresetRun) -> None:
    result = run.suite(specs("ppml", "ppml_all", "ppml_fe"))
    labels = {
        "Gravity (PPML, T>0)": "PPML (T>0)",
        "Gravity (PPML, all)": "PPML (all, zero-aug)",
        "Gravity (PPML + FE)": "PPML + FE",
    }
    run.write_reports("ppml_sensitivity.csv", relabel(result.reports, labels))


def preset_zero_aug(run: PresetRun) -> None:
    """Zero-augmentation statistics under the base budget and zero/positive ratio targets, plus FE-PPML size."""
    task = run.task()
    base = run.config.models.zero_aug
    settings = [("base", base)] + [
        (f"ratio_{r}", base.model_copy(update={"zero_pos_ratio_target": r})) for r in ZERO_RATIO_SETTINGS
    ]
    records = []
    for name, cfg in settings:
        _, stats = build_zero_augmented_sample(
            task.training_frame, task.train_hours, task.universe(cfg.universe), task.n_zones,
            cfg, run.seed, include_diagonal=task.include_diagonal,
        )
        records.append({
            "setting": name, "sampled_hours": stats.sampled_hours, "rows": stats.rows,
            "zeros": stats.zeros, "positives": stats.positives, "zero_pos_ratio": stats.zero_pos_ratio,
        })
    run.write_table("zero_aug.csv", pd.DataFrame.from_records(records))

    meta = run.context().fit("ppml_fe").meta
    levels = meta["levels"]
    run.write_table("ppml_fe_meta.csv", pd.DataFrame([{
        "rows_pre": meta["rows_pre"],
        "rows_post": meta["rows_post"],
        "separated_rows": meta["separated_rows"],
        "origins": levels.get("origin", 0),
        "dests": levels.get("destination", 0),
        "hours": levels.get("time", 0),
        "one_hot_cats": meta["categories"],
    }]))


def preset_count_baselines(run: PresetRun) -> None:
    result = run.suite(specs("negbin", "zip"))
    run.write_reports("count_baselines.csv", result.reports)
    tables = [calibration_table(pf) for pf in result.predictions.values()]
    if tables:
        run.write_table("calibration.csv", pd.concat(tables, ignore_index=True))


# ============================================================================
# Boosting and residual studies
# ============================================================================

def _seed_table(reports: Sequence[MetricReport], confidence: float) -> pd.DataFrame:
    aggregates = aggregate_seed_stats(reports, confidence, metrics=("mae", "rmse", "r2", "cpc"))
    rows: dict[str, dict[str, Any]] = {}
    for agg in aggregates:
        row = rows.setdefault(agg.model, {"model": agg.model, "n_seeds": agg.n})
        row[f"{agg.metric}_mean"] = agg.mean
        row[f"{agg.metric}_ci"] = agg.half_width
        row["n_seeds"] = max(row["n_seeds"], agg.n)
    return pd.DataFrame(list(rows.values()))


def preset_seeds(run: PresetRun) -> None:
    reports: list[MetricReport] = []
    for seed in run.config.seeds:
        try:
            ctx = run.context(seed)
        except Exception as e:
            logger.error(f"Task preparation failed for seed {seed}: {e}")
            failed = [error_report(s.label, e, seed=seed) for s in specs(*HEADLINE_CODES)]
            run.count_failures(failed)
            reports += failed
            continue
        reports += run.suite(specs(*HEADLINE_CODES), ctx).reports
    run.write_reports("seed_runs.csv", reports, ["model", "seed", *FULL_COLUMNS[1:]])
    run.write_table("seed_summary.csv", _seed_table(reports, run.config.confidence))


def preset_anchor_ablation(run: PresetRun) -> None:
    anchors = [AnchorSpec(anchor=a) for a in ALL_ANCHORS]
    holdout = run.config.holdouts[0] if run.config.holdouts else None
    reports = run_anchor_ablation(
        run.config, anchors, run.config.seeds, holdout=holdout, source=run.source, extra=specs("xgb_direct")
    )
    run.count_failures(reports)
    first = [r for r in reports if r.seed == run.seed]
    run.write_reports("anchor_ablation.csv", [r for r in first if r.setting == "main"])
    if holdout is not None:
        run.write_reports("anchor_ablation_spatial.csv", [r for r in first if r.setting == "spatial_holdout"])
    main_reports = [r for r in reports if r.setting == "main"]
    run.write_table("anchor_ablation_seeds.csv", _seed_table(main_reports, run.config.confidence))


def preset_count_objectives(run: PresetRun) -> None:
    result = run.suite(specs(
        "xgb_direct", "xgb_poisson", "xgb_tweedie", "xgb_poisson_gravity_poi", "xgb_tweedie_gravity_poi"
    ))
    run.write_reports("count_objectives.csv", result.reports)


def preset_base_feat_ablation(run: PresetRun) -> None:
    run.write_reports("base_feat_ablation.csv", run.suite(specs("ambit", "ambit_nobase")).reports)


def preset_fe_fairness(run: PresetRun) -> None:
    run.write_reports("fe_fairness.csv", run.suite(specs("xgb_direct", "xgb_fe_sample", "ppml_fe")).reports)


def _monotone_direct(config) -> ModelSpec:
    return ModelSpec(
        code="xgb_direct_monotone", label="XGB Direct (monotone)", family="boosted",
        description="Direct boosted model with a non-increasing distance effect",
        fit=lambda ctx: fit_boosted(ctx, "XGB Direct (monotone)", config.model_copy(update={"seed": ctx.seed})),
    )


def preset_monotone(run: PresetRun) -> None:
    """Residual and direct models with a non-increasing distance effect, plus sweep violation counts."""
    boost = run.config.models.boost.model_copy(update={"monotone": {"distance_km": -1}})
    suite = [
        _monotone_direct(boost),
        ambit_spec(AnchorSpec(anchor="gravity_flow"), boost),
        ambit_spec(AnchorSpec(anchor="gravity_poi"), boost, code="ambit"),
        ambit_spec(AnchorSpec(anchor="ppml"), boost),
    ]
    ctx = run.context()
    result = run.suite(suite, ctx)
    rows = ctx.task.rows("test")
    context_rows = rows.iloc[:MONOTONE_SWEEP_ROWS]
    off_diagonal = ctx.task.distance_km[~np.eye(ctx.task.n_zones, dtype=bool)]
    grid = np.linspace(off_diagonal.min(), off_diagonal.max(), MONOTONE_SWEEP_POINTS)
    reports = []
    for spec, report in zip(suite, result.reports):
        model = result.models.get(spec.code)
        if model is None:
            reports.append(report)
            continue
        check = enforce_monotone_check(model.ensemble, "distance_km", grid, model.design(ctx.task, context_rows))
        reports.append(report.model_copy(update={"extras": {"violations": float(check.violations)}}))
    run.write_reports("monotone.csv", reports, [*MODEL_COLUMNS, "violations"])


def preset_xgb_sensitivity(run: PresetRun) -> None:
    boost = run.config.models.boost
    settings = {
        "base": boost,
        "low_lr": boost.model_copy(update={
            "learning_rate": boost.learning_rate / 2, "n_estimators": boost.n_estimators * 2
        }),
        "deep": boost.model_copy(update={"max_depth": boost.max_depth + 2}),
    }
    reports = []
    for name, cfg in settings.items():
        ctx = run.context(settings=run.config.models.model_copy(update={"boost": cfg}))
        reports += run.suite(specs("xgb_direct", "ambit"), ctx, setting=name).reports
    run.write_reports("xgb_sensitivity.csv", reports, ["model", "setting", *MODEL_COLUMNS[1:]])


# ============================================================================
# Explanations
# ============================================================================

def _windows(rows: pd.DataFrame, seed: int) -> tuple[pd.DataFrame, pd.DataFrame, str]:
    """Early and late halves of the test window, each capped at SHAP_WINDOW_ROWS."""
    hours = np.sort(rows["hour"].unique())
    if len(hours) < 2:
        raise EmptyTaskError("single_hour", "rank stability needs test rows from at least two hours")
    boundary = pd.Timestamp(hours[len(hours) // 2])
    rng = np.random.default_rng(seed)
    out = []
    for part in (rows[rows["hour"] < boundary], rows[rows["hour"] >= boundary]):
        if len(part) > SHAP_WINDOW_ROWS:
            part = part.iloc[np.sort(rng.choice(len(part), size=SHAP_WINDOW_ROWS, replace=False))]
        out.append(part)
    return out[0], out[1], boundary.isoformat()


def explain_model(run: PresetRun, code: str = "ambit") -> None:
    """Attribution tables for one boosted model on the test split."""
    ctx = run.context()
    result = run.suite(specs(code), ctx)
    if code not in result.models:
        run.write_reports("shap_failed.csv", result.reports)
        return
    model = result.models[code]
    task = ctx.task
    rows = task.rows("test")
    rng = np.random.default_rng(run.seed)
    if len(rows) > SHAP_WINDOW_ROWS:
        rows = rows.iloc[np.sort(rng.choice(len(rows), size=SHAP_WINDOW_ROWS, replace=False))]

    attr = shap_values(model.ensemble, model.design(task, rows))
    frame = pd.DataFrame({
        "flow": rows["flow"].to_numpy(dtype=float),
        "prediction": model.predict(task, rows),
        "distance_km": task.distance_km[rows["o_idx"].to_numpy(), rows["d_idx"].to_numpy()],
    })
    run.write_table("shap_values.csv", attributions_long(attr))
    run.write_table("shap_summary.csv", global_summary(attr))
    run.write_json("shap_waterfalls.json", {
        "base_value": attr.base_value,
        "examples": [w.model_dump() for w in waterfall_examples(attr, frame)],
    })

    early, late, boundary = _windows(task.rows("test"), run.seed)
    report = rank_stability(
        shap_values(model.ensemble, model.design(task, early)),
        shap_values(model.ensemble, model.design(task, late)),
        boundary,
    )
    run.write_table("shap_stability.csv", pd.DataFrame([{
        "n_early": report.n_early, "n_late": report.n_late, "boundary": report.boundary,
        "spearman_rho": report.spearman_rho, "degenerate": report.degenerate,
    }]))
    run.write_json("shap_rankings.json", report.model_dump())


def preset_shap(run: PresetRun) -> None:
    explain_model(run, "ambit")


# ============================================================================
# Evaluation protocols
# ============================================================================

def preset_cpc_sensitivity(run: PresetRun) -> None:
    result = run.suite(specs(*HEADLINE_CODES))
    records = []
    for spec, report in zip(specs(*HEADLINE_CODES), result.reports):
        pf = result.predictions.get(spec.code)
        records.append({
            "model": spec.label,
            "cpc_global": report.cpc if pf is not None else None,
            "cpc_hour_avg": cpc_hour_averaged(pf.frame) if pf is not None else None,
        })
    run.write_table("cpc_sensitivity.csv", pd.DataFrame.from_records(records))


def preset_quantiles(run: PresetRun) -> None:
    result = run.suite(specs(*HEADLINE_CODES))
    reports = [r for r in result.reports if r.error]
    for pf in result.predictions.values():
        reports += quantile_diagnostics(pf)
    frame = reports_frame(reports, ["model", "group_value", "mae", "rmse", "smape", "r2", "cpc", "lower", "upper"])
    run.write_table("quantiles.csv", frame.rename(columns={"group_value": "bin"}))


def preset_spatial_holdout(run: PresetRun) -> None:
    base = run.config.holdouts[0] if run.config.holdouts else HoldoutSpec()
    zero = run.holdout(base.model_copy(update={"mass_policy": "zero"}),
                       specs("gravity_flow", "gravity_poi", "ppml", "xgb_direct", "ambit"))
    imputed = run.holdout(base.model_copy(update={"mass_policy": "borough_imputed"}),
                          specs("gravity_flow", "ppml"))
    labels = {"Gravity (flow mass)": "gravity flow imputed", "Gravity (PPML, T>0)": "gravity ppml imputed"}
    run.write_reports("spatial_holdout.csv", zero.reports + relabel(imputed.reports, labels))


def preset_borough_holdout(run: PresetRun) -> None:
    task = run.task()
    base = run.config.holdouts[0] if run.config.holdouts else HoldoutSpec()
    reports = []
    for borough in sorted(set(task.zones.boroughs.tolist())):
        spec = base.model_copy(update={"mode": "borough", "borough": borough})
        result = run.holdout(spec, specs(*HEADLINE_CODES), group="holdout", group_value=borough)
        reports += result.reports
    frame = reports_frame(reports, ["model", "group_value", *MODEL_COLUMNS[1:], ERROR_COLUMN])
    frame = frame.rename(columns={"group_value": "borough"})
    if frame[ERROR_COLUMN].isna().all():
        frame = frame.drop(columns=[ERROR_COLUMN])
    run.write_table("borough_holdout.csv", frame)


def _filter_settings(config: FilterConfig, n_pairs: int) -> dict[str, FilterConfig]:
    cap = config.top_k if config.top_k is not None else n_pairs
    return {
        "base": config,
        "top_half": config.model_copy(update={"top_k": max(1, cap // 2)}),
        "unfiltered": FilterConfig(min_total=0, top_k=None),
    }


def preset_filtering(run: PresetRun) -> None:
    base_task = run.task()
    stats, reports = [], []
    for name, filtering in _filter_settings(run.config.filtering, len(base_task.pairs)).items():
        config = run.config.model_copy(update={"filtering": filtering})
        try:
            task = run.task(config=config)
        except EmptyTaskError as e:
            logger.error(f"Filter setting {name} left no task: {e}")
            failed = [error_report(s.label, e, seed=run.seed, setting=name) for s in specs(*HEADLINE_CODES)]
            run.count_failures(failed)
            reports += failed
            continue
        stats.append({"setting": name, "pairs": len(task.pairs), "total_flow": task.flows.total, "rows": len(task.flows)})
        reports += run.suite(specs(*HEADLINE_CODES), run.context(task=task), setting=name).reports
    run.write_table("filter_stats.csv", pd.DataFrame.from_records(stats, columns=["setting", "pairs", "total_flow", "rows"]))
    run.write_reports("filter_sensitivity.csv", reports, ["setting", *MODEL_COLUMNS])


def preset_impedance(run: PresetRun) -> None:
    config = run.config.model_copy(update={"impedance": "travel_time_proxy"})
    task = run.task(config=config)
    result = run.suite(specs("gravity_flow", "ppml"), run.context(task=task))
    labels = {"Gravity (flow mass)": "Gravity (travel-time)", "Gravity (PPML, T>0)": "PPML (travel-time)"}
    reports = [
        r.model_copy(update={"extras": {"coverage": task.impedance.coverage}})
        for r in relabel(result.reports, labels)
    ]
    run.write_reports("impedance.csv", reports, [*MODEL_COLUMNS, "coverage"])


def preset_runtime(run: PresetRun) -> None:
    codes = ["gravity_flow", "ppml", "ppml_all", "ppml_fe", "xgb_direct", "ambit"]
    result = time_models(specs(*codes), run.context())
    run.count_failures(result.reports)
    run.write_reports("runtime.csv", result.reports, ["model", "train_s", "pred_s"])


# ============================================================================
# Full-matrix evaluation
# ============================================================================

def fullmatrix_cells(task: ODTask, include_diagonal: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """
    Mean test-period flow per (hour-of-week, origin, destination) over all zones.

    Returns:
        Tuple of (means of shape (168, n, n), mask of evaluated cells)
    """
    n = task.n_zones
    frame = task.all_flows.frame
    frame = frame[(frame["hour"] >= task.split.val_end) & (frame["hour"] < task.split.test_end)]
    hours = pd.date_range(task.split.val_end, task.split.test_end, freq="h", inclusive="left")
    how = (HOURS_PER_DAY * hours.dayofweek + hours.hour).to_numpy()
    counts = np.bincount(how, minlength=HOURS_PER_WEEK).astype(float)

    codes = frame["hour_of_week"].to_numpy() * n * n + frame["o_idx"].to_numpy() * n + frame["d_idx"].to_numpy()
    sums = np.bincount(codes, weights=frame["flow"].to_numpy(dtype=float), minlength=HOURS_PER_WEEK * n * n)
    means = sums.reshape(HOURS_PER_WEEK, n, n) / np.maximum(counts, 1.0)[:, None, None]

    pairs = np.ones((n, n), dtype=bool)
    if not include_diagonal:
        np.fill_diagonal(pairs, False)
    mask = (counts > 0)[:, None, None] & pairs[None, :, :]
    return means, mask


def run_fullmatrix_eval(
    config: ExperimentConfig,
    source: Optional[SourceData] = None,
    seed: Optional[int] = None,
    codes: Sequence[str] = CONSTRAINED_CODES,
) -> list[MetricReport]:
    """
    Score constrained models on full hour-of-week averaged test matrices.

    Results are not directly comparable to the truncated main task: the cells
    cover every zone pair, including the many near-zero ones.
    """
    seed = config.seeds[0] if seed is None else seed
    task = prepare_task(config, seed, source)
    ctx = FitContext(task=task, settings=config.models, seed=seed)
    means, mask = fullmatrix_cells(task, config.fullmatrix_include_diagonal)
    if not mask.any():
        raise EmptyTaskError("empty_fullmatrix", "the test window covers no hour-of-week cell")
    y = means[mask]
    slices = np.arange(HOURS_PER_WEEK) % HOURS_PER_DAY

    reports = []
    for spec in specs(*codes):
        try:
            model = ctx.fit(spec.code)
            cube = model.cube[model.slice_for(slices)]
            reports.append(report_from(spec.label, y, cube[mask], split="test_fullmatrix", seed=seed))
        except Exception as e:
            logger.error(f"Full-matrix evaluation of {spec.label} failed: {e}")
            reports.append(error_report(spec.label, e, split="test_fullmatrix", seed=seed))
    logger.info(f"Full-matrix evaluation over {int(mask.sum())} cells ({FULLMATRIX_NOTE})")
    return reports


def preset_fullmatrix(run: PresetRun) -> None:
    reports = run_fullmatrix_eval(run.config, run.source)
    run.count_failures(reports)
    run.write_reports("fullmatrix.csv", reports, FULL_COLUMNS)
    run.notes["fullmatrix"] = FULLMATRIX_NOTE


# ============================================================================
# Registry and runner
# ============================================================================

@dataclass(frozen=True)
class Preset:
    """
    A named experiment.

    Attributes:
        name: Name used on the command line
        description: What the preset reports
        run: Writes the preset's tables into a PresetRun
        overrides: Config overrides the preset always applies
    """
    name: str
    description: str
    run: Callable[[PresetRun], None]
    overrides: dict[str, Any] = field(default_factory=dict)


PRESETS: list[Preset] = [
    Preset("physical-audit", "Every physical and PPML baseline on the test split", preset_physical_audit),
    Preset("ordering", "R² by model tier on the heavy-tailed zero-inflated benchmark city", preset_ordering,
           overrides=BENCHMARK_CITY),
    Preset("main", "AMBIT against direct boosting and PPML, with zone and pair error data", preset_main),
    Preset("ppml-sensitivity", "PPML on positives, with zeros, and with fixed effects", preset_ppml_sensitivity),
    Preset("zero-aug", "Zero-augmentation statistics and FE-PPML design size", preset_zero_aug),
    Preset("seeds", "Headline models across seeds with Student-t intervals", preset_seeds),
    Preset("anchor-ablation", "Residual models over every physical anchor", preset_anchor_ablation),
    Preset("count-objectives", "Poisson and Tweedie boosting objectives", preset_count_objectives),
    Preset("base-feat-ablation", "Residual model without the baseline feature", preset_base_feat_ablation),
    Preset("fe-fairness", "FE-PPML against boosting on an equal-size subsample", preset_fe_fairness),
    Preset("impedance", "Gravity and PPML with a travel-time impedance", preset_impedance),
    Preset("shap", "Attribution summary, waterfall examples and rank stability", preset_shap),
    Preset("cpc-sensitivity", "Global against hour-averaged CPC", preset_cpc_sensitivity),
    Preset("monotone", "Models constrained to non-increasing distance effects", preset_monotone),
    Preset("spatial-holdout", "Refit without 10% of zones, scored on pairs touching them", preset_spatial_holdout),
    Preset("borough-holdout", "Leave-one-borough-out evaluation", preset_borough_holdout),
    Preset("quantiles", "Errors by observed-flow tercile", preset_quantiles),
    Preset("xgb-sensitivity", "Boosting hyperparameter sweep", preset_xgb_sensitivity),
    Preset("filtering", "Pair-filter statistics and sensitivity", preset_filtering),
    Preset("runtime", "Train and predict wall times", preset_runtime),
    Preset("count-baselines", "Negative binomial and ZIP with calibration data", preset_count_baselines),
    Preset("fullmatrix", "Constrained models on hour-of-week averaged full matrices", preset_fullmatrix),
]

_PRESET_INDEX = {p.name: p for p in PRESETS}


def get_preset(name: str) -> Preset:
    """
    Raises:
        ConfigurationError: the name is unknown (lists the available presets)
    """
    if name not in _PRESET_INDEX:
        available = ", ".join(sorted(_PRESET_INDEX))
        raise ConfigurationError("unknown_preset", f"unknown preset '{name}'; available: {available}",
                                 available=sorted(_PRESET_INDEX))
    return _PRESET_INDEX[name]


def load_config(path: Path) -> ExperimentConfig:
    """
    Read an ExperimentConfig from a TOML file.

    Raises:
        ConfigurationError: the file is not valid TOML or fails validation
    """
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
        return ExperimentConfig.model_validate(data)
    except FileNotFoundError:
        raise ConfigurationError("missing_config", f"config file not found: {path}", path=str(path))
    except (tomllib.TOMLDecodeError, ValidationError) as e:
        raise ConfigurationError("invalid_config", f"invalid config {path}: {e}", path=str(path))


def _execute(
    name: str,
    config: ExperimentConfig,
    out_dir: Optional[Path],
    body: Callable[[PresetRun], None],
) -> PresetResult:
    """Run body in a fresh output directory and write config.json and manifest.json next to its reports."""
    out_dir = Path(out_dir or config.output_dir or OUTPUT_ROOT / name)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_hash = config.config_hash()
    logger.info(f"Running {name} (config {config_hash[:12]}) into {out_dir}")

    run = PresetRun(name=name, config=config, out_dir=out_dir, source=load_source(config.data))
    run.write_json("config.json", config.model_dump(mode="json", exclude={"output_dir", "parallel"}))
    body(run)

    manifest = {
        "preset": name,
        "config_hash": config_hash,
        "files": sorted(run.files),
        "failures": run.failures,
        "notes": run.notes,
        "source": run.source.manifest,
    }
    run.write_json("manifest.json", manifest)
    if run.failures:
        logger.warning(f"{name} finished with {run.failures} failed model runs")
    else:
        logger.info(f"{name} finished: {len(run.files)} files")
    return PresetResult(name=name, output_dir=out_dir, files=sorted(run.files), failures=run.failures,
                        config_hash=config_hash)


def run_preset(
    name: str,
    config: Optional[ExperimentConfig] = None,
    overrides: Optional[dict[str, Any]] = None,
    out_dir: Optional[Path] = None,
) -> PresetResult:
    """
    Run a preset and write its reports, config and manifest.

    Args:
        name: Preset name
        config: Base configuration (defaults to ExperimentConfig())
        overrides: Nested overrides merged into the config
        out_dir: Output directory (defaults to config.output_dir, then OUTPUT_ROOT/<name>)

    Returns:
        PresetResult with emitted file names and the failure count
    """
    preset = get_preset(name)
    config = (config or ExperimentConfig()).with_overrides(preset.overrides).with_overrides(overrides)
    config = config.model_copy(update={"preset": name})
    return _execute(name, config, out_dir, preset.run)


# ============================================================================
# Single-command runs
# ============================================================================

def fit_models(codes: Sequence[str], config: ExperimentConfig, out_dir: Optional[Path] = None) -> PresetResult:
    """Fit models on the first seed, scoring them on the validation split and saving their parameters."""
    chosen = _known(codes)

    def body(run: PresetRun) -> None:
        result = run.suite(chosen, split="val")
        run.write_reports("fit_metrics.csv", result.reports, FULL_COLUMNS)
        for code, model in result.models.items():
            run.write_json(f"model_{code}.json", model.to_dict())

    return _execute("fit", config, out_dir, body)


def evaluate_models(
    codes: Sequence[str],
    config: ExperimentConfig,
    out_dir: Optional[Path] = None,
    split: str = "test",
) -> PresetResult:
    """Score models on a split for every configured seed, with seed intervals when there are several."""
    chosen = _known(codes)

    def body(run: PresetRun) -> None:
        reports: list[MetricReport] = []
        for seed in run.config.seeds:
            result = run.suite(chosen, run.context(seed), split=split)
            reports += result.reports
            if seed == run.seed:
                frames = [pf.frame.assign(model=pf.model) for pf in result.predictions.values()]
                if frames:
                    run.write_table("predictions.csv", pd.concat(frames, ignore_index=True))
        run.write_reports("metrics.csv", reports, ["model", "seed", *FULL_COLUMNS[1:]])
        if len(run.config.seeds) > 1:
            run.write_table("seed_summary.csv", _seed_table(reports, run.config.confidence))

    return _execute("eval", config, out_dir, body)


def run_explain(code: str, config: ExperimentConfig, out_dir: Optional[Path] = None) -> PresetResult:
    """Attribution tables for one boosted or residual model."""
    spec = _known([code])[0]
    if spec.family not in ("boosted", "residual"):
        raise ConfigurationError("not_explainable", f"model '{code}' has no tree ensemble to attribute")
    return _execute("explain", config, out_dir, lambda run: explain_model(run, code))


def _known(codes: Sequence[str]) -> list[ModelSpec]:
    registry = model_registry()
    unknown = [c for c in codes if c not in registry]
    if unknown:
        raise ConfigurationError(
            "unknown_model",
            f"unknown model(s) {', '.join(unknown)}; available: {', '.join(sorted(registry))}",
            available=sorted(registry),
        )
    if not codes:
        raise ConfigurationError("no_models", "no model codes given")
    return [registry[c] for c in codes]
