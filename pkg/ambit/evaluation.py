"""
Evaluation protocol for OD flow models.

This module runs model suites on a prepared task and turns predictions into
MetricReport rows:
- Global metrics (via metrics.compute_metrics) and hour-averaged CPC
- Quantile, zone, pair and calibration diagnostics
- Spatial holdout by random zone fraction or by borough
- Seed aggregation with Student-t intervals and runtime measurement
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .baselines import FitContext, FittedModel, ModelSpec
from .config import CONFIDENCE_LEVEL, QUANTILE_BINS, logger
from .data import PredictionFrame
from .errors import AmbitError, EmptyTaskError
from .metrics import compute_metrics, cpc, smape
from .schemas import HoldoutSpec, MetricReport, ModelSettings, SeedAggregate
from .task import ODTask

REPORT_METRICS = ("mae", "rmse", "r2", "smape", "cpc")
PREDICTION_COLUMNS = ["origin", "dest", "o_idx", "d_idx", "hour", "hour_of_day", "flow"]


# ============================================================================
# Predictions and reports
# ============================================================================

def prediction_frame(model: FittedModel, task: ODTask, split: str = "test") -> PredictionFrame:
    """Observed flow and clipped prediction for every row of a split."""
    rows = task.rows(split)
    y_hat = np.clip(np.asarray(model.predict(task, rows), dtype=float), 0.0, None)
    frame = rows[PREDICTION_COLUMNS].copy()
    frame["distance_km"] = task.distance_km[rows["o_idx"].to_numpy(), rows["d_idx"].to_numpy()]
    frame["prediction"] = y_hat
    base = getattr(model, "baseline", None) or getattr(model, "base", None)
    return PredictionFrame(model=model.label, frame=frame, base_model=base.label if base is not None else None)


def report_from(
    model: str,
    y: np.ndarray,
    y_hat: np.ndarray,
    split: str = "test",
    **keys,
) -> MetricReport:
    values = compute_metrics(y, y_hat)
    return MetricReport(model=model, split=split, **values.model_dump(), **keys)


def error_report(model: str, error: AmbitError | Exception, split: str = "test", **keys) -> MetricReport:
    code = error.code if isinstance(error, AmbitError) else f"unexpected:{type(error).__name__}"
    return MetricReport(model=model, split=split, error=code, **keys)


def reports_frame(reports: Sequence[MetricReport], columns: Sequence[str]) -> pd.DataFrame:
    """
    Table of selected report fields in report order.

    Metric cells of failed rows are left empty; the error column carries the code.
    """
    records = []
    for r in reports:
        rec = r.model_dump()
        rec.update(rec.pop("extras") or {})
        if r.error:
            for m in REPORT_METRICS:
                rec[m] = None
        records.append(rec)
    frame = pd.DataFrame.from_records(records)
    for col in columns:
        if col not in frame.columns:
            frame[col] = None
    return frame[list(columns)]


# ============================================================================
# Suites
# ============================================================================

@dataclass
class SuiteResult:
    """Reports, fitted models and test predictions of one suite run, in spec order."""
    reports: list[MetricReport] = field(default_factory=list)
    models: dict[str, FittedModel] = field(default_factory=dict)
    predictions: dict[str, PredictionFrame] = field(default_factory=dict)

    @property
    def failed(self) -> list[MetricReport]:
        return [r for r in self.reports if r.error]


def _run_one(spec: ModelSpec, ctx: FitContext, split: str, timed: bool, keys: dict):
    try:
        started = time.perf_counter()
        model = spec.fit(ctx)
        train_s = time.perf_counter() - started
        started = time.perf_counter()
        pf = prediction_frame(model, ctx.task, split)
        pred_s = time.perf_counter() - started
        timing = {"train_s": train_s, "pred_s": pred_s} if timed else {}
        report = report_from(spec.label, pf.y, pf.y_hat, split, seed=ctx.seed, **timing, **keys)
        logger.info(f"{spec.label}: mae={report.mae:.4f} cpc={report.cpc:.4f} on {report.n} {split} rows")
        return report, model, pf
    except Exception as e:
        logger.error(f"Model {spec.label} failed on seed {ctx.seed}: {e}")
        return error_report(spec.label, e, split, seed=ctx.seed, **keys), None, None


def run_suite(
    specs: Sequence[ModelSpec],
    ctx: FitContext,
    split: str = "test",
    timed: bool = False,
    parallel: bool = False,
    **keys,
) -> SuiteResult:
    """
    Fit and evaluate every spec on one context.

    A failing model becomes an error row and the remaining models still run.
    With parallel=True models fit on worker threads; results keep spec order.

    Args:
        specs: Models to fit
        ctx: Task, settings and seed
        split: Split to evaluate on
        timed: Record train_s and pred_s wall-clock fields
        parallel: Fit models concurrently
        **keys: Extra MetricReport fields (setting, group, group_value)

    Returns:
        SuiteResult with one report per spec
    """
    if parallel and len(specs) > 1:
        with ThreadPoolExecutor() as pool:
            outcomes = list(pool.map(lambda s: _run_one(s, ctx, split, timed, keys), specs))
    else:
        outcomes = [_run_one(s, ctx, split, timed, keys) for s in specs]

    result = SuiteResult()
    for spec, (report, model, pf) in zip(specs, outcomes):
        result.reports.append(report)
        if model is not None:
            result.models[spec.code] = model
            result.predictions[spec.code] = pf
    if result.failed:
        logger.warning(f"{len(result.failed)} of {len(specs)} models failed")
    return result


def time_models(specs: Sequence[ModelSpec], ctx: FitContext, split: str = "test") -> SuiteResult:
    """Sequential suite with train_s and pred_s recorded on every row."""
    return run_suite(specs, ctx, split=split, timed=True, parallel=False)


# ============================================================================
# Grouped diagnostics
# ============================================================================

def cpc_hour_averaged(frame: pd.DataFrame) -> float:
    """Unweighted mean over hours of the per-hour CPC."""
    if frame.empty:
        raise EmptyTaskError("no_rows", "hour-averaged CPC needs at least one row")
    per_hour = [
        cpc(g["flow"].to_numpy(dtype=float), g["prediction"].to_numpy(dtype=float))
        for _, g in frame.groupby("hour", sort=True)
    ]
    return float(np.mean(per_hour))


def quantile_bins(y: np.ndarray, n_bins: int = QUANTILE_BINS) -> tuple[np.ndarray, np.ndarray]:
    """
    Right-closed quantile bins of observed flow.

    Returns:
        Tuple of (bin index per row, edges including min and max)
    """
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    y = np.asarray(y, dtype=float)
    edges = np.unique(np.quantile(y, np.linspace(0.0, 1.0, n_bins + 1)))
    if len(edges) < 2:
        logger.warning("Observed flows are constant; quantile diagnostics use a single bin")
        return np.zeros(len(y), dtype=np.int64), np.array([y.min(), y.max()])
    bins = np.searchsorted(edges[1:-1], y, side="left")
    return bins.astype(np.int64), edges


def quantile_diagnostics(
    pf: PredictionFrame,
    n_bins: int = QUANTILE_BINS,
    split: str = "test",
) -> list[MetricReport]:
    """Per-bin metrics over quantiles of observed flow; bin edges go into extras."""
    bins, edges = quantile_bins(pf.y, n_bins)
    reports = []
    for b in range(len(edges) - 1):
        mask = bins == b
        if not mask.any():
            continue
        lo, hi = float(edges[b]), float(edges[b + 1])
        reports.append(report_from(
            pf.model, pf.y[mask], pf.y_hat[mask], split,
            group="flow_quantile", group_value=f"Q{b + 1}", extras={"lower": lo, "upper": hi},
        ))
    return reports


def zone_error_table(pf: PredictionFrame) -> pd.DataFrame:
    """Per-origin-zone row count, MAE and mean per-row sMAPE."""
    f = pf.frame
    y = f["flow"].to_numpy(dtype=float)
    y_hat = f["prediction"].to_numpy(dtype=float)
    denom = np.abs(y) + np.abs(y_hat)
    row_smape = np.where(denom > 0, 2.0 * np.abs(y - y_hat) / np.where(denom > 0, denom, 1.0), 0.0)
    errors = pd.DataFrame({"zone_id": f["origin"].to_numpy(), "abs_err": np.abs(y - y_hat), "smape": row_smape})
    table = errors.groupby("zone_id", sort=True).agg(
        n=("abs_err", "size"), mae=("abs_err", "mean"), smape=("smape", "mean")
    )
    return table.reset_index()


def pair_smape_table(pf: PredictionFrame) -> pd.DataFrame:
    """sMAPE of each OD pair over its evaluation hours."""
    records = [
        {"origin": o, "dest": d, "n": len(g),
         "smape": smape(g["flow"].to_numpy(dtype=float), g["prediction"].to_numpy(dtype=float))}
        for (o, d), g in pf.frame.groupby(["origin", "dest"], sort=True)
    ]
    return pd.DataFrame.from_records(records, columns=["origin", "dest", "n", "smape"])


def calibration_table(pf: PredictionFrame, n_bins: int = 10) -> pd.DataFrame:
    """Mean prediction against mean observed flow over prediction deciles."""
    f = pf.frame
    pred = f["prediction"].to_numpy(dtype=float)
    edges = np.unique(np.quantile(pred, np.linspace(0.0, 1.0, n_bins + 1)))
    bins = np.searchsorted(edges[1:-1], pred, side="left") if len(edges) > 1 else np.zeros(len(pred), dtype=int)
    table = (
        pd.DataFrame({"bin": bins + 1, "prediction": pred, "flow": f["flow"].to_numpy(dtype=float)})
        .groupby("bin", sort=True)
        .agg(n=("flow", "size"), mean_prediction=("prediction", "mean"), mean_flow=("flow", "mean"))
        .reset_index()
    )
    table.insert(0, "model", pf.model)
    return table


# ============================================================================
# Spatial holdout
# ============================================================================

def select_holdout_zones(task: ODTask, spec: HoldoutSpec) -> tuple[int, ...]:
    """
    Zone indices to hold out.

    zone_fraction draws round(fraction * n) zones (at least one) uniformly
    from the zones the task's pairs touch; borough takes all zones of one borough.
    """
    if spec.mode == "borough":
        held = np.flatnonzero(task.zones.boroughs == spec.borough)
        if len(held) == 0:
            raise EmptyTaskError("unknown_borough", f"no zone belongs to borough '{spec.borough}'")
        return tuple(int(z) for z in held)

    candidates = task.universe("task")
    if len(candidates) < 2:
        raise EmptyTaskError("too_few_zones", "spatial holdout needs at least two zones")
    n_hold = min(max(1, int(round(spec.fraction * len(candidates)))), len(candidates) - 1)
    rng = np.random.default_rng(spec.seed)
    return tuple(int(z) for z in np.sort(rng.choice(candidates, size=n_hold, replace=False)))


def spatial_holdout(
    task: ODTask,
    spec: HoldoutSpec,
    specs: Sequence[ModelSpec],
    settings: ModelSettings,
    seed: int,
    parallel: bool = False,
    **keys,
) -> SuiteResult:
    """
    Refit every model without the held-out zones and score it on test rows touching them.

    Raises:
        EmptyTaskError: no test row touches the held-out zones
    """
    zones = select_holdout_zones(task, spec)
    held_task = task.hold_out(zones, spec.mass_policy)
    ctx = FitContext(task=held_task, settings=settings, seed=seed)
    group_value = spec.borough if spec.mode == "borough" else f"{len(zones)} zones"
    keys = {"group": "holdout", "group_value": group_value, **keys}
    return run_suite(specs, ctx, parallel=parallel, **keys)


# ============================================================================
# Seeds
# ============================================================================

def mean_ci(values: Sequence[float], confidence: float = CONFIDENCE_LEVEL) -> tuple[float, Optional[float]]:
    """Mean and two-sided Student-t half-width (None for a single value)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("mean_ci needs at least one value")
    mean = float(v.mean())
    if v.size < 2:
        return mean, None
    t = stats.t.ppf((1.0 + confidence) / 2.0, v.size - 1)
    return mean, float(t * v.std(ddof=1) / np.sqrt(v.size))


def aggregate_seed_stats(
    reports: Sequence[MetricReport],
    confidence: float = CONFIDENCE_LEVEL,
    metrics: Sequence[str] = REPORT_METRICS,
) -> list[SeedAggregate]:
    """Mean and half-width per (model, metric) over successful seed rows, in first-seen model order."""
    order: list[str] = []
    by_model: dict[str, list[MetricReport]] = {}
    for r in reports:
        if r.error:
            continue
        if r.model not in by_model:
            order.append(r.model)
            by_model[r.model] = []
        by_model[r.model].append(r)

    out = []
    for model in order:
        for metric in metrics:
            values = [getattr(r, metric) for r in by_model[model] if getattr(r, metric) is not None]
            if not values:
                out.append(SeedAggregate(model=model, metric=metric, mean=None, n=0, confidence=confidence))
                continue
            mean, half = mean_ci(values, confidence)
            out.append(SeedAggregate(
                model=model, metric=metric, mean=mean, half_width=half, n=len(values), confidence=confidence
            ))
    return out
