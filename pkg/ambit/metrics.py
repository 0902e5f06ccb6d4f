"""
Accuracy metrics for flow predictions.

Predictions are clipped to be non-negative before every count metric.
"""

from typing import Optional

import numpy as np

from .schemas import MetricValues

# Metrics where larger is better; the rest are minimized
MAXIMIZED = frozenset({"r2", "cpc"})


def cpc(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Common part of commuters 2 sum(min) / (sum y + sum y_hat); 1.0 when both are empty."""
    y = np.asarray(y, dtype=float)
    y_hat = np.clip(np.asarray(y_hat, dtype=float), 0.0, None)
    denom = y.sum() + y_hat.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.minimum(y, y_hat).sum() / denom)


def smape(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Mean of 2|y - y_hat| / (|y| + |y_hat|) with 0/0 rows contributing 0."""
    y = np.asarray(y, dtype=float)
    y_hat = np.clip(np.asarray(y_hat, dtype=float), 0.0, None)
    denom = np.abs(y) + np.abs(y_hat)
    safe = np.where(denom > 0, denom, 1.0)
    terms = np.where(denom > 0, 2.0 * np.abs(y - y_hat) / safe, 0.0)
    return float(terms.mean())


def r2(y: np.ndarray, y_hat: np.ndarray) -> Optional[float]:
    """1 - SSE/SST centered on the evaluation sample; None when SST is zero."""
    y = np.asarray(y, dtype=float)
    sst = float(((y - y.mean()) ** 2).sum())
    if sst == 0:
        return None
    sse = float(((y - y_hat) ** 2).sum())
    return 1.0 - sse / sst


def compute_metrics(y: np.ndarray, y_hat: np.ndarray) -> MetricValues:
    """MAE, RMSE, R2, sMAPE and CPC of non-negative predictions."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if y.size == 0:
        raise ValueError("metrics need at least one row")
    y_hat = np.clip(y_hat, 0.0, None)
    err = y - y_hat
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err ** 2).mean()))
    return MetricValues(
        n=int(y.size),
        mae=mae,
        rmse=rmse,
        r2=r2(y, y_hat),
        smape=smape(y, y_hat),
        cpc=cpc(y, y_hat),
    )


def objective_score(values: MetricValues, objective: str) -> float:
    """Scalar to minimize for a named metric."""
    v = getattr(values, objective)
    if v is None:
        return np.inf
    return -float(v) if objective in MAXIMIZED else float(v)
