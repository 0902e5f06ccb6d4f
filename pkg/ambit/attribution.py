"""
Additive attribution for boosted ensembles.

Path-dependent TreeSHAP uses node cover as the background distribution and
runs vectorized over rows: every row follows the same path bookkeeping, only
the "one" fractions (whether the row itself goes down a branch) differ.
Contributions are in link space and satisfy
    base_value + sum(contributions) == ensemble.predict_link(row).
"""

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from .config import logger
from .errors import EmptyTaskError, FeatureMismatchError
from .gbt import Ensemble, Tree
from .schemas import RankStabilityReport, WaterfallRecord

WaterfallSelector = Literal["max_abs_error", "max_flow", "max_distance"]
SELECTORS: tuple[WaterfallSelector, ...] = ("max_abs_error", "max_flow", "max_distance")


@dataclass(frozen=True)
class Attributions:
    """Per-row link-space contributions with the shared base value."""
    values: pd.DataFrame
    features: pd.DataFrame
    base_value: float
    prediction: np.ndarray

    @property
    def feature_names(self) -> list[str]:
        return list(self.values.columns)

    def __len__(self) -> int:
        return len(self.values)


# ============================================================================
# Path bookkeeping
# ============================================================================

@dataclass
class _Path:
    features: list[int]
    zeros: list[float]
    ones: list[np.ndarray]
    weights: list[np.ndarray]

    def copy(self) -> "_Path":
        return _Path(list(self.features), list(self.zeros), list(self.ones), list(self.weights))

    @property
    def depth(self) -> int:
        return len(self.features) - 1


def _extend(path: _Path, zero: float, one: np.ndarray, feature: int) -> None:
    d = len(path.features)
    path.features.append(feature)
    path.zeros.append(zero)
    path.ones.append(one)
    path.weights.append(np.ones_like(one) if d == 0 else np.zeros_like(one))
    for i in range(d - 1, -1, -1):
        path.weights[i + 1] = path.weights[i + 1] + one * path.weights[i] * (i + 1) / (d + 1)
        path.weights[i] = zero * path.weights[i] * (d - i) / (d + 1)


def _unwind(path: _Path, k: int) -> None:
    d = path.depth
    one, zero = path.ones[k], path.zeros[k]
    hot = one != 0
    safe_one = np.where(hot, one, 1.0)
    carry = path.weights[d]
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(d - 1, -1, -1):
            previous = path.weights[i]
            w_hot = carry * (d + 1) / ((i + 1) * safe_one)
            w_cold = previous * (d + 1) / (zero * (d - i))
            path.weights[i] = np.where(hot, w_hot, w_cold)
            carry = np.where(hot, previous - path.weights[i] * zero * (d - i) / (d + 1), carry)
    del path.features[k], path.zeros[k], path.ones[k]
    path.weights.pop()


def _unwound_sum(path: _Path, k: int) -> np.ndarray:
    d = path.depth
    one, zero = path.ones[k], path.zeros[k]
    hot = one != 0
    safe_one = np.where(hot, one, 1.0)
    carry = path.weights[d]
    total = np.zeros_like(carry)
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(d - 1, -1, -1):
            tmp = carry * (d + 1) / ((i + 1) * safe_one)
            cold = path.weights[i] / zero / ((d - i) / (d + 1))
            total = total + np.where(hot, tmp, cold)
            carry = np.where(hot, path.weights[i] - tmp * zero * (d - i) / (d + 1), carry)
    return total


def _recurse(tree: Tree, X: np.ndarray, phi: np.ndarray, node: int, path: _Path,
             zero: float, one: np.ndarray, feature: int) -> None:
    path = path.copy()
    _extend(path, zero, one, feature)

    if tree.is_leaf(node):
        for i in range(1, path.depth + 1):
            w = _unwound_sum(path, i)
            phi[:, path.features[i]] += w * (path.ones[i] - path.zeros[i]) * tree.value[node]
        return

    split = int(tree.feature[node])
    goes_left = (X[:, split] <= tree.threshold[node]).astype(float)
    incoming_zero, incoming_one = 1.0, np.ones(len(X))
    if split in path.features[1:]:
        k = path.features.index(split, 1)
        incoming_zero, incoming_one = path.zeros[k], path.ones[k]
        _unwind(path, k)

    left, right = int(tree.left[node]), int(tree.right[node])
    cover = tree.cover[node]
    _recurse(tree, X, phi, left, path, tree.cover[left] / cover * incoming_zero, incoming_one * goes_left, split)
    _recurse(tree, X, phi, right, path, tree.cover[right] / cover * incoming_zero,
             incoming_one * (1.0 - goes_left), split)


def tree_expectation(tree: Tree, node: int = 0) -> float:
    """Cover-weighted mean leaf value below node."""
    if tree.is_leaf(node):
        return float(tree.value[node])
    left, right = int(tree.left[node]), int(tree.right[node])
    wl, wr = tree.cover[left], tree.cover[right]
    return float((wl * tree_expectation(tree, left) + wr * tree_expectation(tree, right)) / (wl + wr))


def tree_shap(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Path-dependent SHAP values of one tree, shape (rows, features)."""
    phi = np.zeros(X.shape)
    empty = _Path(features=[], zeros=[], ones=[], weights=[])
    _recurse(tree, X, phi, 0, empty, 1.0, np.ones(len(X)), -1)
    return phi


# ============================================================================
# Ensemble attributions
# ============================================================================

def expected_value(ensemble: Ensemble) -> float:
    return ensemble.base_score + sum(tree_expectation(t) for t in ensemble.active_trees)


def shap_values(ensemble: Ensemble, rows: pd.DataFrame) -> Attributions:
    """
    Exact path-dependent SHAP contributions for every row.

    Raises:
        FeatureMismatchError: rows lack a trained feature
    """
    X = ensemble.matrix(rows)
    phi = np.zeros(X.shape)
    for tree in ensemble.active_trees:
        phi += tree_shap(tree, X)
    base = expected_value(ensemble)
    frame = pd.DataFrame(phi, columns=list(ensemble.feature_names), index=rows.index)
    feats = pd.DataFrame(X, columns=list(ensemble.feature_names), index=rows.index)
    return Attributions(values=frame, features=feats, base_value=base, prediction=ensemble.predict_link(rows))


def attributions_long(attr: Attributions) -> pd.DataFrame:
    """Long form: row_id, feature, value, contribution."""
    row_ids = np.repeat(np.arange(len(attr)), len(attr.feature_names))
    return pd.DataFrame({
        "row_id": row_ids,
        "feature": np.tile(attr.feature_names, len(attr)),
        "value": attr.features.to_numpy().ravel(),
        "contribution": attr.values.to_numpy().ravel(),
    })


def global_summary(attr: Attributions, quantiles: tuple[float, ...] = (0.05, 0.25, 0.5, 0.75, 0.95)) -> pd.DataFrame:
    """
    Per-feature distribution of contributions, ranked by mean |contribution|.

    The correlation between feature value and contribution gives the sign of
    the beeswarm color gradient.
    """
    if len(attr) == 0:
        raise EmptyTaskError("no_attributions", "summary needs at least one attributed row")
    records = []
    for name in attr.feature_names:
        c = attr.values[name].to_numpy()
        v = attr.features[name].to_numpy()
        rec = {"feature": name, "mean_abs": float(np.abs(c).mean()), "mean": float(c.mean())}
        for q in quantiles:
            rec[f"q{int(round(q * 100)):02d}"] = float(np.quantile(c, q))
        corr = np.nan
        if len(c) > 1 and c.std() > 0 and v.std() > 0:
            corr = float(np.corrcoef(v, c)[0, 1])
        rec["value_corr"] = corr
        records.append(rec)
    summary = pd.DataFrame(records)
    order = np.lexsort((np.arange(len(summary)), -summary["mean_abs"].to_numpy()))
    summary = summary.iloc[order].reset_index(drop=True)
    summary.insert(0, "rank", np.arange(1, len(summary) + 1))
    return summary


def waterfall_examples(
    attr: Attributions,
    frame: pd.DataFrame,
    selectors: tuple[WaterfallSelector, ...] = SELECTORS,
    top: Optional[int] = None,
) -> list[WaterfallRecord]:
    """
    One breakdown per selector over a prediction frame aligned with attr rows.

    frame needs flow, prediction and distance_km columns; ties go to the
    lowest row position.
    """
    if len(attr) == 0 or len(frame) == 0:
        raise EmptyTaskError("no_rows", "waterfall selection needs a non-empty frame")
    if len(frame) != len(attr):
        raise FeatureMismatchError("row_mismatch", "prediction frame and attributions differ in length")
    keys = {
        "max_abs_error": np.abs(frame["flow"].to_numpy(dtype=float) - frame["prediction"].to_numpy(dtype=float)),
        "max_flow": frame["flow"].to_numpy(dtype=float),
        "max_distance": frame["distance_km"].to_numpy(dtype=float),
    }
    records = []
    for sel in selectors:
        pos = int(np.argmax(keys[sel]))
        contrib = attr.values.iloc[pos]
        order = np.lexsort((np.arange(len(contrib)), -np.abs(contrib.to_numpy())))
        pairs = [(attr.feature_names[i], float(contrib.iloc[i])) for i in order]
        if top is not None:
            pairs = pairs[:top]
        records.append(WaterfallRecord(
            selector=sel,
            row_id=pos,
            base_value=attr.base_value,
            prediction=float(attr.prediction[pos]),
            contributions=pairs,
            feature_values={k: float(v) for k, v in attr.features.iloc[pos].items()},
        ))
    return records


def _ranking(attr: Attributions) -> tuple[list[str], np.ndarray]:
    mean_abs = np.abs(attr.values.to_numpy()).mean(axis=0)
    order = np.lexsort((np.arange(len(mean_abs)), -mean_abs))
    return [attr.feature_names[i] for i in order], mean_abs


def rank_stability(
    early: Attributions,
    late: Attributions,
    boundary: Optional[str] = None,
) -> RankStabilityReport:
    """Spearman correlation of mean |contribution| between two windows (average ranks on ties)."""
    if len(early) == 0 or len(late) == 0:
        raise EmptyTaskError("empty_window", "rank stability needs two non-empty windows")
    if early.feature_names != late.feature_names:
        raise FeatureMismatchError("feature_set", "windows were attributed over different features")
    rank_e, score_e = _ranking(early)
    rank_l, score_l = _ranking(late)

    degenerate = len(score_e) < 2 or np.ptp(score_e) == 0 or np.ptp(score_l) == 0
    if degenerate:
        rho = 1.0
        logger.warning("Rank stability is degenerate (fewer than two distinguishable features); reporting 1.0")
    else:
        rho = float(spearmanr(score_e, score_l)[0])
    return RankStabilityReport(
        n_early=len(early),
        n_late=len(late),
        boundary=boundary,
        ranking_early=rank_e,
        ranking_late=rank_l,
        spearman_rho=float(np.clip(rho, -1.0, 1.0)),
        degenerate=degenerate,
    )
