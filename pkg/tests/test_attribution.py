"""
Tests for TreeSHAP attributions, summaries, waterfalls and rank stability.
"""

from itertools import combinations
from math import factorial

import numpy as np
import pandas as pd
import pytest

from ambit.attribution import (
    Attributions,
    attributions_long,
    expected_value,
    global_summary,
    rank_stability,
    shap_values,
    tree_shap,
    waterfall_examples,
)
from ambit.errors import EmptyTaskError, FeatureMismatchError
from ambit.gbt import Tree, train
from ambit.schemas import BoostConfig


# ============================================================================
# Fixtures
# ============================================================================

def conditional_value(tree: Tree, x: np.ndarray, known: set[int], node: int = 0) -> float:
    """E[f(x) | x_S] with cover-weighted averaging over unknown splits."""
    if tree.is_leaf(node):
        return float(tree.value[node])
    f = int(tree.feature[node])
    left, right = int(tree.left[node]), int(tree.right[node])
    if f in known:
        child = left if x[f] <= tree.threshold[node] else right
        return conditional_value(tree, x, known, child)
    wl, wr = tree.cover[left], tree.cover[right]
    return (wl * conditional_value(tree, x, known, left) + wr * conditional_value(tree, x, known, right)) / (wl + wr)


def brute_force_shap(tree: Tree, x: np.ndarray) -> np.ndarray:
    """Shapley values by enumerating every coalition."""
    m = len(x)
    phi = np.zeros(m)
    for i in range(m):
        others = [j for j in range(m) if j != i]
        for size in range(m):
            weight = factorial(size) * factorial(m - size - 1) / factorial(m)
            for subset in combinations(others, size):
                s = set(subset)
                phi[i] += weight * (conditional_value(tree, x, s | {i}) - conditional_value(tree, x, s))
    return phi


@pytest.fixture
def small_tree() -> Tree:
    """x0 <= 0.5 ? (x1 <= 0.5 ? 1 : 3) : (x0 <= 0.8 ? 5 : 10), with uneven cover."""
    return Tree(
        feature=np.array([0, 1, 0, -1, -1, -1, -1]),
        threshold=np.array([0.5, 0.5, 0.8, 0.0, 0.0, 0.0, 0.0]),
        left=np.array([1, 3, 5, -1, -1, -1, -1]),
        right=np.array([2, 4, 6, -1, -1, -1, -1]),
        value=np.array([0.0, 0.0, 0.0, 1.0, 3.0, 5.0, 10.0]),
        cover=np.array([10.0, 6.0, 4.0, 2.0, 4.0, 3.0, 1.0]),
    )


@pytest.fixture(scope="module")
def ensemble_and_rows():
    rng = np.random.default_rng(0)
    X = pd.DataFrame(rng.uniform(0, 1, (1500, 3)), columns=["a", "b", "c"])
    y = 2 * X["a"] + np.where(X["b"] > 0.5, 1.0, 0.0) * X["a"] + 0.1 * rng.normal(size=1500)
    model = train(X, y.to_numpy(), config=BoostConfig(n_estimators=15, max_depth=4, learning_rate=0.3,
                                                       subsample=1.0, colsample=1.0))
    return model, X.iloc[:40]


# ============================================================================
# TreeSHAP
# ============================================================================

class TestTreeShap:
    """Tests against an enumeration oracle."""

    def test_hand_built_tree_matches_oracle(self, small_tree):
        X = np.array([[0.3, 0.7], [0.9, 0.1], [0.6, 0.6]])
        phi = tree_shap(small_tree, X)
        for row, values in zip(X, phi):
            np.testing.assert_allclose(values, brute_force_shap(small_tree, row), atol=1e-10)

    def test_trained_trees_match_oracle(self, ensemble_and_rows):
        model, rows = ensemble_and_rows
        X = model.matrix(rows.iloc[:5])
        for tree in model.active_trees[:3]:
            phi = tree_shap(tree, X)
            for row, values in zip(X, phi):
                np.testing.assert_allclose(values, brute_force_shap(tree, row), atol=1e-9)

    def test_local_accuracy(self, ensemble_and_rows):
        model, rows = ensemble_and_rows
        attr = shap_values(model, rows)
        total = attr.base_value + attr.values.sum(axis=1).to_numpy()
        np.testing.assert_allclose(total, model.predict_link(rows), atol=1e-9)
        assert attr.base_value == pytest.approx(expected_value(model))

    def test_unused_feature_gets_nothing(self, small_tree):
        X = np.array([[0.3, 0.7, 42.0]])
        phi = tree_shap(small_tree, X)
        assert phi[0, 2] == 0.0

    def test_missing_feature(self, ensemble_and_rows):
        model, rows = ensemble_and_rows
        with pytest.raises(FeatureMismatchError):
            shap_values(model, rows.drop(columns=["b"]))


# ============================================================================
# Summaries
# ============================================================================

class TestSummaries:
    """Tests for global summaries and waterfalls."""

    def test_summary_ranks_by_mean_abs(self, ensemble_and_rows):
        model, rows = ensemble_and_rows
        summary = global_summary(shap_values(model, rows))
        assert list(summary["rank"]) == [1, 2, 3]
        assert summary["feature"].iloc[0] == "a"
        assert (np.diff(summary["mean_abs"]) <= 0).all()
        assert summary.loc[summary["feature"] == "a", "value_corr"].iloc[0] > 0.8
        assert {"q05", "q50", "q95"} <= set(summary.columns)

    def test_long_form(self, ensemble_and_rows):
        model, rows = ensemble_and_rows
        long = attributions_long(shap_values(model, rows))
        assert len(long) == 40 * 3
        assert list(long["feature"].iloc[:3]) == ["a", "b", "c"]

    def test_waterfalls_pick_rows_per_selector(self, ensemble_and_rows):
        model, rows = ensemble_and_rows
        attr = shap_values(model, rows)
        frame = pd.DataFrame({
            "flow": np.arange(40.0),
            "prediction": np.arange(40.0),
            "distance_km": np.r_[np.zeros(10), 9.0, np.zeros(29)],
        })
        frame.loc[3, "prediction"] = 100.0
        records = {r.selector: r for r in waterfall_examples(attr, frame, top=2)}
        assert records["max_abs_error"].row_id == 3
        assert records["max_flow"].row_id == 39
        assert records["max_distance"].row_id == 10
        assert len(records["max_flow"].contributions) == 2

    def test_waterfall_length_mismatch(self, ensemble_and_rows):
        model, rows = ensemble_and_rows
        frame = pd.DataFrame({"flow": [1.0], "prediction": [1.0], "distance_km": [1.0]})
        with pytest.raises(FeatureMismatchError):
            waterfall_examples(shap_values(model, rows), frame)


# ============================================================================
# Rank Stability
# ============================================================================

def attributions_from(values: dict[str, list[float]]) -> Attributions:
    frame = pd.DataFrame(values)
    return Attributions(values=frame, features=frame.copy(), base_value=0.0, prediction=np.zeros(len(frame)))


class TestRankStability:
    """Tests for Spearman stability between windows."""

    def test_identical_rankings(self):
        early = attributions_from({"a": [3.0, 3.0], "b": [2.0, 2.0], "c": [1.0, 1.0]})
        late = attributions_from({"a": [6.0], "b": [4.0], "c": [0.5]})
        report = rank_stability(early, late)
        assert report.spearman_rho == pytest.approx(1.0)
        assert report.ranking_early == ["a", "b", "c"]
        assert not report.degenerate

    def test_reversed_rankings(self):
        early = attributions_from({"a": [3.0], "b": [2.0], "c": [1.0]})
        late = attributions_from({"a": [1.0], "b": [2.0], "c": [3.0]})
        assert rank_stability(early, late).spearman_rho == pytest.approx(-1.0)

    def test_constant_scores_are_degenerate(self):
        early = attributions_from({"a": [1.0], "b": [1.0]})
        late = attributions_from({"a": [2.0], "b": [1.0]})
        report = rank_stability(early, late)
        assert report.degenerate
        assert report.spearman_rho == 1.0

    def test_empty_window(self):
        early = attributions_from({"a": [1.0]})
        late = attributions_from({"a": []})
        with pytest.raises(EmptyTaskError):
            rank_stability(early, late)

    def test_feature_sets_must_match(self):
        with pytest.raises(FeatureMismatchError):
            rank_stability(attributions_from({"a": [1.0]}), attributions_from({"b": [1.0]}))
