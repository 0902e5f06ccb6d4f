"""
Gradient-boosted regression trees with histogram split search.

Second-order boosting over quantile-binned features with squared-error,
Poisson and Tweedie objectives, per-feature monotone constraints enforced
through child-value bounds, row/column subsampling and early stopping on the
training objective evaluated on validation rows.
"""

from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd

from .config import MONOTONE_TOLERANCE, logger
from .errors import ConvergenceError, EstimationError, FeatureMismatchError
from .schemas import BoostConfig, MonotoneReport

# Smallest mean used for the log-link base score
_MEAN_FLOOR = 1e-6


# ============================================================================
# Objectives
# ============================================================================

@dataclass(frozen=True)
class Objective:
    """Per-row loss, gradient and hessian of an objective in link space."""
    name: str
    power: float = 1.5

    @property
    def log_link(self) -> bool:
        return self.name != "squared"

    def loss_terms(self, y: np.ndarray, F: np.ndarray) -> np.ndarray:
        if self.name == "squared":
            return 0.5 * (y - F) ** 2
        if self.name == "poisson":
            return np.exp(F) - y * F
        p = self.power
        return -y * np.exp((1 - p) * F) / (1 - p) + np.exp((2 - p) * F) / (2 - p)

    def gradients(self, y: np.ndarray, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.name == "squared":
            return F - y, np.ones_like(F)
        if self.name == "poisson":
            mu = np.exp(F)
            return mu - y, mu
        p = self.power
        a = y * np.exp((1 - p) * F)
        b = np.exp((2 - p) * F)
        return -a + b, -(1 - p) * a + (2 - p) * b

    def loss(self, y: np.ndarray, F: np.ndarray) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            return float(self.loss_terms(y, F).mean())

    def base_score(self, y: np.ndarray) -> float:
        if self.name == "squared":
            return float(y.mean())
        return float(np.log(max(float(y.mean()), _MEAN_FLOOR)))

    def inverse_link(self, F: np.ndarray) -> np.ndarray:
        return np.exp(F) if self.log_link else F


def make_objective(config: BoostConfig) -> Objective:
    return Objective(name=config.objective, power=config.tweedie_power)


# ============================================================================
# Trees
# ============================================================================

@dataclass(frozen=True)
class Tree:
    """
    Array-backed binary tree. Node 0 is the root; leaves have feature -1.

    Rows with x <= threshold go left. value holds the shrunken leaf value at
    leaves and the shrunken node weight at internal nodes; cover is the sum
    of hessians routed to each node.
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict[str, list]:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, list]) -> "Tree":
        return cls(
            feature=np.asarray(data["feature"], dtype=np.int64),
            threshold=np.asarray(data["threshold"], dtype=float),
            left=np.asarray(data["left"], dtype=np.int64),
            right=np.asarray(data["right"], dtype=np.int64),
            value=np.asarray(data["value"], dtype=float),
            cover=np.asarray(data["cover"], dtype=float),
        )


@dataclass(frozen=True)
class Ensemble:
    """Boosted ensemble; prediction uses the first best_iteration trees."""
    base_score: float
    trees: tuple[Tree, ...]
    best_iteration: int
    feature_names: tuple[str, ...]
    objective: str = "squared"
    tweedie_power: float = 1.5
    learning_rate: float = 0.1
    monotone: dict[str, int] = field(default_factory=dict)
    train_loss: tuple[float, ...] = ()
    val_loss: tuple[float, ...] = ()

    @property
    def active_trees(self) -> tuple[Tree, ...]:
        return self.trees[: self.best_iteration]

    def matrix(self, features: pd.DataFrame) -> np.ndarray:
        """Feature matrix in training column order."""
        for name in self.feature_names:
            if name not in features.columns:
                raise FeatureMismatchError(f"missing_feature:{name}", f"feature '{name}' is missing")
        return features[list(self.feature_names)].to_numpy(dtype=float)

    def predict_link(self, features: pd.DataFrame) -> np.ndarray:
        X = self.matrix(features)
        F = np.full(len(X), self.base_score)
        for tree in self.active_trees:
            F += tree.predict(X)
        return F

    def predict(self, features: pd.DataFrame) -> np.ndarray:
        """Raw sum for the squared objective, exp of it for count objectives."""
        F = self.predict_link(features)
        return Objective(self.objective, self.tweedie_power).inverse_link(F)

    def to_dict(self) -> dict[str, Any]:
        return {
            "objective": self.objective,
            "tweedie_power": self.tweedie_power,
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "best_iteration": self.best_iteration,
            "feature_names": list(self.feature_names),
            "monotone": dict(self.monotone),
            "train_loss": list(self.train_loss),
            "val_loss": list(self.val_loss),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Ensemble":
        return cls(
            base_score=float(data["base_score"]),
            trees=tuple(Tree.from_dict(t) for t in data["trees"]),
            best_iteration=int(data["best_iteration"]),
            feature_names=tuple(data["feature_names"]),
            objective=data.get("objective", "squared"),
            tweedie_power=float(data.get("tweedie_power", 1.5)),
            learning_rate=float(data.get("learning_rate", 0.1)),
            monotone=dict(data.get("monotone", {})),
            train_loss=tuple(data.get("train_loss", ())),
            val_loss=tuple(data.get("val_loss", ())),
        )


# ============================================================================
# Histogram binning
# ============================================================================

def bin_thresholds(x: np.ndarray, max_bins: int) -> np.ndarray:
    """Candidate split thresholds: midpoints of distinct values, or quantiles when there are many."""
    u = np.unique(x)
    if len(u) <= max_bins:
        return (u[:-1] + u[1:]) / 2.0
    q = np.quantile(x, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    return np.unique(q)


@dataclass(frozen=True)
class _Binned:
    codes: np.ndarray
    thresholds: list[np.ndarray]
    offsets: np.ndarray
    n_bins: np.ndarray


def _bin_features(X: np.ndarray, max_bins: int) -> _Binned:
    thresholds = [bin_thresholds(X[:, j], max_bins) for j in range(X.shape[1])]
    codes = np.column_stack([
        np.searchsorted(thr, X[:, j], side="left") for j, thr in enumerate(thresholds)
    ]).astype(np.int64)
    n_bins = np.array([len(t) + 1 for t in thresholds], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(n_bins)[:-1]])
    return _Binned(codes=codes, thresholds=thresholds, offsets=offsets, n_bins=n_bins)


# ============================================================================
# Tree growth
# ============================================================================

def _gain_term(G: np.ndarray, H: np.ndarray, w: np.ndarray, lam: float) -> np.ndarray:
    """Objective reduction -(2 G w + (H + lambda) w^2) of a leaf with weight w."""
    return -(2.0 * G * w + (H + lam) * w ** 2)


class _TreeGrower:
    def __init__(self, binned: _Binned, g: np.ndarray, h: np.ndarray, cols: np.ndarray,
                 signs: np.ndarray, config: BoostConfig):
        self.binned = binned
        self.g = g
        self.h = h
        self.cols = cols
        self.codes = binned.codes[:, cols] + binned.offsets[cols][None, :]
        self.signs = signs
        self.config = config
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.cover: list[float] = []

    def _weight(self, G, H, lo, hi):
        w = np.clip(-G / (H + self.config.reg_lambda), lo, hi)
        mds = self.config.max_delta_step
        return np.clip(w, -mds, mds) if mds > 0 else w

    def _new_node(self, w: float, H: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(self.config.learning_rate * w)
        self.cover.append(H)
        return len(self.feature) - 1

    def _best_split(self, rows: np.ndarray, G: float, H: float, lo: float, hi: float):
        cfg = self.config
        b = self.binned
        codes = self.codes[rows]
        total = int(b.n_bins.sum())
        hist_g = np.bincount(codes.ravel(), weights=np.repeat(self.g[rows], len(self.cols)), minlength=total)
        hist_h = np.bincount(codes.ravel(), weights=np.repeat(self.h[rows], len(self.cols)), minlength=total)

        parent = float(_gain_term(np.asarray(G), np.asarray(H), self._weight(G, H, lo, hi), cfg.reg_lambda))
        best = None
        best_gain = max(cfg.min_split_gain, 0.0)
        for j in self.cols:
            nb = int(b.n_bins[j])
            if nb < 2:
                continue
            start = int(b.offsets[j])
            GL = np.cumsum(hist_g[start:start + nb])[:-1]
            HL = np.cumsum(hist_h[start:start + nb])[:-1]
            GR, HR = G - GL, H - HL
            wL = self._weight(GL, HL, lo, hi)
            wR = self._weight(GR, HR, lo, hi)
            gain = _gain_term(GL, HL, wL, cfg.reg_lambda) + _gain_term(GR, HR, wR, cfg.reg_lambda) - parent
            ok = (HL >= cfg.min_child_weight) & (HR >= cfg.min_child_weight) & (HL > 0) & (HR > 0)
            if self.signs[j] != 0:
                ok &= self.signs[j] * (wR - wL) >= 0
            gain = np.where(ok, gain, -np.inf)
            k = int(np.argmax(gain))
            if gain[k] > best_gain:
                best_gain = float(gain[k])
                best = (int(j), k, float(wL[k]), float(wR[k]))
        return best

    def grow(self, rows: np.ndarray, depth: int = 0, lo: float = -np.inf, hi: float = np.inf) -> int:
        G = float(self.g[rows].sum())
        H = float(self.h[rows].sum())
        w = float(self._weight(G, H, lo, hi))
        node = self._new_node(w, H)
        if depth >= self.config.max_depth:
            return node
        split = self._best_split(rows, G, H, lo, hi)
        if split is None:
            return node

        j, k, wL, wR = split
        go_left = self.binned.codes[rows, j] <= k
        left_lo, left_hi, right_lo, right_hi = lo, hi, lo, hi
        if self.signs[j] != 0:
            mid = (wL + wR) / 2.0
            if self.signs[j] > 0:
                left_hi, right_lo = min(hi, mid), max(lo, mid)
            else:
                left_lo, right_hi = max(lo, mid), min(hi, mid)

        self.feature[node] = j
        self.threshold[node] = float(self.binned.thresholds[j][k])
        self.left[node] = self.grow(rows[go_left], depth + 1, left_lo, left_hi)
        self.right[node] = self.grow(rows[~go_left], depth + 1, right_lo, right_hi)
        return node

    def tree(self) -> Tree:
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=float),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            value=np.asarray(self.value, dtype=float),
            cover=np.asarray(self.cover, dtype=float),
        )


# ============================================================================
# Training
# ============================================================================

def _check_targets(y: np.ndarray, objective: Objective, what: str) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not np.isfinite(y).all():
        raise ValueError(f"{what} targets must be finite")
    if objective.log_link and (y < 0).any():
        raise ValueError(f"{objective.name} objective needs non-negative {what} targets")
    return y


def _monotone_signs(names: Sequence[str], monotone: dict[str, int]) -> np.ndarray:
    for name in monotone:
        if name not in names:
            raise FeatureMismatchError(
                f"unknown_monotone_feature:{name}", f"monotone constraint on unknown feature '{name}'"
            )
    return np.array([monotone.get(n, 0) for n in names], dtype=np.int64)


def train(
    features: pd.DataFrame,
    targets: np.ndarray,
    val_features: Optional[pd.DataFrame] = None,
    val_targets: Optional[np.ndarray] = None,
    config: Optional[BoostConfig] = None,
) -> Ensemble:
    """
    Fit a boosted ensemble.

    Args:
        features: Training feature frame (column order defines the model)
        targets: Training targets
        val_features: Validation features for early stopping (optional)
        val_targets: Validation targets
        config: Boosting configuration

    Returns:
        Ensemble truncated for prediction at best_iteration trees
    """
    if config is None:
        config = BoostConfig()
    names = tuple(str(c) for c in features.columns)
    if not names:
        raise EstimationError("no_features", "boosting needs at least one feature")
    objective = make_objective(config)
    X = features.to_numpy(dtype=float)
    y = _check_targets(targets, objective, "training")
    if len(y) == 0:
        raise EstimationError("no_rows", "boosting needs at least one training row")
    signs = _monotone_signs(names, config.monotone)

    has_val = val_features is not None and val_targets is not None and len(val_targets) > 0
    if has_val:
        X_val = val_features[list(names)].to_numpy(dtype=float)
        y_val = _check_targets(val_targets, objective, "validation")

    base = objective.base_score(y) if config.base_score is None else float(config.base_score)
    binned = _bin_features(X, config.max_bins)
    rng = np.random.default_rng(config.seed)
    n, p = X.shape
    n_rows = max(1, int(round(config.subsample * n)))
    n_cols = max(1, int(round(config.colsample * p)))

    F = np.full(n, base)
    F_val = np.full(len(y_val), base) if has_val else None
    train_loss = [objective.loss(y, F)]
    val_loss = [objective.loss(y_val, F_val)] if has_val else []
    best_loss = val_loss[0] if has_val else np.inf
    best_iteration = 0
    trees: list[Tree] = []

    for round_no in range(1, config.n_estimators + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            g, h = objective.gradients(y, F)
        if not (np.isfinite(g).all() and np.isfinite(h).all()):
            raise ConvergenceError("non_finite_loss", f"non-finite gradients at round {round_no}", round=round_no)
        if not g.any():
            logger.info(f"Boosting stopped at round {round_no}: all gradients are zero")
            break

        rows = np.arange(n) if n_rows == n else np.sort(rng.choice(n, size=n_rows, replace=False))
        cols = np.arange(p) if n_cols == p else np.sort(rng.choice(p, size=n_cols, replace=False))
        grower = _TreeGrower(binned, g, h, cols, signs, config)
        grower.grow(rows)
        tree = grower.tree()
        trees.append(tree)

        F = F + tree.predict(X)
        train_loss.append(objective.loss(y, F))
        if not np.isfinite(train_loss[-1]):
            raise ConvergenceError("non_finite_loss", f"training loss is not finite at round {round_no}",
                                   round=round_no)
        if has_val:
            F_val = F_val + tree.predict(X_val)
            val_loss.append(objective.loss(y_val, F_val))
            if not np.isfinite(val_loss[-1]):
                raise ConvergenceError("non_finite_loss", f"validation loss is not finite at round {round_no}",
                                       round=round_no)
            if val_loss[-1] < best_loss:
                best_loss = val_loss[-1]
                best_iteration = round_no
            elif round_no - best_iteration >= config.early_stopping_rounds:
                logger.info(f"Early stopping at round {round_no}; best iteration {best_iteration}")
                break
        else:
            best_iteration = round_no

    logger.info(
        f"Trained {config.objective} ensemble: {len(trees)} trees, best_iteration={best_iteration}, "
        f"{n} rows x {p} features"
    )
    return Ensemble(
        base_score=base,
        trees=tuple(trees),
        best_iteration=best_iteration,
        feature_names=names,
        objective=config.objective,
        tweedie_power=config.tweedie_power,
        learning_rate=config.learning_rate,
        monotone={k: v for k, v in config.monotone.items() if v != 0},
        train_loss=tuple(train_loss),
        val_loss=tuple(val_loss),
    )


def predict(ensemble: Ensemble, features: pd.DataFrame) -> np.ndarray:
    return ensemble.predict(features)


# ============================================================================
# Monotone checks
# ============================================================================

def enforce_monotone_check(
    ensemble: Ensemble,
    feature: str,
    grid: np.ndarray,
    context_rows: pd.DataFrame,
    sign: Optional[int] = None,
) -> MonotoneReport:
    """
    Sweep one feature over a grid for every context row, others held fixed.

    Adjacent grid points whose link-space predictions move against the
    declared direction by more than the tolerance count as violations.
    """
    if sign is None:
        sign = ensemble.monotone.get(feature, 0)
    if sign == 0:
        raise ValueError(f"no monotone direction for feature '{feature}'")
    if feature not in ensemble.feature_names:
        raise FeatureMismatchError(f"missing_feature:{feature}", f"feature '{feature}' is not in the model")

    grid = np.sort(np.asarray(grid, dtype=float))
    n_rows, n_grid = len(context_rows), len(grid)
    swept = context_rows.loc[context_rows.index.repeat(n_grid)].reset_index(drop=True)
    swept[feature] = np.tile(grid, n_rows)
    F = ensemble.predict_link(swept).reshape(n_rows, n_grid)

    drops = -sign * np.diff(F, axis=1)
    bad = drops > MONOTONE_TOLERANCE
    r_idx, g_idx = np.nonzero(bad)
    examples = [
        {"row": float(r), "grid_value": float(grid[g]), "drop": float(drops[r, g])}
        for r, g in zip(r_idx[:5], g_idx[:5])
    ]
    report = MonotoneReport(
        feature=feature,
        sign=sign,
        n_rows=n_rows,
        n_grid=n_grid,
        violations=int(bad.sum()),
        max_violation=float(drops[bad].max()) if bad.any() else 0.0,
        examples=examples,
    )
    if report.violations:
        logger.warning(f"Monotone sweep on {feature}: {report.violations} violations")
    return report


def _subtree_leaf_range(tree: Tree, node: int) -> tuple[float, float]:
    if tree.is_leaf(node):
        v = float(tree.value[node])
        return v, v
    lmin, lmax = _subtree_leaf_range(tree, int(tree.left[node]))
    rmin, rmax = _subtree_leaf_range(tree, int(tree.right[node]))
    return min(lmin, rmin), max(lmax, rmax)


def check_monotone_structure(ensemble: Ensemble) -> int:
    """Count constrained splits whose left/right leaf ranges overlap against the declared sign."""
    violations = 0
    for tree in ensemble.trees:
        for node in range(tree.n_nodes):
            if tree.is_leaf(node):
                continue
            sign = ensemble.monotone.get(ensemble.feature_names[tree.feature[node]], 0)
            if sign == 0:
                continue
            lmin, lmax = _subtree_leaf_range(tree, int(tree.left[node]))
            rmin, rmax = _subtree_leaf_range(tree, int(tree.right[node]))
            if sign > 0 and lmax > rmin + MONOTONE_TOLERANCE:
                violations += 1
            if sign < 0 and rmax > lmin + MONOTONE_TOLERANCE:
                violations += 1
    return violations
