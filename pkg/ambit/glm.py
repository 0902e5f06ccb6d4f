"""
Count GLMs for gravity estimation.

- PPML by iteratively reweighted least squares (log link) with step-halving
- Zero-augmented samples drawn from full OD matrices of sampled hours
- Fixed-effects PPML on a sparse one-hot design with a small ridge
- Negative binomial (moment dispersion) and zero-inflated Poisson (EM) baselines
"""

import time
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import spsolve
from scipy.special import gammaln

from .config import IRLS_MAX_ITER, IRLS_TOLERANCE, PROBABILITY_CLAMP, ZIP_EM_ITERS, logger
from .data import add_temporal_features
from .errors import ConvergenceError, DataError, EmptyTaskError, EstimationError
from .schemas import FixedEffectsConfig, GlmFit, ZeroAugmentationConfig, ZeroAugmentationStats

Family = Literal["poisson", "negbin"]

# eta is clipped to this range before exponentiation
_ETA_BOUND = 50.0
_STEP_HALVINGS = 30
_DEVIANCE_SLACK = 1e-10


# ============================================================================
# Designs
# ============================================================================

@dataclass(frozen=True)
class FeGroup:
    """One-hot fixed-effect group; the first sorted level is the reference."""
    name: str
    keys: tuple[str, ...]
    reference: str
    levels: tuple[str, ...]

    def labels(self, rows: pd.DataFrame) -> pd.Series:
        label = rows[self.keys[0]].astype(np.int64).astype(str)
        for key in self.keys[1:]:
            label = label + ":" + rows[key].astype(np.int64).astype(str)
        return label

    @property
    def columns(self) -> list[str]:
        return [f"{self.name}={lvl}" for lvl in self.levels]


@dataclass(frozen=True)
class DesignSpec:
    """Column layout of a gravity GLM design."""
    continuous: tuple[str, ...] = ("log_m_o", "log_m_d", "log_d")
    fe_groups: tuple[FeGroup, ...] = ()

    @property
    def columns(self) -> list[str]:
        cols = ["intercept", *self.continuous]
        for g in self.fe_groups:
            cols += g.columns
        return cols

    def to_dict(self) -> dict:
        return {
            "continuous": list(self.continuous),
            "fe_groups": [
                {"name": g.name, "keys": list(g.keys), "reference": g.reference, "levels": list(g.levels)}
                for g in self.fe_groups
            ],
        }


@dataclass(frozen=True)
class GlmDesign:
    X: np.ndarray | sp.csr_matrix
    spec: DesignSpec
    unseen: int = 0

    @property
    def columns(self) -> list[str]:
        return self.spec.columns

    @property
    def sparse(self) -> bool:
        return sp.issparse(self.X)


def _fe_keys(fe: FixedEffectsConfig) -> list[tuple[str, tuple[str, ...]]]:
    wanted: list[tuple[str, tuple[str, ...]]] = []
    if fe.origin:
        wanted.append(("origin", ("o_idx",)))
    if fe.destination:
        wanted.append(("destination", ("d_idx",)))
    if fe.time:
        wanted.append(("time", (fe.time_col,)))
    if fe.interactions:
        wanted.append(("origin_x_time", ("o_idx", fe.interaction_time_col)))
        wanted.append(("destination_x_time", ("d_idx", fe.interaction_time_col)))
    return wanted


def _fe_groups(rows: pd.DataFrame, fe: FixedEffectsConfig) -> list[FeGroup]:
    groups = []
    for name, keys in _fe_keys(fe):
        unlabeled = FeGroup(name=name, keys=keys, reference="", levels=())
        levels = sorted(pd.unique(unlabeled.labels(rows)))
        if not levels:
            continue
        groups.append(FeGroup(name=name, keys=keys, reference=levels[0], levels=tuple(levels[1:])))
    return groups


def drop_separated_rows(rows: pd.DataFrame, fe: FixedEffectsConfig) -> tuple[pd.DataFrame, dict[str, int]]:
    """
    Remove rows whose level in some fixed-effect group has zero total flow.

    Under PPML such a level's coefficient diverges to minus infinity. The level
    leaves the design and later rows at it predict at the reference level.
    Removed rows are all zeros, so one pass leaves every kept level with a
    positive total.

    Returns:
        Tuple of (kept rows, number of all-zero levels per group)
    """
    flow = rows["flow"].to_numpy(dtype=float)
    keep = np.ones(len(rows), dtype=bool)
    dropped: dict[str, int] = {}
    for name, keys in _fe_keys(fe):
        labels = FeGroup(name=name, keys=keys, reference="", levels=()).labels(rows).to_numpy()
        totals = pd.Series(flow).groupby(labels).sum()
        empty = totals.index[totals.to_numpy() == 0]
        if len(empty):
            dropped[name] = len(empty)
            keep &= ~np.isin(labels, empty)
    return rows[keep], dropped


def design_spec(rows: pd.DataFrame, fe: Optional[FixedEffectsConfig] = None) -> DesignSpec:
    """
    Learn the design layout from training rows.

    A mass column is dropped when its zone fixed effect has two or more levels,
    since the mass is constant within every level.
    """
    if fe is None:
        return DesignSpec()
    groups = _fe_groups(rows, fe)
    by_name = {g.name: g for g in groups}
    continuous = ["log_m_o", "log_m_d", "log_d"]
    if "origin" in by_name and by_name["origin"].levels:
        continuous.remove("log_m_o")
    if "destination" in by_name and by_name["destination"].levels:
        continuous.remove("log_m_d")
    return DesignSpec(continuous=tuple(continuous), fe_groups=tuple(groups))


def build_gravity_design(
    rows: pd.DataFrame,
    masses_o: np.ndarray,
    masses_d: np.ndarray,
    impedance: np.ndarray,
    spec: Optional[DesignSpec] = None,
) -> GlmDesign:
    """
    Assemble [1, log m_o, log m_d, log d, one-hot FE] for rows.

    Rows whose FE level was not seen when the design was learned contribute the
    reference level (all zeros) and are counted in GlmDesign.unseen.
    """
    if spec is None:
        spec = DesignSpec()
    o = rows["o_idx"].to_numpy()
    d = rows["d_idx"].to_numpy()
    covariates = {
        "log_m_o": np.log(masses_o[o]),
        "log_m_d": np.log(masses_d[d]),
        "log_d": np.log(impedance[o, d]),
    }
    dense = np.column_stack([np.ones(len(rows))] + [covariates[c] for c in spec.continuous])
    if not spec.fe_groups:
        return GlmDesign(X=dense, spec=spec)

    blocks = [sp.csr_matrix(dense)]
    unseen = 0
    for g in spec.fe_groups:
        labels = g.labels(rows)
        codes = pd.Categorical(labels, categories=list(g.levels)).codes
        unseen += int(((codes < 0) & (labels != g.reference).to_numpy()).sum())
        hit = np.flatnonzero(codes >= 0)
        blocks.append(sp.csr_matrix(
            (np.ones(len(hit)), (hit, codes[hit])), shape=(len(rows), max(len(g.levels), 0))
        ))
    X = sp.hstack(blocks, format="csr")
    if unseen:
        logger.info(f"{unseen} fixed-effect entries fell back to the reference level")
    return GlmDesign(X=X, spec=spec, unseen=unseen)


# ============================================================================
# Likelihood pieces
# ============================================================================

def _eta(X, beta: np.ndarray) -> np.ndarray:
    return np.clip(X @ beta, -_ETA_BOUND, _ETA_BOUND)


def poisson_loglik(beta: np.ndarray, X, y: np.ndarray) -> float:
    eta = X @ beta
    return float((y * eta - np.exp(eta) - gammaln(y + 1.0)).sum())


def poisson_score(beta: np.ndarray, X, y: np.ndarray) -> np.ndarray:
    """Gradient of the Poisson log-likelihood: X^T (y - mu)."""
    return np.asarray(X.T @ (y - np.exp(X @ beta))).ravel()


def deviance(y: np.ndarray, mu: np.ndarray, weights: np.ndarray, alpha: float = 0.0) -> float:
    """Poisson (alpha = 0) or NB2 deviance."""
    ylogy = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
    if alpha == 0:
        unit = ylogy - (y - mu)
    else:
        unit = ylogy - (y + 1.0 / alpha) * np.log((1.0 + alpha * y) / (1.0 + alpha * mu))
    return float(2.0 * (weights * unit).sum())


def _solve(H, b: np.ndarray) -> np.ndarray:
    if sp.issparse(H):
        return np.asarray(spsolve(H.tocsc(), b)).ravel()
    try:
        return np.linalg.solve(H, b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, b, rcond=None)[0]


def _gram(X, w: np.ndarray):
    if sp.issparse(X):
        return (X.T @ sp.diags(w) @ X).tocsc()
    return (X * w[:, None]).T @ X


@dataclass
class _IrlsResult:
    beta: np.ndarray
    trace: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    score_max: float = np.inf
    flags: list[str] = field(default_factory=list)


def _irls(
    X,
    y: np.ndarray,
    weights: Optional[np.ndarray] = None,
    alpha: float = 0.0,
    ridge: float = 0.0,
    tol: float = IRLS_TOLERANCE,
    max_iter: int = IRLS_MAX_ITER,
    beta0: Optional[np.ndarray] = None,
) -> _IrlsResult:
    """
    Fisher scoring for a log-link Poisson/NB2 mean with a ridge on non-intercept columns.

    Stops when every component of the penalized score is below tol * n. The
    penalized deviance is non-increasing after the first iterate (step-halving).
    """
    n, p = X.shape
    w0 = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    pen = np.full(p, ridge)
    pen[0] = 0.0
    R = sp.diags(pen) if sp.issparse(X) else np.diag(pen)

    def objective(beta: np.ndarray) -> float:
        mu = np.exp(_eta(X, beta))
        return deviance(y, mu, w0, alpha) + float((pen * beta ** 2).sum())

    if beta0 is None:
        mu = y + 0.5
        W = w0 * mu / (1.0 + alpha * mu)
        beta = _solve(_gram(X, W) + R, np.asarray(X.T @ (W * np.log(mu))).ravel())
    else:
        beta = np.asarray(beta0, dtype=float).copy()

    result = _IrlsResult(beta=beta)
    dev = objective(beta)
    for it in range(1, max_iter + 1):
        result.iterations = it
        if not np.isfinite(dev):
            raise ConvergenceError(
                "irls_divergence", f"IRLS deviance is not finite at iteration {it}",
                iteration=it, deviance=dev, trace=list(result.trace),
            )
        result.trace.append(dev)

        mu = np.exp(_eta(X, beta))
        resid = w0 * (y - mu) / (1.0 + alpha * mu)
        score = np.asarray(X.T @ resid).ravel() - pen * beta
        result.score_max = float(np.abs(score).max())
        if result.score_max < tol * n:
            result.converged = True
            break

        H = _gram(X, w0 * mu / (1.0 + alpha * mu)) + R
        step = _solve(H, score)
        t = 1.0
        for _ in range(_STEP_HALVINGS):
            candidate = beta + t * step
            cand_dev = objective(candidate)
            if np.isfinite(cand_dev) and cand_dev <= dev + _DEVIANCE_SLACK * max(1.0, abs(dev)):
                break
            t *= 0.5
        else:
            result.flags.append("step_halving_exhausted")
            break
        beta, dev = candidate, cand_dev

    result.beta = beta
    if not result.converged:
        logger.warning(
            f"IRLS stopped after {result.iterations} iterations without convergence "
            f"(max score {result.score_max:.3g})"
        )
        result.flags.append("not_converged")
    return result


def _check_counts(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if (y < 0).any() or not np.isfinite(y).all():
        raise DataError("invalid_counts", "GLM targets must be finite and non-negative")
    return y


# ============================================================================
# PPML
# ============================================================================

def fit_ppml(
    design: GlmDesign,
    y: np.ndarray,
    tol: float = IRLS_TOLERANCE,
    max_iter: int = IRLS_MAX_ITER,
    ridge: float = 0.0,
    weights: Optional[np.ndarray] = None,
) -> GlmFit:
    """Poisson pseudo-maximum-likelihood fit of y on the design."""
    y = _check_counts(y)
    res = _irls(design.X, y, weights=weights, ridge=ridge, tol=tol, max_iter=max_iter)
    return GlmFit(
        family="poisson",
        columns=design.columns,
        coefficients=res.beta.tolist(),
        deviance_trace=res.trace,
        converged=res.converged,
        iterations=res.iterations,
        ridge=ridge,
        score_max=res.score_max,
        flags=res.flags,
    )


def predict_glm(fit: GlmFit, design: GlmDesign) -> np.ndarray:
    """exp(X beta), scaled by 1 - p for zero-inflated fits."""
    if list(design.columns) != list(fit.columns):
        raise EstimationError("column_mismatch", "design columns do not match the fitted GLM")
    mu = np.exp(_eta(design.X, np.asarray(fit.coefficients)))
    if fit.family == "zip":
        mu = (1.0 - fit.inflation) * mu
    return mu


def build_zero_augmented_sample(
    flows: pd.DataFrame,
    hours: pd.DatetimeIndex,
    universe: np.ndarray,
    n_zones: int,
    config: ZeroAugmentationConfig,
    seed: int,
    include_diagonal: bool = False,
) -> tuple[pd.DataFrame, ZeroAugmentationStats]:
    """
    Materialize universe x universe matrices for sampled hours and keep zeros by downsampling.

    Args:
        flows: Training rows (unfiltered) with o_idx, d_idx, hour, flow
        hours: Candidate training hours
        universe: Zone indices spanning the matrices
        n_zones: Size of the zone index space
        config: Sampled hours, zero budget and optional zero/positive ratio target
        seed: Seed for hour and zero sampling
        include_diagonal: Whether intra-zone cells belong to the matrices

    Returns:
        Tuple of (rows with flow and temporal features, realized counts)
    """
    universe = np.asarray(universe, dtype=np.int64)
    if len(universe) == 0:
        raise EmptyTaskError("empty_universe", "zero augmentation needs a non-empty zone universe")
    if len(hours) == 0:
        raise EmptyTaskError("no_hours", "zero augmentation needs at least one training hour")

    rng = np.random.default_rng(seed)
    n_hours = min(config.sampled_hours, len(hours))
    if n_hours < config.sampled_hours:
        logger.warning(f"Only {len(hours)} training hours available; sampling all of them")
    picked = np.sort(rng.choice(len(hours), size=n_hours, replace=False))
    sampled = hours[picked]

    oo, dd = np.meshgrid(universe, universe, indexing="ij")
    oo, dd = oo.ravel(), dd.ravel()
    if not include_diagonal:
        keep = oo != dd
        oo, dd = oo[keep], dd[keep]
    pair_codes = oo * n_zones + dd

    in_hours = flows[flows["hour"].isin(sampled) & (flows["flow"] > 0)]
    in_univ = np.isin(in_hours["o_idx"].to_numpy(), universe) & np.isin(in_hours["d_idx"].to_numpy(), universe)
    if not include_diagonal:
        in_univ &= in_hours["o_idx"].to_numpy() != in_hours["d_idx"].to_numpy()
    positives = in_hours[in_univ]

    hour_pos = pd.Index(sampled).get_indexer(positives["hour"])
    pos_codes = np.sort(
        hour_pos * n_zones * n_zones + positives["o_idx"].to_numpy() * n_zones + positives["d_idx"].to_numpy()
    )
    all_codes = (np.arange(n_hours)[:, None] * n_zones * n_zones + pair_codes[None, :]).ravel()
    zero_codes = all_codes[~np.isin(all_codes, pos_codes, assume_unique=True)]

    budget = config.zero_budget
    if config.zero_pos_ratio_target is not None:
        budget = min(budget, int(np.floor(config.zero_pos_ratio_target * len(positives))))
    n_zero = min(budget, len(zero_codes))
    chosen = np.sort(rng.choice(zero_codes, size=n_zero, replace=False)) if n_zero else zero_codes[:0]

    zeros = pd.DataFrame({
        "o_idx": (chosen % (n_zones * n_zones)) // n_zones,
        "d_idx": chosen % n_zones,
        "hour": sampled[chosen // (n_zones * n_zones)],
        "flow": np.zeros(n_zero, dtype=np.int64),
    })
    cols = ["o_idx", "d_idx", "hour", "flow"]
    sample = pd.concat([positives[cols], zeros], ignore_index=True)
    sample = sample.sort_values(["o_idx", "d_idx", "hour"], kind="mergesort").reset_index(drop=True)
    sample = add_temporal_features(sample)

    stats = ZeroAugmentationStats(
        sampled_hours=n_hours,
        zero_budget=config.zero_budget,
        rows=len(sample),
        zeros=n_zero,
        positives=len(positives),
        zero_pos_ratio=n_zero / max(len(positives), 1),
    )
    logger.info(
        f"Zero-augmented sample: {stats.positives} positives + {stats.zeros} zeros "
        f"over {n_hours} hours (ratio {stats.zero_pos_ratio:.3f})"
    )
    return sample, stats


def fit_ppml_fe(
    rows: pd.DataFrame,
    masses_o: np.ndarray,
    masses_d: np.ndarray,
    impedance: np.ndarray,
    fe: FixedEffectsConfig,
    seed: int,
    tol: float = IRLS_TOLERANCE,
    max_iter: int = IRLS_MAX_ITER,
) -> tuple[GlmFit, DesignSpec, dict]:
    """
    FE-PPML on a seeded row subsample with sparse one-hot fixed effects.

    Returns:
        Tuple of (fit, design spec for prediction, subsample metadata)
    """
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    rows_pre = len(rows)
    if rows_pre > fe.max_rows:
        rows = rows.iloc[np.sort(rng.choice(rows_pre, size=fe.max_rows, replace=False))]

    rows_sampled = len(rows)
    rows, separated = drop_separated_rows(rows, fe)
    if rows.empty:
        raise EmptyTaskError("no_positive_flows", "FE-PPML needs at least one positive flow")
    if separated:
        logger.warning(f"FE-PPML: dropped {rows_sampled - len(rows)} rows in all-zero levels {separated}")

    spec = design_spec(rows, fe)
    design = build_gravity_design(rows, masses_o, masses_d, impedance, spec)
    n_cols = len(design.columns)
    if len(rows) < n_cols:
        levels = {g.name: len(g.levels) + 1 for g in spec.fe_groups}
        raise EstimationError(
            "fe_identifiability",
            f"{len(rows)} rows cannot identify {n_cols} columns (levels per group: {levels})",
            levels=levels,
        )
    fit = fit_ppml(design, rows["flow"].to_numpy(dtype=float), tol=tol, max_iter=max_iter, ridge=fe.ridge)
    if separated:
        fit = fit.model_copy(update={"flags": [*fit.flags, "separated_levels_dropped"]})
    meta = {
        "rows_pre": rows_pre,
        "rows_post": len(rows),
        "separated_rows": rows_sampled - len(rows),
        "separated_levels": separated,
        "levels": {g.name: len(g.levels) + 1 for g in spec.fe_groups},
        "categories": sum(len(g.levels) for g in spec.fe_groups),
        "columns": n_cols,
        "fit_seconds": time.perf_counter() - started,
    }
    logger.info(f"FE-PPML: {meta['rows_post']} rows, {meta['categories']} FE categories, converged={fit.converged}")
    return fit, spec, meta


# ============================================================================
# Count baselines
# ============================================================================

def _pearson_gap(y: np.ndarray, mu: np.ndarray, dof: int):
    def gap(a: float) -> float:
        return float(((y - mu) ** 2 / (mu * (1.0 + a * mu))).sum() - dof)
    return gap


def fit_negbin(
    design: GlmDesign,
    y: np.ndarray,
    tol: float = IRLS_TOLERANCE,
    max_iter: int = IRLS_MAX_ITER,
) -> GlmFit:
    """
    NB2 baseline: PPML mean, moment dispersion, one NB-weighted refit.

    The dispersion a solves sum (y - mu)^2 / (mu (1 + a mu)) = n - p.
    """
    y = _check_counts(y)
    pois = _irls(design.X, y, tol=tol, max_iter=max_iter)
    mu = np.exp(_eta(design.X, pois.beta))
    dof = max(len(y) - design.X.shape[1], 1)
    gap = _pearson_gap(y, mu, dof)

    flags = list(pois.flags)
    if gap(0.0) <= 0:
        logger.warning("Negative binomial moment estimate is not positive; dispersion clamped to 0")
        a = 0.0
        flags.append("dispersion_clamped")
    else:
        hi = 1.0
        while gap(hi) > 0 and hi < 1e8:
            hi *= 2.0
        a = float(brentq(gap, 0.0, hi, xtol=1e-12))

    refit = _irls(design.X, y, alpha=a, tol=tol, max_iter=max_iter, beta0=pois.beta)
    return GlmFit(
        family="negbin",
        columns=design.columns,
        coefficients=refit.beta.tolist(),
        dispersion=a,
        deviance_trace=pois.trace + refit.trace,
        converged=refit.converged,
        iterations=pois.iterations + refit.iterations,
        score_max=refit.score_max,
        flags=flags + refit.flags,
    )


def zip_loglik(y: np.ndarray, mu: np.ndarray, p: float) -> float:
    zero = y == 0
    ll_zero = np.log(p + (1.0 - p) * np.exp(-mu[zero])).sum()
    ll_pos = (np.log(1.0 - p) + y[~zero] * np.log(mu[~zero]) - mu[~zero] - gammaln(y[~zero] + 1.0)).sum()
    return float(ll_zero + ll_pos)


def fit_zip(
    design: GlmDesign,
    y: np.ndarray,
    em_iters: int = ZIP_EM_ITERS,
    tol: float = IRLS_TOLERANCE,
    max_iter: int = IRLS_MAX_ITER,
) -> GlmFit:
    """
    Zero-inflated Poisson with an intercept-only inflation probability, fitted by EM.

    E-step: zero rows get responsibility p / (p + (1 - p) exp(-mu)).
    M-step: p is the mean responsibility; the Poisson mean is refit with weights 1 - z.
    """
    y = _check_counts(y)
    zero = y == 0
    if not zero.any():
        raise DataError("no_zeros", "zero-inflated Poisson needs zero counts")

    res = _irls(design.X, y, tol=tol, max_iter=max_iter)
    beta = res.beta
    mu = np.exp(_eta(design.X, beta))
    excess = (zero.sum() - np.exp(-mu).sum()) / len(y)
    p = float(np.clip(excess, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP))

    trace = [-2.0 * zip_loglik(y, mu, p)]
    converged = False
    iterations = 0
    flags: list[str] = []
    for iterations in range(1, em_iters + 1):
        z = np.where(zero, p / (p + (1.0 - p) * np.exp(-mu)), 0.0)
        p_raw = float(z.mean())
        p = float(np.clip(p_raw, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP))
        res = _irls(design.X, y, weights=1.0 - z, tol=tol, max_iter=max_iter, beta0=beta)
        beta = res.beta
        mu = np.exp(_eta(design.X, beta))
        trace.append(-2.0 * zip_loglik(y, mu, p))
        if abs(trace[-2] - trace[-1]) < tol * len(y):
            converged = True
            break

    if p in (PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP):
        logger.warning(f"ZIP inflation probability clamped to {p}")
        flags.append("inflation_clamped")
    return GlmFit(
        family="zip",
        columns=design.columns,
        coefficients=beta.tolist(),
        inflation=p,
        deviance_trace=trace,
        converged=converged,
        iterations=iterations,
        score_max=res.score_max,
        flags=flags,
    )
