"""
Physical spatial-interaction baselines.

Unconstrained gravity (log-OLS), origin/destination/doubly constrained
allocation with iterative proportional fitting, competing destinations,
radiation and intervening-opportunity models, plus exhaustive grid tuning.

All matrices are indexed in ZoneTable order. Hourly models return prediction
cubes of shape (slices, n, n).
"""

import itertools
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Sequence

import numpy as np
import pandas as pd

from .config import IPF_MAX_ITER, IPF_TOLERANCE, logger
from .errors import EmptyTaskError, EstimationError, TuningError
from .metrics import compute_metrics, objective_score
from .schemas import CompetingDestParams, GravityParams, TuningRecord

DecayForm = Literal["power", "exponential"]

GRAVITY_TERMS = ["log_k", "log_m_o", "log_m_d", "log_d"]


def decay(d: np.ndarray, beta: float, form: DecayForm = "power") -> np.ndarray:
    if form == "power":
        return d ** (-beta)
    return np.exp(-beta * d)


def take(cube: np.ndarray, rows: pd.DataFrame, slice_key: Optional[str] = None) -> np.ndarray:
    """Read per-row predictions out of a (slices, n, n) cube."""
    s = rows[slice_key].to_numpy() if slice_key else np.zeros(len(rows), dtype=np.int64)
    return cube[s, rows["o_idx"].to_numpy(), rows["d_idx"].to_numpy()]


# ============================================================================
# Unconstrained Gravity
# ============================================================================

def _collinear_column(X: np.ndarray, names: Sequence[str]) -> Optional[str]:
    for j in range(1, X.shape[1] + 1):
        if np.linalg.matrix_rank(X[:, :j]) < j:
            return names[j - 1]
    return None


def fit_gravity_unconstrained(
    rows: pd.DataFrame,
    masses_o: np.ndarray,
    masses_d: np.ndarray,
    impedance: np.ndarray,
) -> GravityParams:
    """
    Fit log T = log k + alpha log m_o + gamma log m_d - beta log d by OLS.

    Only strictly positive training flows enter the regression.
    """
    pos = rows[rows["flow"] > 0]
    if pos.empty:
        raise EmptyTaskError("no_positive_flows", "gravity fit needs at least one positive flow")
    o = pos["o_idx"].to_numpy()
    d = pos["d_idx"].to_numpy()
    X = np.column_stack([
        np.ones(len(pos)),
        np.log(masses_o[o]),
        np.log(masses_d[d]),
        np.log(impedance[o, d]),
    ])
    bad = _collinear_column(X, GRAVITY_TERMS)
    if bad is not None:
        raise EstimationError(f"collinear:{bad}", f"gravity design is rank deficient in column '{bad}'")

    y = np.log(pos["flow"].to_numpy(dtype=float))
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    beta = -float(coef[3])
    if beta >= 0:
        return GravityParams(k=float(np.exp(coef[0])), alpha=float(coef[1]), gamma=float(coef[2]), beta=beta)

    # Decay pinned at 0: the remaining terms are refit without log d
    logger.warning(f"Gravity fit produced negative decay {beta:.4f}; refitting with beta = 0")
    coef, *_ = np.linalg.lstsq(X[:, :3], y, rcond=None)
    return GravityParams(
        k=float(np.exp(coef[0])), alpha=float(coef[1]), gamma=float(coef[2]), beta=0.0, decay_clamped=True,
    )


def gravity_matrix(
    params: GravityParams,
    masses_o: np.ndarray,
    masses_d: np.ndarray,
    impedance: np.ndarray,
) -> np.ndarray:
    return (
        params.k
        * (masses_o ** params.alpha)[:, None]
        * (masses_d ** params.gamma)[None, :]
        * decay(impedance, params.beta, params.decay_form)
    )


def predict_gravity(
    params: GravityParams,
    masses_o: np.ndarray,
    masses_d: np.ndarray,
    impedance: np.ndarray,
    rows: Optional[pd.DataFrame] = None,
) -> np.ndarray:
    """k m_o^alpha m_d^gamma f(d) for every row (or the full matrix when rows is None)."""
    if rows is None:
        return gravity_matrix(params, masses_o, masses_d, impedance)
    o = rows["o_idx"].to_numpy()
    d = rows["d_idx"].to_numpy()
    return (
        params.k
        * masses_o[o] ** params.alpha
        * masses_d[d] ** params.gamma
        * decay(impedance[o, d], params.beta, params.decay_form)
    )


# ============================================================================
# Iterative Proportional Fitting
# ============================================================================

@dataclass(frozen=True)
class MarginCalibration:
    """
    Balanced matrix T = A_i * seed_ij * B_j matching margins O and D.

    Rows (columns) with a zero margin are masked out and keep a factor of 1.
    """
    O: np.ndarray
    D: np.ndarray
    A: np.ndarray
    B: np.ndarray
    matrix: np.ndarray
    converged: bool
    iterations: int
    max_error: float


def _margin_error(T: np.ndarray, O: np.ndarray, D: np.ndarray) -> float:
    rows, cols = T.sum(axis=1), T.sum(axis=0)
    err_r = np.abs(rows - O)[O > 0] / O[O > 0]
    err_c = np.abs(cols - D)[D > 0] / D[D > 0]
    return float(max(err_r.max(initial=0.0), err_c.max(initial=0.0)))


def calibrate_ipf(
    seed: np.ndarray,
    O: np.ndarray,
    D: np.ndarray,
    tol: float = IPF_TOLERANCE,
    max_iter: int = IPF_MAX_ITER,
) -> MarginCalibration:
    """
    Alternate row and column scaling of seed until margins match within tol.

    D is rescaled to sum to sum(O) first. Convergence is checked after every
    full row-then-column pass on the maximum relative margin error.
    """
    O = np.asarray(O, dtype=float)
    D = np.asarray(D, dtype=float)
    if O.sum() > 0 and D.sum() > 0:
        D = D * (O.sum() / D.sum())
    row_on = O > 0
    col_on = D > 0
    K = np.where(row_on[:, None] & col_on[None, :], seed, 0.0)

    A = np.ones(len(O))
    B = np.ones(len(D))
    T = K.copy()
    error = _margin_error(T, O, D)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        rs = K @ B
        A = np.where(row_on & (rs > 0), O / np.where(rs > 0, rs, 1.0), 1.0)
        cs = K.T @ A
        B = np.where(col_on & (cs > 0), D / np.where(cs > 0, cs, 1.0), 1.0)
        T = A[:, None] * K * B[None, :]
        error = _margin_error(T, O, D)
        if error < tol:
            converged = True
            break
    if not converged:
        logger.warning(f"IPF did not converge in {max_iter} passes (max margin error {error:.3g})")
    return MarginCalibration(
        O=O, D=D, A=A, B=B, matrix=T, converged=converged, iterations=iterations, max_error=error
    )


# ============================================================================
# Constrained Allocation
# ============================================================================

def _row_shares(W: np.ndarray) -> np.ndarray:
    total = W.sum(axis=-1, keepdims=True)
    return np.where(total > 0, W / np.where(total > 0, total, 1.0), 0.0)


def _check_margins(O: np.ndarray, label: str) -> None:
    missing = int((O.sum(axis=0) == 0).sum())
    if missing:
        logger.info(f"{missing} zones have no {label} margin in any slice; they receive zero flow")


def doubly_constrained_slices(
    seed: np.ndarray,
    O: np.ndarray,
    D: np.ndarray,
    tol: float = IPF_TOLERANCE,
    max_iter: int = IPF_MAX_ITER,
) -> tuple[np.ndarray, list[MarginCalibration]]:
    """IPF-balance one seed matrix against every (O[s], D[s]) margin slice."""
    calibrations = [calibrate_ipf(seed, O[s], D[s], tol, max_iter) for s in range(O.shape[0])]
    failed = sum(not c.converged for c in calibrations)
    if failed:
        logger.warning(f"{failed} of {len(calibrations)} doubly constrained slices did not converge")
    return np.stack([c.matrix for c in calibrations]), calibrations


def predict_constrained(
    variant: Literal["origin", "destination", "doubly"],
    decay_form: DecayForm,
    beta: float,
    impedance: np.ndarray,
    margins: tuple[np.ndarray, np.ndarray],
    masses: Optional[np.ndarray] = None,
    gamma: float = 1.0,
    pair_mask: Optional[np.ndarray] = None,
    tol: float = IPF_TOLERANCE,
    max_iter: int = IPF_MAX_ITER,
) -> np.ndarray:
    """
    Constrained gravity allocation per margin slice.

    Origin-constrained: T_ij = O_i m_j^gamma f(d_ij) / sum_k m_k^gamma f(d_ik).
    Destination-constrained is the column-wise mirror with origin masses.
    Doubly constrained balances f(d) against both margins with IPF.
    """
    O, D = margins
    n = impedance.shape[0]
    if pair_mask is None:
        pair_mask = np.ones((n, n), dtype=bool)
    f = decay(impedance, beta, decay_form) * pair_mask
    m = np.ones(n) if masses is None else np.asarray(masses, dtype=float)

    if variant == "origin":
        _check_margins(O, "origin")
        shares = _row_shares(f * (m ** gamma)[None, :])
        return O[:, :, None] * shares[None, :, :]
    if variant == "destination":
        _check_margins(D, "destination")
        shares = _row_shares((f * (m ** gamma)[:, None]).T).T
        return shares[None, :, :] * D[:, None, :]
    if variant == "doubly":
        cube, _ = doubly_constrained_slices(f, O, D, tol, max_iter)
        return cube
    raise ValueError(f"unknown constrained variant '{variant}'")


def accessibility(masses: np.ndarray, impedance: np.ndarray, delta: float) -> np.ndarray:
    """A_j = sum over k != j of m_k / d_jk^delta."""
    w = masses[None, :] / impedance ** delta
    np.fill_diagonal(w, 0.0)
    return w.sum(axis=1)


def predict_competing_destinations(
    params: CompetingDestParams,
    masses: np.ndarray,
    impedance: np.ndarray,
    margins: tuple[np.ndarray, np.ndarray],
    pair_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Origin-constrained allocation with destination attractiveness m_j^gamma A_j^rho."""
    if len(masses) < 2:
        raise EstimationError("too_few_zones", "competing destinations needs at least two zones")
    A = accessibility(masses, impedance, params.delta)
    attract = masses ** params.base.gamma * A ** params.rho
    n = impedance.shape[0]
    if pair_mask is None:
        pair_mask = np.ones((n, n), dtype=bool)
    f = decay(impedance, params.base.beta, params.base.decay_form) * pair_mask
    shares = _row_shares(f * attract[None, :])
    return margins[0][:, :, None] * shares[None, :, :]


# ============================================================================
# Radiation and Intervening Opportunities
# ============================================================================

@dataclass(frozen=True)
class OpportunityField:
    """s_ij: mass of zones strictly closer to i than j is, excluding i and j."""
    s: np.ndarray
    masses: np.ndarray


def build_opportunity_field(masses: np.ndarray, impedance: np.ndarray) -> OpportunityField:
    masses = np.asarray(masses, dtype=float)
    n = len(masses)
    s = np.zeros((n, n))
    for i in range(n):
        order = np.argsort(impedance[i], kind="mergesort")
        ds = impedance[i, order]
        ms = masses[order].copy()
        ms[order == i] = 0.0
        prefix = np.concatenate([[0.0], np.cumsum(ms)])
        closer = np.searchsorted(ds, impedance[i], side="left")
        s[i] = prefix[closer]
    return OpportunityField(s=s, masses=masses)


def predict_radiation(
    field: OpportunityField,
    origin_outflow: np.ndarray,
    pair_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """T_ij = O_i m_i m_j / ((m_i + s_ij)(m_i + m_j + s_ij)); zero on the diagonal."""
    m = field.masses
    mi = m[:, None]
    mj = m[None, :]
    T = origin_outflow[:, None] * mi * mj / ((mi + field.s) * (mi + mj + field.s))
    np.fill_diagonal(T, 0.0)
    if pair_mask is not None:
        T = T * pair_mask
    return T


def predict_opportunity_models(
    variant: Literal["IO", "OPS"],
    field: OpportunityField,
    origin_outflow: np.ndarray,
    L: Optional[float] = None,
    pair_mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Normalized opportunity allocations of origin outflow.

    IO:  weight exp(-L s_ij) - exp(-L (s_ij + m_j)), evaluated in log space
    OPS: weight m_j / (m_i + s_ij + m_j)

    origin_outflow may be (n,) or per-slice (slices, n); the result matches.
    """
    m = field.masses
    n = len(m)
    if pair_mask is None:
        pair_mask = np.ones((n, n), dtype=bool)

    if variant == "IO":
        if L is None or L <= 0:
            raise ValueError("IO model needs an absorption rate L > 0")
        log_w = -L * field.s + np.log(-np.expm1(-L * m))[None, :]
        log_w = np.where(pair_mask, log_w, -np.inf)
        top = log_w.max(axis=1, keepdims=True)
        top = np.where(np.isfinite(top), top, 0.0)
        W = np.exp(log_w - top)
    elif variant == "OPS":
        W = m[None, :] / (m[:, None] + field.s + m[None, :]) * pair_mask
    else:
        raise ValueError(f"unknown opportunity variant '{variant}'")

    shares = _row_shares(W)
    outflow = np.asarray(origin_outflow, dtype=float)
    if outflow.ndim == 1:
        return outflow[:, None] * shares
    return outflow[:, :, None] * shares[None, :, :]


# ============================================================================
# Grid Tuning
# ============================================================================

def tune_grid(
    family: str,
    candidate: Callable[[dict[str, float]], np.ndarray],
    grid: dict[str, Sequence[float]],
    y_val: np.ndarray,
    objective: str = "mae",
) -> tuple[dict[str, float], list[TuningRecord]]:
    """
    Evaluate every point of the Cartesian grid on validation rows.

    The best point minimizes the objective (maximizes r2/cpc); ties go to the
    smaller beta, then the smaller rho, then the earlier point in grid enumeration order.

    Args:
        family: Model family label for the trace
        candidate: Maps a parameter dict to validation predictions
        grid: Parameter name -> candidate values
        y_val: Observed validation flows
        objective: Metric name used for selection

    Returns:
        Tuple of (best parameter dict, full tuning trace)
    """
    names = list(grid)
    if not names or any(len(grid[k]) == 0 for k in names):
        raise TuningError("empty_grid", f"{family} tuning grid is empty")

    trace: list[TuningRecord] = []
    scored: list[tuple[tuple, int]] = []
    for point in itertools.product(*(grid[k] for k in names)):
        params = {k: float(v) for k, v in zip(names, point)}
        try:
            metrics = compute_metrics(y_val, candidate(params))
            score = objective_score(metrics, objective)
            if not np.isfinite(score):
                raise ValueError(f"non-finite {objective}")
        except Exception as e:
            logger.debug(f"{family} candidate {params} failed: {e}")
            trace.append(TuningRecord(family=family, params=params, error=str(e)))
            continue
        trace.append(TuningRecord(family=family, params=params, metrics=metrics.model_dump(exclude={"n"})))
        position = len(trace) - 1
        key = (score, params.get("beta", 0.0), params.get("rho", 0.0), position)
        scored.append((key, position))

    if not scored:
        diagnostics = {str(r.params): r.error for r in trace}
        raise TuningError("all_candidates_failed", f"every {family} grid candidate failed", candidates=diagnostics)

    _, best_pos = min(scored, key=lambda item: item[0])
    trace[best_pos] = trace[best_pos].model_copy(update={"chosen": True})
    best = dict(trace[best_pos].params)
    logger.info(f"{family}: selected {best} over {len(trace)} candidates by validation {objective}")
    return best, trace
