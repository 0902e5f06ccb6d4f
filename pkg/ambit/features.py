"""
Task construction on top of the core containers.

- OD-pair filtering on training-period totals
- Impedance matrices (Euclidean centroid distance or travel-time proxy)
- Mass vectors (training-period flow totals or POI totals)
- Time-window splits with seeded down-sampling
- Feature frames for the boosted learners
"""

from typing import Optional

import numpy as np
import pandas as pd

from .config import (
    DISTANCE_FLOOR_KM,
    MASS_EPSILON,
    POI_CATEGORIES,
    STRATIFIED_BINS,
    logger,
)
from .data import (
    ImpedanceMatrix,
    ImpedanceSource,
    MassDefinition,
    MassVector,
    PairSet,
    SplitIndices,
    TEMPORAL_COLUMNS,
    FlowTable,
    ZoneTable,
)
from .errors import DataError, EmptyTaskError
from .schemas import FeatureConfig, SplitSpec


# ============================================================================
# Pair Filtering
# ============================================================================

def filter_od_pairs(
    flows: FlowTable,
    min_total: int,
    top_k: Optional[int],
    train_end: pd.Timestamp,
) -> tuple[FlowTable, PairSet]:
    """
    Keep OD pairs whose training-period total reaches min_total, capped at top_k.

    Ranking is by total descending with (origin, dest) ascending breaking ties.
    Rows from every split are restricted to the surviving pairs.
    """
    if min_total < 0:
        raise ValueError("min_total must be non-negative")
    if top_k is not None and top_k < 1:
        raise ValueError("top_k must be at least 1")

    train = flows.before(pd.Timestamp(train_end))
    totals = (
        train.groupby(["origin", "dest"], sort=True)["flow"].sum().rename("total").reset_index()
    )
    totals = totals[totals["total"] >= min_total]
    totals = totals.sort_values(
        ["total", "origin", "dest"], ascending=[False, True, True], kind="mergesort"
    )
    if top_k is not None:
        totals = totals.head(top_k)
    if totals.empty:
        raise EmptyTaskError(
            "no_pairs", f"no OD pair reaches min_total={min_total} before {train_end}"
        )

    pairs = PairSet(frame=totals.sort_values(["origin", "dest"]).reset_index(drop=True))
    keys = flows.frame[["origin", "dest"]].merge(
        pairs.frame[["origin", "dest"]], on=["origin", "dest"], how="left", indicator=True
    )
    mask = (keys["_merge"] == "both").to_numpy()
    logger.info(f"Pair filter kept {len(pairs)} pairs and {int(mask.sum())} of {len(flows)} rows")
    return flows.restrict(mask), pairs


# ============================================================================
# Impedance
# ============================================================================

def euclidean_km(zones: ZoneTable) -> np.ndarray:
    xy = zones.centroids
    diff = xy[:, None, :] - xy[None, :, :]
    d = np.sqrt((diff ** 2).sum(axis=-1)) / 1000.0
    return np.maximum(d, DISTANCE_FLOOR_KM)


def build_impedance(
    zones: ZoneTable,
    source: ImpedanceSource = "euclidean_centroid",
    trips: Optional[pd.DataFrame] = None,
) -> ImpedanceMatrix:
    """
    Build the pairwise impedance matrix in ZoneTable order.

    The travel-time proxy is the median observed trip duration per OD pair;
    uncovered pairs fall back to Euclidean km times the median minutes-per-km
    over covered pairs.
    """
    if zones.n == 0:
        raise EmptyTaskError("no_zones", "impedance requires at least one zone")
    d_km = euclidean_km(zones)
    if source == "euclidean_centroid":
        return ImpedanceMatrix(d=d_km, source=source, coverage=1.0)

    if trips is None or trips.empty:
        raise DataError("no_trips", "travel_time_proxy impedance requires trip records")

    o = zones.index_of(trips["pu_zone"].to_numpy())
    dd = zones.index_of(trips["do_zone"].to_numpy())
    ok = (o >= 0) & (dd >= 0) & np.isfinite(trips["trip_minutes"].to_numpy(dtype=float))
    medians = (
        pd.DataFrame({"o": o[ok], "d": dd[ok], "minutes": trips["trip_minutes"].to_numpy(dtype=float)[ok]})
        .groupby(["o", "d"], sort=True)["minutes"]
        .median()
    )
    oi = medians.index.get_level_values("o").to_numpy()
    di = medians.index.get_level_values("d").to_numpy()
    observed = medians.to_numpy()

    n = zones.n
    off_diag = oi != di
    rate = float(np.median(observed[off_diag] / d_km[oi[off_diag], di[off_diag]])) if off_diag.any() else 1.0
    d = d_km * rate
    d[oi, di] = observed
    d = np.maximum(d, DISTANCE_FLOOR_KM * rate)

    n_pairs = n * (n - 1) if n > 1 else 1
    coverage = float(off_diag.sum()) / n_pairs
    logger.info(f"Travel-time proxy covers {coverage:.1%} of OD pairs ({rate:.2f} min/km fallback)")
    return ImpedanceMatrix(d=d, source=source, coverage=coverage)


# ============================================================================
# Masses
# ============================================================================

def make_masses(
    flows: FlowTable | pd.DataFrame,
    zones: ZoneTable,
    definition: MassDefinition,
    train_end: Optional[pd.Timestamp] = None,
) -> MassVector:
    """
    Per-zone mass in ZoneTable order, smoothed by MASS_EPSILON.

    Flow-based masses only read rows before train_end.
    """
    if definition == "poi_total":
        return MassVector(values=zones.poi_total + MASS_EPSILON, definition=definition, train_only=True)
    if definition not in ("flow_out_total", "flow_in_total"):
        raise ValueError(f"unknown mass definition '{definition}'")

    frame = flows.frame if isinstance(flows, FlowTable) else flows
    if train_end is not None:
        frame = frame[frame["hour"] < pd.Timestamp(train_end)]
    key = "origin" if definition == "flow_out_total" else "dest"
    idx = zones.index_of(frame[key].to_numpy())
    known = idx >= 0
    totals = np.bincount(idx[known], weights=frame["flow"].to_numpy(dtype=float)[known], minlength=zones.n)
    return MassVector(values=totals + MASS_EPSILON, definition=definition, train_only=True)


# ============================================================================
# Splits
# ============================================================================

def _allocate(counts: np.ndarray, size: int) -> np.ndarray:
    """Largest-remainder allocation of size across bins proportional to counts."""
    quotas = size * counts / counts.sum()
    base = np.floor(quotas).astype(np.int64)
    remainder = size - int(base.sum())
    if remainder > 0:
        order = np.lexsort((np.arange(len(counts)), -(quotas - base)))
        base[order[:remainder]] += 1
    return np.minimum(base, counts)


def _sample_window(
    rows: np.ndarray,
    flow: np.ndarray,
    size: int,
    sampling: str,
    rng: np.random.Generator,
) -> np.ndarray:
    if size >= len(rows):
        return rows
    if sampling == "random":
        return np.sort(rng.choice(rows, size=size, replace=False))

    values = np.log1p(flow)
    edges = np.unique(np.quantile(values, np.linspace(0.0, 1.0, STRATIFIED_BINS + 1)))
    bins = np.searchsorted(edges[1:-1], values, side="right")
    n_bins = len(edges) - 1 if len(edges) > 1 else 1
    counts = np.bincount(bins, minlength=n_bins)
    alloc = _allocate(counts, size)
    picked = [
        rng.choice(rows[bins == b], size=int(alloc[b]), replace=False)
        for b in range(n_bins)
        if alloc[b] > 0
    ]
    return np.sort(np.concatenate(picked)) if picked else rows[:0]


def split_and_sample(flows: FlowTable, spec: SplitSpec) -> SplitIndices:
    """
    Partition rows by time window and down-sample each window without replacement.

    Every window draws from its own generator seeded with (seed, window number),
    so an identical spec always returns identical indices.
    """
    hours = flows.frame["hour"]
    flow = flows.frame["flow"].to_numpy(dtype=float)
    windows = {
        "train": (hours < spec.train_end).to_numpy(),
        "val": ((hours >= spec.train_end) & (hours < spec.val_end)).to_numpy(),
        "test": ((hours >= spec.val_end) & (hours < spec.test_end)).to_numpy(),
    }
    caps = {"train": spec.max_train_rows, "val": spec.max_eval_rows, "test": spec.max_eval_rows}

    out: dict[str, np.ndarray] = {}
    for split_no, (name, mask) in enumerate(windows.items()):
        rows = np.flatnonzero(mask)
        if len(rows) == 0:
            raise EmptyTaskError(f"empty_window:{name}", f"the {name} window holds no rows")
        rng = np.random.default_rng([spec.seed, split_no])
        out[name] = _sample_window(rows, flow[rows], caps[name], spec.sampling, rng)
    logger.info(
        f"Split sizes: train={len(out['train'])}, val={len(out['val'])}, test={len(out['test'])}"
    )
    return SplitIndices(**out)


# ============================================================================
# Feature Frames
# ============================================================================

def feature_names(config: FeatureConfig) -> list[str]:
    names = ["distance_km", "o_area_km2", "d_area_km2"]
    for side in ("o", "d"):
        if config.include_poi_categories:
            names += [f"{side}_poi_{c}_density" for c in POI_CATEGORIES]
        names.append(f"{side}_poi_density_total")
    if config.include_centroids:
        names += ["o_x_m", "o_y_m", "d_x_m", "d_y_m"]
    return names + TEMPORAL_COLUMNS


def build_feature_frame(
    zones: ZoneTable,
    distance_km: np.ndarray,
    rows: pd.DataFrame,
    config: Optional[FeatureConfig] = None,
) -> pd.DataFrame:
    """
    Assemble spatial, POI and temporal features for model rows.

    Rows must carry positional zone indices o_idx/d_idx and temporal columns.
    Distance is always the Euclidean centroid distance.
    """
    if config is None:
        config = FeatureConfig()
    z = zones.frame
    o = rows["o_idx"].to_numpy()
    d = rows["d_idx"].to_numpy()

    cols: dict[str, np.ndarray] = {
        "distance_km": distance_km[o, d],
        "o_area_km2": z["area_km2"].to_numpy(dtype=float)[o],
        "d_area_km2": z["area_km2"].to_numpy(dtype=float)[d],
    }
    for side, idx in (("o", o), ("d", d)):
        if config.include_poi_categories:
            for c in POI_CATEGORIES:
                cols[f"{side}_poi_{c}_density"] = z[f"poi_{c}_density"].to_numpy(dtype=float)[idx]
        cols[f"{side}_poi_density_total"] = z["poi_density_total"].to_numpy(dtype=float)[idx]
    if config.include_centroids:
        xy = zones.centroids
        cols["o_x_m"], cols["o_y_m"] = xy[o, 0], xy[o, 1]
        cols["d_x_m"], cols["d_y_m"] = xy[d, 0], xy[d, 1]
    for name in TEMPORAL_COLUMNS:
        cols[name] = rows[name].to_numpy(dtype=float)

    frame = pd.DataFrame(cols, index=rows.index)
    return frame[feature_names(config)]
