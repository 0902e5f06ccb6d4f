"""
Core data containers for the OD-flow pipeline.

All containers are frozen dataclasses wrapping pandas/numpy data. Constructors
validate the type invariants and put rows into canonical order so downstream
matrices can rely on positional zone indices.
"""

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
import pandas as pd

from .config import HOURS_PER_DAY, POI_CATEGORIES, ZONE_COLUMNS
from .errors import DataError, IngestionError

MassDefinition = Literal["flow_out_total", "flow_in_total", "poi_total"]
ImpedanceSource = Literal["euclidean_centroid", "travel_time_proxy"]

FLOW_COLUMNS = ["origin", "dest", "hour", "flow"]
TEMPORAL_COLUMNS = ["hour_of_day", "day_of_week", "month", "is_weekend", "hour_of_week"]


# ============================================================================
# Zones
# ============================================================================

@dataclass(frozen=True)
class ZoneTable:
    """
    Zone identities, projected centroids, areas, boroughs and POI counts.

    Rows are sorted by zone_id; the row position is the zone index used by
    every matrix in the pipeline.
    """
    frame: pd.DataFrame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "ZoneTable":
        missing = [c for c in ZONE_COLUMNS if c not in frame.columns]
        if missing:
            raise IngestionError(f"missing_column:{missing[0]}", f"zones file is missing column '{missing[0]}'")

        df = frame[ZONE_COLUMNS].copy()
        df["zone_id"] = df["zone_id"].astype(np.int64)
        df["borough"] = df["borough"].astype(str)
        if df["zone_id"].duplicated().any():
            dup = int(df.loc[df["zone_id"].duplicated(), "zone_id"].iloc[0])
            raise DataError("duplicate_zone", f"zone_id {dup} appears more than once")
        if (df["area_km2"] <= 0).any():
            raise DataError("non_positive_area", "area_km2 must be positive for every zone")
        xy = df[["centroid_x_m", "centroid_y_m"]].to_numpy(dtype=float)
        if not np.isfinite(xy).all():
            raise DataError("non_finite_centroid", "zone centroids must be finite")

        poi_cols = [f"poi_{c}" for c in POI_CATEGORIES]
        if (df[poi_cols] < 0).any().any():
            raise DataError("negative_poi", "POI counts must be non-negative")
        df[poi_cols] = df[poi_cols].astype(np.int64)
        df["poi_total"] = df[poi_cols].sum(axis=1)
        for cat in POI_CATEGORIES:
            df[f"poi_{cat}_density"] = df[f"poi_{cat}"] / df["area_km2"]
        df["poi_density_total"] = df["poi_total"] / df["area_km2"]

        df = df.sort_values("zone_id", kind="mergesort").reset_index(drop=True)
        return cls(frame=df)

    @property
    def n(self) -> int:
        return len(self.frame)

    @property
    def zone_ids(self) -> np.ndarray:
        return self.frame["zone_id"].to_numpy()

    @property
    def centroids(self) -> np.ndarray:
        return self.frame[["centroid_x_m", "centroid_y_m"]].to_numpy(dtype=float)

    @property
    def boroughs(self) -> np.ndarray:
        return self.frame["borough"].to_numpy()

    @property
    def poi_total(self) -> np.ndarray:
        return self.frame["poi_total"].to_numpy(dtype=float)

    def index_of(self, zone_ids) -> np.ndarray:
        """Positional index for each zone id (-1 where the id is unknown)."""
        ids = np.asarray(zone_ids, dtype=np.int64)
        known = self.zone_ids
        if len(known) == 0:
            return np.full(len(ids), -1, dtype=np.int64)
        pos = np.clip(np.searchsorted(known, ids), 0, len(known) - 1)
        return np.where(known[pos] == ids, pos, -1)


# ============================================================================
# Flows
# ============================================================================

def add_temporal_features(frame: pd.DataFrame) -> pd.DataFrame:
    """Attach hour_of_day, day_of_week (Monday=0), month, is_weekend and hour_of_week."""
    out = frame.copy()
    hours = pd.DatetimeIndex(out["hour"])
    out["hour_of_day"] = hours.hour.astype(np.int64)
    out["day_of_week"] = hours.dayofweek.astype(np.int64)
    out["month"] = hours.month.astype(np.int64)
    out["is_weekend"] = (out["day_of_week"] >= 5).astype(np.int64)
    out["hour_of_week"] = HOURS_PER_DAY * out["day_of_week"] + out["hour_of_day"]
    return out


@dataclass(frozen=True)
class FlowTable:
    """Sparse hourly OD counts with one row per (origin, dest, hour)."""
    frame: pd.DataFrame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "FlowTable":
        missing = [c for c in FLOW_COLUMNS if c not in frame.columns]
        if missing:
            raise IngestionError(f"missing_column:{missing[0]}", f"flow table is missing column '{missing[0]}'")

        df = frame[FLOW_COLUMNS].copy()
        df["origin"] = df["origin"].astype(np.int64)
        df["dest"] = df["dest"].astype(np.int64)
        df["hour"] = pd.to_datetime(df["hour"]).dt.floor("h")
        df["flow"] = df["flow"].astype(np.int64)
        if (df["flow"] < 0).any():
            raise DataError("negative_flow", "flow counts must be non-negative")
        if df.duplicated(["origin", "dest", "hour"]).any():
            raise DataError("duplicate_cell", "FlowTable holds more than one row for an (origin, dest, hour) triple")

        df = df.sort_values(["origin", "dest", "hour"], kind="mergesort").reset_index(drop=True)
        return cls(frame=add_temporal_features(df))

    @classmethod
    def empty(cls) -> "FlowTable":
        frame = pd.DataFrame({
            "origin": pd.Series([], dtype=np.int64),
            "dest": pd.Series([], dtype=np.int64),
            "hour": pd.Series([], dtype="datetime64[ns]"),
            "flow": pd.Series([], dtype=np.int64),
        })
        return cls.from_frame(frame)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def total(self) -> int:
        return int(self.frame["flow"].sum())

    def before(self, boundary: pd.Timestamp) -> pd.DataFrame:
        return self.frame[self.frame["hour"] < boundary]

    def restrict(self, mask: np.ndarray) -> "FlowTable":
        return FlowTable(frame=self.frame[mask].reset_index(drop=True))


# ============================================================================
# Matrices and vectors aligned with ZoneTable order
# ============================================================================

@dataclass(frozen=True)
class ImpedanceMatrix:
    """Pairwise impedance (km or minutes), floored above zero."""
    d: np.ndarray
    source: ImpedanceSource = "euclidean_centroid"
    coverage: float = 1.0

    @property
    def unit(self) -> str:
        return "km" if self.source == "euclidean_centroid" else "minutes"


@dataclass(frozen=True)
class MassVector:
    """Strictly positive per-zone mass."""
    values: np.ndarray
    definition: MassDefinition
    train_only: bool = True

    def __post_init__(self):
        if self.values.size and not (self.values > 0).all():
            raise DataError("non_positive_mass", f"{self.definition} mass must be strictly positive")

    @property
    def log(self) -> np.ndarray:
        return np.log(self.values)


@dataclass(frozen=True)
class PairSet:
    """OD pairs surviving the training-period filter, with their totals."""
    frame: pd.DataFrame

    def __len__(self) -> int:
        return len(self.frame)

    def as_set(self) -> set[tuple[int, int]]:
        return set(zip(self.frame["origin"].tolist(), self.frame["dest"].tolist()))


@dataclass(frozen=True)
class SplitIndices:
    """Sorted positional row indices into a FlowTable frame, one array per split."""
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def get(self, split: str) -> np.ndarray:
        if split not in ("train", "val", "test"):
            raise ValueError(f"unknown split '{split}'")
        return getattr(self, split)


@dataclass(frozen=True)
class PredictionFrame:
    """Observed flow, baseline and final predictions with row keys."""
    model: str
    frame: pd.DataFrame
    base_model: Optional[str] = None
    meta: dict = field(default_factory=dict)

    @property
    def y(self) -> np.ndarray:
        return self.frame["flow"].to_numpy(dtype=float)

    @property
    def y_hat(self) -> np.ndarray:
        return self.frame["prediction"].to_numpy(dtype=float)
