"""
Ingestion of trip records and zone files into hourly OD flow tables.

Trips are validated against the documented column set, filtered by duration
and distance, checked against the zone table (unknown zones are tallied, not
silently dropped) and aggregated to (origin, dest, hour) counts.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import pandas as pd

from .config import TRIP_COLUMNS, ZONE_COLUMNS, logger
from .data import FLOW_COLUMNS, FlowTable, ZoneTable
from .errors import IngestionError
from .schemas import IngestFilters


@dataclass(frozen=True)
class IngestResult:
    """Aggregated flows plus the tally of rejected trips by reason."""
    flows: FlowTable
    accepted: int
    rejects: dict[str, int] = field(default_factory=dict)


# ============================================================================
# Readers
# ============================================================================

def _check_columns(frame: pd.DataFrame, required: list[str], what: str) -> None:
    for col in required:
        if col not in frame.columns:
            raise IngestionError(f"missing_column:{col}", f"{what} is missing required column '{col}'")


def load_zones(path: Path) -> ZoneTable:
    """Read a zones CSV into a validated ZoneTable."""
    logger.info(f"Loading zones from: {path}")
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError:
        raise IngestionError("file_not_found", f"zones file not found: {path}")
    return ZoneTable.from_frame(frame)


def load_trips(path: Path) -> pd.DataFrame:
    """Read a headered trips CSV (or Parquet) and parse its timestamps."""
    logger.info(f"Loading trips from: {path}")
    path = Path(path)
    try:
        if path.suffix == ".parquet":
            frame = pd.read_parquet(path)
        else:
            frame = pd.read_csv(path)
    except FileNotFoundError:
        raise IngestionError("file_not_found", f"trips file not found: {path}")

    _check_columns(frame, TRIP_COLUMNS, "trips file")
    frame["pickup_datetime"] = pd.to_datetime(frame["pickup_datetime"])
    frame["dropoff_datetime"] = pd.to_datetime(frame["dropoff_datetime"])
    return frame


def read_flows(path: Path) -> FlowTable:
    frame = pd.read_csv(path, parse_dates=["hour"])
    return FlowTable.from_frame(frame)


def write_flows(flows: FlowTable, output_path: Path) -> None:
    """Write the canonical (origin, dest, hour, flow) columns to CSV."""
    flows.frame[FLOW_COLUMNS].to_csv(output_path, index=False, date_format="%Y-%m-%dT%H:%M:%S")
    logger.info(f"Wrote {len(flows)} flow rows to: {output_path}")


def write_zones(zones: ZoneTable, output_path: Path) -> None:
    zones.frame[ZONE_COLUMNS].to_csv(output_path, index=False)
    logger.info(f"Wrote {zones.n} zones to: {output_path}")


# ============================================================================
# Aggregation
# ============================================================================

def ingest_trips(
    trips: pd.DataFrame,
    zones: ZoneTable,
    filters: Optional[IngestFilters] = None,
) -> IngestResult:
    """
    Filter trip records and aggregate them to hourly OD counts.

    Args:
        trips: Trip records with the documented trip columns
        zones: Zone table used to validate pickup/dropoff zones
        filters: Inclusive duration/distance bounds (defaults from config)

    Returns:
        IngestResult with a canonically ordered FlowTable and rejects tally
    """
    if filters is None:
        filters = IngestFilters()
    _check_columns(trips, TRIP_COLUMNS, "trip records")

    rejects = {"unknown_zone": 0, "duration": 0, "distance": 0}
    if trips.empty:
        return IngestResult(flows=FlowTable.empty(), accepted=0, rejects=rejects)

    pu = zones.index_of(trips["pu_zone"].to_numpy())
    do = zones.index_of(trips["do_zone"].to_numpy())
    known = (pu >= 0) & (do >= 0)
    rejects["unknown_zone"] = int((~known).sum())

    minutes = trips["trip_minutes"].to_numpy(dtype=float)
    km = trips["trip_km"].to_numpy(dtype=float)
    ok_duration = (minutes >= filters.min_minutes) & (minutes <= filters.max_minutes)
    ok_distance = (km >= filters.min_km) & (km <= filters.max_km)
    rejects["duration"] = int((known & ~ok_duration).sum())
    rejects["distance"] = int((known & ok_duration & ~ok_distance).sum())

    keep = known & ok_duration & ok_distance
    kept = trips.loc[keep]
    hours = pd.to_datetime(kept["pickup_datetime"]).dt.floor("h")
    grouped = (
        pd.DataFrame({
            "origin": kept["pu_zone"].astype("int64").to_numpy(),
            "dest": kept["do_zone"].astype("int64").to_numpy(),
            "hour": hours.to_numpy(),
        })
        .groupby(["origin", "dest", "hour"], sort=True)
        .size()
        .rename("flow")
        .reset_index()
    )

    flows = FlowTable.from_frame(grouped) if len(grouped) else FlowTable.empty()
    accepted = int(keep.sum())
    if any(rejects.values()):
        logger.warning(f"Rejected trips: {rejects}")
    logger.info(f"Ingested {accepted} trips into {len(flows)} OD-hour rows")
    return IngestResult(flows=flows, accepted=accepted, rejects=rejects)
