"""
Tests for trip ingestion and the core data containers.
"""

import numpy as np
import pandas as pd
import pytest

from ambit.data import FlowTable, MassVector, ZoneTable
from ambit.errors import DataError, IngestionError
from ambit.ingest import ingest_trips, load_trips, load_zones, read_flows, write_flows, write_zones
from ambit.schemas import IngestFilters


# ============================================================================
# Fixtures
# ============================================================================

@pytest.fixture
def zones() -> ZoneTable:
    return ZoneTable.from_frame(pd.DataFrame({
        "zone_id": [3, 1, 2],
        "centroid_x_m": [2000.0, 0.0, 1000.0],
        "centroid_y_m": [0.0, 0.0, 0.0],
        "area_km2": [1.0, 2.0, 1.5],
        "borough": ["B", "A", "A"],
        "poi_amenity": [1, 5, 0],
        "poi_shop": [2, 0, 0],
        "poi_office": [0, 3, 0],
    }))


def make_trips(rows: list[tuple]) -> pd.DataFrame:
    """Trips from (pickup, pu_zone, do_zone, minutes, km) tuples."""
    records = []
    for pickup, pu, do, minutes, km in rows:
        start = pd.Timestamp(pickup)
        records.append({
            "pickup_datetime": start,
            "dropoff_datetime": start + pd.Timedelta(minutes=minutes),
            "pu_zone": pu,
            "do_zone": do,
            "trip_minutes": minutes,
            "trip_km": km,
        })
    return pd.DataFrame.from_records(records)


# ============================================================================
# Zones
# ============================================================================

class TestZoneTable:
    """Tests for zone validation and indexing."""

    def test_sorted_by_zone_id(self, zones):
        assert zones.zone_ids.tolist() == [1, 2, 3]
        assert zones.boroughs.tolist() == ["A", "A", "B"]

    def test_poi_totals_and_densities(self, zones):
        assert zones.poi_total.tolist() == [8.0, 0.0, 3.0]
        assert zones.frame.loc[0, "poi_density_total"] == pytest.approx(4.0)

    def test_index_of_unknown_is_minus_one(self, zones):
        assert zones.index_of([2, 9, 1]).tolist() == [1, -1, 0]

    def test_duplicate_zone_rejected(self, zones):
        frame = pd.concat([zones.frame, zones.frame.iloc[:1]])
        with pytest.raises(DataError) as exc:
            ZoneTable.from_frame(frame)
        assert exc.value.code == "data:duplicate_zone"

    def test_missing_column_named(self, zones):
        with pytest.raises(IngestionError) as exc:
            ZoneTable.from_frame(zones.frame.drop(columns=["borough"]))
        assert exc.value.code == "ingestion:missing_column:borough"

    def test_non_positive_area_rejected(self, zones):
        frame = zones.frame.copy()
        frame.loc[0, "area_km2"] = 0.0
        with pytest.raises(DataError):
            ZoneTable.from_frame(frame)


class TestFlowTable:
    """Tests for flow validation and temporal features."""

    def test_temporal_features(self):
        flows = FlowTable.from_frame(pd.DataFrame({
            "origin": [1], "dest": [2], "hour": [pd.Timestamp("2025-01-05 13:00")], "flow": [4],
        }))
        row = flows.frame.iloc[0]
        # 2025-01-05 is a Sunday
        assert row["hour_of_day"] == 13
        assert row["day_of_week"] == 6
        assert row["is_weekend"] == 1
        assert row["hour_of_week"] == 6 * 24 + 13

    def test_duplicate_cell_rejected(self):
        frame = pd.DataFrame({
            "origin": [1, 1], "dest": [2, 2],
            "hour": [pd.Timestamp("2025-01-06 08:00")] * 2, "flow": [1, 2],
        })
        with pytest.raises(DataError) as exc:
            FlowTable.from_frame(frame)
        assert exc.value.code == "data:duplicate_cell"

    def test_negative_flow_rejected(self):
        frame = pd.DataFrame({"origin": [1], "dest": [2], "hour": [pd.Timestamp("2025-01-06")], "flow": [-1]})
        with pytest.raises(DataError):
            FlowTable.from_frame(frame)

    def test_empty_table(self):
        flows = FlowTable.empty()
        assert len(flows) == 0
        assert flows.total == 0

    def test_mass_vector_must_be_positive(self):
        with pytest.raises(DataError):
            MassVector(values=np.array([1.0, 0.0]), definition="poi_total")


# ============================================================================
# Ingestion
# ============================================================================

class TestIngestTrips:
    """Tests for filtering and aggregation of trip records."""

    def test_aggregates_to_hourly_counts(self, zones):
        trips = make_trips([
            ("2025-01-06 08:05", 1, 2, 10, 1.0),
            ("2025-01-06 08:40", 1, 2, 12, 1.2),
            ("2025-01-06 08:59", 1, 2, 9, 0.9),
            ("2025-01-06 09:01", 1, 2, 11, 1.1),
        ])
        result = ingest_trips(trips, zones)
        frame = result.flows.frame
        assert result.accepted == 4
        assert frame["flow"].tolist() == [3, 1]
        assert frame["hour"].tolist() == [pd.Timestamp("2025-01-06 08:00"), pd.Timestamp("2025-01-06 09:00")]

    def test_filter_bounds_are_inclusive(self, zones):
        trips = make_trips([
            ("2025-01-06 08:00", 1, 2, 1.0, 1.0),
            ("2025-01-06 08:00", 1, 2, 180.0, 1.0),
            ("2025-01-06 08:00", 1, 2, 0.5, 1.0),
            ("2025-01-06 08:00", 1, 2, 181.0, 1.0),
            ("2025-01-06 08:00", 1, 2, 10.0, 0.1),
            ("2025-01-06 08:00", 1, 2, 10.0, 100.5),
        ])
        result = ingest_trips(trips, zones, IngestFilters())
        assert result.accepted == 3
        assert result.rejects["duration"] == 2
        assert result.rejects["distance"] == 1
        assert result.flows.total == 3

    def test_unknown_zone_tallied(self, zones):
        trips = make_trips([
            ("2025-01-06 08:00", 1, 99, 10, 1.0),
            ("2025-01-06 08:00", 1, 3, 10, 1.0),
        ])
        result = ingest_trips(trips, zones)
        assert result.rejects["unknown_zone"] == 1
        assert result.accepted == 1

    def test_missing_trip_column(self, zones):
        trips = make_trips([("2025-01-06 08:00", 1, 2, 10, 1.0)]).drop(columns=["trip_km"])
        with pytest.raises(IngestionError) as exc:
            ingest_trips(trips, zones)
        assert exc.value.code == "ingestion:missing_column:trip_km"

    def test_empty_trips(self, zones):
        result = ingest_trips(make_trips([]).reindex(columns=[
            "pickup_datetime", "dropoff_datetime", "pu_zone", "do_zone", "trip_minutes", "trip_km",
        ]), zones)
        assert result.accepted == 0
        assert len(result.flows) == 0


class TestFiles:
    """Tests for the CSV readers and writers."""

    def test_zones_and_flows_written_and_read(self, zones, tmp_path):
        trips = make_trips([
            ("2025-01-06 08:05", 1, 2, 10, 1.0),
            ("2025-01-06 10:05", 3, 1, 10, 2.0),
        ])
        flows = ingest_trips(trips, zones).flows
        write_zones(zones, tmp_path / "zones.csv")
        write_flows(flows, tmp_path / "flows.csv")

        assert load_zones(tmp_path / "zones.csv").zone_ids.tolist() == [1, 2, 3]
        loaded = read_flows(tmp_path / "flows.csv")
        assert loaded.frame["flow"].tolist() == flows.frame["flow"].tolist()
        assert loaded.frame["hour"].tolist() == flows.frame["hour"].tolist()

    def test_load_trips_parses_timestamps(self, tmp_path):
        make_trips([("2025-01-06 08:05", 1, 2, 10, 1.0)]).to_csv(tmp_path / "trips.csv", index=False)
        trips = load_trips(tmp_path / "trips.csv")
        assert pd.api.types.is_datetime64_any_dtype(trips["pickup_datetime"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError) as exc:
            load_zones(tmp_path / "nope.csv")
        assert exc.value.code == "ingestion:file_not_found"
