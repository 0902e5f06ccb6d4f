"""
The prepared OD prediction task.

An ODTask bundles zones, filtered and unfiltered flows, impedance, the split
and the sampled row indices. Every quantity a model may learn from (masses,
margins, outflows) is derived from training-period rows only, with rows that
touch held-out zones removed under a spatial holdout.
"""

import threading
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Literal, Optional, Sequence

import numpy as np
import pandas as pd

from .config import HOURS_PER_DAY, logger
from .data import (
    FlowTable,
    ImpedanceMatrix,
    MassDefinition,
    MassVector,
    PairSet,
    SplitIndices,
    ZoneTable,
)
from .errors import EmptyTaskError
from .features import (
    build_feature_frame,
    build_impedance,
    euclidean_km,
    filter_od_pairs,
    make_masses,
    split_and_sample,
)
from .ingest import ingest_trips, load_trips, load_zones
from .schemas import DataSource, ExperimentConfig, FeatureConfig, SamplingConfig, SplitSpec
from .synthetic import generate_from_config, generate_synthetic_trips

MassPolicy = Literal["zero", "borough_imputed"]


def _with_zone_index(flows: FlowTable, zones: ZoneTable) -> FlowTable:
    frame = flows.frame.copy()
    frame["o_idx"] = zones.index_of(frame["origin"].to_numpy())
    frame["d_idx"] = zones.index_of(frame["dest"].to_numpy())
    frame = frame[(frame["o_idx"] >= 0) & (frame["d_idx"] >= 0)].reset_index(drop=True)
    return FlowTable(frame=frame)


def _impute_by_borough(values: np.ndarray, held: np.ndarray, boroughs: np.ndarray) -> np.ndarray:
    """Replace held-out entries (last axis) by the mean over same-borough retained zones."""
    out = values.copy()
    retained = np.setdiff1d(np.arange(values.shape[-1]), held)
    if len(retained) == 0:
        return out
    for z in held:
        same = retained[boroughs[retained] == boroughs[z]]
        donors = same if len(same) else retained
        out[..., z] = values[..., donors].mean(axis=-1)
    return out


@dataclass(frozen=True)
class ODTask:
    zones: ZoneTable
    flows: FlowTable
    all_flows: FlowTable
    pairs: PairSet
    distance_km: np.ndarray
    impedance: ImpedanceMatrix
    split: SplitSpec
    indices: SplitIndices
    start: pd.Timestamp
    held_out: tuple[int, ...] = ()
    mass_policy: MassPolicy = "zero"
    include_diagonal: bool = False
    manifest: dict[str, Any] = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)

    # ------------------------------------------------------------------
    # Rows
    # ------------------------------------------------------------------

    @property
    def n_zones(self) -> int:
        return self.zones.n

    def rows(self, split: str) -> pd.DataFrame:
        return self.flows.frame.iloc[self.indices.get(split)]

    def y(self, split: str) -> np.ndarray:
        return self.rows(split)["flow"].to_numpy(dtype=float)

    def features(self, split: str, config: Optional[FeatureConfig] = None) -> pd.DataFrame:
        return build_feature_frame(self.zones, self.distance_km, self.rows(split), config)

    @property
    def train_hours(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start, self.split.train_end, freq="h", inclusive="left")

    def touches_held_out(self, frame: pd.DataFrame) -> np.ndarray:
        if not self.held_out:
            return np.zeros(len(frame), dtype=bool)
        held = np.asarray(self.held_out)
        return np.isin(frame["o_idx"].to_numpy(), held) | np.isin(frame["d_idx"].to_numpy(), held)

    @property
    def training_frame(self) -> pd.DataFrame:
        """Unfiltered training-period rows, minus rows touching held-out zones."""
        def build() -> pd.DataFrame:
            frame = self.all_flows.before(self.split.train_end)
            return frame[~self.touches_held_out(frame)]

        return self._cached("training_frame", build)

    def universe(self, kind: Literal["all", "task"] = "all") -> np.ndarray:
        """Zone indices spanning materialized matrices."""
        if kind == "all":
            return np.arange(self.n_zones)
        ids = np.union1d(self.pairs.frame["origin"].to_numpy(), self.pairs.frame["dest"].to_numpy())
        return np.sort(self.zones.index_of(ids))

    @property
    def pair_mask(self) -> np.ndarray:
        """Destinations an allocation may send flow to (diagonal only when the task keeps it)."""
        mask = np.ones((self.n_zones, self.n_zones), dtype=bool)
        if not self.include_diagonal:
            np.fill_diagonal(mask, False)
        return mask

    # ------------------------------------------------------------------
    # Training-period aggregates
    # ------------------------------------------------------------------

    def _cached(self, key: str, factory: Callable[[], Any]) -> Any:
        # Model fits may run on worker threads sharing one task
        with self._lock:
            if key not in self._cache:
                self._cache[key] = factory()
            return self._cache[key]

    def _apply_policy(self, values: np.ndarray) -> np.ndarray:
        if not self.held_out or self.mass_policy == "zero":
            return values
        return _impute_by_borough(values, np.asarray(self.held_out), self.zones.boroughs)

    def masses(self, definition: MassDefinition) -> MassVector:
        def build() -> MassVector:
            mv = make_masses(self.training_frame, self.zones, definition)
            if definition == "poi_total":
                return mv
            return MassVector(values=self._apply_policy(mv.values), definition=definition)

        return self._cached(f"mass:{definition}", build)

    @property
    def margins(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Mean hourly origin and destination totals per hour-of-day slice, shape (24, n).

        Each slice averages over every training hour with that hour of day,
        including hours with no recorded trips.
        """
        def build() -> tuple[np.ndarray, np.ndarray]:
            frame = self.training_frame
            n = self.n_zones
            hod = frame["hour_of_day"].to_numpy()
            w = frame["flow"].to_numpy(dtype=float)
            O = np.bincount(hod * n + frame["o_idx"].to_numpy(), weights=w, minlength=HOURS_PER_DAY * n)
            D = np.bincount(hod * n + frame["d_idx"].to_numpy(), weights=w, minlength=HOURS_PER_DAY * n)
            counts = np.bincount(self.train_hours.hour.to_numpy(), minlength=HOURS_PER_DAY).astype(float)
            counts = np.maximum(counts, 1.0)[:, None]
            O = O.reshape(HOURS_PER_DAY, n) / counts
            D = D.reshape(HOURS_PER_DAY, n) / counts
            return self._apply_policy(O), self._apply_policy(D)

        return self._cached("margins", build)

    @property
    def mean_outflow(self) -> np.ndarray:
        """Mean hourly training outflow per zone."""
        def build() -> np.ndarray:
            frame = self.training_frame
            total = np.bincount(
                frame["o_idx"].to_numpy(), weights=frame["flow"].to_numpy(dtype=float), minlength=self.n_zones
            )
            return self._apply_policy(total / max(len(self.train_hours), 1))

        return self._cached("mean_outflow", build)

    # ------------------------------------------------------------------
    # Spatial holdout
    # ------------------------------------------------------------------

    def hold_out(self, zone_idx: Sequence[int], policy: MassPolicy = "zero") -> "ODTask":
        """
        Derive a task where every pair touching zone_idx leaves training.

        Train and validation keep the rows not touching held-out zones; test
        keeps only the rows that do.
        """
        held = tuple(sorted(int(z) for z in zone_idx))
        if not held:
            raise EmptyTaskError("no_holdout_zones", "spatial holdout needs at least one zone")
        frame = self.flows.frame
        held_arr = np.asarray(held)
        touches = np.isin(frame["o_idx"].to_numpy(), held_arr) | np.isin(frame["d_idx"].to_numpy(), held_arr)

        train = self.indices.train[~touches[self.indices.train]]
        val = self.indices.val[~touches[self.indices.val]]
        test = self.indices.test[touches[self.indices.test]]
        if len(test) == 0:
            raise EmptyTaskError("empty_holdout_test", f"no test rows touch held-out zones {held}")
        if len(train) == 0:
            raise EmptyTaskError("empty_holdout_train", "spatial holdout removed every training row")
        logger.info(f"Holding out {len(held)} zones ({policy}): {len(test)} test rows touch them")
        return replace(
            self,
            indices=SplitIndices(train=train, val=val, test=test),
            held_out=held,
            mass_policy=policy,
            _cache={},
            _lock=threading.RLock(),
        )


# ============================================================================
# Task preparation
# ============================================================================

@dataclass(frozen=True)
class SourceData:
    """Zones and unfiltered flows, with raw trips when the source has them."""
    zones: ZoneTable
    flows: FlowTable
    trips: Optional[pd.DataFrame] = None
    manifest: dict[str, Any] = field(default_factory=dict)


def load_source(data: DataSource) -> SourceData:
    if data.kind == "synthetic":
        city = generate_from_config(data.synthetic)
        return SourceData(zones=city.zones, flows=city.flows, manifest=city.manifest)
    zones = load_zones(data.zones_path)
    trips = load_trips(data.trips_path)
    result = ingest_trips(trips, zones, data.ingest)
    manifest = {"trips_path": str(data.trips_path), "zones_path": str(data.zones_path),
                "accepted": result.accepted, "rejects": result.rejects}
    return SourceData(zones=zones, flows=result.flows, trips=trips, manifest=manifest)


def resolve_split(sampling: SamplingConfig, flows: FlowTable, seed: int) -> tuple[SplitSpec, pd.Timestamp]:
    """Split boundaries from explicit timestamps, or from fractions of the observed hour range."""
    if len(flows) == 0:
        raise EmptyTaskError("no_flows", "cannot split an empty flow table")
    start = flows.frame["hour"].min()
    if sampling.train_end and sampling.val_end and sampling.test_end:
        bounds = (sampling.train_end, sampling.val_end, sampling.test_end)
    else:
        end = flows.frame["hour"].max() + pd.Timedelta(hours=1)
        n_hours = int((end - start) / pd.Timedelta(hours=1))
        train_h = int(round(sampling.train_fraction * n_hours))
        val_h = int(round((sampling.train_fraction + sampling.val_fraction) * n_hours))
        bounds = (start + pd.Timedelta(hours=train_h), start + pd.Timedelta(hours=val_h), end)
    spec = SplitSpec(
        train_end=bounds[0],
        val_end=bounds[1],
        test_end=bounds[2],
        sampling=sampling.sampling,
        max_train_rows=sampling.max_train_rows,
        max_eval_rows=sampling.max_eval_rows,
        seed=seed,
    )
    return spec, pd.Timestamp(start)


def prepare_task(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    source: Optional[SourceData] = None,
) -> ODTask:
    """
    Build the OD task described by an experiment config.

    Args:
        config: Experiment configuration
        seed: Sampling seed (defaults to the first configured seed)
        source: Preloaded source data, reused across seeds and settings

    Returns:
        ODTask ready for model fitting
    """
    seed = config.seeds[0] if seed is None else seed
    if source is None:
        source = load_source(config.data)
    zones = source.zones
    all_flows = _with_zone_index(source.flows, zones)

    split, start = resolve_split(config.sampling, all_flows, seed)
    flows, pairs = filter_od_pairs(
        all_flows, config.filtering.min_total, config.filtering.top_k, split.train_end
    )
    indices = split_and_sample(flows, split)

    distance = euclidean_km(zones)
    if config.impedance == "travel_time_proxy":
        trips = source.trips
        if trips is None:
            train_flows = FlowTable(frame=all_flows.before(split.train_end))
            trips = generate_synthetic_trips(zones, train_flows, seed=config.data.synthetic.seed)
        else:
            trips = trips[pd.to_datetime(trips["pickup_datetime"]) < split.train_end]
        impedance = build_impedance(zones, "travel_time_proxy", trips)
    else:
        impedance = ImpedanceMatrix(d=distance, source="euclidean_centroid", coverage=1.0)

    include_diagonal = bool((pairs.frame["origin"] == pairs.frame["dest"]).any())
    return ODTask(
        zones=zones,
        flows=flows,
        all_flows=all_flows,
        pairs=pairs,
        distance_km=distance,
        impedance=impedance,
        split=split,
        indices=indices,
        start=start,
        include_diagonal=include_diagonal,
        manifest=dict(source.manifest),
    )
