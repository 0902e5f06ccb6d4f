"""
Configuration constants and enums for the AMBIT OD-flow pipeline.
"""

import logging
import os
from enum import Enum
from pathlib import Path
from typing import Final

# ============================================================================
# Trip Ingestion
# ============================================================================

TRIP_COLUMNS: Final[list[str]] = [
    "pickup_datetime",
    "dropoff_datetime",
    "pu_zone",
    "do_zone",
    "trip_minutes",
    "trip_km",
]

ZONE_COLUMNS: Final[list[str]] = [
    "zone_id",
    "centroid_x_m",
    "centroid_y_m",
    "area_km2",
    "borough",
    "poi_amenity",
    "poi_shop",
    "poi_office",
]

POI_CATEGORIES: Final[list[str]] = ["amenity", "shop", "office"]

# Trip filters (minutes, km)
MIN_TRIP_MINUTES: Final[float] = float(os.getenv("AMBIT_MIN_TRIP_MINUTES", "1"))
MAX_TRIP_MINUTES: Final[float] = float(os.getenv("AMBIT_MAX_TRIP_MINUTES", "180"))
MIN_TRIP_KM: Final[float] = float(os.getenv("AMBIT_MIN_TRIP_KM", "0.1"))
MAX_TRIP_KM: Final[float] = float(os.getenv("AMBIT_MAX_TRIP_KM", "100"))

# ============================================================================
# OD Task Construction
# ============================================================================

# Intra-zone and coincident centroids are floored to this distance (km)
DISTANCE_FLOOR_KM: Final[float] = 0.1

# Added to flow-based masses and POI totals so logs stay finite
MASS_EPSILON: Final[float] = 1.0

# Pair filter defaults (training-period totals)
DEFAULT_MIN_PAIR_TOTAL: Final[int] = 200
DEFAULT_TOP_K_PAIRS: Final[int] = 30_000

# Split sampling defaults
DEFAULT_MAX_TRAIN_ROWS: Final[int] = 3_000_000
DEFAULT_MAX_EVAL_ROWS: Final[int] = 2_000_000
DEFAULT_SEED: Final[int] = 42
STRATIFIED_BINS: Final[int] = 10

HOURS_PER_DAY: Final[int] = 24
HOURS_PER_WEEK: Final[int] = 168

# ============================================================================
# Spatial Interaction
# ============================================================================

IPF_TOLERANCE: Final[float] = 1e-6
IPF_MAX_ITER: Final[int] = 500

BETA_GRID: Final[list[float]] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]
BETA_EXP_GRID: Final[list[float]] = [0.05, 0.1, 0.2, 0.3, 0.5, 1.0]
GAMMA_GRID: Final[list[float]] = [0.5, 1.0, 1.5, 2.0]
RHO_GRID: Final[list[float]] = [0.5, 1.0, 1.5, 2.0]
DELTA_GRID: Final[list[float]] = [0.5, 1.0, 1.5, 2.0]
# Absorption rate in multiples of 1 / mean(mass)
IO_L_SCALE_GRID: Final[list[float]] = [0.1, 0.5, 1.0, 2.0, 5.0]

# ============================================================================
# Count GLMs
# ============================================================================

IRLS_TOLERANCE: Final[float] = 1e-8
IRLS_MAX_ITER: Final[int] = 100
FE_RIDGE: Final[float] = 1e-8
FE_MAX_ROWS: Final[int] = 100_000
ZERO_SAMPLE_HOURS: Final[int] = 200
ZERO_SAMPLE_MAX_ROWS: Final[int] = 1_000_000
ZIP_EM_ITERS: Final[int] = 50
PROBABILITY_CLAMP: Final[float] = 1e-6

# ============================================================================
# Boosting
# ============================================================================

HIST_MAX_BINS: Final[int] = 256
TWEEDIE_POWER: Final[float] = 1.5
MONOTONE_TOLERANCE: Final[float] = 1e-12

# ============================================================================
# Evaluation
# ============================================================================

HOLDOUT_FRACTION: Final[float] = 0.10
QUANTILE_BINS: Final[int] = 3
CONFIDENCE_LEVEL: Final[float] = 0.95
REPORT_FLOAT_FORMAT: Final[str] = "%.6f"


# ============================================================================
# Error Categories
# ============================================================================

class ErrorCategory(str, Enum):
    """Categories for pipeline error codes."""
    INGESTION = "ingestion"
    DATA = "data"
    EMPTY_TASK = "empty_task"
    ESTIMATION = "estimation"
    CONVERGENCE = "convergence"
    CONFIGURATION = "configuration"
    ATTRIBUTION = "attribution"


# ============================================================================
# Output Location
# ============================================================================

OUTPUT_ROOT: Final[Path] = Path(os.getenv("AMBIT_OUTPUT_ROOT", "ambit_runs"))

# ============================================================================
# Logging Configuration
# ============================================================================

LOG_LEVEL: Final[str] = os.getenv("LOG_LEVEL", "INFO")

def setup_logging() -> logging.Logger:
    """Configure and return the application logger."""
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )
    return logging.getLogger("ambit")


logger = setup_logging()
