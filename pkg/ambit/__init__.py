"""
AMBIT: gray-box origin-destination flow modelling.

Classical spatial-interaction baselines (gravity, PPML, constrained and
opportunity models) with a gradient-boosted learner fitted on their log
residuals, exact tree attributions and a full evaluation protocol, runnable on
ingested trip records or a deterministic synthetic city.
"""

__version__ = "0.1.0"
__author__ = "AMBIT Team"

from .schemas import AnchorSpec, BoostConfig, ExperimentConfig, HoldoutSpec, MetricReport
from .task import ODTask, prepare_task
from .baselines import FitContext, get_baseline_spec
from .residual import fit_ambit, model_registry, reconstruct, residual_target
from .experiments import PRESETS, run_fullmatrix_eval, run_preset

__all__ = [
    "AnchorSpec",
    "BoostConfig",
    "ExperimentConfig",
    "HoldoutSpec",
    "MetricReport",
    "ODTask",
    "prepare_task",
    "FitContext",
    "get_baseline_spec",
    "fit_ambit",
    "model_registry",
    "reconstruct",
    "residual_target",
    "PRESETS",
    "run_fullmatrix_eval",
    "run_preset",
]
