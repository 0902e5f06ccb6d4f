"""
Exceptions raised by the AMBIT pipeline.

Every error carries a machine-readable code of the form ``"<category>:<detail>"``
so batch runners can tally failures the same way they tally metric rows.
"""

from typing import Any, Optional

from .config import ErrorCategory


class AmbitError(Exception):
    """Base error with a category/detail code."""

    category: ErrorCategory = ErrorCategory.DATA

    def __init__(self, detail: str, message: Optional[str] = None, **diagnostics: Any):
        self.detail = detail
        self.diagnostics = diagnostics
        super().__init__(message or detail)

    @property
    def code(self) -> str:
        return f"{self.category.value}:{self.detail}"


class IngestionError(AmbitError):
    """Input files are missing required columns or are malformed."""
    category = ErrorCategory.INGESTION


class DataError(AmbitError):
    """Input data violates a type invariant (duplicate keys, negative flows, ...)."""
    category = ErrorCategory.DATA


class EmptyTaskError(AmbitError):
    """A filter, split or holdout left nothing to fit or evaluate."""
    category = ErrorCategory.EMPTY_TASK


class EstimationError(AmbitError):
    """A model cannot be estimated (rank deficiency, identifiability)."""
    category = ErrorCategory.ESTIMATION


class ConvergenceError(AmbitError):
    """An iterative fit diverged (NaN deviance, non-finite boosting loss)."""
    category = ErrorCategory.CONVERGENCE


class TuningError(AmbitError):
    """Every grid candidate failed."""
    category = ErrorCategory.ESTIMATION


class ConfigurationError(AmbitError):
    """Invalid experiment, generator or preset configuration."""
    category = ErrorCategory.CONFIGURATION


class FeatureMismatchError(AmbitError):
    """Prediction features do not match the trained feature set."""
    category = ErrorCategory.ATTRIBUTION
