"""Continual anomaly detection on precomputed encoder feature grids.

The package trains small per-stage adapter layers against a two-vector
text bank, accumulates one adapter set per task into a bank that is
averaged at inference, and evaluates the resulting stream with exact
tie-aware AUROC / average-precision metrics plus a forgetting measure.
"""

from . import adapters, featio, harness, metrics, numcore, scoring, training
from .errors import (
    AdbankError,
    ConfigError,
    ContractViolationError,
    DataError,
    UndefinedMetricError,
)

__version__ = "0.1.0"

__all__ = [
    "adapters",
    "featio",
    "harness",
    "metrics",
    "numcore",
    "scoring",
    "training",
    "AdbankError",
    "ConfigError",
    "ContractViolationError",
    "DataError",
    "UndefinedMetricError",
    "__version__",
]
