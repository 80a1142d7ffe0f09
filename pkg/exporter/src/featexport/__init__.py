"""Encoder bridge: exports 4-stage patch-feature grids, masks, and prompt
text banks in the CMFG/CMSK/CMTX interchange formats."""

from .export import ExportConfig, ImageEntry, export_features, export_text_bank
from .prompts import ANOMALY_PROMPTS, NORMAL_PROMPTS

__version__ = "0.1.0"

__all__ = [
    "ExportConfig",
    "ImageEntry",
    "export_features",
    "export_text_bank",
    "NORMAL_PROMPTS",
    "ANOMALY_PROMPTS",
    "__version__",
]
