"""Writers for the interchange formats the downstream pipeline consumes.

The exporter owns no private formats: these mirror the documented byte
layouts exactly (little-endian, version 1).

Feature file:  "CMFG" | version u32 | label u8 | stage_count u8=4
               | per stage: H u32, W u32, d u32 | stages row-major f32
Mask file:     "CMSK" | version u32 | H u32 | W u32 | payload u8 in {0,1}
Text bank:     "CMTX" | version u32 | d u32 | normal f32*d | anomaly f32*d
               | prompt count u16 | per prompt: u16 length + UTF-8
Manifest:      UTF-8 JSON; sample paths relative to the manifest file.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def write_feature_file(stages: list[np.ndarray], anomalous: bool, path) -> None:
    """``stages`` are 4 arrays of shape (H, W, d); the payload is scanned
    for non-finite values before anything is written."""
    if len(stages) != 4:
        raise ValueError(f"expected 4 stages, got {len(stages)}")
    with Path(path).open("wb") as fh:
        fh.write(b"CMFG")
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<BB", 1 if anomalous else 0, 4))
        grids = []
        for stage in stages:
            stage = np.asarray(stage)
            if stage.ndim != 3:
                raise ValueError(f"stage must be (H, W, d), got shape {stage.shape}")
            if not np.isfinite(stage).all():
                raise ValueError("stage payload contains NaN or infinite values")
            grids.append(np.ascontiguousarray(stage, dtype="<f4"))
            fh.write(struct.pack("<III", *stage.shape))
        for grid in grids:
            fh.write(grid.tobytes())


def write_mask_file(mask: np.ndarray, path) -> None:
    mask = np.asarray(mask, dtype=np.uint8)
    if mask.ndim != 2 or not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be a 2-D array of 0/1")
    with Path(path).open("wb") as fh:
        fh.write(b"CMSK")
        fh.write(struct.pack("<III", FORMAT_VERSION, mask.shape[0], mask.shape[1]))
        fh.write(mask.tobytes())


def write_text_bank(
    normal_vec: np.ndarray, anomaly_vec: np.ndarray, prompts: list[str], path
) -> None:
    normal_vec = np.asarray(normal_vec, dtype=np.float64)
    anomaly_vec = np.asarray(anomaly_vec, dtype=np.float64)
    if normal_vec.shape != anomaly_vec.shape or normal_vec.ndim != 1:
        raise ValueError("text vectors must be 1-D and the same length")
    if not (np.isfinite(normal_vec).all() and np.isfinite(anomaly_vec).all()):
        raise ValueError("text vectors contain non-finite values")
    with Path(path).open("wb") as fh:
        fh.write(b"CMTX")
        fh.write(struct.pack("<II", FORMAT_VERSION, len(normal_vec)))
        fh.write(np.ascontiguousarray(normal_vec, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(anomaly_vec, dtype="<f4").tobytes())
        fh.write(struct.pack("<H", len(prompts)))
        for prompt in prompts:
            encoded = prompt.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)


def write_manifest(doc: dict, path) -> None:
    Path(path).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
