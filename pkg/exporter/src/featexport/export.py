"""Feature and text-bank export against the interchange formats."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import formats
from .model import build_encoder
from .preprocess import load_image, load_mask
from .prompts import ANOMALY_PROMPTS, NORMAL_PROMPTS

log = logging.getLogger(__name__)


@dataclass
class ExportConfig:
    """Encoder geometry and export destinations.

    The default geometry is a ViT-L/14 tower at input 336: 24 sublayers in
    4 blocks of 6, stage taps after sublayers 6/12/18/24, 24x24 patch
    grids. ``projection`` controls which space patch tokens are exported
    in: "raw" (encoder width) only when it already matches the text
    embedding dim, "projected" (shared space) otherwise; "auto" picks for
    you and is the default.
    """

    model: str = "vit-l-14-336"
    input_size: int = 336
    patch_size: int = 14
    stage_boundaries: tuple[int, int, int, int] = (6, 12, 18, 24)
    vision_width: int = 1024
    vision_layers: int = 24
    vision_heads: int = 16
    text_width: int = 768
    text_layers: int = 12
    text_heads: int = 12
    embed_dim: int = 768
    context_length: int = 77
    batch_size: int = 4
    device: str = "cpu"
    dataset_root: str = "."
    output_root: str = "export"
    projection: str = "auto"
    seed: int = 0

    def __post_init__(self):
        if self.input_size % self.patch_size != 0:
            raise ValueError(
                f"input_size {self.input_size} not divisible by patch size "
                f"{self.patch_size}"
            )
        if len(self.stage_boundaries) != 4:
            raise ValueError("exactly 4 stage boundaries required")
        if list(self.stage_boundaries) != sorted(set(self.stage_boundaries)):
            raise ValueError("stage boundaries must be strictly increasing")
        if self.stage_boundaries[-1] > self.vision_layers:
            raise ValueError("last stage boundary exceeds the sublayer count")
        if self.projection not in ("auto", "projected", "raw"):
            raise ValueError(f"unknown projection mode {self.projection!r}")
        if self.projection == "raw" and self.vision_width != self.embed_dim:
            raise ValueError(
                "raw projection mode needs vision width == text embed dim "
                f"({self.vision_width} != {self.embed_dim}); cosine scoring "
                "against the text bank would be dimensionally invalid"
            )

    @property
    def grid(self) -> int:
        return self.input_size // self.patch_size

    def resolved_projection(self) -> str:
        if self.projection != "auto":
            return self.projection
        return "raw" if self.vision_width == self.embed_dim else "projected"

    def feature_dim(self) -> int:
        return self.vision_width if self.resolved_projection() == "raw" else self.embed_dim


@dataclass
class ImageEntry:
    sample_id: str
    class_id: str
    label: str  # "normal" | "anomalous"
    image_path: str
    mask_path: str | None = None
    split: str = "test_samples"  # train_normals | train_anomalies | test_samples


@dataclass
class ExportResult:
    manifest_path: Path
    text_bank_path: Path | None
    n_samples: int
    feature_dim: int
    projection: str
    warnings: list[str] = field(default_factory=list)


def parse_image_manifest(doc: dict, root: Path) -> list[ImageEntry]:
    """Image-list JSON mirroring the feature-manifest shape, with
    ``image_path``/``mask_path`` entries instead of feature files."""
    entries: list[ImageEntry] = []
    seen: set[str] = set()
    if "classes" not in doc:
        raise ValueError("image manifest: missing required field 'classes'")
    for cls in doc["classes"]:
        for key in ("class_id",):
            if key not in cls:
                raise ValueError(f"image manifest class: missing {key!r}")
        for split in ("train_normals", "train_anomalies", "test_samples"):
            for item in cls.get(split, []):
                missing = [k for k in ("sample_id", "image_path", "label") if k not in item]
                if missing:
                    raise ValueError(f"image manifest sample: missing {missing}")
                if item["sample_id"] in seen:
                    raise ValueError(f"duplicate sample_id {item['sample_id']!r}")
                seen.add(item["sample_id"])
                entries.append(
                    ImageEntry(
                        sample_id=item["sample_id"],
                        class_id=cls["class_id"],
                        label=item["label"],
                        image_path=str(root / item["image_path"]),
                        mask_path=str(root / item["mask_path"])
                        if item.get("mask_path")
                        else None,
                        split=split,
                    )
                )
    return entries


def export_features(cfg: ExportConfig, entries: list[ImageEntry],
                    dataset_name: str = "export") -> ExportResult:
    """Encode every image, write CMFG/CMSK files and the feature manifest.

    Per image: resize/normalize to the input square, capture the patch-token
    grids after the 4 stage boundaries, drop the class token, store f32.
    Masks are resampled to the input resolution and written alongside.
    """
    for entry in entries:
        if entry.label not in ("normal", "anomalous"):
            raise ValueError(f"sample {entry.sample_id!r}: bad label {entry.label!r}")
        if entry.label == "anomalous" and entry.mask_path is None:
            raise ValueError(f"anomalous sample {entry.sample_id!r} has no mask")

    encoder = build_encoder(cfg)
    project = cfg.resolved_projection() == "projected"
    out_root = Path(cfg.output_root)
    (out_root / "features").mkdir(parents=True, exist_ok=True)
    (out_root / "masks").mkdir(parents=True, exist_ok=True)

    by_class: dict[str, dict[str, list[dict]]] = {}
    with torch.no_grad():
        for start in range(0, len(entries), cfg.batch_size):
            batch = entries[start : start + cfg.batch_size]
            pixels = torch.stack(
                [load_image(e.image_path, cfg.input_size) for e in batch]
            ).to(cfg.device)
            stages = encoder.vision.stage_features(
                pixels, cfg.stage_boundaries, project
            )
            stages = [s.cpu().numpy().astype(np.float32) for s in stages]
            for i, entry in enumerate(batch):
                class_dir = out_root / "features" / entry.class_id
                class_dir.mkdir(exist_ok=True)
                feature_rel = f"features/{entry.class_id}/{entry.sample_id}.cmfg"
                formats.write_feature_file(
                    [stage[i] for stage in stages],
                    entry.label == "anomalous",
                    out_root / feature_rel,
                )
                mask_rel = None
                if entry.mask_path is not None:
                    mask = load_mask(entry.mask_path, cfg.input_size)
                    if entry.label == "normal" and mask.any():
                        raise ValueError(
                            f"normal sample {entry.sample_id!r} has nonzero mask"
                        )
                    (out_root / "masks" / entry.class_id).mkdir(exist_ok=True)
                    mask_rel = f"masks/{entry.class_id}/{entry.sample_id}.cmsk"
                    formats.write_mask_file(mask, out_root / mask_rel)
                record = {
                    "sample_id": entry.sample_id,
                    "feature_path": feature_rel,
                    "label": entry.label,
                }
                if mask_rel is not None:
                    record["mask_path"] = mask_rel
                by_class.setdefault(
                    entry.class_id,
                    {"train_normals": [], "train_anomalies": [], "test_samples": []},
                )[entry.split].append(record)

    manifest = {
        "dataset_name": dataset_name,
        "classes": [
            {"class_id": class_id, **groups} for class_id, groups in by_class.items()
        ],
        "export": {
            "model": cfg.model,
            "input_size": cfg.input_size,
            "stage_boundaries": list(cfg.stage_boundaries),
            "projection": cfg.resolved_projection(),
            "feature_dim": cfg.feature_dim(),
            "mask_resolution": cfg.input_size,
        },
    }
    manifest_path = out_root / "manifest.json"
    formats.write_manifest(manifest, manifest_path)
    return ExportResult(
        manifest_path, None, len(entries), cfg.feature_dim(), cfg.resolved_projection()
    )


def export_text_bank(cfg: ExportConfig, path=None) -> ExportResult:
    """Embed the 10+10 generalized prompts and write the CMTX bank.

    Each prompt embedding is L2-normalized, the per-class mean is
    renormalized, and the 20 raw prompt strings travel with the bank.
    """
    encoder = build_encoder(cfg)
    warnings: list[str] = []
    with torch.no_grad():
        vectors = encoder.text.embed(NORMAL_PROMPTS + ANOMALY_PROMPTS)
    vectors = vectors.cpu().numpy().astype(np.float64)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValueError("text tower produced a zero prompt embedding")
    vectors /= norms

    def class_mean(block: np.ndarray) -> np.ndarray:
        mean = block.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise ValueError("prompt embeddings average to a zero vector")
        return mean / norm

    normal_vec = class_mean(vectors[: len(NORMAL_PROMPTS)])
    anomaly_vec = class_mean(vectors[len(NORMAL_PROMPTS) :])

    if len(normal_vec) != cfg.feature_dim():
        raise ValueError(
            f"text bank dim {len(normal_vec)} does not match exported feature "
            f"dim {cfg.feature_dim()}"
        )
    if float(normal_vec @ anomaly_vec) >= 1.0 - 1e-6:
        message = "normal and anomaly prompt vectors are nearly collapsed"
        warnings.append(message)
        log.warning(message)

    if path is None:
        out_root = Path(cfg.output_root)
        out_root.mkdir(parents=True, exist_ok=True)
        path = out_root / "textbank.cmtx"
    formats.write_text_bank(
        normal_vec, anomaly_vec, NORMAL_PROMPTS + ANOMALY_PROMPTS, path
    )
    return ExportResult(Path(path), Path(path), 0, cfg.feature_dim(),
                        cfg.resolved_projection(), warnings)
