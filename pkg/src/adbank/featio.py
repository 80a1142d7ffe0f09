"""Bit-exact interchange formats connecting feature producers to the pipeline.

All binary files are little-endian with a 4-byte ASCII magic and a u32
version (currently 1):

Feature file (magic ``CMFG``)::

    "CMFG" | version u32 | label u8 (0 normal, 1 anomalous) | stage_count u8=4
    | per stage: H u32, W u32, d u32
    | payload: the 4 stages concatenated, row-major (H, W, d) order, f32

Mask file (magic ``CMSK``)::

    "CMSK" | version u32 | H u32 | W u32 | payload u8 in {0, 1}, row-major

Text bank (magic ``CMTX``)::

    "CMTX" | version u32 | d u32 | normal f32 x d | anomaly f32 x d
    | prompt block: count u16, then per prompt u16 byte length + UTF-8 bytes

Pixel-map dump (magic ``CMPM``) reuses the mask header with an f32 payload.

Manifests are UTF-8 JSON (see ``load_manifest``). Sample paths are stored
relative to the manifest file. Unknown JSON fields are tolerated; missing
required fields raise ``SchemaError`` naming them.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ContractViolationError,
    DataError,
    PayloadNotFiniteError,
    SchemaError,
    StageCountError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

MAGIC_FEATURE = b"CMFG"
MAGIC_MASK = b"CMSK"
MAGIC_TEXT = b"CMTX"
MAGIC_PIXMAP = b"CMPM"
FORMAT_VERSION = 1
STAGE_COUNT = 4

LABEL_NORMAL = "normal"
LABEL_ANOMALOUS = "anomalous"

# Stored text vectors are f32; norms may drift from 1 by quantization.
# Beyond this tolerance the loader renormalizes and flags the bank.
_UNIT_NORM_TOL = 1e-3


@dataclass
class StageGrid:
    """One encoder stage: an (H, W) grid of d-dimensional cells.

    ``data`` is the (G, d) float64 matrix with G = H*W cells flattened
    row-major.
    """

    height: int
    width: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.height < 1 or self.width < 1:
            raise ContractViolationError("stage grid dims must be >= 1")
        if self.data.shape != (self.height * self.width, self.data.shape[1]):
            raise ContractViolationError(
                f"stage data shape {self.data.shape} does not match "
                f"{self.height}x{self.width} grid"
            )

    @property
    def cells(self) -> int:
        return self.height * self.width

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class FeatureSample:
    """Per-image stack of 4 stage grids plus optional ground-truth mask."""

    sample_id: str
    class_id: str
    label: str
    stages: list[StageGrid]
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.label not in (LABEL_NORMAL, LABEL_ANOMALOUS):
            raise ContractViolationError(f"unknown label {self.label!r}")
        if len(self.stages) != STAGE_COUNT:
            raise ContractViolationError(
                f"expected {STAGE_COUNT} stages, got {len(self.stages)}"
            )
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=np.uint8)
            if self.mask.ndim != 2:
                raise ContractViolationError("mask must be 2-D")
            if not np.isin(self.mask, (0, 1)).all():
                raise ContractViolationError("mask values must be 0 or 1")
            if self.label == LABEL_NORMAL and self.mask.any():
                raise ContractViolationError("normal sample has nonzero mask")

    @property
    def anomalous(self) -> bool:
        return self.label == LABEL_ANOMALOUS


@dataclass
class TextBank:
    """Unit normal/anomaly text vectors plus the raw prompts behind them."""

    normal_vec: np.ndarray
    anomaly_vec: np.ndarray
    provenance: list[str] = field(default_factory=list)
    renormalized: bool = False

    def __post_init__(self):
        self.normal_vec = np.asarray(self.normal_vec, dtype=np.float64)
        self.anomaly_vec = np.asarray(self.anomaly_vec, dtype=np.float64)
        if self.normal_vec.shape != self.anomaly_vec.shape or self.normal_vec.ndim != 1:
            raise ContractViolationError("text vectors must be 1-D and same length")

    @property
    def dim(self) -> int:
        return len(self.normal_vec)


@dataclass
class SampleRef:
    """Manifest entry pointing at one sample's files (paths manifest-relative)."""

    sample_id: str
    feature_path: str
    label: str
    mask_path: str | None = None


@dataclass
class ClassEntry:
    class_id: str
    train_normals: list[SampleRef] = field(default_factory=list)
    train_anomalies: list[SampleRef] = field(default_factory=list)
    test_samples: list[SampleRef] = field(default_factory=list)


@dataclass
class Manifest:
    dataset_name: str
    classes: list[ClassEntry]
    root: Path = field(default_factory=Path, compare=False)

    def class_entry(self, class_id: str) -> ClassEntry:
        for entry in self.classes:
            if entry.class_id == class_id:
                return entry
        raise DataError(f"class {class_id!r} not present in manifest")

    def class_ids(self) -> list[str]:
        return [entry.class_id for entry in self.classes]


# ---------------------------------------------------------------------------
# Low-level binary helpers


def _open_existing(path: Path):
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    return path.open("rb")


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedPayloadError(
            f"truncated file: wanted {n} bytes for {what}, got {len(data)}"
        )
    return data


def _check_magic(fh, expected: bytes):
    magic = _read_exact(fh, 4, "magic")
    if magic != expected:
        raise BadMagicError(f"bad magic {magic!r}, expected {expected!r}")


def _check_version(fh):
    (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")


def _read_f32_block(fh, count: int, what: str) -> np.ndarray:
    raw = _read_exact(fh, 4 * count, what)
    values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if not np.isfinite(values).all():
        raise PayloadNotFiniteError(f"{what} contains NaN or infinite values")
    return values


# ---------------------------------------------------------------------------
# Feature files


def write_feature_file(sample: FeatureSample, path) -> None:
    """Write the 4 stage grids (f32) and label; ids/mask live in the manifest."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC_FEATURE)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<BB", 1 if sample.anomalous else 0, STAGE_COUNT))
        for stage in sample.stages:
            fh.write(struct.pack("<III", stage.height, stage.width, stage.dim))
        for stage in sample.stages:
            fh.write(np.ascontiguousarray(stage.data, dtype="<f4").tobytes())


def read_feature_file(path, sample_id: str = "", class_id: str = "") -> FeatureSample:
    path = Path(path)
    with _open_existing(path) as fh:
        _check_magic(fh, MAGIC_FEATURE)
        _check_version(fh)
        label_byte, stage_count = struct.unpack("<BB", _read_exact(fh, 2, "header"))
        if stage_count != STAGE_COUNT:
            raise StageCountError(
                f"feature file declares {stage_count} stages, expected {STAGE_COUNT}"
            )
        if label_byte not in (0, 1):
            raise DataError(f"invalid label byte {label_byte}")
        shapes = []
        for i in range(STAGE_COUNT):
            h, w, d = struct.unpack("<III", _read_exact(fh, 12, f"stage {i} shape"))
            if h < 1 or w < 1 or d < 1:
                raise DataError(f"stage {i} has empty shape ({h}, {w}, {d})")
            shapes.append((h, w, d))
        stages = []
        for i, (h, w, d) in enumerate(shapes):
            flat = _read_f32_block(fh, h * w * d, f"stage {i} payload")
            stages.append(StageGrid(h, w, flat.reshape(h * w, d)))
        trailing = fh.read(1)
        if trailing:
            raise DataError("trailing bytes after declared payload")
    label = LABEL_ANOMALOUS if label_byte else LABEL_NORMAL
    return FeatureSample(sample_id, class_id, label, stages)


# ---------------------------------------------------------------------------
# Mask files


def write_mask_file(mask: np.ndarray, path) -> None:
    mask = np.asarray(mask, dtype=np.uint8)
    if mask.ndim != 2:
        raise ContractViolationError("mask must be 2-D")
    if not np.isin(mask, (0, 1)).all():
        raise ContractViolationError("mask values must be 0 or 1")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC_MASK)
        fh.write(struct.pack("<III", FORMAT_VERSION, mask.shape[0], mask.shape[1]))
        fh.write(mask.tobytes())


def read_mask_file(path) -> np.ndarray:
    with _open_existing(Path(path)) as fh:
        _check_magic(fh, MAGIC_MASK)
        _check_version(fh)
        h, w = struct.unpack("<II", _read_exact(fh, 8, "mask shape"))
        payload = np.frombuffer(_read_exact(fh, h * w, "mask payload"), dtype=np.uint8)
        if not np.isin(payload, (0, 1)).all():
            raise DataError("mask payload bytes must be 0 or 1")
    return payload.reshape(h, w).copy()


def write_pixel_map(probs: np.ndarray, path) -> None:
    """Dump a float score map for inspection (mask header, f32 payload)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ContractViolationError("pixel map must be 2-D")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC_PIXMAP)
        fh.write(struct.pack("<III", FORMAT_VERSION, probs.shape[0], probs.shape[1]))
        fh.write(np.ascontiguousarray(probs, dtype="<f4").tobytes())


def read_pixel_map(path) -> np.ndarray:
    with _open_existing(Path(path)) as fh:
        _check_magic(fh, MAGIC_PIXMAP)
        _check_version(fh)
        h, w = struct.unpack("<II", _read_exact(fh, 8, "pixel map shape"))
        values = _read_f32_block(fh, h * w, "pixel map payload")
    return values.reshape(h, w)


# ---------------------------------------------------------------------------
# Mask pooling


def pool_mask_to_grid(mask: np.ndarray, grid_h: int, grid_w: int) -> np.ndarray:
    """Any-pool a pixel mask down to a grid: a cell is 1 iff any covered pixel is.

    Cells tile the pixel grid by even partition; remainder pixels are
    assigned to the last cell on each axis.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ContractViolationError("mask must be 2-D")
    px_h, px_w = mask.shape
    if grid_h < 1 or grid_w < 1:
        raise ContractViolationError("grid dims must be >= 1")
    if grid_h > px_h or grid_w > px_w:
        raise ContractViolationError(
            f"grid dims ({grid_h}, {grid_w}) exceed mask dims ({px_h}, {px_w})"
        )
    row_step = px_h // grid_h
    col_step = px_w // grid_w
    out = np.zeros((grid_h, grid_w), dtype=np.uint8)
    for i in range(grid_h):
        r0 = i * row_step
        r1 = (i + 1) * row_step if i < grid_h - 1 else px_h
        for j in range(grid_w):
            c0 = j * col_step
            c1 = (j + 1) * col_step if j < grid_w - 1 else px_w
            out[i, j] = 1 if mask[r0:r1, c0:c1].any() else 0
    return out


# ---------------------------------------------------------------------------
# Text bank


def write_text_bank(bank: TextBank, path) -> None:
    if len(bank.provenance) > 0xFFFF:
        raise ContractViolationError("too many prompts for u16 count")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC_TEXT)
        fh.write(struct.pack("<II", FORMAT_VERSION, bank.dim))
        fh.write(np.ascontiguousarray(bank.normal_vec, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(bank.anomaly_vec, dtype="<f4").tobytes())
        fh.write(struct.pack("<H", len(bank.provenance)))
        for prompt in bank.provenance:
            encoded = prompt.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ContractViolationError("prompt too long for u16 length prefix")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)


def read_text_bank(path) -> TextBank:
    """Load a text bank; clearly non-unit vectors are renormalized and flagged.

    Norm drift within f32 quantization (<= ~1e-3) is kept bit-exact so that
    write -> read -> write round-trips preserve the stored payload.
    """
    with _open_existing(Path(path)) as fh:
        _check_magic(fh, MAGIC_TEXT)
        _check_version(fh)
        (dim,) = struct.unpack("<I", _read_exact(fh, 4, "dim"))
        normal = _read_f32_block(fh, dim, "normal vector")
        anomaly = _read_f32_block(fh, dim, "anomaly vector")
        (count,) = struct.unpack("<H", _read_exact(fh, 2, "prompt count"))
        prompts = []
        for i in range(count):
            (length,) = struct.unpack("<H", _read_exact(fh, 2, f"prompt {i} length"))
            prompts.append(_read_exact(fh, length, f"prompt {i}").decode("utf-8"))
    renormalized = False
    vectors = []
    for vec in (normal, anomaly):
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise DataError("text bank contains a zero vector")
        if abs(norm - 1.0) > _UNIT_NORM_TOL:
            vec = vec / norm
            renormalized = True
        vectors.append(vec)
    return TextBank(vectors[0], vectors[1], prompts, renormalized)


# ---------------------------------------------------------------------------
# Manifests


def _require(obj: dict, fields: list[str], where: str) -> None:
    missing = [name for name in fields if name not in obj]
    if missing:
        raise SchemaError(f"{where}: missing required fields {missing}")


def _parse_sample(obj, where: str) -> SampleRef:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: sample entry must be an object")
    _require(obj, ["sample_id", "feature_path", "label"], where)
    label = obj["label"]
    if label not in (LABEL_NORMAL, LABEL_ANOMALOUS):
        raise SchemaError(f"{where}: invalid label {label!r}")
    return SampleRef(
        sample_id=str(obj["sample_id"]),
        feature_path=str(obj["feature_path"]),
        label=label,
        mask_path=str(obj["mask_path"]) if obj.get("mask_path") is not None else None,
    )


def parse_manifest(doc: dict, root: Path) -> Manifest:
    if not isinstance(doc, dict):
        raise SchemaError("manifest: top level must be an object")
    _require(doc, ["dataset_name", "classes"], "manifest")
    classes = []
    seen_ids: set[str] = set()
    for entry in doc["classes"]:
        if not isinstance(entry, dict):
            raise SchemaError("manifest: class entry must be an object")
        _require(
            entry,
            ["class_id", "train_normals", "train_anomalies", "test_samples"],
            "manifest class",
        )
        class_id = str(entry["class_id"])
        groups = {}
        for group in ("train_normals", "train_anomalies", "test_samples"):
            refs = [
                _parse_sample(item, f"class {class_id} {group}")
                for item in entry[group]
            ]
            for ref in refs:
                if ref.sample_id in seen_ids:
                    raise SchemaError(f"duplicate sample_id {ref.sample_id!r}")
                seen_ids.add(ref.sample_id)
            groups[group] = refs
        classes.append(ClassEntry(class_id, **groups))
    return Manifest(str(doc["dataset_name"]), classes, root)


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"manifest {path}: invalid JSON ({exc})") from exc
    manifest = parse_manifest(doc, path.parent)
    for entry in manifest.classes:
        for refs in (entry.train_normals, entry.train_anomalies, entry.test_samples):
            for ref in refs:
                feature = manifest.root / ref.feature_path
                if not feature.is_file():
                    raise DataError(f"feature file not found: {feature}")
                if ref.mask_path is not None:
                    mask = manifest.root / ref.mask_path
                    if not mask.is_file():
                        raise DataError(f"mask file not found: {mask}")
    return manifest


def manifest_to_dict(manifest: Manifest) -> dict:
    def sample(ref: SampleRef) -> dict:
        out = {
            "sample_id": ref.sample_id,
            "feature_path": ref.feature_path,
            "label": ref.label,
        }
        if ref.mask_path is not None:
            out["mask_path"] = ref.mask_path
        return out

    return {
        "dataset_name": manifest.dataset_name,
        "classes": [
            {
                "class_id": entry.class_id,
                "train_normals": [sample(r) for r in entry.train_normals],
                "train_anomalies": [sample(r) for r in entry.train_anomalies],
                "test_samples": [sample(r) for r in entry.test_samples],
            }
            for entry in manifest.classes
        ],
    }


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.write_text(
        json.dumps(manifest_to_dict(manifest), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_sample(manifest: Manifest, class_id: str, ref: SampleRef) -> FeatureSample:
    """Assemble a FeatureSample from a manifest entry (features + mask).

    An anomalous test sample without a mask is a hard error: pixel AP is
    undefined without ground truth.
    """
    sample = read_feature_file(
        manifest.root / ref.feature_path, sample_id=ref.sample_id, class_id=class_id
    )
    if sample.label != ref.label:
        raise DataError(
            f"sample {ref.sample_id!r}: manifest label {ref.label!r} does not "
            f"match feature file label {sample.label!r}"
        )
    if ref.label == LABEL_ANOMALOUS and ref.mask_path is None:
        raise DataError(f"anomalous sample {ref.sample_id!r} has no mask")
    if ref.mask_path is not None:
        mask = read_mask_file(manifest.root / ref.mask_path)
        sample = replace(sample, mask=mask)
    return sample
