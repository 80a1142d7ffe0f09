"""Per-stage adapter layers, residual blending, noise-driven anomaly
synthesis, and task-wise adapter banks averaged at inference.

An adapter is a two-matrix linear bottleneck: on a (G, d) feature grid F it
computes ``(w2 @ (w1 @ F^T))^T``, i.e. each cell is mapped d -> h -> d with
no nonlinearity. The bank average is taken over the adapter maps
themselves (realized exactly by block-stacking the weight matrices), so
forwarding through the averaged set equals averaging the member outputs --
the property that makes average-at-inference well defined.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ContractViolationError,
    DataError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from .numcore import RandomStream

MAGIC_BANK = b"CMAB"
BANK_VERSION = 1
BASE_TAG = "base"


def hidden_width(dim: int) -> int:
    """Bottleneck width for a stage of feature dim d: d // 4, at least 1."""
    return max(1, dim // 4)


@dataclass
class Adapter:
    stage_index: int  # 1..4
    w1: np.ndarray  # (h, d)
    w2: np.ndarray  # (d, h)

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ContractViolationError("adapter weights must be 2-D")
        h, d = self.w1.shape
        if self.w2.shape != (d, h):
            raise ContractViolationError(
                f"w2 shape {self.w2.shape} incompatible with w1 shape {self.w1.shape}"
            )
        if not (np.isfinite(self.w1).all() and np.isfinite(self.w2).all()):
            raise ContractViolationError("adapter weights must be finite")

    @property
    def dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "Adapter":
        return Adapter(self.stage_index, self.w1.copy(), self.w2.copy())


@dataclass
class AdapterSet:
    """Exactly 4 adapters, one per encoder stage, tagged base or task:<n>."""

    adapters: list[Adapter]
    tag: str = BASE_TAG

    def __post_init__(self):
        if [a.stage_index for a in self.adapters] != [1, 2, 3, 4]:
            raise ContractViolationError("adapter set must cover stages 1..4 in order")

    def stage(self, stage_index: int) -> Adapter:
        return self.adapters[stage_index - 1]

    def dims(self) -> list[int]:
        return [a.dim for a in self.adapters]

    def copy(self, tag: str | None = None) -> "AdapterSet":
        return AdapterSet([a.copy() for a in self.adapters], tag or self.tag)


@dataclass
class AdapterBank:
    """Base set plus one frozen set per completed task, in training order."""

    base: AdapterSet
    tasks: list[AdapterSet] = field(default_factory=list)

    def __post_init__(self):
        dims = self.base.dims()
        for task_set in self.tasks:
            if task_set.dims() != dims:
                raise ContractViolationError("bank sets are not shape-compatible")

    def all_sets(self) -> list[AdapterSet]:
        return [self.base] + list(self.tasks)


@dataclass
class BlendConfig:
    alpha: float = 0.9
    beta: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractViolationError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.beta < 0:
            raise ContractViolationError(f"beta must be >= 0, got {self.beta}")


def adapter_forward(adapter: Adapter, feats: np.ndarray) -> np.ndarray:
    """Apply the bottleneck to a (G, d) grid; linear in the input."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != adapter.dim:
        raise ContractViolationError(
            f"features shape {feats.shape} incompatible with adapter dim {adapter.dim}"
        )
    return (feats @ adapter.w1.T) @ adapter.w2.T


def residual_blend(feats: np.ndarray, adapted: np.ndarray, alpha: float) -> np.ndarray:
    """Convex combination alpha*F + (1-alpha)*A(F); alpha=1 returns F exactly."""
    feats = np.asarray(feats, dtype=np.float64)
    adapted = np.asarray(adapted, dtype=np.float64)
    if feats.shape != adapted.shape:
        raise ContractViolationError(
            f"blend shape mismatch: {feats.shape} vs {adapted.shape}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise ContractViolationError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * feats + (1.0 - alpha) * adapted


def noise_like(feats: np.ndarray, stream: RandomStream, beta: float) -> np.ndarray:
    """Gaussian perturbation with std = beta * (elementwise std of feats).

    Always consumes 2 * G * d raw outputs so stream positions do not depend
    on beta; beta = 0 yields an exact zero perturbation.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if beta < 0:
        raise ContractViolationError(f"beta must be >= 0, got {beta}")
    draws = stream.gaussian(feats.size, 1.0).reshape(feats.shape)
    return (beta * float(feats.std())) * draws


def synthesize_anomaly(
    adapter: Adapter, feats: np.ndarray, stream: RandomStream, beta: float
) -> np.ndarray:
    """Adapter output on noise-perturbed features: A(F + gamma)."""
    return adapter_forward(adapter, feats + noise_like(feats, stream, beta))


def init_adapter(stage_index: int, dim: int, hidden: int, stream: RandomStream) -> Adapter:
    """Near-zero start: w1 uniform +-1/sqrt(d), w2 uniform +-1e-3/sqrt(h).

    The tiny w2 keeps the fresh adapter's output negligible next to the raw
    features, so an untrained model behaves like the frozen encoder.
    """
    if dim < 1 or hidden < 1:
        raise ContractViolationError("dim and hidden width must be >= 1")
    w1 = (stream.uniform(hidden * dim) * 2.0 - 1.0).reshape(hidden, dim) / np.sqrt(dim)
    w2 = (stream.uniform(dim * hidden) * 2.0 - 1.0).reshape(dim, hidden) * (
        1e-3 / np.sqrt(hidden)
    )
    return Adapter(stage_index, w1, w2)


def init_adapter_set(dims: list[int], stream: RandomStream, tag: str = BASE_TAG) -> AdapterSet:
    adapters = [
        init_adapter(l + 1, d, hidden_width(d), stream) for l, d in enumerate(dims)
    ]
    return AdapterSet(adapters, tag)


def average_bank(bank: AdapterBank) -> AdapterSet:
    """Exact mean of the adapter maps (base first, then tasks in order).

    The average of (N+1) linear bottlenecks is itself a linear bottleneck:
    stack the w1 blocks vertically and the w2 blocks horizontally scaled by
    1/(N+1), so the returned adapter's forward equals the mean of the
    member forwards exactly. With no completed tasks the result is the
    base set verbatim.
    """
    if bank.base is None:
        raise ContractViolationError("bank has no base set")
    if not bank.tasks:
        return bank.base.copy(tag="avg")
    n_sets = len(bank.tasks) + 1
    averaged = []
    for stage_index in (1, 2, 3, 4):
        sets = bank.all_sets()
        w1 = np.vstack([s.stage(stage_index).w1 for s in sets])
        w2 = np.hstack([s.stage(stage_index).w2 for s in sets]) / n_sets
        averaged.append(Adapter(stage_index, w1, w2))
    return AdapterSet(averaged, tag="avg")


# ---------------------------------------------------------------------------
# Bank checkpoints
#
# "CMAB" | version u32 | d u32 x 4 | h u32 x 4 | N u32
# | (N+1) sets, base first then tasks in order:
#     per stage 1..4: w1 f32 (h x d, row-major) then w2 f32 (d x h)


def write_bank_checkpoint(bank: AdapterBank, path) -> None:
    dims = bank.base.dims()
    hiddens = [a.hidden for a in bank.base.adapters]
    with Path(path).open("wb") as fh:
        fh.write(MAGIC_BANK)
        fh.write(struct.pack("<I", BANK_VERSION))
        fh.write(struct.pack("<4I", *dims))
        fh.write(struct.pack("<4I", *hiddens))
        fh.write(struct.pack("<I", len(bank.tasks)))
        for adapter_set in bank.all_sets():
            for adapter in adapter_set.adapters:
                fh.write(np.ascontiguousarray(adapter.w1, dtype="<f4").tobytes())
                fh.write(np.ascontiguousarray(adapter.w2, dtype="<f4").tobytes())


def read_bank_checkpoint(path) -> AdapterBank:
    def read_exact(fh, n, what):
        data = fh.read(n)
        if len(data) != n:
            raise TruncatedPayloadError(f"truncated checkpoint: {what}")
        return data

    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    with path.open("rb") as fh:
        magic = read_exact(fh, 4, "magic")
        if magic != MAGIC_BANK:
            raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC_BANK!r}")
        (version,) = struct.unpack("<I", read_exact(fh, 4, "version"))
        if version != BANK_VERSION:
            raise UnsupportedVersionError(f"unsupported checkpoint version {version}")
        dims = struct.unpack("<4I", read_exact(fh, 16, "dims"))
        hiddens = struct.unpack("<4I", read_exact(fh, 16, "hidden widths"))
        (n_tasks,) = struct.unpack("<I", read_exact(fh, 4, "task count"))
        sets = []
        for set_idx in range(n_tasks + 1):
            adapters = []
            for stage_index, (d, h) in enumerate(zip(dims, hiddens), start=1):
                w1 = np.frombuffer(
                    read_exact(fh, 4 * h * d, "w1"), dtype="<f4"
                ).astype(np.float64).reshape(h, d)
                w2 = np.frombuffer(
                    read_exact(fh, 4 * d * h, "w2"), dtype="<f4"
                ).astype(np.float64).reshape(d, h)
                adapters.append(Adapter(stage_index, w1, w2))
            tag = BASE_TAG if set_idx == 0 else f"task:{set_idx}"
            sets.append(AdapterSet(adapters, tag))
        trailing = fh.read(1)
        if trailing:
            raise TruncatedPayloadError("trailing bytes after declared payload")
    return AdapterBank(sets[0], sets[1:])
