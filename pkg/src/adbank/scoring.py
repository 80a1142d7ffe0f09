"""Grid score maps, fused pixel maps, and image-level scores.

Each grid cell is scored by cosine similarity against the two text-bank
vectors, converted to an anomaly probability with a temperature softmax.
The 4 per-stage maps are upsampled to pixel resolution and averaged; the
image score is the maximum of the smoothed fused map.

At inference the features fed to the scorer are the residual blend
``alpha * F + (1 - alpha) * A(F)`` of raw and adapter outputs, so with
alpha = 1 (or a fresh near-zero adapter) scores coincide with raw-feature
scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .adapters import AdapterSet, adapter_forward, residual_blend
from .errors import ContractViolationError
from .featio import FeatureSample, TextBank
from .numcore import bilinear_upsample, gaussian_blur


@dataclass
class ScoreConfig:
    tau: float = 0.07
    smooth_sigma_px: float = 4.0
    top_k: int = 1  # image score = mean of the top-k smoothed pixels

    def __post_init__(self):
        if self.tau <= 0:
            raise ContractViolationError(f"tau must be > 0, got {self.tau}")
        if self.smooth_sigma_px < 0:
            raise ContractViolationError("smooth_sigma_px must be >= 0")
        if self.top_k < 1:
            raise ContractViolationError("top_k must be >= 1")


@dataclass
class ScoreMap:
    probs: np.ndarray  # (H_l, W_l), entries in [0, 1]
    stage_index: int


@dataclass
class PixelMap:
    probs: np.ndarray  # (H_px, W_px), entries in [0, 1]


def build_text_bank(
    normal_prompts: Sequence[str],
    anomaly_prompts: Sequence[str],
    embed: Callable[[str], np.ndarray],
) -> TextBank:
    """Average the L2-normalized prompt embeddings per class, renormalize."""
    if not normal_prompts or not anomaly_prompts:
        raise ContractViolationError("both prompt lists must be nonempty")

    def class_vector(prompts: Sequence[str]) -> np.ndarray:
        vectors = []
        for prompt in prompts:
            v = np.asarray(embed(prompt), dtype=np.float64).ravel()
            norm = np.linalg.norm(v)
            if norm == 0:
                raise ContractViolationError(f"zero embedding for prompt {prompt!r}")
            vectors.append(v / norm)
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise ContractViolationError(f"embedding dims differ across prompts: {dims}")
        mean = np.mean(vectors, axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise ContractViolationError("prompt embeddings average to zero vector")
        return mean / norm

    return TextBank(
        class_vector(normal_prompts),
        class_vector(anomaly_prompts),
        provenance=list(normal_prompts) + list(anomaly_prompts),
    )


def anomaly_probs(feats: np.ndarray, text: TextBank, tau: float) -> np.ndarray:
    """Per-cell P(anomaly) from temperature-softmaxed cosine similarities.

    Zero-norm cells score exactly 0.5. Scale-invariant in each cell vector.
    """
    feats = np.asarray(feats, dtype=np.float64)
    if tau <= 0:
        raise ContractViolationError(f"tau must be > 0, got {tau}")
    if feats.ndim != 2 or feats.shape[1] != text.dim:
        raise ContractViolationError(
            f"features shape {feats.shape} incompatible with text dim {text.dim}"
        )
    norms = np.linalg.norm(feats, axis=1)
    t_norm_n = np.linalg.norm(text.normal_vec)
    t_norm_a = np.linalg.norm(text.anomaly_vec)
    safe = np.where(norms > 0, norms, 1.0)
    cos_n = (feats @ text.normal_vec) / (safe * t_norm_n)
    cos_a = (feats @ text.anomaly_vec) / (safe * t_norm_a)
    probs = 1.0 / (1.0 + np.exp(-(cos_a - cos_n) / tau))
    return np.where(norms > 0, probs, 0.5)


def layer_score_map(
    feats: np.ndarray, height: int, width: int, text: TextBank, tau: float,
    stage_index: int = 0,
) -> ScoreMap:
    probs = anomaly_probs(feats, text, tau)
    if probs.size != height * width:
        raise ContractViolationError(
            f"{probs.size} cells cannot fill a {height}x{width} map"
        )
    return ScoreMap(probs.reshape(height, width), stage_index)


def fuse_layers(maps: Sequence[ScoreMap], out_h: int, out_w: int) -> PixelMap:
    """Upsample each stage map to pixel resolution and average them."""
    if len(maps) != 4:
        raise ContractViolationError(f"expected 4 stage maps, got {len(maps)}")
    total = np.zeros((out_h, out_w))
    for score_map in maps:
        total += bilinear_upsample(score_map.probs, out_h, out_w)
    return PixelMap(total / len(maps))


def image_score(pixel_map: PixelMap, smooth_sigma_px: float, top_k: int = 1) -> float:
    """Smooth the fused map and return the max (or mean of the top-k) entry."""
    smoothed = gaussian_blur(pixel_map.probs, smooth_sigma_px)
    if top_k == 1:
        return float(smoothed.max())
    flat = np.sort(smoothed.ravel())
    k = min(top_k, flat.size)
    return float(flat[-k:].mean())


def score_sample(
    sample: FeatureSample,
    adapter_set: AdapterSet,
    text: TextBank,
    alpha: float,
    cfg: ScoreConfig,
    out_h: int,
    out_w: int,
) -> tuple[PixelMap, float]:
    """Full inference path for one sample: blend, score, fuse, smooth-max."""
    maps = []
    for stage, adapter in zip(sample.stages, adapter_set.adapters):
        blended = residual_blend(stage.data, adapter_forward(adapter, stage.data), alpha)
        maps.append(
            layer_score_map(
                blended, stage.height, stage.width, text, cfg.tau, adapter.stage_index
            )
        )
    fused = fuse_layers(maps, out_h, out_w)
    return fused, image_score(fused, cfg.smooth_sigma_px, cfg.top_k)
