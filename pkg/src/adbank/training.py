"""Loss composition, hand-derived gradients, and the per-task training loop.

Per stage, the real branch scores the adapter output A(F) against the text
bank: normal samples contribute CE + dice + focal with an all-zero target
mask, anomalous samples contribute dice + focal with the pooled ground-
truth mask. Normal samples additionally run a synthetic branch A(F + gamma)
supervised as all-anomalous through CE alone. The total loss is the sum of
the active branches accumulated over the 4 stages.

Gradients are derived by hand through the chain
loss -> P(anomaly) -> temperature softmax -> cosine -> adapter weights;
the encoder features are fixed inputs, so gradients stop at F. Only W1 and
W2 train, with per-sample Adam updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapters import (
    Adapter,
    AdapterSet,
    init_adapter_set,
    noise_like,
)
from .errors import ContractViolationError, DataError
from .featio import FeatureSample, TextBank, pool_mask_to_grid
from .numcore import RandomStream

PROB_CLIP = 1e-7  # probabilities enter logs clamped to [PROB_CLIP, 1 - PROB_CLIP]


@dataclass
class TrainConfig:
    epochs_base: int = 50
    epochs_task: int = 20
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    dice_eps: float = 1.0
    alpha: float = 0.9  # residual blend ratio used on the inference path
    beta: float = 1.0  # synthetic-noise scale relative to feature std
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractViolationError("lr must be positive")
        if self.epochs_base < 1 or self.epochs_task < 1:
            raise ContractViolationError("epoch budgets must be >= 1")
        if self.focal_gamma < 0:
            raise ContractViolationError("focal_gamma must be >= 0")
        if self.dice_eps <= 0:
            raise ContractViolationError("dice_eps must be > 0")


@dataclass
class LossBreakdown:
    """Loss totals plus the per-stage, per-branch component terms.

    ``per_stage[l]`` maps branch name -> {loss kind -> value}; the branch
    structure itself encodes which loss kinds feed which branch ("an" never
    holds a CE term, "syn" holds only CE).
    """

    l_no: float
    l_an: float
    l_syn: float
    l_total: float
    per_stage: list[dict[str, dict[str, float]]] = field(default_factory=list)


@dataclass
class GradSet:
    d_w1: list[np.ndarray]
    d_w2: list[np.ndarray]

    def check_finite(self):
        for g in self.d_w1 + self.d_w2:
            if not np.isfinite(g).all():
                raise ContractViolationError("non-finite gradient")


@dataclass
class TrainResult:
    adapter_set: AdapterSet
    epoch_log: list[dict[str, float]]  # per epoch: mean l_no / l_an / l_syn / l_total


def _as_flat_probs_mask(probs, mask):
    p = np.asarray(probs, dtype=np.float64).ravel()
    m = np.asarray(mask, dtype=np.float64).ravel()
    if p.shape != m.shape:
        raise ContractViolationError(f"probs/mask size mismatch: {p.size} vs {m.size}")
    return p, m


def _clip(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)


def ce_loss(probs, mask) -> float:
    """Mean pixel cross-entropy -[M log p_a + (1-M) log p_n]."""
    p, m = _as_flat_probs_mask(probs, mask)
    pc = _clip(p)
    return float(np.mean(-(m * np.log(pc) + (1.0 - m) * np.log(1.0 - pc))))


def ce_grad(probs, mask) -> np.ndarray:
    """d ce_loss / d p_a per cell (zero where the clip is active)."""
    p, m = _as_flat_probs_mask(probs, mask)
    pc = _clip(p)
    grad = (-(m / pc) + (1.0 - m) / (1.0 - pc)) / p.size
    inside = (p > PROB_CLIP) & (p < 1.0 - PROB_CLIP)
    return np.where(inside, grad, 0.0)


def focal_loss(probs, mask, gamma_f: float, alpha_f: float) -> float:
    """Mean -alpha_t (1 - p_t)^gamma log p_t with p_t the true-class prob.

    alpha_f weights positives, 1 - alpha_f weights negatives; gamma_f = 0
    with alpha_f = 0.5 reduces to 0.5 * ce_loss.
    """
    p, m = _as_flat_probs_mask(probs, mask)
    pc = _clip(p)
    pt = m * pc + (1.0 - m) * (1.0 - pc)
    at = m * alpha_f + (1.0 - m) * (1.0 - alpha_f)
    return float(np.mean(-at * (1.0 - pt) ** gamma_f * np.log(pt)))


def focal_grad(probs, mask, gamma_f: float, alpha_f: float) -> np.ndarray:
    p, m = _as_flat_probs_mask(probs, mask)
    pc = _clip(p)
    pt = m * pc + (1.0 - m) * (1.0 - pc)
    at = m * alpha_f + (1.0 - m) * (1.0 - alpha_f)
    one_minus = 1.0 - pt
    if gamma_f == 0.0:
        d_pt = -at / pt
    else:
        d_pt = at * gamma_f * one_minus ** (gamma_f - 1.0) * np.log(pt) - (
            at * one_minus**gamma_f / pt
        )
    d_p = d_pt * (2.0 * m - 1.0) / p.size
    inside = (p > PROB_CLIP) & (p < 1.0 - PROB_CLIP)
    return np.where(inside, d_p, 0.0)


def dice_loss(probs, mask, eps: float) -> float:
    """1 - (2 * sum(p_a * M) + eps) / (sum(p_a) + sum(M) + eps), in [0, 1)."""
    p, m = _as_flat_probs_mask(probs, mask)
    inter = float(np.sum(p * m))
    union = float(np.sum(p) + np.sum(m))
    return 1.0 - (2.0 * inter + eps) / (union + eps)


def dice_grad(probs, mask, eps: float) -> np.ndarray:
    p, m = _as_flat_probs_mask(probs, mask)
    inter = np.sum(p * m)
    denom = np.sum(p) + np.sum(m) + eps
    return -(2.0 * m * denom - (2.0 * inter + eps)) / (denom * denom)


# ---------------------------------------------------------------------------
# Scoring forward/backward with cached intermediates


@dataclass
class _ScoreCache:
    f_in: np.ndarray  # (G, d) adapter input
    hidden: np.ndarray  # (G, h)
    out: np.ndarray  # (G, d) adapter output
    inv_norm: np.ndarray  # (G,) 1/||out_g||, 0 for zero-norm cells
    cos_n: np.ndarray
    cos_a: np.ndarray
    probs: np.ndarray  # (G,) P(anomaly)


def _score_forward(adapter: Adapter, f_in: np.ndarray, text: TextBank, tau: float) -> _ScoreCache:
    hidden = f_in @ adapter.w1.T
    out = hidden @ adapter.w2.T
    norms = np.linalg.norm(out, axis=1)
    inv_norm = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)
    cos_n = (out @ text.normal_vec) * inv_norm
    cos_a = (out @ text.anomaly_vec) * inv_norm
    probs = 1.0 / (1.0 + np.exp(-(cos_a - cos_n) / tau))
    probs = np.where(norms > 0, probs, 0.5)
    return _ScoreCache(f_in, hidden, out, inv_norm, cos_n, cos_a, probs)


def _score_backward(
    cache: _ScoreCache, d_probs: np.ndarray, adapter: Adapter, text: TextBank, tau: float
) -> tuple[np.ndarray, np.ndarray]:
    """Backprop d loss/d P through softmax, cosine, and the two linear maps."""
    p = cache.probs
    d_u = d_probs * p * (1.0 - p)  # u = (cos_a - cos_n) / tau
    d_cos = d_u / tau
    # d cos(z, t)/dz = (t - cos * zhat) / ||z||; zero-norm rows get no grad.
    zhat = cache.out * cache.inv_norm[:, None]
    d_out = d_cos[:, None] * (
        (text.anomaly_vec[None, :] - cache.cos_a[:, None] * zhat)
        - (text.normal_vec[None, :] - cache.cos_n[:, None] * zhat)
    ) * cache.inv_norm[:, None]
    d_w2 = d_out.T @ cache.hidden
    d_hidden = d_out @ adapter.w2
    d_w1 = d_hidden.T @ cache.f_in
    return d_w1, d_w2


# ---------------------------------------------------------------------------
# Per-sample losses and gradients


def _grid_mask(sample: FeatureSample, height: int, width: int) -> np.ndarray:
    if sample.mask is None:
        raise DataError(f"anomalous sample {sample.sample_id!r} has no mask")
    return pool_mask_to_grid(sample.mask, height, width).astype(np.float64).ravel()


def sample_losses_and_grads(
    sample: FeatureSample,
    adapter_set: AdapterSet,
    text: TextBank,
    cfg: TrainConfig,
    tau: float = 0.07,
    noise: list[np.ndarray] | None = None,
    stream: RandomStream | None = None,
    want_grads: bool = True,
) -> tuple[LossBreakdown, GradSet | None]:
    """Losses (and optionally gradients) for one sample across all 4 stages.

    ``noise`` fixes the per-stage synthetic perturbations (used by gradient
    checks); otherwise they are drawn from ``stream``. Anomalous samples
    skip the synthetic branch entirely.
    """
    if noise is None and sample.label == "normal":
        if stream is None:
            raise ContractViolationError("normal samples need noise or a stream")
        noise = [
            noise_like(stage.data, stream, cfg.beta) for stage in sample.stages
        ]

    l_no = l_an = l_syn = 0.0
    per_stage = []
    d_w1 = [np.zeros_like(a.w1) for a in adapter_set.adapters]
    d_w2 = [np.zeros_like(a.w2) for a in adapter_set.adapters]

    for idx, (stage, adapter) in enumerate(zip(sample.stages, adapter_set.adapters)):
        branches: dict[str, dict[str, float]] = {}
        real = _score_forward(adapter, stage.data, text, tau)
        if sample.label == "normal":
            zeros = np.zeros(stage.cells)
            ce = ce_loss(real.probs, zeros)
            dice = dice_loss(real.probs, zeros, cfg.dice_eps)
            focal = focal_loss(real.probs, zeros, cfg.focal_gamma, cfg.focal_alpha)
            branches["no"] = {"ce": ce, "dice": dice, "focal": focal}
            l_no += ce + dice + focal
            if want_grads:
                d_p = (
                    ce_grad(real.probs, zeros)
                    + dice_grad(real.probs, zeros, cfg.dice_eps)
                    + focal_grad(real.probs, zeros, cfg.focal_gamma, cfg.focal_alpha)
                )
                g1, g2 = _score_backward(real, d_p, adapter, text, tau)
                d_w1[idx] += g1
                d_w2[idx] += g2

            syn = _score_forward(adapter, stage.data + noise[idx], text, tau)
            ones = np.ones(stage.cells)
            syn_ce = ce_loss(syn.probs, ones)
            branches["syn"] = {"ce": syn_ce}
            l_syn += syn_ce
            if want_grads:
                g1, g2 = _score_backward(
                    syn, ce_grad(syn.probs, ones), adapter, text, tau
                )
                d_w1[idx] += g1
                d_w2[idx] += g2
        else:
            mask = _grid_mask(sample, stage.height, stage.width)
            dice = dice_loss(real.probs, mask, cfg.dice_eps)
            focal = focal_loss(real.probs, mask, cfg.focal_gamma, cfg.focal_alpha)
            branches["an"] = {"dice": dice, "focal": focal}
            l_an += dice + focal
            if want_grads:
                d_p = dice_grad(real.probs, mask, cfg.dice_eps) + focal_grad(
                    real.probs, mask, cfg.focal_gamma, cfg.focal_alpha
                )
                g1, g2 = _score_backward(real, d_p, adapter, text, tau)
                d_w1[idx] += g1
                d_w2[idx] += g2
        per_stage.append(branches)

    breakdown = LossBreakdown(l_no, l_an, l_syn, l_no + l_an + l_syn, per_stage)
    if not want_grads:
        return breakdown, None
    grads = GradSet(d_w1, d_w2)
    grads.check_finite()
    return breakdown, grads


def sample_losses(
    sample: FeatureSample,
    adapter_set: AdapterSet,
    text: TextBank,
    cfg: TrainConfig,
    tau: float = 0.07,
    noise: list[np.ndarray] | None = None,
    stream: RandomStream | None = None,
) -> LossBreakdown:
    breakdown, _ = sample_losses_and_grads(
        sample, adapter_set, text, cfg, tau, noise, stream, want_grads=False
    )
    return breakdown


# ---------------------------------------------------------------------------
# Optimizer and training loop


class Adam:
    """Standard Adam over the 8 weight matrices of an adapter set."""

    def __init__(self, adapter_set: AdapterSet, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m1 = [np.zeros_like(a.w1) for a in adapter_set.adapters]
        self.v1 = [np.zeros_like(a.w1) for a in adapter_set.adapters]
        self.m2 = [np.zeros_like(a.w2) for a in adapter_set.adapters]
        self.v2 = [np.zeros_like(a.w2) for a in adapter_set.adapters]

    def step(self, adapter_set: AdapterSet, grads: GradSet):
        cfg = self.cfg
        self.t += 1
        correct1 = 1.0 - cfg.adam_beta1**self.t
        correct2 = 1.0 - cfg.adam_beta2**self.t
        for idx, adapter in enumerate(adapter_set.adapters):
            for weights, grad, m, v in (
                (adapter.w1, grads.d_w1[idx], self.m1, self.v1),
                (adapter.w2, grads.d_w2[idx], self.m2, self.v2),
            ):
                m[idx] *= cfg.adam_beta1
                m[idx] += (1.0 - cfg.adam_beta1) * grad
                v[idx] *= cfg.adam_beta2
                v[idx] += (1.0 - cfg.adam_beta2) * grad * grad
                m_hat = m[idx] / correct1
                v_hat = v[idx] / correct2
                weights -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def train_adapter_set(
    samples: list[FeatureSample],
    text: TextBank,
    cfg: TrainConfig,
    epochs: int,
    stream: RandomStream | None = None,
    tau: float = 0.07,
    tag: str = "base",
    initial: AdapterSet | None = None,
) -> TrainResult:
    """Train a fresh adapter set on the given samples for ``epochs`` epochs.

    Batch size is one sample; the visit order is reshuffled from the stream
    every epoch, so identical seeds give identical final weights.
    ``epochs = 0`` returns the freshly initialized set unchanged.
    """
    if not samples:
        raise DataError("empty training set")
    if stream is None:
        stream = RandomStream(cfg.seed)
    dims = [stage.dim for stage in samples[0].stages]
    for sample in samples:
        if [stage.dim for stage in sample.stages] != dims:
            raise DataError(f"sample {sample.sample_id!r} has mismatched stage dims")

    init_stream = stream.child("init")
    shuffle_stream = stream.child("shuffle")
    noise_stream = stream.child("noise")

    adapter_set = (
        initial.copy(tag=tag) if initial is not None else init_adapter_set(dims, init_stream, tag)
    )
    optimizer = Adam(adapter_set, cfg)
    epoch_log: list[dict[str, float]] = []

    for epoch in range(epochs):
        order = shuffle_stream.permutation(len(samples))
        sums = {"l_no": 0.0, "l_an": 0.0, "l_syn": 0.0, "l_total": 0.0}
        for sample_idx in order:
            sample = samples[int(sample_idx)]
            breakdown, grads = sample_losses_and_grads(
                sample, adapter_set, text, cfg, tau, stream=noise_stream
            )
            optimizer.step(adapter_set, grads)
            sums["l_no"] += breakdown.l_no
            sums["l_an"] += breakdown.l_an
            sums["l_syn"] += breakdown.l_syn
            sums["l_total"] += breakdown.l_total
        epoch_log.append(
            {"epoch": float(epoch), **{k: v / len(samples) for k, v in sums.items()}}
        )

    return TrainResult(adapter_set, epoch_log)


def write_epoch_log(epoch_log: list[dict[str, float]], path) -> None:
    """Epoch loss log as CSV: epoch, l_no, l_an, l_syn, l_total."""
    lines = ["epoch,l_no,l_an,l_syn,l_total"]
    for row in epoch_log:
        lines.append(
            f"{int(row['epoch'])},{row['l_no']!r},{row['l_an']!r},"
            f"{row['l_syn']!r},{row['l_total']!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
