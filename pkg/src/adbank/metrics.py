"""Exact evaluation metrics for the task stream.

AUROC is the Mann-Whitney statistic with ties counted one half, computed
from a single sort. Average precision uses step interpolation over
descending unique score thresholds, processing tied scores as one block.
ACC aggregates per-class image AUROC and pixel AP as unweighted class
means; the forgetting measure is the mean drop of a class's metric from
the checkpoint right after its task to the final checkpoint (negative
drops, i.e. backward transfer, are kept).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError, DataError, UndefinedMetricError


def _scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ContractViolationError("scores and labels must have the same length")
    if s.size == 0:
        raise UndefinedMetricError("empty score list")
    if not np.isin(y, (0, 1)).all():
        raise ContractViolationError("labels must be binary")
    return s, y.astype(np.int64)


def auroc(scores, labels) -> float:
    """Tie-aware area under the ROC curve in O(M log M).

    Equals the fraction of (positive, negative) pairs ranked correctly,
    counting ties as one half.
    """
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC needs both labels ({n_pos} positive, {n_neg} negative)"
        )
    # Average 1-based ranks over tie groups, then the rank-sum statistic.
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts
    avg_rank = (starts + ends + 1) / 2.0
    rank_sum = float(avg_rank[inverse][y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def average_precision(scores, labels) -> float:
    """Step-interpolated AP over descending unique thresholds."""
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    cum_tp = np.cumsum(y_sorted)
    # Tied scores collapse into one threshold: keep the last index of each block.
    block_end = np.nonzero(np.append(s_sorted[1:] != s_sorted[:-1], True))[0]
    precision = cum_tp[block_end] / (block_end + 1.0)
    recall = cum_tp[block_end] / n_pos
    recall_prev = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - recall_prev) * precision))


@dataclass
class ClassEval:
    class_id: str
    image_auroc: float
    pixel_ap: float
    n_test_normal: int
    n_test_anomalous: int


@dataclass
class MetricReport:
    """Per-checkpoint evaluation: per-class metrics plus ACC/FM aggregates."""

    checkpoint_id: int
    classes: list[ClassEval]
    scope: str = "seen"  # "seen" or "zero_shot"
    acc_image: float = 0.0
    acc_pixel: float = 0.0
    acc_avg: float = 0.0
    fm_image: float = 0.0
    fm_pixel: float = 0.0
    fm_avg: float = 0.0
    fm_defined: bool = False

    def class_eval(self, class_id: str) -> ClassEval | None:
        for entry in self.classes:
            if entry.class_id == class_id:
                return entry
        return None


def class_eval(
    class_id: str,
    image_scores,
    image_labels,
    pixel_scores,
    pixel_labels,
) -> ClassEval:
    """Image AUROC over per-image scores, pixel AP over the pooled pixels
    of every test image of the class (one joint ranking)."""
    labels = np.asarray(image_labels).ravel()
    try:
        image_metric = auroc(image_scores, labels)
        pixel_metric = average_precision(pixel_scores, pixel_labels)
    except UndefinedMetricError as exc:
        raise UndefinedMetricError(f"class {class_id!r}: {exc}") from exc
    return ClassEval(
        class_id=class_id,
        image_auroc=image_metric,
        pixel_ap=pixel_metric,
        n_test_normal=int((labels == 0).sum()),
        n_test_anomalous=int((labels == 1).sum()),
    )


def make_report(
    checkpoint_id: int, classes: list[ClassEval], scope: str = "seen"
) -> MetricReport:
    report = MetricReport(checkpoint_id, classes, scope)
    if classes:
        report.acc_image = float(np.mean([c.image_auroc for c in classes]))
        report.acc_pixel = float(np.mean([c.pixel_ap for c in classes]))
        report.acc_avg = (report.acc_image + report.acc_pixel) / 2.0
    return report


def forgetting_measure(
    history: list[MetricReport],
    baseline: str = "intro",
    class_ids: list[str] | None = None,
) -> tuple[float, float, float]:
    """Mean metric drop from a class's reference checkpoint to the final one.

    ``baseline="intro"`` references the checkpoint where the class first
    appears (immediately after its task); ``baseline="max"`` references the
    best value seen at any checkpoint before the final one. Classes first
    introduced at the final checkpoint are excluded. Negative drops are
    retained, not clamped.
    """
    if baseline not in ("intro", "max"):
        raise ContractViolationError(f"unknown FM baseline {baseline!r}")
    if len(history) < 2:
        raise UndefinedMetricError("forgetting measure needs >= 2 checkpoints")
    final = history[-1]
    intro: dict[str, int] = {}
    for idx, report in enumerate(history):
        for entry in report.classes:
            intro.setdefault(entry.class_id, idx)
    drops_image = []
    drops_pixel = []
    for class_id, intro_idx in intro.items():
        if intro_idx >= len(history) - 1:
            continue
        if class_ids is not None and class_id not in class_ids:
            continue
        final_entry = final.class_eval(class_id)
        if final_entry is None:
            raise DataError(f"class {class_id!r} missing from final checkpoint")
        if baseline == "intro":
            ref = history[intro_idx].class_eval(class_id)
            ref_image, ref_pixel = ref.image_auroc, ref.pixel_ap
        else:
            ref_image = ref_pixel = -np.inf
            for report in history[intro_idx:-1]:
                entry = report.class_eval(class_id)
                if entry is None:
                    raise DataError(
                        f"class {class_id!r} missing from checkpoint "
                        f"{report.checkpoint_id}"
                    )
                ref_image = max(ref_image, entry.image_auroc)
                ref_pixel = max(ref_pixel, entry.pixel_ap)
        drops_image.append(ref_image - final_entry.image_auroc)
        drops_pixel.append(ref_pixel - final_entry.pixel_ap)
    if not drops_image:
        raise UndefinedMetricError("no classes eligible for the forgetting measure")
    fm_image = float(np.mean(drops_image))
    fm_pixel = float(np.mean(drops_pixel))
    return fm_image, fm_pixel, (fm_image + fm_pixel) / 2.0
