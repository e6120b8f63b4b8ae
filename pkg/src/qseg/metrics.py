"""Confusion-matrix based segmentation metrics (IoU, mIoU, pixel accuracy)."""
from __future__ import annotations

import math

import numpy as np

IGNORE_LABEL = 255


class ConfusionMatrix:
    """counts[g, p] = number of pixels of ground-truth class g predicted as p."""

    def __init__(self, n_classes: int, counts=None):
        if n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        self.n_classes = n_classes
        self.counts = (np.zeros((n_classes, n_classes), dtype=np.int64)
                       if counts is None else np.asarray(counts, dtype=np.int64).copy())

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.n_classes, self.counts)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.n_classes != self.n_classes:
            raise ValueError("cannot merge confusion matrices of different size")
        return ConfusionMatrix(self.n_classes, self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def accumulate(cm: ConfusionMatrix, pred, gt, ignore_label: int = IGNORE_LABEL) -> ConfusionMatrix:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    keep = gt != ignore_label
    p = pred[keep].astype(np.int64)
    g = gt[keep].astype(np.int64)
    c = cm.n_classes
    for name, a in (("prediction", p), ("ground truth", g)):
        if a.size and (a.min() < 0 or a.max() >= c):
            raise ValueError(f"{name} class index out of range [0, {c})")
    counts = np.bincount(g * c + p, minlength=c * c).reshape(c, c)
    return ConfusionMatrix(c, cm.counts + counts)


def iou_per_class(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class IoU; NaN marks classes absent from both prediction and ground truth."""
    tp = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - tp
    out = np.full(cm.n_classes, np.nan)
    present = union > 0
    out[present] = tp[present] / union[present]
    return out


def mean_iou(cm: ConfusionMatrix) -> float:
    iou = iou_per_class(cm)
    present = ~np.isnan(iou)
    if not present.any():
        raise ValueError("mean_iou: no class present")
    # fsum keeps the mean independent of summation order
    return math.fsum(iou[present]) / int(present.sum())


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise ValueError("pixel_accuracy: empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def per_image_mean_iou(preds, gts, n_classes: int, ignore_label: int = IGNORE_LABEL) -> float:
    """Average of per-image mIoU (images with no valid pixels are skipped)."""
    vals = []
    for p, g in zip(preds, gts):
        cm = accumulate(ConfusionMatrix(n_classes), p, g, ignore_label)
        if cm.total:
            vals.append(mean_iou(cm))
    if not vals:
        raise ValueError("per_image_mean_iou: no evaluable image")
    return math.fsum(vals) / len(vals)
