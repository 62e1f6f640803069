"""Detection metrics: confusion-count summaries, ROC/AUC with optional
masking, and the structural similarity index for reconstruction quality."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .errors import DimensionError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricSummary:
    """Percentages; undefined ratios are reported as NaN, never as 0."""

    accuracy: float
    sensitivity: float
    precision: float
    f1: float


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # descending
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def classify_at_threshold(scores, labels, threshold):
    """Tally confusion counts with positive = score >= threshold."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ValueError(f"scores/labels length mismatch: {scores.shape} vs {labels.shape}")
    pred = scores >= threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    tn = int(np.sum(~pred & ~labels))
    fn = int(np.sum(~pred & labels))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def _ratio(num, den):
    return num / den * 100.0 if den > 0 else math.nan


def summary_metrics(c: ConfusionCounts) -> MetricSummary:
    accuracy = _ratio(c.tp + c.tn, c.total)
    sensitivity = _ratio(c.tp, c.tp + c.fn)
    precision = _ratio(c.tp, c.tp + c.fp)
    if math.isnan(precision) or math.isnan(sensitivity) or precision + sensitivity == 0:
        f1 = math.nan
    else:
        f1 = 2.0 * precision * sensitivity / (precision + sensitivity)
    return MetricSummary(accuracy=accuracy, sensitivity=sensitivity, precision=precision, f1=f1)


def roc_auc(scores, labels, mask=None) -> RocCurve:
    """ROC curve over all distinct thresholds plus trapezoidal AUC.

    The AUC equals the probability that a random positive outranks a random
    negative, with ties counted 1/2. Masked-out items are dropped entirely.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores/labels length mismatch")
    if mask is not None:
        keep = np.asarray(mask).astype(bool).ravel()
        if keep.shape != scores.shape:
            raise ValueError("mask length mismatch")
        scores, labels = scores[keep], labels[keep]
    npos = int(labels.sum())
    nneg = int(labels.size - npos)
    if npos == 0 or nneg == 0:
        raise ValueError("need at least one positive and one negative after masking")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tps = np.cumsum(y)
    fps = np.cumsum(~y)
    # keep only the last index of each tied score block
    last = np.nonzero(np.append(np.diff(s) != 0, True))[0]
    tpr = np.concatenate(([0.0], tps[last] / npos))
    fpr = np.concatenate(([0.0], fps[last] / nneg))
    thresholds = np.concatenate(([np.inf], s[last]))
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=auc)


def _gaussian_kernel(size, sigma):
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(x, y, data_range=1.0, window_size=7, sigma=1.5, return_window=False):
    """Mean local structural similarity between two grayscale images.

    Uses a Gaussian-weighted window (default 7x7) over the valid region;
    images smaller than the window fall back to a single uniform window
    spanning the whole image. ``return_window`` additionally reports which
    window was used, for run metadata.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"image shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim != 2:
        raise DimensionError(f"expected 2D images, got ndim={x.ndim}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    if min(x.shape) < window_size:
        mu1, mu2 = x.mean(), y.mean()
        v1, v2 = x.var(), y.var()
        cov = ((x - mu1) * (y - mu2)).mean()
        value = ((2 * mu1 * mu2 + c1) * (2 * cov + c2)) / (
            (mu1**2 + mu2**2 + c1) * (v1 + v2 + c2)
        )
        window = "uniform-full"
    else:
        w = _gaussian_kernel(window_size, sigma)
        mu1 = convolve2d(x, w, mode="valid")
        mu2 = convolve2d(y, w, mode="valid")
        v1 = convolve2d(x * x, w, mode="valid") - mu1**2
        v2 = convolve2d(y * y, w, mode="valid") - mu2**2
        cov = convolve2d(x * y, w, mode="valid") - mu1 * mu2
        ssim_map = ((2 * mu1 * mu2 + c1) * (2 * cov + c2)) / (
            (mu1**2 + mu2**2 + c1) * (v1 + v2 + c2)
        )
        value = float(ssim_map.mean())
        window = f"gaussian-{window_size}x{window_size}"

    value = float(value)
    return (value, window) if return_window else value
