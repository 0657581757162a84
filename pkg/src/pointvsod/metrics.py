"""Saliency evaluation: MAE, max F-measure and S-measure."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS = np.finfo(np.float64).eps
NUM_THRESHOLDS = 255
THRESHOLDS = np.linspace(0.0, 1.0, NUM_THRESHOLDS)


def _check(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in extent")
    return pred, gt.astype(bool)


def mae(pred, gt) -> float:
    pred, gt = _check(pred, gt)
    return float(np.abs(pred - gt).mean())


def f_beta(precision, recall, beta2: float = 0.3):
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    num = (1.0 + beta2) * precision * recall
    den = beta2 * precision + recall
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def precision_recall_curve(pred, gt, thresholds=THRESHOLDS):
    """Precision and recall of ``pred >= t`` for each threshold.

    No predicted positives gives precision 1; an empty ground truth gives recall 1.
    """
    pred, gt = _check(pred, gt)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    p = pred.ravel()
    g = gt.ravel()
    order = np.argsort(p, kind="stable")
    p_sorted = p[order]
    g_sorted = g[order]
    # count of pixels with value >= t, and the true positives among them
    first = np.searchsorted(p_sorted, thresholds, side="left")
    tp_suffix = np.concatenate([np.cumsum(g_sorted[::-1])[::-1], [0]])
    n_pos_pred = p.size - first
    tp = tp_suffix[first]
    n_gt = int(g.sum())
    precision = np.where(n_pos_pred > 0, tp / np.maximum(n_pos_pred, 1), 1.0)
    recall = np.full(thresholds.shape, 1.0) if n_gt == 0 else tp / n_gt
    return precision.astype(np.float64), np.asarray(recall, dtype=np.float64)


def f_beta_max(pred, gt, beta2: float = 0.3, thresholds="fixed") -> float:
    """Best F-measure over a threshold sweep.

    ``thresholds="fixed"`` uses 255 evenly spaced levels on [0, 1];
    ``"exact"`` sweeps every distinct prediction value.
    """
    pred, _ = _check(pred, gt)
    if isinstance(thresholds, str):
        if thresholds == "fixed":
            thresholds = THRESHOLDS
        elif thresholds == "exact":
            thresholds = np.unique(pred)
        else:
            raise ValueError(f"unknown threshold mode {thresholds!r}")
    precision, recall = precision_recall_curve(pred, gt, thresholds)
    return float(f_beta(precision, recall, beta2).max())


# -- S-measure --------------------------------------------------------------
def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return float(2.0 * x / (x * x + 1.0 + sigma + EPS))


def s_object(pred, gt) -> float:
    pred, gt = _check(pred, gt)
    u = gt.mean()
    o_fg = _object_score(pred[gt])
    o_bg = _object_score(1.0 - pred[~gt])
    return float(u * o_fg + (1.0 - u) * o_bg)


def _centroid(gt: np.ndarray) -> tuple:
    h, w = gt.shape
    if not gt.any():
        return int(round(w / 2)), int(round(h / 2))
    ys, xs = np.nonzero(gt)
    return int(np.round(xs.mean())) + 1, int(np.round(ys.mean())) + 1


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    x = pred.mean()
    y = gt.mean()
    if n > 1:
        sx = ((pred - x) ** 2).sum() / (n - 1)
        sy = ((gt - y) ** 2).sum() / (n - 1)
        sxy = ((pred - x) * (gt - y)).sum() / (n - 1)
    else:
        sx = sy = sxy = 0.0
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return float(alpha / (beta + EPS))
    if beta == 0:
        return 1.0
    return 0.0


def s_region(pred, gt) -> float:
    pred, gt = _check(pred, gt)
    h, w = gt.shape
    cx, cy = _centroid(gt)
    g = gt.astype(np.float64)
    area = h * w
    score = 0.0
    for rows, cols in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                       (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        p_part, g_part = pred[rows, cols], g[rows, cols]
        if p_part.size == 0:
            continue
        score += p_part.size / area * _ssim(p_part, g_part)
    return float(score)


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structure measure: ``alpha * S_object + (1 - alpha) * S_region``, clamped to [0, 1]."""
    pred, gt = _check(pred, gt)
    y = gt.mean()
    if y == 0:
        q = 1.0 - pred.mean()
    elif y == 1:
        q = pred.mean()
    else:
        q = alpha * s_object(pred, gt) + (1.0 - alpha) * s_region(pred, gt)
    return float(min(max(q, 0.0), 1.0))


# -- aggregation ------------------------------------------------------------
@dataclass
class FrameMetrics:
    sequence: str
    frame: str
    mae: float
    f_beta_max: float
    s_measure: float
    precision: np.ndarray = field(repr=False)
    recall: np.ndarray = field(repr=False)


def evaluate_frame(pred, gt, sequence: str = "", frame: str = "", beta2: float = 0.3) -> FrameMetrics:
    precision, recall = precision_recall_curve(pred, gt)
    fmax = float(f_beta(precision, recall, beta2).max())
    return FrameMetrics(sequence, frame, mae(pred, gt), fmax, s_measure(pred, gt), precision, recall)


@dataclass
class Summary:
    count: int
    mae: float
    f_beta_max: float
    s_measure: float
    precision: np.ndarray = field(repr=False)
    recall: np.ndarray = field(repr=False)
    f_curve: np.ndarray = field(repr=False)


def summarize(frames: list, beta2: float = 0.3, fmax_mode: str = "pr_curve") -> Summary:
    """Mean MAE / S-measure over frames and a dataset-level max F.

    ``fmax_mode="pr_curve"`` takes the max of F over the frame-averaged
    precision/recall curve; ``"per_frame"`` averages each frame's max F.
    """
    if not frames:
        raise ValueError("no frames to summarize")
    precision = np.mean([f.precision for f in frames], axis=0)
    recall = np.mean([f.recall for f in frames], axis=0)
    curve = f_beta(precision, recall, beta2)
    if fmax_mode == "pr_curve":
        fmax = float(curve.max())
    elif fmax_mode == "per_frame":
        fmax = float(np.mean([f.f_beta_max for f in frames]))
    else:
        raise ValueError(f"unknown fmax mode {fmax_mode!r}")
    return Summary(len(frames), float(np.mean([f.mae for f in frames])), fmax,
                   float(np.mean([f.s_measure for f in frames])), precision, recall, curve)
