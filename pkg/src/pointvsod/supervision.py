"""Point annotations, flood-fill pseudo-labels, edge targets and the training losses."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from . import tensor as T
from .config import LossConfig
from .tensor import Tensor

FOREGROUND = 255
BACKGROUND = 0
UNLABELED = 128


@dataclass
class PointAnnotation:
    frame: str
    fg: list  # [(x, y), ...]
    bg: list

    def validate(self, hw: tuple) -> None:
        h, w = hw
        for x, y in list(self.fg) + list(self.bg):
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"frame {self.frame}: point ({x}, {y}) outside {w}x{h} image")
        if {tuple(p) for p in self.fg} & {tuple(p) for p in self.bg}:
            raise ValueError(f"frame {self.frame}: a point is both foreground and background")


@dataclass
class PseudoLabel:
    labels: np.ndarray  # uint8 (H, W) with FOREGROUND / BACKGROUND / UNLABELED
    source: str = ""
    gamma: float = 6.0
    fg_regions: list = field(default_factory=list)

    @property
    def labeled(self) -> np.ndarray:
        return self.labels != UNLABELED

    @property
    def foreground(self) -> np.ndarray:
        return self.labels == FOREGROUND

    def coverage(self) -> float:
        return float(self.labeled.mean())


def growth_radius(hw: tuple, gamma: float) -> float:
    return min(hw) / gamma


def flood_fill(image: np.ndarray, annotation: PointAnnotation, gamma: float = 6.0,
               threshold: float = 0.1) -> PseudoLabel:
    """Grow each annotated point into a region, clipped to a disk of radius min(h, w)/gamma.

    ``image`` is RGB in [0, 1].  Foreground regions take precedence where a
    background region overlaps them.
    """
    if gamma < 1:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    h, w = image.shape[:2]
    annotation.validate((h, w))
    r = growth_radius((h, w), gamma)
    r_sq = r * r
    labels = np.full((h, w), UNLABELED, dtype=np.uint8)
    bg_mask = np.zeros((h, w), dtype=bool)
    for x, y in annotation.bg:
        bg_mask |= kernels.flood_region(image, int(y), int(x), r_sq, threshold).astype(bool)
    labels[bg_mask] = BACKGROUND
    regions = []
    for x, y in annotation.fg:
        region = kernels.flood_region(image, int(y), int(x), r_sq, threshold).astype(bool)
        labels[region] = FOREGROUND
        regions.append(region)
    return PseudoLabel(labels, annotation.frame, gamma, regions)


def grayscale(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    return image[..., :3] @ np.array([0.299, 0.587, 0.114])


def gradient_magnitude(gray: np.ndarray) -> np.ndarray:
    """Sobel magnitude with edge-replicated borders.

    Differencing before smoothing keeps flat regions exactly zero.
    """
    p = np.pad(np.asarray(gray, dtype=np.float64), 1, mode="edge")
    dx = p[:, 2:] - p[:, :-2]
    dy = p[2:, :] - p[:-2, :]
    gx = dx[:-2] + 2.0 * dx[1:-1] + dx[2:]
    gy = dy[:, :-2] + 2.0 * dy[:, 1:-1] + dy[:, 2:]
    return np.hypot(gx, gy)


def edge_target(image: np.ndarray, quantile: float = 0.9) -> np.ndarray:
    """Binary edge map: Sobel magnitude, normalised by its max, kept at or above ``quantile``."""
    mag = gradient_magnitude(grayscale(image))
    peak = mag.max()
    if peak <= 0:
        return np.zeros(mag.shape)
    mag = mag / peak
    q = np.quantile(mag, quantile)
    return ((mag >= q) & (mag > 0)).astype(np.float64)


# -- losses -----------------------------------------------------------------
def _clamped(pred: Tensor, eps: float) -> Tensor:
    return T.clamp(pred, eps, 1.0 - eps)


def bce_loss(pred: Tensor, target, eps: float = 1e-7) -> Tensor:
    """Summed binary cross-entropy."""
    p = _clamped(T.as_tensor(pred), eps)
    y = np.asarray(target, dtype=p.data.dtype)
    terms = T.log(p) * y + T.log(1.0 - p) * (1.0 - y)
    return -T.tsum(terms)


def partial_bce_loss(pred: Tensor, labels, eps: float = 1e-7) -> Tensor:
    """BCE summed over labelled pixels only (labels are the tri-level uint8 map)."""
    labels = np.asarray(labels)
    known = (labels != UNLABELED).astype(np.float64)
    g = (labels == FOREGROUND).astype(np.float64)
    p = _clamped(T.as_tensor(pred), eps)
    terms = (T.log(p) * g + T.log(1.0 - p) * (1.0 - g)) * known
    return -T.tsum(terms)


def smoothness_loss(pred: Tensor, gray) -> Tensor:
    """Edge-aware TV: sum |dS| exp(-|dI|) over forward differences in x and y.

    ``pred`` and ``gray`` are (..., H, W).
    """
    s = T.as_tensor(pred)
    gray = np.asarray(gray, dtype=s.data.dtype)
    wx = np.exp(-np.abs(gray[..., :, 1:] - gray[..., :, :-1]))
    wy = np.exp(-np.abs(gray[..., 1:, :] - gray[..., :-1, :]))
    dx = T.tabs(s[..., :, 1:] - s[..., :, :-1])
    dy = T.tabs(s[..., 1:, :] - s[..., :-1, :])
    return T.tsum(dx * wx) + T.tsum(dy * wy)


def gated_crf_loss(pred: Tensor, image, k: int = 5, sigma_pt: float = 3.0,
                   sigma_i: float = 0.1) -> Tensor:
    """Local pairwise consistency loss; ``pred`` (B, H, W), ``image`` (B, H, W, C)."""
    if k % 2 == 0:
        raise ValueError("gated CRF kernel size must be odd")
    if sigma_pt <= 0 or sigma_i <= 0:
        raise ValueError("gated CRF bandwidths must be positive")
    s = T.as_tensor(pred)
    squeeze = s.ndim == 2
    data = s.data[None] if squeeze else s.data
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == s.ndim:      # single-channel image
        img = img[..., None]
    if squeeze:
        img = img[None]
    loss, grad = kernels.gcrf_loss_grad(data, img, k, sigma_pt, sigma_i)
    if squeeze:
        grad = grad[0]
    grad = grad.astype(s.data.dtype)

    def bw(g):
        return (g * grad,)

    return T.custom(np.asarray(loss, dtype=s.data.dtype), (s,), bw, "gated_crf")


@dataclass
class Targets:
    image: np.ndarray   # (B, H, W, 3) in [0, 1]
    labels: np.ndarray  # (B, H, W) uint8 tri-level
    edges: np.ndarray   # (B, H, W) in {0, 1}

    @property
    def gray(self) -> np.ndarray:
        return grayscale(self.image)


@dataclass
class LossTerms:
    total: Tensor
    parts: dict  # (head, term) -> unweighted value (float)
    weights: dict  # (head, term) -> coefficient

    def by_term(self) -> dict:
        """Weighted contributions summed per term type."""
        out = {"bce": 0.0, "pbce": 0.0, "smooth": 0.0, "gcrf": 0.0}
        for key, value in self.parts.items():
            out[key[1]] += self.weights[key] * value
        return out


HEADS = ("s1", "s2", "s3", "s4", "s_final")


def loss_weights(cfg: LossConfig) -> dict:
    w = {("s1", "bce"): cfg.w_edge_bce}
    for head in ("s2", "s3", "s4"):
        w[(head, "pbce")] = cfg.w_side_pbce
        w[(head, "smooth")] = cfg.w_side_smooth
    w[("s_final", "pbce")] = cfg.w_final_pbce
    w[("s_final", "smooth")] = cfg.w_final_smooth
    w[("s_final", "gcrf")] = cfg.w_final_gcrf
    return w


def total_loss(heads: dict, targets: Targets, cfg: Optional[LossConfig] = None) -> LossTerms:
    """Weighted sum of the four loss terms over the five supervised heads.

    ``heads`` maps s1..s4 and s_final to (B, H, W) probability maps at target
    resolution.
    """
    cfg = cfg or LossConfig()
    missing = [h for h in HEADS if h not in heads]
    if missing:
        raise KeyError(f"missing heads: {missing}")
    gray = targets.gray
    eps = cfg.clamp_eps
    parts = {}
    parts[("s1", "bce")] = bce_loss(heads["s1"], targets.edges, eps)
    for head in ("s2", "s3", "s4", "s_final"):
        parts[(head, "pbce")] = partial_bce_loss(heads[head], targets.labels, eps)
        parts[(head, "smooth")] = smoothness_loss(heads[head], gray)
    parts[("s_final", "gcrf")] = gated_crf_loss(heads["s_final"], targets.image, cfg.gcrf_kernel,
                                                cfg.gcrf_sigma_pt, cfg.gcrf_sigma_i)
    weights = loss_weights(cfg)
    total = None
    for key, term in parts.items():
        weighted = T.scale(term, weights[key])
        total = weighted if total is None else total + weighted
    return LossTerms(total, {k: float(v.data) for k, v in parts.items()}, weights)
