"""Reference (pure Python / numpy) versions of the compiled kernels."""
from collections import deque

import numpy as np


def flood_region(image, seed_y, seed_x, radius_sq, threshold):
    """4-connected region around a seed.

    A pixel joins when its colour is strictly closer than ``threshold``
    (Euclidean) to the seed colour and it lies within ``sqrt(radius_sq)`` of
    the seed.  Returns a uint8 mask.
    """
    image = np.ascontiguousarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    pixels = image.reshape(h, w, -1).tolist()
    seed = pixels[seed_y][seed_x]
    thr_sq = threshold * threshold
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[seed_y, seed_x] = 1
    queue = deque([(seed_y, seed_x)])
    while queue:
        y, x = queue.popleft()
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if ny < 0 or ny >= h or nx < 0 or nx >= w or mask[ny, nx]:
                continue
            dy, dx = ny - seed_y, nx - seed_x
            if dy * dy + dx * dx > radius_sq:
                continue
            d = 0.0
            for a, b in zip(pixels[ny][nx], seed):
                d += (a - b) * (a - b)
            if d < thr_sq:
                mask[ny, nx] = 1
                queue.append((ny, nx))
    return mask


def window_counts(h, w, r):
    ys = np.arange(h)
    xs = np.arange(w)
    ny = np.minimum(ys + r, h - 1) - np.maximum(ys - r, 0) + 1
    nx = np.minimum(xs + r, w - 1) - np.maximum(xs - r, 0) + 1
    return (ny[:, None] * nx[None, :] - 1).astype(np.float64)


def gcrf_loss_grad(s, image, k, sigma_pt, sigma_i):
    """Pairwise |s_i - s_j| f(i, j) summed over k×k windows, and its subgradient.

    ``s`` is (B, H, W); ``image`` is (B, H, W, C).  f uses squared position and
    colour distances and the clipped window size (self excluded) as normaliser.
    """
    s = np.asarray(s, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    b, h, w = s.shape
    r = k // 2
    inv_w = 1.0 / np.maximum(window_counts(h, w, r), 1.0)
    loss = 0.0
    grad = np.zeros_like(s)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            # i ranges over pixels whose neighbour i + (dy, dx) is inside
            y0, y1 = max(0, -dy), min(h, h - dy)
            x0, x1 = max(0, -dx), min(w, w - dx)
            if y0 >= y1 or x0 >= x1:
                continue
            si = s[:, y0:y1, x0:x1]
            sj = s[:, y0 + dy:y1 + dy, x0 + dx:x1 + dx]
            ci = image[:, y0:y1, x0:x1]
            cj = image[:, y0 + dy:y1 + dy, x0 + dx:x1 + dx]
            col = ((ci - cj) ** 2).sum(axis=-1)
            kern = np.exp(-(dy * dy + dx * dx) / (2.0 * sigma_pt ** 2) - col / (2.0 * sigma_i ** 2))
            f = kern * inv_w[y0:y1, x0:x1]
            diff = si - sj
            loss += float((np.abs(diff) * f).sum())
            sg = np.sign(diff) * f
            grad[:, y0:y1, x0:x1] += sg
            grad[:, y0 + dy:y1 + dy, x0 + dx:x1 + dx] -= sg
    return loss, grad
