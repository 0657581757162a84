# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled flood-fill and gated-CRF kernels.  Same contracts as _kernels_py."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs

cnp.import_array()


def flood_region(image, Py_ssize_t seed_y, Py_ssize_t seed_x, double radius_sq, double threshold):
    cdef double[:, :, ::1] img = np.ascontiguousarray(image, dtype=np.float64).reshape(
        image.shape[0], image.shape[1], -1)
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], nc = img.shape[2]
    out = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] mask = out
    cdef cnp.intp_t[::1] qy = np.empty(h * w, dtype=np.intp)
    cdef cnp.intp_t[::1] qx = np.empty(h * w, dtype=np.intp)
    cdef Py_ssize_t head = 0, tail = 0, y, x, ny, nx, dy, dx, n, c
    cdef double thr_sq = threshold * threshold, d, t
    cdef Py_ssize_t[4] oy = [-1, 1, 0, 0]
    cdef Py_ssize_t[4] ox = [0, 0, -1, 1]

    mask[seed_y, seed_x] = 1
    qy[tail] = seed_y
    qx[tail] = seed_x
    tail += 1
    while head < tail:
        y = qy[head]
        x = qx[head]
        head += 1
        for n in range(4):
            ny = y + oy[n]
            nx = x + ox[n]
            if ny < 0 or ny >= h or nx < 0 or nx >= w or mask[ny, nx]:
                continue
            dy = ny - seed_y
            dx = nx - seed_x
            if <double>(dy * dy + dx * dx) > radius_sq:
                continue
            d = 0.0
            for c in range(nc):
                t = img[ny, nx, c] - img[seed_y, seed_x, c]
                d += t * t
            if d < thr_sq:
                mask[ny, nx] = 1
                qy[tail] = ny
                qx[tail] = nx
                tail += 1
    return out


def gcrf_loss_grad(s, image, int k, double sigma_pt, double sigma_i):
    cdef double[:, :, ::1] sv = np.ascontiguousarray(s, dtype=np.float64)
    cdef double[:, :, :, ::1] iv = np.ascontiguousarray(image, dtype=np.float64)
    cdef Py_ssize_t b = sv.shape[0], h = sv.shape[1], w = sv.shape[2], nc = iv.shape[3]
    grad_arr = np.zeros((b, h, w), dtype=np.float64)
    cdef double[:, :, ::1] g = grad_arr
    cdef int r = k // 2
    cdef Py_ssize_t bi, y, x, yy, xx, c, cy, cx
    cdef int dy, dx
    cdef double loss = 0.0, col, t, f, diff, inv_w, sp = 2.0 * sigma_pt * sigma_pt, si2 = 2.0 * sigma_i * sigma_i

    for bi in range(b):
        for y in range(h):
            cy = min(y + r, h - 1) - max(y - r, 0) + 1
            for x in range(w):
                cx = min(x + r, w - 1) - max(x - r, 0) + 1
                inv_w = 1.0 / max(cy * cx - 1, 1)
                for dy in range(-r, r + 1):
                    yy = y + dy
                    if yy < 0 or yy >= h:
                        continue
                    for dx in range(-r, r + 1):
                        xx = x + dx
                        if (dy == 0 and dx == 0) or xx < 0 or xx >= w:
                            continue
                        col = 0.0
                        for c in range(nc):
                            t = iv[bi, y, x, c] - iv[bi, yy, xx, c]
                            col += t * t
                        f = exp(-(dy * dy + dx * dx) / sp - col / si2) * inv_w
                        diff = sv[bi, y, x] - sv[bi, yy, xx]
                        loss += fabs(diff) * f
                        if diff > 0:
                            g[bi, y, x] += f
                            g[bi, yy, xx] -= f
                        elif diff < 0:
                            g[bi, y, x] -= f
                            g[bi, yy, xx] += f
    return loss, grad_arr
