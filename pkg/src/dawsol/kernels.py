"""Numeric inner loops: three-way Lloyd iteration, threshold-sweep pixel counts,
and largest-component box extraction.

Each kernel has a ``*_numba`` and a ``*_numpy`` implementation with identical
semantics; the unsuffixed name is bound according to ``_jit.USE_NUMBA``.
"""

import numpy as np
from scipy import ndimage

from ._jit import USE_NUMBA, jit

# --------------------------------------------------------------------------
# Lloyd iteration with three clusters
# --------------------------------------------------------------------------


@jit
def lloyd3_numba(points, init, max_iters, tol):
    n, c = points.shape
    k = init.shape[0]
    centers = init.copy()
    labels = np.zeros(n, dtype=np.int64)
    history = np.empty(max_iters + 1, dtype=np.float64)
    dist = np.empty(k, dtype=np.float64)
    n_hist = 0
    it = 0
    while it < max_iters:
        obj = 0.0
        for i in range(n):
            best = 0
            for j in range(k):
                d = 0.0
                for f in range(c):
                    diff = points[i, f] - centers[j, f]
                    d += diff * diff
                dist[j] = d
                if d < dist[best]:
                    best = j
            labels[i] = best
            obj += dist[best]
        history[n_hist] = obj
        n_hist += 1

        new = np.zeros_like(centers)
        counts = np.zeros(k, dtype=np.int64)
        for i in range(n):
            counts[labels[i]] += 1
            for f in range(c):
                new[labels[i], f] += points[i, f]
        for j in range(k):
            if counts[j] > 0:
                for f in range(c):
                    new[j, f] /= counts[j]
            else:
                far = 0
                far_d = -1.0
                for i in range(n):
                    d = 0.0
                    for f in range(c):
                        diff = points[i, f] - centers[j, f]
                        d += diff * diff
                    if d > far_d:
                        far_d = d
                        far = i
                for f in range(c):
                    new[j, f] = points[far, f]

        shift = 0.0
        scale = 0.0
        for j in range(k):
            for f in range(c):
                diff = new[j, f] - centers[j, f]
                shift += diff * diff
                scale += centers[j, f] * centers[j, f]
        centers = new
        it += 1
        if np.sqrt(shift) < tol * max(np.sqrt(scale), 1e-12):
            break

    obj = 0.0
    for i in range(n):
        best = 0
        for j in range(k):
            d = 0.0
            for f in range(c):
                diff = points[i, f] - centers[j, f]
                d += diff * diff
            dist[j] = d
            if d < dist[best]:
                best = j
        labels[i] = best
        obj += dist[best]
    history[n_hist] = obj
    n_hist += 1
    return labels, centers, history[:n_hist], it


def _sqdist(points, centers):
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkc,nkc->nk", diff, diff)


def lloyd3_numpy(points, init, max_iters, tol):
    n = points.shape[0]
    k = init.shape[0]
    centers = init.copy()
    history = []
    it = 0
    while it < max_iters:
        dist = _sqdist(points, centers)
        labels = np.argmin(dist, axis=1)
        history.append(dist[np.arange(n), labels].sum())

        counts = np.bincount(labels, minlength=k)
        new = np.zeros_like(centers)
        np.add.at(new, labels, points)
        filled = counts > 0
        new[filled] /= counts[filled, None]
        for j in np.flatnonzero(~filled):
            new[j] = points[np.argmax(dist[:, j])]

        shift = np.sqrt(((new - centers) ** 2).sum())
        scale = np.sqrt((centers**2).sum())
        centers = new
        it += 1
        if shift < tol * max(scale, 1e-12):
            break

    dist = _sqdist(points, centers)
    labels = np.argmin(dist, axis=1)
    history.append(dist[np.arange(n), labels].sum())
    return labels.astype(np.int64), centers, np.asarray(history), it


# --------------------------------------------------------------------------
# Threshold sweep: per-threshold predicted-positive and true-positive counts
# --------------------------------------------------------------------------


@jit
def sweep_counts_numba(scores, gt, thresholds):
    t = thresholds.shape[0]
    hist_all = np.zeros(t + 1, dtype=np.int64)
    hist_fg = np.zeros(t + 1, dtype=np.int64)
    for i in range(scores.shape[0]):
        # number of thresholds <= score
        idx = np.searchsorted(thresholds, scores[i], side="right")
        hist_all[idx] += 1
        if gt[i]:
            hist_fg[idx] += 1
    pred = np.zeros(t, dtype=np.int64)
    tp = np.zeros(t, dtype=np.int64)
    acc_all = 0
    acc_fg = 0
    for j in range(t, 0, -1):
        acc_all += hist_all[j]
        acc_fg += hist_fg[j]
        pred[j - 1] = acc_all
        tp[j - 1] = acc_fg
    return pred, tp


def sweep_counts_numpy(scores, gt, thresholds):
    t = thresholds.shape[0]
    idx = np.searchsorted(thresholds, scores, side="right")
    hist_all = np.bincount(idx, minlength=t + 1)
    hist_fg = np.bincount(idx[gt], minlength=t + 1)
    pred = np.cumsum(hist_all[::-1])[::-1][1:]
    tp = np.cumsum(hist_fg[::-1])[::-1][1:]
    return pred.astype(np.int64), tp.astype(np.int64)


# --------------------------------------------------------------------------
# Largest 4-connected component -> inclusive box (x0, y0, x1, y1)
# --------------------------------------------------------------------------


@jit
def largest_box_numba(mask):
    h, w = mask.shape
    seen = np.zeros((h, w), dtype=np.bool_)
    stack = np.empty(h * w, dtype=np.int64)
    best = np.array([-1, -1, -1, -1], dtype=np.int64)
    best_size = 0
    for sy in range(h):
        for sx in range(w):
            if not mask[sy, sx] or seen[sy, sx]:
                continue
            seen[sy, sx] = True
            top = 0
            stack[top] = sy * w + sx
            top += 1
            size = 0
            x0, y0, x1, y1 = sx, sy, sx, sy
            while top > 0:
                top -= 1
                p = stack[top]
                y = p // w
                x = p - y * w
                size += 1
                x0 = min(x0, x)
                x1 = max(x1, x)
                y0 = min(y0, y)
                y1 = max(y1, y)
                if y > 0 and mask[y - 1, x] and not seen[y - 1, x]:
                    seen[y - 1, x] = True
                    stack[top] = p - w
                    top += 1
                if y < h - 1 and mask[y + 1, x] and not seen[y + 1, x]:
                    seen[y + 1, x] = True
                    stack[top] = p + w
                    top += 1
                if x > 0 and mask[y, x - 1] and not seen[y, x - 1]:
                    seen[y, x - 1] = True
                    stack[top] = p - 1
                    top += 1
                if x < w - 1 and mask[y, x + 1] and not seen[y, x + 1]:
                    seen[y, x + 1] = True
                    stack[top] = p + 1
                    top += 1
            if size > best_size:
                best_size = size
                best[0] = x0
                best[1] = y0
                best[2] = x1
                best[3] = y1
    return best


_FOUR = ndimage.generate_binary_structure(2, 1)


def largest_box_numpy(mask):
    labels, count = ndimage.label(mask, structure=_FOUR)
    if count == 0:
        return np.array([-1, -1, -1, -1], dtype=np.int64)
    # ndimage numbers components in raster order of their first pixel, so argmax
    # breaks size ties the same way as the flood fill.
    sizes = np.bincount(labels.ravel())[1:]
    sl = ndimage.find_objects(labels)[int(np.argmax(sizes))]
    return np.array([sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1], dtype=np.int64)


@jit
def sweep_boxes_numba(scores, thresholds):
    out = np.empty((thresholds.shape[0], 4), dtype=np.int64)
    for t in range(thresholds.shape[0]):
        out[t] = largest_box_numba(scores >= thresholds[t])
    return out


def sweep_boxes_numpy(scores, thresholds):
    out = np.empty((thresholds.shape[0], 4), dtype=np.int64)
    for t in range(thresholds.shape[0]):
        out[t] = largest_box_numpy(scores >= thresholds[t])
    return out


if USE_NUMBA:
    lloyd3 = lloyd3_numba
    sweep_counts = sweep_counts_numba
    largest_box = largest_box_numba
    sweep_boxes = sweep_boxes_numba
else:
    lloyd3 = lloyd3_numpy
    sweep_counts = sweep_counts_numpy
    largest_box = largest_box_numpy
    sweep_boxes = sweep_boxes_numpy
