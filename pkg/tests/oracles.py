"""Slow, independent reference implementations used as test oracles."""

import math

import numpy as np


def midranks(values):
    """O(n^2) midrank: 1 + #smaller + (#equal - 1) / 2."""
    v = list(map(float, values))
    n = len(v)
    out = []
    for x in v:
        less = sum(1 for y in v if y < x)
        eq = sum(1 for y in v if y == x)
        out.append(1.0 + less + (eq - 1) / 2.0)
    if n == 1:
        return np.zeros(1)
    return (np.array(out) - 1.0) / (n - 1)


def dilate(m):
    m = np.asarray(m, dtype=bool)
    h, w = m.shape
    out = np.zeros_like(m)
    for y in range(h):
        for x in range(w):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and m[yy, xx]:
                        out[y, x] = True
    return out


def iou(a, b):
    inter = union = 0
    for x, y in zip(np.ravel(a), np.ravel(b)):
        inter += bool(x) and bool(y)
        union += bool(x) or bool(y)
    return 1.0 if union == 0 else inter / union


def psnr(pred, truth, region=None):
    total, count = 0.0, 0
    h, w, _ = pred.shape
    for y in range(h):
        for x in range(w):
            if region is not None and not region[y, x]:
                continue
            for c in range(3):
                total += (float(pred[y, x, c]) - float(truth[y, x, c])) ** 2
                count += 1
    mse = max(total / count, 1e-10)
    return 10.0 * math.log10(1.0 / mse)


def cluster_means(ranks, ids, skip):
    """{(patch, entity): mean} via a dict of running sums."""
    acc = {}
    for p in range(ids.shape[0]):
        for r, e in zip(ranks[p].ravel(), ids[p].ravel()):
            if int(e) == skip:
                continue
            s, n = acc.get((p, int(e)), (0.0, 0))
            acc[(p, int(e))] = (s + float(r), n + 1)
    return {key: s / n for key, (s, n) in acc.items()}


def label(ranks, ids, flags, threshold, dilation, skip):
    means = cluster_means(ranks, ids, skip)
    d = np.ones(ids.shape, dtype=np.uint8)
    for p in range(ids.shape[0]):
        for y in range(ids.shape[1]):
            for x in range(ids.shape[2]):
                e = int(ids[p, y, x])
                if e != skip and not flags[(p, e)] and means[(p, e)] > threshold:
                    d[p, y, x] = 0
        if dilation:
            d[p][dilate(d[p] == 0)] = 0
    return d.ravel()


def quantile(values, q):
    s = sorted(map(float, np.ravel(values)))
    pos = q * (len(s) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


def patch_weights(r, q, s, pm, threshold=None):
    r = np.asarray(r, dtype=float)
    h, w = r.shape
    thr = quantile(r, q) if threshold is None else threshold
    st1 = r <= thr
    st2 = np.zeros_like(st1)
    for y in range(h):
        for x in range(w):
            ys = range(max(0, y - 1), min(h, y + 2))
            xs = range(max(0, x - 1), min(w, x + 2))
            cells = [st1[a, b] for a in ys for b in xs]
            st2[y, x] = sum(cells) / len(cells) >= s
    out = np.zeros((h, w), dtype=np.uint8)
    for py in range(0, h, 8):
        for px in range(0, w, 8):
            ys = range(max(0, py - 4), min(h, py + 12))
            xs = range(max(0, px - 4), min(w, px + 12))
            cells = [st2[a, b] for a in ys for b in xs]
            out[py : py + 8, px : px + 8] = sum(cells) / len(cells) >= pm
    return out
