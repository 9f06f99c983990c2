"""numba-compiled kernels; same contracts as the numpy versions."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _hue_mask(rgb, hue_lo, hue_hi, out):
    h, w = out.shape
    for y in range(h):
        for x in range(w):
            r = np.int32(rgb[y, x, 0])
            g = np.int32(rgb[y, x, 1])
            b = np.int32(rgb[y, x, 2])
            mx = max(r, g, b)
            d = mx - min(r, g, b)
            if d == 0:
                out[y, x] = False
                continue
            if mx == r:
                hue = (60 * (g - b) + d) // (2 * d)
            elif mx == g:
                hue = (60 * (b - r) + d) // (2 * d) + 60
            else:
                hue = (60 * (r - g) + d) // (2 * d) + 120
            hue = hue % 180
            out[y, x] = hue_lo <= hue <= hue_hi
    return out


def hue_mask(rgb, hue_lo, hue_hi):
    out = np.empty(rgb.shape[:2], dtype=np.bool_)
    return _hue_mask(np.ascontiguousarray(rgb), np.int32(hue_lo), np.int32(hue_hi), out)


@njit(cache=True, nogil=True)
def _morph(mask, radius, erode_op):
    # a pixel flips when any disc pixel holds the opposite value; each disc
    # row is a horizontal span, checked in O(1) with per-row prefix counts
    h, w = mask.shape
    out = np.empty_like(mask)
    pre = np.zeros((h, w + 1), dtype=np.int32)
    for y in range(h):
        for x in range(w):
            pre[y, x + 1] = pre[y, x] + (1 if mask[y, x] != erode_op else 0)
    half = np.empty(2 * radius + 1, dtype=np.int64)
    for dy in range(-radius, radius + 1):
        k = 0
        while (k + 1) * (k + 1) + dy * dy <= radius * radius:
            k += 1
        half[dy + radius] = k
    for y in range(h):
        for x in range(w):
            hit = erode_op
            for dy in range(-radius, radius + 1):
                yy = y + dy
                if yy < 0 or yy >= h:
                    continue
                k = half[dy + radius]
                a = max(x - k, 0)
                b = min(x + k + 1, w)
                if pre[yy, b] - pre[yy, a] > 0:
                    hit = not erode_op
                    break
            out[y, x] = hit
    return out


def erode(mask, radius):
    return _morph(np.ascontiguousarray(mask, dtype=np.bool_), int(radius), True)


def dilate(mask, radius):
    return _morph(np.ascontiguousarray(mask, dtype=np.bool_), int(radius), False)


@njit(cache=True, nogil=True)
def _box_downsample(img, f, out):
    h, w, c = out.shape
    n = f * f
    half = n // 2
    for y in range(h):
        for x in range(w):
            for k in range(c):
                s = 0
                for j in range(f):
                    for i in range(f):
                        s += np.int64(img[y * f + j, x * f + i, k])
                out[y, x, k] = (s + half) // n
    return out


def box_downsample(img, factor):
    f = int(factor)
    out = np.empty((img.shape[0] // f, img.shape[1] // f, img.shape[2]), dtype=np.uint8)
    return _box_downsample(np.ascontiguousarray(img), f, out)


@njit(cache=True, nogil=True)
def _tile_coverage(rects, x0, y0, step, ncols, nrows, out):
    k = rects.shape[0]
    xs = np.empty(2 * k + 2, dtype=np.int64)
    ys = np.empty(2 * k + 2, dtype=np.int64)
    sel = np.empty(k, dtype=np.int64)
    for j in range(nrows):
        ty0 = y0 + j * step
        ty1 = ty0 + step
        for i in range(ncols):
            tx0 = x0 + i * step
            tx1 = tx0 + step
            m = 0
            for q in range(k):
                if rects[q, 0] < tx1 and rects[q, 2] > tx0 and rects[q, 1] < ty1 and rects[q, 3] > ty0:
                    sel[m] = q
                    m += 1
            if m == 0:
                out[j, i] = 0
                continue
            # compress the clipped rectangle edges of this tile only
            xs[0] = tx0
            xs[1] = tx1
            ys[0] = ty0
            ys[1] = ty1
            for t in range(m):
                q = sel[t]
                xs[2 + 2 * t] = min(max(rects[q, 0], tx0), tx1)
                xs[3 + 2 * t] = min(max(rects[q, 2], tx0), tx1)
                ys[2 + 2 * t] = min(max(rects[q, 1], ty0), ty1)
                ys[3 + 2 * t] = min(max(rects[q, 3], ty0), ty1)
            ux = np.unique(xs[:2 * m + 2])
            uy = np.unique(ys[:2 * m + 2])
            area = 0
            for a in range(uy.shape[0] - 1):
                cy = uy[a]
                for b in range(ux.shape[0] - 1):
                    cx = ux[b]
                    for t in range(m):
                        q = sel[t]
                        if rects[q, 0] <= cx < rects[q, 2] and rects[q, 1] <= cy < rects[q, 3]:
                            area += (uy[a + 1] - cy) * (ux[b + 1] - cx)
                            break
            out[j, i] = area
    return out


def tile_coverage(rects, x0, y0, step, ncols, nrows):
    out = np.zeros((nrows, ncols), dtype=np.int64)
    r = np.ascontiguousarray(np.asarray(rects, dtype=np.int64).reshape(-1, 4))
    if nrows == 0 or ncols == 0 or r.shape[0] == 0:
        return out
    return _tile_coverage(r, np.int64(x0), np.int64(y0), np.int64(step), ncols, nrows, out)
