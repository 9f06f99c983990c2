"""Pure-numpy reference kernels."""

import numpy as np


def hue_half_degrees(rgb):
    """Integer hue on the half-degree scale [0, 180) and a saturation>0 flag.

    Hue is rounded half-up from the exact rational hexcone value.
    """
    c = rgb.astype(np.int32)
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    d = mx - mn
    chroma = d > 0
    dd = np.where(chroma, d, 1)
    h_r = (60 * (g - b) + dd) // (2 * dd)
    h_g = (60 * (b - r) + dd) // (2 * dd) + 60
    h_b = (60 * (r - g) + dd) // (2 * dd) + 120
    h = np.where(mx == r, h_r, np.where(mx == g, h_g, h_b)) % 180
    return h.astype(np.int32), chroma


def hue_mask(rgb, hue_lo, hue_hi):
    h, chroma = hue_half_degrees(rgb)
    return chroma & (h >= hue_lo) & (h <= hue_hi)


def disc_offsets(radius):
    r = int(radius)
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    keep = dx * dx + dy * dy <= r * r
    return np.stack([dy[keep], dx[keep]], axis=1).astype(np.int64)


def erode(mask, radius):
    # outside the raster counts as foreground so erosion/dilation stay adjoint
    if radius == 0:
        return mask.copy()
    h, w = mask.shape
    padded = np.pad(mask, radius, constant_values=True)
    out = np.ones_like(mask, dtype=bool)
    for dy, dx in disc_offsets(radius):
        out &= padded[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
    return out


def dilate(mask, radius):
    if radius == 0:
        return mask.copy()
    h, w = mask.shape
    padded = np.pad(mask, radius, constant_values=False)
    out = np.zeros_like(mask, dtype=bool)
    for dy, dx in disc_offsets(radius):
        out |= padded[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
    return out


def box_downsample(img, factor):
    """Area-mean downsample of an (H, W, C) uint8 image by an integer factor.

    Trailing rows/columns that do not fill a whole block are dropped; means are
    rounded half-up.
    """
    f = int(factor)
    h, w = img.shape[0] // f, img.shape[1] // f
    block = img[:h * f, :w * f].astype(np.int64)
    s = block.reshape(h, f, w, f, img.shape[2]).sum(axis=(1, 3))
    n = f * f
    return ((s + n // 2) // n).astype(np.uint8)


def tile_coverage(rects, x0, y0, step, ncols, nrows):
    """Area of the union of ``rects`` inside each tile of a regular grid.

    ``rects`` is (k, 4) int64 of half-open (x0, y0, x1, y1). Tile (j, i) spans
    [x0 + i*step, x0 + (i+1)*step) x [y0 + j*step, ...). Exact int64 areas.
    """
    out = np.zeros((nrows, ncols), dtype=np.int64)
    if nrows == 0 or ncols == 0 or len(rects) == 0:
        return out
    gx = x0 + step * np.arange(ncols + 1, dtype=np.int64)
    gy = y0 + step * np.arange(nrows + 1, dtype=np.int64)
    r = np.asarray(rects, dtype=np.int64).copy()
    r[:, 0] = np.clip(r[:, 0], gx[0], gx[-1])
    r[:, 2] = np.clip(r[:, 2], gx[0], gx[-1])
    r[:, 1] = np.clip(r[:, 1], gy[0], gy[-1])
    r[:, 3] = np.clip(r[:, 3], gy[0], gy[-1])
    r = r[(r[:, 2] > r[:, 0]) & (r[:, 3] > r[:, 1])]
    if len(r) == 0:
        return out
    xs = np.unique(np.concatenate([gx, r[:, 0], r[:, 2]]))
    ys = np.unique(np.concatenate([gy, r[:, 1], r[:, 3]]))
    ix0, ix1 = np.searchsorted(xs, r[:, 0]), np.searchsorted(xs, r[:, 2])
    iy0, iy1 = np.searchsorted(ys, r[:, 1]), np.searchsorted(ys, r[:, 3])
    diff = np.zeros((len(ys), len(xs)), dtype=np.int64)
    np.add.at(diff, (iy0, ix0), 1)
    np.add.at(diff, (iy0, ix1), -1)
    np.add.at(diff, (iy1, ix0), -1)
    np.add.at(diff, (iy1, ix1), 1)
    count = diff.cumsum(axis=0).cumsum(axis=1)[:-1, :-1]
    area = np.where(count > 0, np.diff(ys)[:, None] * np.diff(xs)[None, :], 0)
    prefix = np.zeros((len(ys), len(xs)), dtype=np.int64)
    prefix[1:, 1:] = area.cumsum(axis=0).cumsum(axis=1)
    ax, ay = np.searchsorted(xs, gx), np.searchsorted(ys, gy)
    p = prefix[np.ix_(ay, ax)]
    return p[1:, 1:] - p[:-1, 1:] - p[1:, :-1] + p[:-1, :-1]
