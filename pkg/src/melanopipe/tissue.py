"""Tissue segmentation and valid-patch grid extraction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image, PngImagePlugin

from . import kernels
from .core import PatchRef, as_mag, make_patch_id, mag_json, mag_str
from .slide_io import SlidePyramid


@dataclass(frozen=True)
class TissueMask:
    mask: np.ndarray  # bool (H, W), True = tissue
    mag: Fraction
    slide_id: str = ""

    @property
    def shape(self):
        return self.mask.shape


def segment_tissue(rgb: np.ndarray, hue_lo: int = 100, hue_hi: int = 179) -> np.ndarray:
    """Boolean tissue mask: hue (half-degree scale) within [hue_lo, hue_hi].

    Zero-saturation pixels (white, grays, black) are always background.
    """
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError("segment_tissue expects an (H, W, 3) uint8 image")
    if rgb.size == 0:
        return np.zeros(rgb.shape[:2], dtype=bool)
    return kernels.hue_mask(rgb, int(hue_lo), int(hue_hi))


def refine_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Opening then closing with a disc of the given radius."""
    mask = np.asarray(mask, dtype=bool)
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0 or mask.size == 0:
        return mask.copy()
    opened = kernels.dilate(kernels.erode(mask, radius), radius)
    return kernels.erode(kernels.dilate(opened, radius), radius)


def compute_tissue_mask(slide: SlidePyramid, hue_lo=100, hue_hi=179, radius=5, mag=None) -> TissueMask:
    """Segment and refine at ``mag`` (default: lowest stored level)."""
    m = slide.lowest_level().mag if mag is None else as_mag(mag)
    raw = segment_tissue(slide.read_level(m), hue_lo, hue_hi)
    return TissueMask(refine_mask(raw, radius), m, slide.slide_id)


@dataclass(frozen=True)
class PatchGrid:
    slide_id: str
    mag: Fraction
    patch_size: int
    base_mag: Fraction
    patches: tuple[PatchRef, ...]
    fractions: tuple[float, ...]

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    @property
    def patch_ids(self) -> list[str]:
        return [p.patch_id for p in self.patches]


def _axis_weights(n_tiles: int, tile: Fraction, n_pix: int) -> np.ndarray:
    """Integer overlap lengths (scaled by the tile denominator) of each tile
    interval [i*tile, (i+1)*tile) with each unit pixel interval."""
    q = tile.denominator
    w = np.zeros((n_tiles, n_pix), dtype=np.int64)
    for i in range(n_tiles):
        a, b = i * tile.numerator, (i + 1) * tile.numerator  # in 1/q pixel units
        p0, p1 = a // q, min(-(-b // q), n_pix)
        for p in range(p0, p1):
            lo, hi = max(a, p * q), min(b, (p + 1) * q)
            if hi > lo:
                w[i, p] = hi - lo
    return w


def tissue_fractions(mask: TissueMask, plane: tuple[int, int], mag, patch_size: int):
    """Area-weighted tissue fraction of every grid tile of the ``mag`` plane.

    Returns an (rows, cols) float array; the mask is treated as a
    nearest-neighbour raster so a tile covering part of a mask pixel takes
    that pixel's value for exactly the covered area.
    """
    m = as_mag(mag)
    cols, rows = plane[0] // patch_size, plane[1] // patch_size
    scale = mask.mag / m  # mask pixels per plane pixel
    tile = patch_size * scale
    h, w = mask.mask.shape  # mask pixels past the raster edge count as background
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols))
    wy = _axis_weights(rows, tile, h)
    wx = _axis_weights(cols, tile, w)
    counts = wy @ mask.mask.astype(np.int64) @ wx.T
    area = tile.numerator * tile.numerator
    return counts / area


def extract_grid(slide: SlidePyramid, mask: TissueMask, mag=10, patch_size: int = 256,
                 min_tissue_frac: float = 0.7) -> PatchGrid:
    """Non-overlapping ``patch_size`` tiles of the ``mag`` plane, origin (0, 0),
    kept when their tissue fraction reaches ``min_tissue_frac``. Row-major."""
    m = as_mag(mag)
    if mask.slide_id and mask.slide_id != slide.slide_id:
        raise ValueError(f"mask belongs to {mask.slide_id!r}, not {slide.slide_id!r}")
    expect = slide.plane_size(mask.mag)
    if (mask.mask.shape[1], mask.mask.shape[0]) != expect:
        raise ValueError(
            f"mask is {mask.mask.shape[1]}x{mask.mask.shape[0]} but the {mag_str(mask.mag)}x "
            f"plane is {expect[0]}x{expect[1]}")
    foot = patch_size * slide.base_mag / m
    if foot.denominator != 1:
        raise ValueError(f"{patch_size}px at {mag_str(m)}x is not a whole number of base pixels")
    foot = int(foot)
    fr = tissue_fractions(mask, slide.plane_size(m), m, patch_size)
    patches, fracs = [], []
    for j, i in zip(*np.nonzero(fr >= min_tissue_frac)):
        x, y = int(i) * foot, int(j) * foot
        patches.append(PatchRef(slide.slide_id, make_patch_id(m, x, y), x, y, patch_size, m, slide.base_mag))
        fracs.append(float(fr[j, i]))
    return PatchGrid(slide.slide_id, m, patch_size, slide.base_mag, tuple(patches), tuple(fracs))


def grid_from_refs(slide_id: str, mag, patch_size: int, base_mag, refs: Sequence[PatchRef],
                   fractions: Sequence[float]) -> PatchGrid:
    return PatchGrid(slide_id, as_mag(mag), patch_size, as_mag(base_mag), tuple(refs), tuple(fractions))


# -- persistence --------------------------------------------------------------

def save_mask(mask: TissueMask, path: Union[str, Path]) -> Path:
    path = Path(path)
    info = PngImagePlugin.PngInfo()
    info.add_text("mag", mag_str(mask.mag))
    info.add_text("slide_id", mask.slide_id)
    Image.fromarray(mask.mask.astype(bool)).convert("1").save(path, format="PNG", pnginfo=info)
    return path


def load_mask(path: Union[str, Path]) -> TissueMask:
    with Image.open(path) as im:
        text = dict(getattr(im, "text", {}) or {})
        arr = np.asarray(im.convert("1"), dtype=bool).copy()
    if "mag" not in text:
        raise ValueError(f"{path}: mask PNG lacks the 'mag' text chunk")
    return TissueMask(arr, as_mag(text["mag"]), text.get("slide_id", ""))


def save_grid(grid: PatchGrid, path: Union[str, Path]) -> Path:
    """JSON lines: a header record, then one record per patch in grid order."""
    path = Path(path)
    lines = [json.dumps({"kind": "grid", "slide_id": grid.slide_id, "mag": mag_json(grid.mag),
                         "size": grid.patch_size, "base_mag": mag_json(grid.base_mag)})]
    for p, f in zip(grid.patches, grid.fractions):
        lines.append(json.dumps({"patch_id": p.patch_id, "x": p.x, "y": p.y, "mag": mag_json(p.mag),
                                 "size": p.size, "tissue_fraction": f}))
    path.write_text("\n".join(lines) + "\n")
    return path


def load_grid(path: Union[str, Path]) -> PatchGrid:
    rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    if not rows or rows[0].get("kind") != "grid":
        raise ValueError(f"{path}: missing grid header record")
    head = rows[0]
    base = as_mag(head["base_mag"])
    refs, fracs = [], []
    for r in rows[1:]:
        refs.append(PatchRef(head["slide_id"], r["patch_id"], int(r["x"]), int(r["y"]), int(r["size"]),
                             as_mag(r["mag"]), base))
        fracs.append(float(r["tissue_fraction"]))
    return grid_from_refs(head["slide_id"], head["mag"], int(head["size"]), base, refs, fracs)
