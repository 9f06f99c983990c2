"""Open slide-package format and region reads.

A slide package is a directory::

    <slide>/
      meta.json        {"format": "melanopipe-slide", "version": 1,
                        "slide_id": str, "base_mag": number,
                        "levels": [{"mag": number, "width": int,
                                    "height": int, "file": str}, ...]}
      level_40.png     8-bit RGB, lossless
      level_10.png
      level_2.5.png

Levels are listed in descending magnification and the first is the base.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from PIL import Image

from . import kernels
from .core import PatchRef, as_mag, mag_json, mag_str

FORMAT_NAME = "melanopipe-slide"
FORMAT_VERSION = 1
META_FILE = "meta.json"


class SlideFormatError(ValueError):
    """Package is missing or has malformed metadata."""


class SlideIntegrityError(ValueError):
    """Package metadata contradicts itself or its rasters."""


class RegionBoundsError(ValueError):
    """Requested footprint leaves the slide."""


@dataclass
class SlideLevel:
    mag: Fraction
    width: int
    height: int
    file: Optional[str] = None
    _pixels: Optional[np.ndarray] = field(default=None, repr=False)
    _loader: Optional[Callable[[], np.ndarray]] = field(default=None, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def pixels(self) -> np.ndarray:
        if self._pixels is None:
            with self._lock:
                if self._pixels is None:
                    arr = self._loader()
                    if arr.shape != (self.height, self.width, 3):
                        raise SlideIntegrityError(
                            f"level {mag_str(self.mag)}x raster is {arr.shape[1]}x{arr.shape[0]}, "
                            f"metadata says {self.width}x{self.height}")
                    arr.setflags(write=False)
                    self._pixels = arr
        return self._pixels


class SlidePyramid:
    """Multi-resolution RGB slide. Read-only once constructed."""

    def __init__(self, slide_id: str, base_mag, levels: Sequence[SlideLevel]):
        self.slide_id = str(slide_id)
        self.base_mag = as_mag(base_mag)
        self.levels = sorted(levels, key=lambda lv: lv.mag, reverse=True)
        _validate_levels(self.base_mag, self.levels)

    @classmethod
    def from_arrays(cls, slide_id: str, base_mag, arrays: dict) -> "SlidePyramid":
        """Build an in-memory pyramid from ``{mag: (H, W, 3) uint8}``."""
        levels = []
        for m, arr in arrays.items():
            arr = np.asarray(arr)
            if arr.dtype != np.uint8 or arr.ndim != 3 or arr.shape[2] != 3:
                raise SlideIntegrityError("levels must be (H, W, 3) uint8 arrays")
            arr = arr.copy()
            arr.setflags(write=False)
            levels.append(SlideLevel(as_mag(m), arr.shape[1], arr.shape[0], _pixels=arr))
        return cls(slide_id, base_mag, levels)

    @property
    def base(self) -> SlideLevel:
        return self.levels[0]

    @property
    def dimensions(self) -> tuple[int, int]:
        return self.base.width, self.base.height

    @property
    def mags(self) -> list[Fraction]:
        return [lv.mag for lv in self.levels]

    def level(self, mag) -> Optional[SlideLevel]:
        m = as_mag(mag)
        for lv in self.levels:
            if lv.mag == m:
                return lv
        return None

    def lowest_level(self) -> SlideLevel:
        return self.levels[-1]

    def plane_size(self, mag) -> tuple[int, int]:
        """Width and height of the image plane at ``mag`` (floor of base / factor)."""
        lv = self.level(mag)
        if lv is not None:
            return lv.width, lv.height
        f = self.base_mag / as_mag(mag)
        return int(self.base.width / f), int(self.base.height / f)

    def read_level(self, mag) -> np.ndarray:
        """Whole raster at ``mag``; synthesised by area averaging when not stored."""
        lv = self.level(mag)
        if lv is not None:
            return lv.pixels
        src, factor = self._source_for(as_mag(mag))
        return kernels.box_downsample(src.pixels, factor)

    def _source_for(self, m: Fraction) -> tuple[SlideLevel, int]:
        higher = [lv for lv in self.levels if lv.mag > m]
        if not higher:
            raise SlideIntegrityError(f"no stored level above {mag_str(m)}x to resample from")
        src = higher[-1]
        factor = src.mag / m
        if factor.denominator != 1:
            raise SlideIntegrityError(
                f"cannot area-average {mag_str(src.mag)}x down to {mag_str(m)}x (non-integer factor)")
        return src, int(factor)

    def read_region(self, ref: PatchRef) -> "RasterPatch":
        m = as_mag(ref.mag)
        to_level = m / self.base_mag
        side = ref.footprint
        x0, y0 = ref.x, ref.y
        if x0 < 0 or y0 < 0 or x0 + side > self.base.width or y0 + side > self.base.height:
            raise RegionBoundsError(
                f"patch {ref.patch_id} footprint ({x0},{y0})+{side} outside "
                f"{self.base.width}x{self.base.height}")
        lv = self.level(m)
        if lv is not None:
            lx, ly = x0 * to_level, y0 * to_level
            if lx.denominator != 1 or ly.denominator != 1:
                raise RegionBoundsError(f"patch origin ({x0},{y0}) is not on the {mag_str(m)}x pixel grid")
            lx, ly = int(lx), int(ly)
            if lx + ref.size > lv.width or ly + ref.size > lv.height:
                raise RegionBoundsError(f"patch {ref.patch_id} extends past the {mag_str(m)}x level")
            pix = lv.pixels[ly:ly + ref.size, lx:lx + ref.size].copy()
        else:
            src, f = self._source_for(m)
            s_scale = src.mag / self.base_mag
            sx, sy = x0 * s_scale, y0 * s_scale
            if sx.denominator != 1 or sy.denominator != 1:
                raise RegionBoundsError(f"patch origin ({x0},{y0}) is not on the {mag_str(src.mag)}x pixel grid")
            sx, sy, n = int(sx), int(sy), ref.size * f
            if sx + n > src.width or sy + n > src.height:
                raise RegionBoundsError(f"patch {ref.patch_id} extends past the {mag_str(src.mag)}x level")
            pix = kernels.box_downsample(src.pixels[sy:sy + n, sx:sx + n], f)
        return RasterPatch(pix, ref)

    def __repr__(self):
        lv = ", ".join(f"{mag_str(l.mag)}x:{l.width}x{l.height}" for l in self.levels)
        return f"SlidePyramid({self.slide_id!r}, base={mag_str(self.base_mag)}x, levels=[{lv}])"


@dataclass(frozen=True)
class RasterPatch:
    pixels: np.ndarray
    ref: PatchRef

    def __post_init__(self):
        if self.pixels.shape != (self.ref.size, self.ref.size, 3):
            raise ValueError(f"patch buffer {self.pixels.shape} does not match size {self.ref.size}")


def _validate_levels(base_mag: Fraction, levels: list[SlideLevel]) -> None:
    if not levels:
        raise SlideIntegrityError("pyramid has no levels")
    base = levels[0]
    if base.mag != base_mag:
        raise SlideIntegrityError(
            f"base level {mag_str(base_mag)}x missing (highest stored is {mag_str(base.mag)}x)")
    seen = set()
    for lv in levels:
        if lv.mag in seen:
            raise SlideIntegrityError(f"duplicate level {mag_str(lv.mag)}x")
        seen.add(lv.mag)
        f = base_mag / lv.mag
        for got, full in ((lv.width, base.width), (lv.height, base.height)):
            if abs(got - full / f) > 1:
                raise SlideIntegrityError(
                    f"level {mag_str(lv.mag)}x is {lv.width}x{lv.height}; expected about "
                    f"{float(base.width / f):g}x{float(base.height / f):g}")


def level_filename(mag) -> str:
    return f"level_{mag_str(mag).replace('/', '_')}.png"


def _png_loader(path: Path) -> Callable[[], np.ndarray]:
    def load() -> np.ndarray:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise SlideIntegrityError(f"{path.name} is {im.mode}, expected 8-bit RGB")
            return np.asarray(im, dtype=np.uint8).copy()
    return load


def open_slide(path: Union[str, Path]) -> SlidePyramid:
    root = Path(path)
    meta_path = root / META_FILE
    if not meta_path.is_file():
        raise SlideFormatError(f"{root}: missing {META_FILE}")
    try:
        meta = json.loads(meta_path.read_text())
        if meta.get("format") != FORMAT_NAME:
            raise SlideFormatError(f"{meta_path}: not a {FORMAT_NAME} document")
        slide_id = str(meta["slide_id"])
        base_mag = as_mag(meta["base_mag"])
        entries = meta["levels"]
        levels = []
        for e in entries:
            f = root / e["file"]
            if not f.is_file():
                raise SlideFormatError(f"{root}: level raster {e['file']} missing")
            levels.append(SlideLevel(as_mag(e["mag"]), int(e["width"]), int(e["height"]),
                                     file=e["file"], _loader=_png_loader(f)))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, (SlideFormatError, SlideIntegrityError)):
            raise
        raise SlideFormatError(f"{meta_path}: {exc}") from exc
    for lv in levels:
        with Image.open(root / lv.file) as im:
            if im.size != (lv.width, lv.height):
                raise SlideIntegrityError(
                    f"{lv.file} is {im.size[0]}x{im.size[1]}, metadata says {lv.width}x{lv.height}")
    return SlidePyramid(slide_id, base_mag, levels)


def write_slide_package(pyramid: SlidePyramid, path: Union[str, Path], compress_level: int = 1) -> Path:
    _validate_levels(pyramid.base_mag, pyramid.levels)
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for lv in pyramid.levels:
        name = level_filename(lv.mag)
        Image.fromarray(np.ascontiguousarray(lv.pixels), mode="RGB").save(
            root / name, format="PNG", compress_level=compress_level)
        entries.append({"mag": mag_json(lv.mag), "width": lv.width, "height": lv.height, "file": name})
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "slide_id": pyramid.slide_id,
        "base_mag": mag_json(pyramid.base_mag),
        "levels": entries,
    }
    (root / META_FILE).write_text(json.dumps(meta, indent=2) + "\n")
    return root
