import json
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np
import pytest

from melanopipe.core import PatchRef
from melanopipe.slide_io import (RegionBoundsError, SlideFormatError, SlideIntegrityError, SlidePyramid, open_slide,
                                 write_slide_package)


def pyramid(rng, w=64, h=48, mags=(40, 10, 2.5)):
    base = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    arrays = {}
    for m in mags:
        f = int(40 / Fraction(str(m)))
        arrays[m] = base[::f, ::f].copy()
    return SlidePyramid.from_arrays("s1", 40, arrays)


def naive_downsample(img, f):
    h, w = img.shape[0] // f, img.shape[1] // f
    out = np.zeros((h, w, 3), dtype=np.uint8)
    for y in range(h):
        for x in range(w):
            for c in range(3):
                total = 0
                for dy in range(f):
                    for dx in range(f):
                        total += int(img[y * f + dy, x * f + dx, c])
                out[y, x, c] = int(Fraction(total, f * f) + Fraction(1, 2))  # half-up
    return out


def test_open_three_levels(tmp_path, rng):
    write_slide_package(pyramid(rng), tmp_path / "s1")
    slide = open_slide(tmp_path / "s1")
    assert slide.mags == [40, 10, Fraction(5, 2)]
    assert slide.dimensions == (64, 48)


def test_missing_metadata_is_format_error(tmp_path, rng):
    write_slide_package(pyramid(rng), tmp_path / "s1")
    (tmp_path / "s1" / "meta.json").unlink()
    with pytest.raises(SlideFormatError):
        open_slide(tmp_path / "s1")


def test_bad_level_dimensions_is_integrity_error(tmp_path, rng):
    write_slide_package(pyramid(rng), tmp_path / "s1")
    meta_path = tmp_path / "s1" / "meta.json"
    meta = json.loads(meta_path.read_text())
    for lv in meta["levels"]:
        if lv["mag"] == 10:
            lv["width"] = 10
    meta_path.write_text(json.dumps(meta))
    with pytest.raises(SlideIntegrityError):
        open_slide(tmp_path / "s1")
    with pytest.raises(SlideIntegrityError):
        SlidePyramid.from_arrays("x", 40, {40: np.zeros((64, 64, 3), np.uint8), 10: np.zeros((16, 10, 3), np.uint8)})


def test_read_stored_level_is_bit_exact(rng):
    slide = pyramid(rng)
    patch = slide.read_region(PatchRef("s1", "p", 16, 8, 4, Fraction(10)))
    assert np.array_equal(patch.pixels, slide.level(10).pixels[2:6, 4:8])


def test_missing_level_is_area_mean(rng):
    img = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
    slide = SlidePyramid.from_arrays("s", 40, {40: img})
    patch = slide.read_region(PatchRef("s", "p", 0, 0, 2, Fraction(20)))
    assert np.array_equal(patch.pixels, naive_downsample(img, 2))
    assert np.array_equal(slide.read_level(20), naive_downsample(img, 2))


def test_region_independent_of_other_levels(rng):
    full = pyramid(rng)
    only = SlidePyramid.from_arrays("s1", 40, {40: full.base.pixels, 10: full.level(10).pixels})
    ref = PatchRef("s1", "p", 8, 4, 3, Fraction(10))
    assert np.array_equal(full.read_region(ref).pixels, only.read_region(ref).pixels)


def test_out_of_bounds_region(rng):
    slide = pyramid(rng)
    with pytest.raises(RegionBoundsError):
        slide.read_region(PatchRef("s1", "p", 48, 0, 8, Fraction(10)))
    with pytest.raises(RegionBoundsError):
        slide.read_region(PatchRef("s1", "p", -4, 0, 1, Fraction(10)))


def test_round_trip(tmp_path, rng):
    slide = pyramid(rng)
    back = open_slide(write_slide_package(slide, tmp_path / "rt"))
    assert back.slide_id == slide.slide_id and back.base_mag == slide.base_mag
    for a, b in zip(slide.levels, back.levels):
        assert (a.mag, a.width, a.height) == (b.mag, b.width, b.height)
        assert np.array_equal(a.pixels, b.pixels)


def test_unwritable_destination(tmp_path, rng):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        write_slide_package(pyramid(rng), blocker / "pkg")


def test_empty_levels_rejected(tmp_path):
    with pytest.raises(SlideIntegrityError):
        SlidePyramid("e", 40, [])
    assert not (tmp_path / "e").exists()


def test_concurrent_reads(tmp_path, rng):
    slide = open_slide(write_slide_package(pyramid(rng, 256, 256), tmp_path / "c"))
    refs = [PatchRef("s1", f"p{i}", x * 32, y * 32, 8, Fraction(10)) for i, (x, y) in
            enumerate((x, y) for x in range(8) for y in range(8))]
    serial = [slide.read_region(r).pixels for r in refs]
    with ThreadPoolExecutor(8) as pool:
        parallel = [p.pixels for p in pool.map(slide.read_region, refs)]
    assert all(np.array_equal(a, b) for a, b in zip(serial, parallel))
