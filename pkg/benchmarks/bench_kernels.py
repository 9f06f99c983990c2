#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

Both backends are imported directly, so the MELANOPIPE_DISABLE_NUMBA flag is
irrelevant here. The first numba call of each kernel is a warm-up and is not
timed. Outputs are checked for equality before timing.

    python3 benchmarks/bench_kernels.py [--size 2048] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from melanopipe.kernels import _numba, _numpy


def cases(size, rng):
    rgb = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
    mask = rng.random((size // 4, size // 4)) < 0.6
    rects = rng.integers(0, size, (400, 2))
    rects = np.concatenate([rects, rects + rng.integers(32, 512, (400, 2))], axis=1).astype(np.int64)
    n = size // 64
    return {
        "hue_mask": (lambda k: k.hue_mask(rgb, 100, 179)),
        "erode r=5": (lambda k: k.erode(mask, 5)),
        "dilate r=5": (lambda k: k.dilate(mask, 5)),
        "erode r=15": (lambda k: k.erode(mask, 15)),
        "box_downsample x4": (lambda k: k.box_downsample(rgb, 4)),
        "tile_coverage": (lambda k: k.tile_coverage(rects, 0, 0, 64, n, n)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=2048)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, call in cases(args.size, rng).items():
        ref, fast = call(_numpy), call(_numba)  # warm-up and agreement check
        assert np.array_equal(ref, fast), name
        t_np = min(timeit.repeat(lambda: call(_numpy), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: call(_numba), number=1, repeat=args.repeat))
        print(f"{name:<20}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
