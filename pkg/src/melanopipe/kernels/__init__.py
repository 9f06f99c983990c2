"""Hot pixel/geometry kernels.

The numba versions are used when numba imports cleanly, unless the
environment variable ``MELANOPIPE_DISABLE_NUMBA`` is set to a truthy value,
in which case the pure-numpy versions are selected. Both implementations are
importable directly as :mod:`melanopipe.kernels._numpy` and
:mod:`melanopipe.kernels._numba` for benchmarking and cross-checks.
"""

import os

from . import _numpy

_disabled = os.environ.get("MELANOPIPE_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

if _disabled:
    _impl = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _impl = _numpy
        BACKEND = "numpy"

hue_mask = _impl.hue_mask
erode = _impl.erode
dilate = _impl.dilate
box_downsample = _impl.box_downsample
tile_coverage = _impl.tile_coverage
hue_half_degrees = _numpy.hue_half_degrees
disc_offsets = _numpy.disc_offsets

__all__ = [
    "BACKEND", "hue_mask", "erode", "dilate", "box_downsample", "tile_coverage",
    "hue_half_degrees", "disc_offsets",
]
