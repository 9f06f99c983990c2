"""Slide-level aggregation: malignancy ratios, diagnosis, malignant ROI,
prognosis patch selection and the slide-level prognosis."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .core import PatchLabel, PatchRef, as_mag, make_patch_id, mag_str
from .slide_io import SlidePyramid
from .tissue import PatchGrid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelCensus:
    n_M: int = 0
    n_B: int = 0
    n_NE: int = 0
    n_T: int = 0

    @property
    def total(self) -> int:
        return self.n_M + self.n_B + self.n_NE + self.n_T

    def as_dict(self) -> dict[str, int]:
        return {"M": self.n_M, "B": self.n_B, "NE": self.n_NE, "T": self.n_T}


def census(labels: Iterable) -> LabelCensus:
    counts = {lab: 0 for lab in PatchLabel}
    for lab in labels:
        counts[PatchLabel(lab)] += 1
    return LabelCensus(counts[PatchLabel.M], counts[PatchLabel.B], counts[PatchLabel.NE], counts[PatchLabel.T])


def ratio_mb(c: LabelCensus) -> Optional[float]:
    """M / (M + B), or None when the slide has neither."""
    denom = c.n_M + c.n_B
    if denom == 0:
        return None
    return c.n_M / denom


def ratio_mt(c: LabelCensus) -> float:
    """M over every scored tissue patch."""
    if c.total == 0:
        raise ValueError("empty census: no tissue patches were scored")
    return c.n_M / c.total


def diagnose(ratio: Optional[float], t_r: float) -> int:
    """1 (melanoma) iff ratio >= t_r; an undefined ratio counts as benign."""
    if ratio is None:
        return 0
    return 1 if ratio >= t_r else 0


@dataclass(frozen=True)
class DiagnosisResult:
    slide_id: str
    census: LabelCensus
    psi_mb: Optional[float]
    psi_mt: float
    method: str
    t_p: float
    t_r: float
    decision: int
    warnings: tuple[str, ...] = ()

    @property
    def psi(self) -> Optional[float]:
        return self.psi_mb if self.method == "MB" else self.psi_mt


def diagnose_census(slide_id: str, c: LabelCensus, method: str, t_p: float, t_r: float) -> DiagnosisResult:
    if method not in ("MB", "MT"):
        raise ValueError(f"unknown ratio method {method!r}")
    mb = ratio_mb(c)
    mt = ratio_mt(c)
    warnings = []
    psi = mb if method == "MB" else mt
    if psi is None:
        msg = "psi_MB undefined (no M or B patches); slide treated as benign"
        log.warning("%s: %s", slide_id, msg)
        warnings.append(msg)
    return DiagnosisResult(slide_id, c, mb, mt, method, t_p, t_r, diagnose(psi, t_r), tuple(warnings))


@dataclass(frozen=True)
class RoiMask:
    slide_id: str
    rects: tuple[tuple[int, int, int, int], ...]  # base-pixel (x0, y0, x1, y1)
    melanoma: bool = True

    def __len__(self):
        return len(self.rects)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.rects, dtype=np.int64).reshape(-1, 4)


def build_roi(grid: PatchGrid, labels: Sequence, decision: int) -> RoiMask:
    if len(labels) != len(grid):
        raise ValueError(f"{len(labels)} labels for {len(grid)} grid patches")
    if decision != 1:
        return RoiMask(grid.slide_id, (), melanoma=False)
    rects = tuple(p.rect for p, lab in zip(grid.patches, labels) if PatchLabel(lab) is PatchLabel.M)
    return RoiMask(grid.slide_id, rects, melanoma=True)


def overlap_areas(roi: RoiMask, tile: int, ncols: int, nrows: int) -> np.ndarray:
    """Exact base-pixel area of ROI-union coverage for each grid tile."""
    return kernels.tile_coverage(roi.as_array(), 0, 0, tile, ncols, nrows)


def extract_prognosis_patches(slide: SlidePyramid, roi: RoiMask, mag=20, patch_size: int = 256,
                              min_overlap: float = 0.7) -> PatchGrid:
    """Tiles of the ``mag`` plane whose ROI overlap fraction reaches ``min_overlap``."""
    if not roi.melanoma or len(roi) == 0:
        raise ValueError(f"{roi.slide_id}: empty ROI, prognosis is undefined")
    m = as_mag(mag)
    foot = patch_size * slide.base_mag / m
    if foot.denominator != 1:
        raise ValueError(f"{patch_size}px at {mag_str(m)}x is not a whole number of base pixels")
    foot = int(foot)
    w, h = slide.plane_size(m)
    ncols, nrows = w // patch_size, h // patch_size
    covered = overlap_areas(roi, foot, ncols, nrows)
    area = foot * foot
    frac = covered / area
    keep = frac >= min_overlap
    if min_overlap <= 0:
        keep &= covered > 0
    patches, fracs = [], []
    for j, i in zip(*np.nonzero(keep)):
        x, y = int(i) * foot, int(j) * foot
        patches.append(PatchRef(slide.slide_id, make_patch_id(m, x, y), x, y, patch_size, m, slide.base_mag))
        fracs.append(float(frac[j, i]))
    return PatchGrid(slide.slide_id, m, patch_size, slide.base_mag, tuple(patches), tuple(fracs))


def prognosis_ratio(preds: Sequence[int]) -> float:
    """Fraction of patches predicted bad."""
    if len(preds) == 0:
        raise ValueError("no prognosis patches survived the ROI overlap filter")
    bad = 0
    for p in preds:
        if p not in (0, 1):
            raise ValueError(f"prognosis prediction must be 0 or 1, got {p!r}")
        bad += p
    return bad / len(preds)


def prognose(phi: float, t_m: float) -> int:
    return 1 if phi >= t_m else 0


@dataclass(frozen=True)
class PrognosisResult:
    slide_id: str
    phi: float
    t_m: float
    decision: int
    n_patches: int
    n_bad: int = field(default=0)
