"""Patch scorers and the patch-level labelling rules.

A scorer maps each grid patch to a probability vector. Two kinds exist:
``reference`` (a fixed colour-statistics softmax, for fixtures and tests)
and ``external-file`` (probabilities produced elsewhere, e.g. by a CNN,
read from a score file). Score files are plain text, one row per patch::

    patch_id,p_1,...,p_k

with k = 3 for diagnosis (B, M, NE) and k = 2 for prognosis (good, bad).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .core import PatchLabel
from .slide_io import RasterPatch, SlidePyramid
from .tissue import PatchGrid

PROB_SUM_TOL = 1e-6


class ScoreFormatError(ValueError):
    """A score file row is malformed or not a probability vector."""


class ScoreCoverageError(ValueError):
    """A score file does not cover the grid exactly."""


@dataclass(frozen=True)
class PatchScore:
    patch_id: str
    probs: tuple[float, ...]


@dataclass(frozen=True)
class ScorerDescriptor:
    kind: str = "reference"
    arity: int = 3
    source: Optional[Path] = None

    def __post_init__(self):
        if self.kind not in ("reference", "external-file"):
            raise ValueError(f"unknown scorer kind {self.kind!r}")
        if self.arity not in (2, 3):
            raise ValueError("scorer arity must be 2 or 3")
        if self.kind == "external-file" and self.source is None:
            raise ValueError("external-file scorer needs a source path")

    @classmethod
    def parse(cls, text: str, arity: int = 3) -> "ScorerDescriptor":
        """Parse ``reference`` or ``scores-file=PATH``."""
        text = text.strip()
        if text == "reference":
            return cls("reference", arity)
        if text.startswith("scores-file="):
            return cls("external-file", arity, Path(text.split("=", 1)[1]))
        raise ValueError(f"scorer must be 'reference' or 'scores-file=PATH', got {text!r}")

    def resolve(self, slide_id: str) -> "ScorerDescriptor":
        """For a directory source, pick ``<slide_id>.csv`` inside it."""
        if self.kind == "external-file" and self.source.is_dir():
            return ScorerDescriptor(self.kind, self.arity, self.source / f"{slide_id}.csv")
        return self


def softmax(z: Sequence[float]) -> tuple[float, ...]:
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = math.fsum(e)
    return tuple(v / s for v in e)


def reference_score(patch: Union[RasterPatch, np.ndarray], arity: int = 3,
                    expected_size: Optional[int] = 256) -> tuple[float, ...]:
    """Deterministic colour softmax.

    With channel means r, g, b in [0, 1]: arity 3 logits are
    (2g, 2r + 2b - 2g, 2b - r) for (B, M, NE); arity 2 logits are (2g, 2r)
    for (good, bad).
    """
    pix = patch.pixels if isinstance(patch, RasterPatch) else np.asarray(patch)
    if pix.ndim != 3 or pix.shape[2] != 3 or pix.shape[0] != pix.shape[1]:
        raise ValueError(f"expected a square RGB patch, got shape {pix.shape}")
    if expected_size is not None and pix.shape[0] != expected_size:
        raise ValueError(f"expected a {expected_size}x{expected_size} patch, got {pix.shape[0]}")
    n = pix.shape[0] * pix.shape[1] * 255
    sums = pix.reshape(-1, 3).astype(np.int64).sum(axis=0)
    r, g, b = (int(s) / n for s in sums)
    if arity == 3:
        return softmax((2 * g, 2 * r + 2 * b - 2 * g, 2 * b - r))
    if arity == 2:
        return softmax((2 * g, 2 * r))
    raise ValueError("arity must be 2 or 3")


def check_probs(probs: Sequence[float], arity: int) -> tuple[float, ...]:
    if len(probs) != arity:
        raise ScoreFormatError(f"expected {arity} probabilities, got {len(probs)}")
    for p in probs:
        if not (0.0 <= p <= 1.0) or math.isnan(p):
            raise ScoreFormatError(f"probability {p} outside [0, 1]")
    if abs(math.fsum(probs) - 1.0) > PROB_SUM_TOL:
        raise ScoreFormatError(f"probabilities {tuple(probs)} sum to {math.fsum(probs):.6g}, not 1")
    return tuple(float(p) for p in probs)


def read_score_file(path: Union[str, Path], arity: int) -> dict[str, tuple[float, ...]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"score file {path} not found")
    rows: dict[str, tuple[float, ...]] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if lineno == 1 and parts[0] == "patch_id":
            continue
        try:
            probs = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise ScoreFormatError(f"{path}:{lineno}: {exc}") from exc
        try:
            probs = check_probs(probs, arity)
        except ScoreFormatError as exc:
            raise ScoreFormatError(f"{path}:{lineno}: {exc}") from exc
        if parts[0] in rows:
            raise ScoreFormatError(f"{path}:{lineno}: duplicate patch_id {parts[0]}")
        rows[parts[0]] = probs
    return rows


def write_score_file(scores: Sequence[PatchScore], path: Union[str, Path]) -> Path:
    """Probabilities are written with ``repr`` so they read back bit-exactly."""
    path = Path(path)
    lines = [",".join([s.patch_id, *(repr(float(p)) for p in s.probs)]) for s in scores]
    path.write_text("".join(line + "\n" for line in lines))
    return path


def score_patches(scorer: ScorerDescriptor, slide: SlidePyramid, grid: PatchGrid) -> list[PatchScore]:
    """One score per grid patch, in grid order."""
    if len(grid) == 0:
        return []
    if scorer.kind == "reference":
        out = []
        for ref in grid.patches:
            probs = reference_score(slide.read_region(ref), scorer.arity, expected_size=ref.size)
            out.append(PatchScore(ref.patch_id, probs))
        return out
    table = read_score_file(scorer.resolve(slide.slide_id).source, scorer.arity)
    ids = grid.patch_ids
    missing = [pid for pid in ids if pid not in table]
    if missing:
        raise ScoreCoverageError(f"score file lacks {len(missing)} grid patches, e.g. {missing[0]}")
    extra = set(table) - set(ids)
    if extra:
        raise ScoreCoverageError(f"score file has {len(extra)} rows not in the grid, e.g. {sorted(extra)[0]}")
    return [PatchScore(pid, table[pid]) for pid in ids]


def align_scores(grid: PatchGrid, scores: Sequence[PatchScore]) -> list[PatchScore]:
    by_id = {s.patch_id: s for s in scores}
    if len(by_id) != len(scores) or set(by_id) != set(grid.patch_ids):
        raise ScoreCoverageError("scores do not match the grid patch ids one-to-one")
    return [by_id[pid] for pid in grid.patch_ids]


# B, M, NE vector positions in tie-break priority M > B > NE
_TIE_ORDER = ((1, PatchLabel.M), (0, PatchLabel.B), (2, PatchLabel.NE))


def assign_patch_label(probs: Sequence[float], t_p: float) -> PatchLabel:
    """Most probable class when its probability strictly exceeds ``t_p``, else T."""
    best_i, best = _TIE_ORDER[0]
    for i, lab in _TIE_ORDER[1:]:
        if probs[i] > probs[best_i]:
            best_i, best = i, lab
    return best if probs[best_i] > t_p else PatchLabel.T


def assign_prognosis_label(probs: Sequence[float]) -> int:
    """1 (bad) when p_bad >= 0.5."""
    return 1 if probs[1] >= 0.5 else 0


def label_patches(scores: Sequence[PatchScore], t_p: float) -> list[PatchLabel]:
    return [assign_patch_label(s.probs, t_p) for s in scores]
