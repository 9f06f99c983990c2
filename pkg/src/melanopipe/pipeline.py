"""Per-slide stage functions and the result documents they exchange.

Stage order: tissue mask -> diagnosis grid -> patch scores -> patch labels ->
slide ratio -> diagnosis -> malignant ROI -> prognosis grid -> prognosis
scores -> prognosis ratio -> prognosis. ``run_slide`` chains them and writes
every intermediate file; the stage commands of the CLI call the same
functions one at a time, so both routes produce identical documents.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .aggregate import (DiagnosisResult, PrognosisResult, RoiMask, build_roi, census, diagnose_census,
                        extract_prognosis_patches, prognose, prognosis_ratio)
from .core import PatchLabel, PipelineConfig, as_mag, dump_json, mag_json
from .scoring import (PatchScore, ScorerDescriptor, align_scores, assign_prognosis_label, label_patches,
                      score_patches, write_score_file, read_score_file)
from .slide_io import SlidePyramid, open_slide
from .tissue import PatchGrid, TissueMask, compute_tissue_mask, extract_grid, save_grid, save_mask

log = logging.getLogger(__name__)

SCHEMA = "melanopipe.slide-result"
SCHEMA_VERSION = 1

MASK_FILE = "tissue_mask.png"
DIAG_GRID_FILE = "grid_diagnosis.jsonl"
DIAG_SCORES_FILE = "scores_diagnosis.csv"
DIAGNOSIS_FILE = "diagnosis.json"
PROG_GRID_FILE = "grid_prognosis.jsonl"
PROG_SCORES_FILE = "scores_prognosis.csv"
RESULT_FILE = "result.json"

LABEL_COLORS = {
    PatchLabel.M: (255, 0, 0),
    PatchLabel.B: (0, 255, 0),
    PatchLabel.NE: (0, 0, 255),
    PatchLabel.T: (128, 128, 128),
}
BACKGROUND_COLOR = (255, 255, 255)


# -- stage functions ----------------------------------------------------------

def segment_stage(slide: SlidePyramid, cfg: PipelineConfig) -> TissueMask:
    return compute_tissue_mask(slide, cfg.hue_lo, cfg.hue_hi, cfg.morph_radius)


def extract_stage(slide: SlidePyramid, mask: TissueMask, cfg: PipelineConfig) -> PatchGrid:
    return extract_grid(slide, mask, cfg.diag_mag, cfg.patch_size, cfg.min_tissue_frac)


def diagnose_stage(grid: PatchGrid, scores: Sequence[PatchScore], cfg: PipelineConfig):
    """Label patches at t_p, aggregate, decide; returns (result, labels, roi)."""
    scores = align_scores(grid, scores)
    labels = label_patches(scores, cfg.t_p)
    result = diagnose_census(grid.slide_id, census(labels), cfg.ratio_method, cfg.t_p, cfg.t_r)
    roi = build_roi(grid, labels, result.decision)
    return result, labels, roi


def prognosis_grid_stage(slide: SlidePyramid, roi: RoiMask, cfg: PipelineConfig) -> PatchGrid:
    return extract_prognosis_patches(slide, roi, cfg.prog_mag, cfg.patch_size, cfg.min_roi_overlap)


def prognose_stage(grid: PatchGrid, scores: Sequence[PatchScore], cfg: PipelineConfig) -> PrognosisResult:
    scores = align_scores(grid, scores)
    preds = [assign_prognosis_label(s.probs) for s in scores]
    phi = prognosis_ratio(preds)
    return PrognosisResult(grid.slide_id, phi, cfg.t_m, prognose(phi, cfg.t_m), len(preds), sum(preds))


# -- documents ----------------------------------------------------------------

def diagnosis_document(result: DiagnosisResult, roi: RoiMask, grid: PatchGrid, cfg: PipelineConfig) -> dict:
    return {
        "schema": SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "slide_id": result.slide_id,
        "diagnosis": {
            "census": result.census.as_dict(),
            "psi_mb": result.psi_mb,
            "psi_mt": result.psi_mt,
            "method": result.method,
            "psi": result.psi,
            "t_p": result.t_p,
            "t_r": result.t_r,
            "decision": result.decision,
            "label": "melanoma" if result.decision else "benign",
            "patch_mag": mag_json(grid.mag),
            "patch_size": grid.patch_size,
            "min_tissue_frac": cfg.min_tissue_frac,
            "n_patches": len(grid),
            "warnings": list(result.warnings),
        },
        "roi": {
            "base_mag": mag_json(grid.base_mag),
            "rects": [list(r) for r in roi.rects],
        },
    }


def roi_from_document(doc: dict) -> RoiMask:
    rects = tuple(tuple(int(v) for v in r) for r in doc["roi"]["rects"])
    return RoiMask(doc["slide_id"], rects, melanoma=bool(doc["diagnosis"]["decision"]))


def result_document(diag_doc: dict, cfg: PipelineConfig, prog: Optional[PrognosisResult] = None,
                    reason: Optional[str] = None) -> dict:
    doc = dict(diag_doc)
    if prog is None:
        doc["prognosis"] = {"applicable": False, "reason": reason or "benign diagnosis",
                            "t_m": cfg.t_m, "patch_mag": mag_json(cfg.prog_mag),
                            "min_roi_overlap": cfg.min_roi_overlap}
    else:
        doc["prognosis"] = {
            "applicable": True,
            "phi": prog.phi,
            "t_m": prog.t_m,
            "decision": prog.decision,
            "label": "bad" if prog.decision else "good",
            "n_patches": prog.n_patches,
            "n_bad": prog.n_bad,
            "patch_mag": mag_json(cfg.prog_mag),
            "min_roi_overlap": cfg.min_roi_overlap,
        }
    return doc


def write_json(doc: dict, path: Path) -> Path:
    path.write_text(dump_json(doc))
    return path


# -- per-slide driver ---------------------------------------------------------

@dataclass
class SlideOutputs:
    slide_id: str
    directory: Path
    result: dict


def diagnosis_from_files(slide_dir: Path, grid: PatchGrid, scores, cfg: PipelineConfig) -> dict:
    result, _, roi = diagnose_stage(grid, scores, cfg)
    doc = diagnosis_document(result, roi, grid, cfg)
    write_json(doc, slide_dir / DIAGNOSIS_FILE)
    return doc


def prognosis_from_diagnosis(slide: SlidePyramid, diag_doc: dict, cfg: PipelineConfig,
                             prog_scorer: ScorerDescriptor, out_dir: Path) -> dict:
    """Run the prognosis half for one slide and write its result document."""
    if not diag_doc["diagnosis"]["decision"]:
        doc = result_document(diag_doc, cfg)
    else:
        roi = roi_from_document(diag_doc)
        pgrid = prognosis_grid_stage(slide, roi, cfg)
        save_grid(pgrid, out_dir / PROG_GRID_FILE)
        pscores = score_patches(prog_scorer, slide, pgrid)
        write_score_file(pscores, out_dir / PROG_SCORES_FILE)
        doc = result_document(diag_doc, cfg, prognose_stage(pgrid, pscores, cfg))
    write_json(doc, out_dir / RESULT_FILE)
    return doc


def run_slide(slide_path: Path, out_dir: Path, cfg: PipelineConfig, scorer: ScorerDescriptor,
              prog_scorer: ScorerDescriptor) -> SlideOutputs:
    slide = open_slide(slide_path)
    sdir = out_dir / slide.slide_id
    sdir.mkdir(parents=True, exist_ok=True)
    mask = segment_stage(slide, cfg)
    save_mask(mask, sdir / MASK_FILE)
    grid = extract_stage(slide, mask, cfg)
    save_grid(grid, sdir / DIAG_GRID_FILE)
    scores = score_patches(scorer, slide, grid)
    write_score_file(scores, sdir / DIAG_SCORES_FILE)
    diag_doc = diagnosis_from_files(sdir, grid, scores, cfg)
    result = prognosis_from_diagnosis(slide, diag_doc, cfg, prog_scorer, sdir)
    return SlideOutputs(slide.slide_id, sdir, result)


def load_scores(path: Path, arity: int) -> list[PatchScore]:
    return [PatchScore(pid, probs) for pid, probs in read_score_file(path, arity).items()]


def psi_for_threshold(grid: PatchGrid, scores: Sequence[PatchScore], t_p: float, method: str) -> Optional[float]:
    labels = label_patches(align_scores(grid, scores), t_p)
    c = census(labels)
    if c.total == 0:
        return None
    res = diagnose_census(grid.slide_id, c, method, t_p, 0.0)
    return res.psi


# -- rendering ----------------------------------------------------------------

def render_label_mask(slide: SlidePyramid, grid: PatchGrid, labels: Sequence, mag=None) -> np.ndarray:
    """Patch labels painted over a white canvas at ``mag`` (default: lowest level)."""
    if len(labels) != len(grid):
        raise ValueError(f"{len(labels)} labels for {len(grid)} grid patches")
    m = slide.lowest_level().mag if mag is None else as_mag(mag)
    w, h = slide.plane_size(m)
    canvas = np.empty((h, w, 3), dtype=np.uint8)
    canvas[...] = BACKGROUND_COLOR
    scale = m / slide.base_mag
    for ref, lab in zip(grid.patches, labels):
        x0, y0, x1, y1 = ref.rect
        # round outward so small patches stay visible on coarse canvases
        cx0, cy0 = math.floor(x0 * scale), math.floor(y0 * scale)
        cx1, cy1 = math.ceil(x1 * scale), math.ceil(y1 * scale)
        canvas[cy0:cy1, cx0:cx1] = LABEL_COLORS[PatchLabel(lab)]
    return canvas


def save_rgb_png(arr: np.ndarray, path: Path) -> Path:
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    return path
