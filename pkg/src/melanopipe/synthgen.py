"""Ground-truthed synthetic slides.

A slide is a background canvas with painted regions (rectangles or ellipses
in base pixels), each carrying a tissue role. Role colours sit inside the
default tissue hue band and are picked so the reference scorer's most
probable class matches the role.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import yaml

from . import kernels
from .aggregate import LabelCensus
from .core import as_mag, mag_json, mag_str
from .slide_io import SlidePyramid, write_slide_package

BACKGROUND, PLAIN, BENIGN, MALIGNANT, EPIDERMIS = range(5)
ROLE_NAMES = {
    "plain-tissue": PLAIN,
    "benign-lesion": BENIGN,
    "malignant-lesion": MALIGNANT,
    "epidermis": EPIDERMIS,
}
ROLE_CODE_NAMES = {v: k for k, v in ROLE_NAMES.items()}

DEFAULT_COLORS = {
    PLAIN: (230, 180, 200),      # pink; hue 168
    BENIGN: (120, 200, 255),     # pale blue; hue 102, reference argmax B
    MALIGNANT: (255, 0, 255),    # magenta; hue 150, reference p_M ~ 0.936
    EPIDERMIS: (0, 90, 255),     # blue; hue 109, reference argmax NE
}
# class each role stands for when ground truth is read as pathologist annotation
INTENDED_LABEL = {PLAIN: "T", BENIGN: "B", MALIGNANT: "M", EPIDERMIS: "NE"}
_PRIORITY = (MALIGNANT, BENIGN, EPIDERMIS, PLAIN)


class SpecError(ValueError):
    """Invalid synthetic slide description."""


@dataclass(frozen=True)
class Region:
    shape: str
    box: tuple[int, int, int, int]  # x, y, width, height in base pixels
    role: int
    color: Optional[tuple[int, int, int]] = None

    @property
    def rgb(self) -> tuple[int, int, int]:
        return self.color if self.color is not None else DEFAULT_COLORS[self.role]


@dataclass(frozen=True)
class SlideSpec:
    slide_id: str
    width: int
    height: int
    regions: tuple[Region, ...] = ()
    base_mag: Fraction = Fraction(40)
    levels: tuple[Fraction, ...] = (Fraction(40), Fraction(10), Fraction(5, 2))
    background: tuple[int, int, int] = (255, 255, 255)
    seed: int = 0
    noise: int = 0
    hue_lo: int = 100
    hue_hi: int = 179

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise SpecError("slide dimensions must be positive")
        if self.noise < 0:
            raise SpecError("noise amplitude must be >= 0")
        if as_mag(self.base_mag) not in [as_mag(m) for m in self.levels]:
            raise SpecError("levels must include the base magnification")
        for m in self.levels:
            f = as_mag(self.base_mag) / as_mag(m)
            if f.denominator != 1 or f < 1:
                raise SpecError(f"level {mag_str(m)}x is not an integer downsample of the base")
        for r in self.regions:
            x, y, w, h = r.box
            if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > self.width or y + h > self.height:
                raise SpecError(f"region {r.box} lies outside the {self.width}x{self.height} slide")
            if r.shape not in ("rect", "ellipse"):
                raise SpecError(f"unknown region shape {r.shape!r}")
            if r.role not in ROLE_CODE_NAMES:
                raise SpecError(f"unknown role code {r.role!r}")

    @classmethod
    def from_mapping(cls, d: dict) -> "SlideSpec":
        try:
            regions = []
            for r in d.get("regions", []) or []:
                role = r["role"]
                if role not in ROLE_NAMES:
                    raise SpecError(f"unknown role {role!r}; expected one of {sorted(ROLE_NAMES)}")
                color = tuple(int(c) for c in r["color"]) if r.get("color") is not None else None
                regions.append(Region(str(r.get("shape", "rect")), tuple(int(v) for v in r["box"]),
                                      ROLE_NAMES[role], color))
            kw = dict(
                slide_id=str(d["slide_id"]), width=int(d["width"]), height=int(d["height"]),
                regions=tuple(regions),
            )
            if "base_mag" in d:
                kw["base_mag"] = as_mag(d["base_mag"])
            if "levels" in d:
                kw["levels"] = tuple(as_mag(m) for m in d["levels"])
            for k in ("seed", "noise", "hue_lo", "hue_hi"):
                if k in d:
                    kw[k] = int(d[k])
            if "background" in d:
                kw["background"] = tuple(int(c) for c in d["background"])
        except SpecError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"malformed slide spec: {exc!r}") from exc
        return cls(**kw)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SlideSpec":
        try:
            d = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise SpecError(f"cannot read spec {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise SpecError(f"{path}: spec must be a mapping")
        return cls.from_mapping(d)

    def to_mapping(self) -> dict:
        return {
            "slide_id": self.slide_id, "width": self.width, "height": self.height,
            "base_mag": mag_json(self.base_mag), "levels": [mag_json(m) for m in self.levels],
            "background": list(self.background), "seed": self.seed, "noise": self.noise,
            "hue_lo": self.hue_lo, "hue_hi": self.hue_hi,
            "regions": [{"shape": r.shape, "box": list(r.box), "role": ROLE_CODE_NAMES[r.role],
                         "color": list(r.rgb)} for r in self.regions],
        }


def role_signature(rgb: Sequence[int]) -> tuple[str, float]:
    """Most probable reference-scorer class of a uniform colour and its probability."""
    r, g, b = (c / 255.0 for c in rgb)
    z = np.array([2 * g, 2 * r + 2 * b - 2 * g, 2 * b - r])
    e = np.exp(z - z.max())
    p = e / e.sum()
    # tie priority M > B > NE
    order = [(1, "M"), (0, "B"), (2, "NE")]
    i, lab = max(order, key=lambda t: (p[t[0]], -order.index(t)))
    return lab, float(p[i])


def _owner_raster(spec: SlideSpec) -> np.ndarray:
    """Index of the last region painted over each base pixel, -1 for background."""
    owner = np.full((spec.height, spec.width), -1, dtype=np.int32)
    for idx, r in enumerate(spec.regions):
        x, y, w, h = r.box
        block = owner[y:y + h, x:x + w]
        if r.shape == "rect":
            block[...] = idx
        else:
            yy, xx = np.mgrid[0:h, 0:w]
            # pixel centres inside the ellipse inscribed in the box
            nx = (2 * xx + 1 - w) / w
            ny = (2 * yy + 1 - h) / h
            block[nx * nx + ny * ny <= 1.0] = idx
    return owner


def rasterize_roles(spec: SlideSpec) -> np.ndarray:
    codes = np.array([BACKGROUND] + [r.role for r in spec.regions], dtype=np.uint8)
    return codes[_owner_raster(spec) + 1]


@dataclass
class GroundTruth:
    slide_id: str
    spec: SlideSpec
    roles: np.ndarray = field(repr=False)
    expected_diagnosis: int = 0
    role_colors: dict = field(default_factory=dict)
    role_signatures: dict = field(default_factory=dict)

    @classmethod
    def from_spec(cls, spec: SlideSpec) -> "GroundTruth":
        roles = rasterize_roles(spec)
        colors, sigs = {}, {}
        for r in spec.regions:
            colors.setdefault(r.role, r.rgb)
        for code, rgb in colors.items():
            sigs[code] = role_signature(rgb)
        present = set(np.unique(roles).tolist())
        return cls(spec.slide_id, spec, roles, int(MALIGNANT in present), colors, sigs)

    def to_document(self, mag=10, patch_size=256, min_tissue_frac=0.7) -> dict:
        return {
            "kind": "ground-truth",
            "slide_id": self.slide_id,
            "expected_diagnosis": self.expected_diagnosis,
            "spec": self.spec.to_mapping(),
            "role_signatures": {ROLE_CODE_NAMES[k]: {"label": v[0], "confidence": v[1]}
                                for k, v in sorted(self.role_signatures.items())},
            "expected_census": {
                "mag": mag_json(mag), "patch_size": patch_size, "min_tissue_frac": min_tissue_frac,
                "counts": expected_census(self, mag, patch_size, min_tissue_frac).as_dict(),
            },
        }

    @classmethod
    def from_document(cls, doc: dict) -> "GroundTruth":
        return cls.from_spec(SlideSpec.from_mapping(doc["spec"]))


def generate(spec: SlideSpec) -> tuple[SlidePyramid, GroundTruth]:
    """Render the slide pyramid and its ground truth. Deterministic per seed."""
    truth = GroundTruth.from_spec(spec)
    palette = np.array([spec.background] + [r.rgb for r in spec.regions], dtype=np.uint8)
    img = palette[_owner_raster(spec) + 1]
    if spec.noise > 0:
        rng = np.random.default_rng(spec.seed)
        jitter = rng.integers(-spec.noise, spec.noise + 1, size=img.shape, dtype=np.int16)
        noisy = np.clip(img.astype(np.int16) + jitter, 0, 255).astype(np.uint8)
        # keep the tissue/background status of every pixel intact
        flipped = kernels.hue_mask(noisy, spec.hue_lo, spec.hue_hi) != kernels.hue_mask(img, spec.hue_lo, spec.hue_hi)
        noisy[flipped] = img[flipped]
        img = noisy
    base = as_mag(spec.base_mag)
    arrays = {}
    for m in spec.levels:
        f = base / as_mag(m)
        arrays[as_mag(m)] = img if f == 1 else kernels.box_downsample(img, int(f))
    return SlidePyramid.from_arrays(spec.slide_id, base, arrays), truth


def write_synthetic(spec: SlideSpec, out_dir: Union[str, Path], mag=10, patch_size=256,
                    min_tissue_frac=0.7) -> tuple[Path, GroundTruth]:
    """Write ``<out_dir>/<slide_id>/`` plus ``<slide_id>.truth.json`` next to it."""
    out_dir = Path(out_dir)
    pyramid, truth = generate(spec)
    pkg = write_slide_package(pyramid, out_dir / spec.slide_id)
    doc = truth.to_document(mag, patch_size, min_tissue_frac)
    (out_dir / f"{spec.slide_id}.truth.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return pkg, truth


def _cell_label(role: int, sigs: dict, t_p: Optional[float]) -> str:
    if t_p is None:
        return INTENDED_LABEL[role]
    lab, conf = sigs.get(role) or role_signature(DEFAULT_COLORS[role])
    return lab if conf > t_p else "T"


def expected_census(truth: GroundTruth, mag=10, patch_size: int = 256, min_tissue_frac: float = 0.7,
                    t_p: Optional[float] = None) -> LabelCensus:
    """Brute-force census from the base-resolution role raster.

    Each grid cell is kept when its share of non-background pixels reaches
    ``min_tissue_frac``; its label comes from the majority tissue role (ties
    M > B > NE > plain). Without ``t_p`` roles map to their annotation class;
    with ``t_p`` each role takes the reference scorer's class for its colour
    when that probability exceeds ``t_p``, else T.
    """
    foot = patch_size * as_mag(truth.spec.base_mag) / as_mag(mag)
    if foot.denominator != 1:
        raise ValueError("patch footprint is not a whole number of base pixels")
    foot = int(foot)
    h, w = truth.roles.shape
    counts = {"M": 0, "B": 0, "NE": 0, "T": 0}
    area = foot * foot
    for y in range(0, (h // foot) * foot, foot):
        for x in range(0, (w // foot) * foot, foot):
            cell = truth.roles[y:y + foot, x:x + foot]
            tally = np.bincount(cell.ravel(), minlength=5)
            tissue = int(tally[1:].sum())
            if tissue / area < min_tissue_frac:
                continue
            top = max(_PRIORITY, key=lambda c: (tally[c], -_PRIORITY.index(c)))
            counts[_cell_label(top, truth.role_signatures, t_p)] += 1
    return LabelCensus(counts["M"], counts["B"], counts["NE"], counts["T"])


def aligned_slide_spec(slide_id: str, layout: Sequence[str], cols: int, cell: int = 1024, seed: int = 0,
                       noise: int = 0, **kw) -> SlideSpec:
    """Patch-aligned slide from a row-major string of cell codes.

    Codes: '.' background, 'p' plain tissue, 'b' benign lesion, 'm' malignant
    lesion, 'e' epidermis. ``cell`` is the cell side in base pixels.
    """
    code = {"p": "plain-tissue", "b": "benign-lesion", "m": "malignant-lesion", "e": "epidermis"}
    cells = "".join(layout)
    if len(cells) % cols:
        raise SpecError("layout length is not a multiple of cols")
    rows = len(cells) // cols
    regions = []
    for k, ch in enumerate(cells):
        if ch == ".":
            continue
        if ch not in code:
            raise SpecError(f"unknown layout code {ch!r}")
        j, i = divmod(k, cols)
        regions.append(Region("rect", (i * cell, j * cell, cell, cell), ROLE_NAMES[code[ch]]))
    return SlideSpec(slide_id, cols * cell, rows * cell, tuple(regions), seed=seed, noise=noise, **kw)
