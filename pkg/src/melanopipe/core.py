"""Shared domain types: magnifications, patch references, label vocabularies
and the pipeline configuration."""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional, Union

import yaml

Magnification = Fraction
MagLike = Union[int, float, str, Fraction]

DEFAULT_BASE_MAG = Fraction(40)


class ConfigError(ValueError):
    """Invalid pipeline configuration."""


def as_mag(value: MagLike) -> Fraction:
    """Parse a magnification (``40``, ``2.5``, ``"2.5"``, ``Fraction(5, 2)``)."""
    if isinstance(value, Fraction):
        m = value
    elif isinstance(value, float):
        # go through the decimal text so 2.5 -> 5/2, not a binary expansion
        m = Fraction(repr(value))
    else:
        m = Fraction(str(value).strip().rstrip("xX"))
    if m <= 0:
        raise ValueError(f"magnification must be positive, got {value!r}")
    return m


def mag_str(m: MagLike) -> str:
    """Short decimal text for a magnification: 40 -> '40', 5/2 -> '2.5'."""
    m = as_mag(m)
    if m.denominator == 1:
        return str(m.numerator)
    f = float(m)
    if Fraction(repr(f)) != m:
        return f"{m.numerator}/{m.denominator}"
    return repr(f)


def mag_json(m: MagLike) -> Union[int, float, str]:
    m = as_mag(m)
    if m.denominator == 1:
        return m.numerator
    f = float(m)
    return f if Fraction(repr(f)) == m else mag_str(m)


def downsample_factor(src: MagLike, dst: MagLike) -> Fraction:
    """Ratio ``src / dst``; a length L at ``src`` is L / factor at ``dst``."""
    return as_mag(src) / as_mag(dst)


def to_base(length: int, mag: MagLike, base_mag: MagLike) -> Fraction:
    """Length measured at ``mag`` expressed in base-level pixels."""
    return length * downsample_factor(base_mag, mag)


def from_base(length: int, mag: MagLike, base_mag: MagLike) -> Fraction:
    return length / downsample_factor(base_mag, mag)


class PatchLabel(str, enum.Enum):
    M = "M"
    B = "B"
    NE = "NE"
    T = "T"


# Scorer output order for 3-class diagnosis vectors.
DIAGNOSIS_CLASSES = (PatchLabel.B, PatchLabel.M, PatchLabel.NE)
PROGNOSIS_CLASSES = ("good", "bad")


@dataclass(frozen=True)
class PatchRef:
    """A square patch of ``size`` pixels at ``mag``; origin in base pixels."""

    slide_id: str
    patch_id: str
    x: int
    y: int
    size: int
    mag: Fraction
    base_mag: Fraction = DEFAULT_BASE_MAG

    @property
    def footprint(self) -> int:
        """Side length of the patch in base pixels."""
        side = to_base(self.size, self.mag, self.base_mag)
        if side.denominator != 1:
            raise ValueError(f"patch footprint {side} is not an integer number of base pixels")
        return int(side)

    @property
    def rect(self) -> tuple[int, int, int, int]:
        """(x0, y0, x1, y1) half-open in base pixels."""
        s = self.footprint
        return (self.x, self.y, self.x + s, self.y + s)


def make_patch_id(mag: MagLike, x: int, y: int) -> str:
    return f"{mag_str(mag)}x_{x}_{y}"


@dataclass(frozen=True)
class ClinicalLabel:
    diagnosis: int
    prognosis: Optional[int] = None

    def __post_init__(self):
        if self.diagnosis not in (0, 1):
            raise ValueError(f"diagnosis must be 0 or 1, got {self.diagnosis!r}")
        if self.prognosis is not None:
            if self.prognosis not in (0, 1):
                raise ValueError(f"prognosis must be 0 or 1, got {self.prognosis!r}")
            if self.diagnosis != 1:
                raise ValueError("prognosis label given for a benign slide")


def read_labels_file(path: Union[str, Path]) -> dict[str, ClinicalLabel]:
    """Read ``slide_id,diagnosis[,prognosis]`` lines; '#' starts a comment."""
    labels: dict[str, ClinicalLabel] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if lineno == 1 and parts[0].lower() == "slide_id":
            continue
        if len(parts) not in (2, 3):
            raise ValueError(f"{path}:{lineno}: expected slide_id,diagnosis[,prognosis]")
        prog = int(parts[2]) if len(parts) == 3 and parts[2] != "" else None
        labels[parts[0]] = ClinicalLabel(int(parts[1]), prog)
    return labels


RATIO_METHODS = ("MB", "MT")


@dataclass(frozen=True)
class PipelineConfig:
    t_p: float = 0.999
    t_r: float = 0.04
    t_m: float = 0.5
    ratio_method: str = "MT"
    diag_mag: Fraction = Fraction(10)
    prog_mag: Fraction = Fraction(20)
    patch_size: int = 256
    min_tissue_frac: float = 0.7
    min_roi_overlap: float = 0.7
    hue_lo: int = 100
    hue_hi: int = 179
    morph_radius: int = 5
    seed: int = 0
    objective: str = "youden"

    def __post_init__(self):
        for name in ("t_p", "t_r", "t_m", "min_tissue_frac", "min_roi_overlap"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.ratio_method not in RATIO_METHODS:
            raise ConfigError(f"ratio_method must be one of {RATIO_METHODS}")
        if not self.hue_lo < self.hue_hi:
            raise ConfigError("hue_lo must be < hue_hi")
        if self.patch_size <= 0:
            raise ConfigError("patch_size must be positive")
        if self.morph_radius < 0:
            raise ConfigError("morph_radius must be >= 0")
        if self.objective not in ("youden", "max_accuracy", "max_f1"):
            raise ConfigError(f"unknown calibration objective {self.objective!r}")

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> "PipelineConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        try:
            for k, v in data.items():
                if v is None:
                    continue
                if k in ("diag_mag", "prog_mag"):
                    kwargs[k] = as_mag(v)
                elif k in ("patch_size", "hue_lo", "hue_hi", "morph_radius", "seed"):
                    kwargs[k] = int(v)
                elif k in ("ratio_method", "objective"):
                    kwargs[k] = str(v).strip()
                else:
                    kwargs[k] = float(v)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        if "ratio_method" in kwargs:
            kwargs["ratio_method"] = kwargs["ratio_method"].upper()
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Union[str, Path], **overrides) -> "PipelineConfig":
        """Load a YAML (or JSON) key/value file; non-None overrides win."""
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a key/value mapping")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(data)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["diag_mag"] = mag_json(self.diag_mag)
        out["prog_mag"] = mag_json(self.prog_mag)
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def dump_json(doc: Any) -> str:
    """Canonical JSON text used for every result document."""
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"
