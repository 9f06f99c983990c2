"""Binary classification metrics, ROC analysis and threshold calibration.

Undefined quantities (zero denominators, AUC of a single-class set) are
reported as ``None`` rather than a default number.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .aggregate import diagnose

METRIC_NAMES = ("accuracy", "sensitivity", "specificity", "precision", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.tp, self.fp, self.tn, self.fn)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: Optional[float] = None
    sensitivity: Optional[float] = None
    specificity: Optional[float] = None
    precision: Optional[float] = None
    f1: Optional[float] = None

    @property
    def recall(self) -> Optional[float]:
        return self.sensitivity

    def as_dict(self) -> dict[str, Optional[float]]:
        return asdict(self)

    def rounded(self, decimals: int = 3) -> dict[str, Optional[float]]:
        return {k: (None if v is None else round(v, decimals)) for k, v in asdict(self).items()}


def _check_binary(values: Sequence[int], name: str) -> None:
    for v in values:
        if v not in (0, 1):
            raise ValueError(f"{name} must contain only 0/1, got {v!r}")


def confusion(preds: Sequence[int], truths: Sequence[int]) -> ConfusionMatrix:
    """Positive class is 1."""
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions for {len(truths)} truths")
    if len(preds) == 0:
        raise ValueError("cannot build a confusion matrix from zero samples")
    _check_binary(preds, "preds")
    _check_binary(truths, "truths")
    tp = fp = tn = fn = 0
    for p, t in zip(preds, truths):
        if p == 1:
            if t == 1:
                tp += 1
            else:
                fp += 1
        elif t == 1:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, tn, fn)


def _div(a: int, b: int) -> Optional[float]:
    return None if b == 0 else a / b


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    sens = _div(cm.tp, cm.tp + cm.fn)
    prec = _div(cm.tp, cm.tp + cm.fp)
    if sens is None or prec is None or sens + prec == 0:
        f1 = None
    else:
        f1 = 2 * prec * sens / (prec + sens)
    return MetricsReport(
        accuracy=(cm.tp + cm.tn) / cm.total,
        sensitivity=sens,
        specificity=_div(cm.tn, cm.tn + cm.fp),
        precision=prec,
        f1=f1,
    )


def _matches(report: MetricsReport, targets: MetricsReport, tol: float, decimals: Optional[int]) -> bool:
    for name in METRIC_NAMES:
        want = getattr(targets, name)
        if want is None:
            continue
        got = getattr(report, name)
        if got is None:
            return False
        if decimals is not None:
            got = round(got, decimals)
        if abs(got - want) > tol + 1e-12:
            return False
    return True


def fit_confusion(targets: MetricsReport, n_total: int, n_positive: int, tol: float = 0.0005,
                  decimals: Optional[int] = 3) -> list[ConfusionMatrix]:
    """Every confusion matrix over ``n_total`` samples with ``n_positive``
    positives whose (rounded) metrics match each defined target within ``tol``.

    Enumeration order is tp ascending, then tn ascending.
    """
    if not 0 <= n_positive <= n_total:
        raise ValueError("need 0 <= n_positive <= n_total")
    n_neg = n_total - n_positive
    found = []
    for tp in range(n_positive + 1):
        for tn in range(n_neg + 1):
            cm = ConfusionMatrix(tp, n_neg - tn, tn, n_positive - tp)
            if _matches(metrics(cm), targets, tol, decimals):
                found.append(cm)
    return found


@dataclass(frozen=True)
class RocCurve:
    thresholds: tuple[float, ...]
    fpr: tuple[float, ...]
    tpr: tuple[float, ...]
    auc: float

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds, self.fpr, self.tpr))

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fpr", "tpr"])
            for t, f, p in self.points:
                w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])
        return path


def _roc_score(s: Optional[float]) -> float:
    return -math.inf if s is None or (isinstance(s, float) and math.isnan(s)) else float(s)


def roc_curve(scores: Sequence[Optional[float]], truths: Sequence[int]) -> RocCurve:
    """Sweep the diagnosis threshold over every distinct score.

    A slide is called positive at threshold t when ``diagnose(score, t) == 1``
    (score >= t). Undefined scores are never positive. Thresholds run from a
    +inf sentinel down to 0 (and -inf when undefined scores are present), so
    the curve starts at (0, 0) and ends at (1, 1). AUC is the trapezoidal
    area, computed from integer counts.
    """
    if len(scores) != len(truths) or len(scores) == 0:
        raise ValueError("scores and truths must be equal, non-empty lengths")
    _check_binary(truths, "truths")
    s = [_roc_score(v) for v in scores]
    n_pos = sum(truths)
    n_neg = len(truths) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC/AUC undefined: truths contain a single class")
    distinct = sorted({v for v in s if math.isfinite(v) and v > 0}, reverse=True)
    thresholds = [math.inf, *distinct, 0.0]
    if any(v == -math.inf for v in s):
        thresholds.append(-math.inf)
    tps, fps = [], []
    for t in thresholds:
        tp = fp = 0
        for v, y in zip(s, truths):
            # the -inf sentinel calls everything positive, undefined ratios included
            called = 1 if t == -math.inf else diagnose(None if v == -math.inf else v, t)
            if called:
                if y == 1:
                    tp += 1
                else:
                    fp += 1
        tps.append(tp)
        fps.append(fp)
    twice_area = 0
    for i in range(1, len(thresholds)):
        twice_area += (fps[i] - fps[i - 1]) * (tps[i] + tps[i - 1])
    auc = twice_area / (2 * n_pos * n_neg)
    return RocCurve(tuple(thresholds), tuple(fp / n_neg for fp in fps), tuple(tp / n_pos for tp in tps), auc)


def auc_or_none(scores, truths) -> Optional[float]:
    try:
        return roc_curve(scores, truths).auc
    except ValueError:
        return None


def objective_value(cm: ConfusionMatrix, objective: str) -> float:
    """Score to maximise; an undefined metric scores -inf."""
    m = metrics(cm)
    if objective == "max_accuracy":
        v = m.accuracy
    elif objective == "max_f1":
        v = m.f1
    elif objective == "youden":
        v = None if m.sensitivity is None or m.specificity is None else m.sensitivity + m.specificity - 1
    else:
        raise ValueError(f"unknown objective {objective!r}")
    return -math.inf if v is None else v


@dataclass(frozen=True)
class CalibrationResult:
    t_p: float
    t_r: float
    objective: str
    value: float
    confusion: ConfusionMatrix
    rocs: dict  # t_p -> RocCurve or None (single-class truths)
    table: tuple  # (t_p, t_r, objective value, sensitivity) per evaluated pair


def calibrate(psi_by_tp: Mapping[float, Sequence[Optional[float]]], truths: Sequence[int],
              t_p_grid: Sequence[float], t_r_grid: Sequence[float],
              objective: str = "youden") -> CalibrationResult:
    """Pick the (t_p, t_r) pair maximising ``objective`` on a validation set.

    ``psi_by_tp[t_p]`` holds one slide ratio per truth, computed with patch
    labels thresholded at ``t_p``. Ties go to higher sensitivity, then lower
    t_r, then the earlier t_p in ``t_p_grid``.
    """
    if not t_p_grid or not t_r_grid:
        raise ValueError("candidate grids must be non-empty")
    best = None
    rocs = {}
    table = []
    for tp_i, t_p in enumerate(t_p_grid):
        psis = psi_by_tp[t_p]
        if len(psis) != len(truths):
            raise ValueError(f"t_p={t_p}: {len(psis)} ratios for {len(truths)} slides")
        try:
            rocs[t_p] = roc_curve(psis, truths)
        except ValueError:
            rocs[t_p] = None
        for t_r in t_r_grid:
            preds = [diagnose(p, t_r) for p in psis]
            cm = confusion(preds, truths)
            val = objective_value(cm, objective)
            sens = metrics(cm).sensitivity
            sens_key = -math.inf if sens is None else sens
            table.append((t_p, t_r, val, sens))
            key = (val, sens_key, -t_r, -tp_i)
            if best is None or key > best[0]:
                best = (key, t_p, t_r, cm, val)
    _, t_p, t_r, cm, val = best
    return CalibrationResult(t_p, t_r, objective, val, cm, rocs, tuple(table))
