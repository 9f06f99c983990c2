"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line (shown in the "acceptance criteria"
section of the pytest summary) before asserting.
"""

import json
import random
import time
from fractions import Fraction

import numpy as np

from melanopipe.aggregate import (RoiMask, census, diagnose, extract_prognosis_patches, prognose, prognosis_ratio,
                                  ratio_mb, ratio_mt)
from melanopipe.cli import main
from melanopipe.core import PatchLabel
from melanopipe.evalkit import ConfusionMatrix, MetricsReport, fit_confusion, metrics, roc_curve
from melanopipe.slide_io import SlidePyramid
from melanopipe.synthgen import aligned_slide_spec, expected_census, generate
from melanopipe.tissue import refine_mask, segment_tissue

import oracles
from conftest import ACCEPTANCE_LINES


def record(n, ok, what, detail=""):
    ACCEPTANCE_LINES.append(f"[{n}] {'PASS' if ok else 'FAIL'}  {what}" + (f"  ({detail})" if detail else ""))
    print(ACCEPTANCE_LINES[-1])
    return ok


def rounded_match(cm, targets, tol=0.0005):
    got = metrics(cm).rounded(3)
    return all(abs(got[k] - v) <= tol + 1e-12 for k, v in targets.as_dict().items() if v is not None)


def test_1_reconstructed_cross_validation_table():
    roi_a = MetricsReport(sensitivity=0.941, specificity=0.714, f1=0.821, accuracy=0.816)
    roi_d = MetricsReport(sensitivity=1.000, specificity=0.571, f1=0.791, accuracy=0.763)
    t0 = time.perf_counter()
    found_a = fit_confusion(roi_a, 38, 17, tol=0.0005)
    found_d = fit_confusion(roi_d, 38, 17, tol=0.0005)
    dt = time.perf_counter() - t0
    want_a, want_d = ConfusionMatrix(16, 6, 15, 1), ConfusionMatrix(17, 9, 12, 0)
    ok = (want_a in found_a and want_d in found_d and rounded_match(want_a, roi_a)
          and rounded_match(want_d, roi_d) and dt < 1.0)
    record(1, ok, "ROI_a/ROI_d confusion reconstruction, n=38 pos=17",
           f"found {[c.as_tuple() for c in found_a]} / {[c.as_tuple() for c in found_d]}, {dt:.3f}s")
    assert ok


def test_2_reconstructed_test_set_table():
    targets = MetricsReport(sensitivity=0.977, specificity=0.146, f1=0.728, accuracy=0.601)
    t0 = time.perf_counter()
    found = fit_confusion(targets, 243, 133, tol=0.0005)
    dt = time.perf_counter() - t0
    want = ConfusionMatrix(130, 94, 16, 3)
    got = metrics(want)
    ok = want in found and rounded_match(want, targets) and dt < 1.0
    record(2, ok, "test-set confusion reconstruction, n=243 pos=133",
           f"found {[c.as_tuple() for c in found]}; (130,94,16,3) gives specificity {got.specificity:.6f}, "
           f"{dt:.3f}s")
    assert ok


def test_3_ratio_and_decision_oracles():
    rnd = random.Random(2024)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(1000):
        n = rnd.randint(1, 200)
        labels = [rnd.choice([PatchLabel.M, PatchLabel.B, PatchLabel.NE, PatchLabel.T]) for _ in range(n)]
        t_r, t_m = rnd.random(), rnd.random()
        c = census(labels)
        mb_o, mt_o = oracles.ratio_mb(labels), oracles.ratio_mt(labels)
        mb, mt = ratio_mb(c), ratio_mt(c)
        if (mb is None) != (mb_o is None) or (mb is not None and Fraction(mb) != Fraction(float(mb_o))):
            bad += 1
        if Fraction(mt) != Fraction(float(mt_o)):
            bad += 1
        for psi, psi_o in ((mb, mb_o), (mt, mt_o)):
            want = 0 if psi_o is None else int(psi_o >= Fraction(t_r))
            bad += diagnose(psi, t_r) != want
        bits = [rnd.randint(0, 1) for _ in range(rnd.randint(1, 300))]
        phi_o = Fraction(sum(1 for b in bits if b == 1), len(bits))
        phi = prognosis_ratio(bits)
        bad += Fraction(phi) != Fraction(float(phi_o))
        bad += prognose(phi, t_m) != int(phi_o >= Fraction(t_m))
    dt = time.perf_counter() - t0
    ok = bad == 0 and dt < 5.0
    record(3, ok, "ratio/decision functions vs brute-force tallies, 1000 cases", f"{bad} mismatches, {dt:.2f}s")
    assert ok


def random_layout(rnd, malignant):
    rows, cols = rnd.randint(2, 3), rnd.randint(2, 3)
    pool = "pbe." if not malignant else "pbe.p"
    cells = [rnd.choice(pool) for _ in range(rows * cols)]
    if malignant:
        for k in rnd.sample(range(rows * cols), rnd.randint(1, 2)):
            cells[k] = "m"
    return ["".join(cells[r * cols:(r + 1) * cols]) for r in range(rows)], cols


def test_4_synthetic_cohort_end_to_end(tmp_path, slide_dir):
    t0 = time.perf_counter()
    rnd = random.Random(4)
    specs, truths = [], {}
    for k in range(20):
        malignant = k < 10
        layout, cols = random_layout(rnd, malignant)
        spec = aligned_slide_spec(f"{'mal' if malignant else 'ben'}{k:02d}", layout, cols)
        specs.append(spec)
        truths[spec.slide_id] = malignant
    paths = slide_dir(specs)
    labels = tmp_path / "labels.csv"
    labels.write_text("".join(f"{s},{int(m)}\n" for s, m in truths.items()))
    val = tmp_path / "val"
    assert main(["run", *map(str, paths), "--labels", str(labels), "--out-dir", str(val)]) == 0
    cal = tmp_path / "cal"
    assert main(["calibrate", "--run-dir", str(val), "--t-p-grid", "0.5,0.9,0.999",
                 "--t-r-grid", "0.01,0.04,0.1", "--out-dir", str(cal)]) == 0
    chosen = json.loads((cal / "calibration.json").read_text())["chosen"]
    final = tmp_path / "final"
    assert main(["run", *map(str, paths), "--labels", str(labels), "--config", str(cal / "calibrated_config.yaml"),
                 "--out-dir", str(final)]) == 0
    ev = tmp_path / "ev"
    assert main(["eval", "--run-dir", str(final), "--out-dir", str(ev)]) == 0
    acc = json.loads((ev / "metrics.json").read_text())["diagnosis"]["metrics"]["accuracy"]
    mismatched = []
    for spec in specs:
        doc = json.loads((final / spec.slide_id / "result.json").read_text())
        _, truth = generate(spec)
        want = expected_census(truth, t_p=chosen["t_p"]).as_dict()
        if doc["diagnosis"]["census"] != want:
            mismatched.append(spec.slide_id)
    dt = time.perf_counter() - t0
    ok = acc == 1.0 and not mismatched and dt < 60.0
    record(4, ok, "20-slide synthetic cohort, calibrated thresholds",
           f"t_p={chosen['t_p']} t_r={chosen['t_r']} accuracy={acc} census mismatches={mismatched} {dt:.1f}s")
    assert ok


def test_5_overlap_rule_vs_rasterization():
    rnd = random.Random(5)
    t0 = time.perf_counter()
    bad = []
    for case in range(50):
        size = rnd.choice([16, 32, 64, 128, 256])
        foot = size * 2  # 20x over a 40x base
        cols, rows = rnd.randint(3, 8), rnd.randint(3, 8)
        w, h = cols * foot + rnd.randint(0, foot - 1), rows * foot + rnd.randint(0, foot - 1)
        slide = SlidePyramid.from_arrays("s", 40, {40: np.zeros((h, w, 3), np.uint8)})
        rects = []
        for _ in range(rnd.randint(1, 6)):
            if rnd.random() < 0.5:  # a 10x patch footprint on its own grid
                f10 = 2 * foot
                x, y = rnd.randrange(0, w // f10 + 1) * f10, rnd.randrange(0, h // f10 + 1) * f10
                rects.append((x, y, x + f10, y + f10))
            else:
                x0, y0 = rnd.randrange(0, w), rnd.randrange(0, h)
                rects.append((x0, y0, x0 + rnd.randint(1, 3 * foot), y0 + rnd.randint(1, 3 * foot)))
        rects = [(x0, y0, min(x1, w), min(y1, h)) for x0, y0, x1, y1 in rects if x0 < w and y0 < h]
        if not rects:
            rects = [(0, 0, foot, foot)]
        roi = RoiMask("s", tuple(rects))
        for mo in (0.5, 0.7, 0.9):
            got = [(p.x, p.y) for p in extract_prognosis_patches(slide, roi, 20, size, mo)]
            if got != oracles.rasterized_prognosis_tiles(w, h, rects, foot, mo):
                bad.append((case, mo))
    dt = time.perf_counter() - t0
    ok = not bad and dt < 30.0
    record(5, ok, "prognosis overlap rule vs pixel rasterization, 50 ROI configurations",
           f"mismatches {bad}, {dt:.2f}s")
    assert ok


def test_6_auc_equals_mann_whitney():
    rnd = random.Random(6)
    worst = 0.0
    for _ in range(100):
        n = rnd.randint(2, 40)
        truths = [rnd.randint(0, 1) for _ in range(n)]
        truths[0], truths[1] = 0, 1
        grid = rnd.choice([None, 5, 20])
        scores = [rnd.random() if grid is None else rnd.randint(0, grid) / grid for _ in range(n)]
        auc = roc_curve(scores, truths).auc
        worst = max(worst, abs(auc - float(oracles.mann_whitney_auc(scores, truths))))
    sep = roc_curve([0.6, 0.7, 0.9, 0.1, 0.2], [1, 1, 1, 0, 0]).auc
    const = roc_curve([0.25] * 7, [1, 0, 0, 1, 0, 1, 1]).auc
    ok = worst <= 1e-12 and sep == 1.0 and const == 0.5
    record(6, ok, "AUC vs Mann-Whitney on 100 score sets; separated and constant cases",
           f"max |diff| {worst:.2e}, separated {sep}, constant {const}")
    assert ok


def test_7_morphology_and_segmentation():
    rng = np.random.default_rng(7)
    not_idem = 0
    for _ in range(100):
        h, w = rng.integers(8, 48, size=2)
        mask = rng.random((h, w)) < rng.uniform(0.2, 0.8)
        r = int(rng.integers(1, 5))
        once = refine_mask(mask, r)
        not_idem += not np.array_equal(refine_mask(once, r), once)
    table = {(255, 255, 255): False, (255, 0, 255): True, (0, 255, 0): False}
    wrong = []
    for rgb, tissue in table.items():
        img = np.empty((9, 11, 3), np.uint8)
        img[...] = rgb
        m = segment_tissue(img)
        if not (m == tissue).all():
            wrong.append(rgb)
    ok = not_idem == 0 and not wrong
    record(7, ok, "refine_mask idempotence on 100 masks; colour table",
           f"{not_idem} non-idempotent, misclassified {wrong}")
    assert ok


def test_8_run_determinism(tmp_path, slide_dir):
    specs = [aligned_slide_spec("d1", ["mp", "pe"], cols=2), aligned_slide_spec("d2", ["bp", "p."], cols=2),
             aligned_slide_spec("d3", ["mmp", "ppe"], cols=3, noise=5, seed=3)]
    paths = slide_dir(specs)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        main(["run", *map(str, paths), "--t-p", "0.9", "--t-r", "0.1", "--out-dir", str(out)])
        outs.append(out)
    diffs = []
    for f in sorted(outs[0].rglob("*")):
        if not f.is_file():
            continue
        rel = f.relative_to(outs[0])
        other = outs[1] / rel
        if rel.name == "run_manifest.json":
            a, b = json.loads(f.read_text()), json.loads(other.read_text())
            for d in (a, b):
                d.pop("started"), d.pop("finished")
            same = json.dumps(a, sort_keys=True).replace(str(outs[0]), "") == \
                json.dumps(b, sort_keys=True).replace(str(outs[1]), "")
        else:
            same = other.is_file() and f.read_bytes() == other.read_bytes()
        if not same:
            diffs.append(str(rel))
    n_results = len(list(outs[0].rglob("result.json")))
    ok = not diffs and n_results == 3
    record(8, ok, "two runs on the same cohort produce identical documents",
           f"{n_results} result documents, differing files {diffs}")
    assert ok
