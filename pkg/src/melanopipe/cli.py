"""Command-line entry point: ``melanopipe <subcommand>``.

Exit codes: 0 success, 1 at least one slide failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, kernels
from .core import ClinicalLabel, ConfigError, PipelineConfig, dump_json, mag_str, read_labels_file
from .evalkit import calibrate, confusion, metrics, roc_curve
from .pipeline import (DIAG_GRID_FILE, DIAG_SCORES_FILE, DIAGNOSIS_FILE, MASK_FILE, PROG_GRID_FILE,
                       PROG_SCORES_FILE, RESULT_FILE, diagnosis_from_files, extract_stage, load_scores,
                       prognosis_from_diagnosis, psi_for_threshold, render_label_mask, run_slide,
                       save_rgb_png, segment_stage)
from .scoring import ScorerDescriptor, align_scores, label_patches, score_patches, write_score_file
from .slide_io import open_slide
from .synthgen import SpecError, SlideSpec, write_synthetic
from .tissue import load_grid, load_mask, save_grid, save_mask

log = logging.getLogger("melanopipe")

MANIFEST_FILE = "run_manifest.json"
SUMMARY_FILE = "summary.csv"

EXIT_OK, EXIT_SLIDE_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- argument plumbing --------------------------------------------------------

CONFIG_FLAGS = {
    "t_p": float, "t_r": float, "t_m": float, "ratio_method": str, "diag_mag": str, "prog_mag": str,
    "patch_size": int, "min_tissue_frac": float, "min_roi_overlap": float, "hue_lo": int, "hue_hi": int,
    "morph_radius": int, "seed": int, "objective": str,
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline config (overrides --config)")
    g.add_argument("--config", type=Path, help="YAML/JSON key/value config file")
    for name, typ in CONFIG_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)


def _resolve_config(args) -> PipelineConfig:
    overrides = {k: getattr(args, k, None) for k in CONFIG_FLAGS}
    if getattr(args, "config", None):
        return PipelineConfig.load(args.config, **overrides)
    return PipelineConfig.from_mapping({k: v for k, v in overrides.items() if v is not None})


def _scorer(text: str, arity: int) -> ScorerDescriptor:
    try:
        return ScorerDescriptor.parse(text, arity)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


# -- run ----------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _resolve_config(args)
    scorer = _scorer(args.scorer, 3)
    prog_scorer = _scorer(args.prog_scorer, 2)
    labels = read_labels_file(args.labels) if args.labels else {}
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    slides = list(args.slides)

    def one(path: Path) -> dict:
        entry = {"path": str(path), "slide_id": path.name, "status": "ok", "error": None, "outputs": {}}
        try:
            res = run_slide(path, out, cfg, scorer, prog_scorer)
            entry["slide_id"] = res.slide_id
            rel = Path(res.slide_id)
            outputs = {"mask": rel / MASK_FILE, "grid": rel / DIAG_GRID_FILE, "scores": rel / DIAG_SCORES_FILE,
                       "diagnosis": rel / DIAGNOSIS_FILE, "result": rel / RESULT_FILE}
            if res.result["prognosis"]["applicable"]:
                outputs["prognosis_grid"] = rel / PROG_GRID_FILE
                outputs["prognosis_scores"] = rel / PROG_SCORES_FILE
            entry["outputs"] = {k: str(v) for k, v in outputs.items()}
            entry["diagnosis"] = res.result["diagnosis"]["decision"]
            entry["prognosis"] = res.result["prognosis"].get("decision")
        except Exception as exc:  # per-slide fault isolation
            entry["status"] = "failed"
            entry["error"] = f"{type(exc).__name__}: {exc}"
            log.error("slide %s failed: %s", path, entry["error"])
            log.debug("%s", traceback.format_exc())
        return entry

    workers = max(1, args.workers)
    if workers == 1:
        entries = [one(p) for p in slides]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(one, slides))
    for e in entries:
        lab = labels.get(e["slide_id"])
        e["label"] = None if lab is None else {"diagnosis": lab.diagnosis, "prognosis": lab.prognosis}
    manifest = {
        "pipeline_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "config": cfg.to_dict(),
        "scorer": args.scorer,
        "prog_scorer": args.prog_scorer,
        "labels_file": str(args.labels) if args.labels else None,
        "started": started,
        "finished": _now(),
        "slides": entries,
    }
    (out / MANIFEST_FILE).write_text(dump_json(manifest))
    with (out / SUMMARY_FILE).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slide_id", "status", "diagnosis", "prognosis", "error"])
        for e in entries:
            w.writerow([e["slide_id"], e["status"], e.get("diagnosis", ""),
                        "" if e.get("prognosis") is None else e["prognosis"], e["error"] or ""])
    failed = sum(e["status"] != "ok" for e in entries)
    print(f"{len(entries) - failed}/{len(entries)} slides ok; manifest at {out / MANIFEST_FILE}")
    return EXIT_SLIDE_FAILED if failed else EXIT_OK


# -- individual stages --------------------------------------------------------

def cmd_segment(args) -> int:
    cfg = _resolve_config(args)
    slide = open_slide(args.slide)
    mask = segment_stage(slide, cfg)
    save_mask(mask, args.out)
    print(f"{slide.slide_id}: mask {mask.mask.shape[1]}x{mask.mask.shape[0]} at {mag_str(mask.mag)}x, "
          f"tissue {mask.mask.mean():.3f}")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = _resolve_config(args)
    slide = open_slide(args.slide)
    grid = extract_stage(slide, load_mask(args.mask), cfg)
    save_grid(grid, args.out)
    print(f"{slide.slide_id}: {len(grid)} patches at {mag_str(grid.mag)}x")
    return EXIT_OK


def cmd_score(args) -> int:
    slide = open_slide(args.slide)
    grid = load_grid(args.grid)
    scorer = _scorer(args.scorer, args.arity)
    scores = score_patches(scorer, slide, grid)
    write_score_file(scores, args.out)
    print(f"{slide.slide_id}: scored {len(scores)} patches")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _resolve_config(args)
    grid = load_grid(args.grid)
    scores = load_scores(args.scores, 3)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    doc = diagnosis_from_files(args.out_dir, grid, scores, cfg)
    d = doc["diagnosis"]
    print(f"{grid.slide_id}: psi_{d['method']}={d['psi']} -> {d['label']}")
    return EXIT_OK


def cmd_prognose(args) -> int:
    cfg = _resolve_config(args)
    slide = open_slide(args.slide)
    diag_doc = json.loads(Path(args.diagnosis).read_text())
    args.out_dir.mkdir(parents=True, exist_ok=True)
    doc = prognosis_from_diagnosis(slide, diag_doc, cfg, _scorer(args.prog_scorer, 2), args.out_dir)
    p = doc["prognosis"]
    if p["applicable"]:
        print(f"{slide.slide_id}: phi={p['phi']} over {p['n_patches']} patches -> {p['label']}")
    else:
        print(f"{slide.slide_id}: prognosis not applicable ({p['reason']})")
    return EXIT_OK


def cmd_render(args) -> int:
    slide = open_slide(args.slide)
    grid = load_grid(args.grid)
    scores = align_scores(grid, load_scores(args.scores, 3))
    labels = label_patches(scores, args.t_p)
    save_rgb_png(render_label_mask(slide, grid, labels), args.out)
    print(f"{slide.slide_id}: rendered {len(grid)} patches at t_p={args.t_p} to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SlideSpec.load(args.spec)
    pkg, truth = write_synthetic(spec, args.out_dir)
    print(f"{spec.slide_id}: wrote {pkg} (expected diagnosis {truth.expected_diagnosis})")
    return EXIT_OK


# -- evaluation ---------------------------------------------------------------

def _finite(v):
    return v if v is None or math.isfinite(v) else None


def _load_run(run_dir: Path) -> tuple[dict, list[dict]]:
    manifest_path = run_dir / MANIFEST_FILE
    if not manifest_path.is_file():
        raise UsageError(f"{run_dir}: no {MANIFEST_FILE}")
    manifest = json.loads(manifest_path.read_text())
    return manifest, [e for e in manifest["slides"] if e["status"] == "ok"]


def _labels_for(args, manifest: dict) -> dict[str, ClinicalLabel]:
    if args.labels:
        return read_labels_file(args.labels)
    out = {}
    for e in manifest["slides"]:
        if e.get("label"):
            out[e["slide_id"]] = ClinicalLabel(e["label"]["diagnosis"], e["label"]["prognosis"])
    return out


def _metrics_block(preds, truths) -> dict:
    cm = confusion(preds, truths)
    m = metrics(cm)
    return {"n": cm.total, "confusion": {"tp": cm.tp, "fp": cm.fp, "tn": cm.tn, "fn": cm.fn},
            "metrics": m.as_dict(), "metrics_rounded": m.rounded(3)}


def evaluate_results(results: Sequence[dict], labels: dict[str, ClinicalLabel]) -> tuple[dict, object]:
    """Diagnosis-only (D) and full-pipeline (P) metrics plus the diagnosis ROC.

    P scores the end-to-end call "melanoma with bad prognosis" against the
    same clinical event; melanoma slides lacking a prognosis label are left
    out of P.
    """
    missing = [r["slide_id"] for r in results if r["slide_id"] not in labels]
    if missing:
        raise UsageError(f"no clinical label for slides: {', '.join(missing)}")
    d_pred, d_true, psis = [], [], []
    p_pred, p_true, skipped = [], [], []
    for r in results:
        lab = labels[r["slide_id"]]
        d = r["diagnosis"]
        d_pred.append(d["decision"])
        d_true.append(lab.diagnosis)
        psis.append(d["psi"])
        if lab.diagnosis == 1 and lab.prognosis is None:
            skipped.append(r["slide_id"])
            continue
        prog = r.get("prognosis", {})
        p_pred.append(1 if d["decision"] == 1 and prog.get("applicable") and prog.get("decision") == 1 else 0)
        p_true.append(1 if lab.diagnosis == 1 and lab.prognosis == 1 else 0)
    report = {"diagnosis": _metrics_block(d_pred, d_true)}
    roc = None
    try:
        roc = roc_curve(psis, d_true)
        report["diagnosis"]["auc"] = roc.auc
    except ValueError:
        report["diagnosis"]["auc"] = None
    report["pipeline"] = _metrics_block(p_pred, p_true) if p_pred else None
    report["pipeline_skipped"] = skipped
    return report, roc


def cmd_eval(args) -> int:
    if args.run_dir:
        manifest, entries = _load_run(args.run_dir)
        results = [json.loads((args.run_dir / e["outputs"]["result"]).read_text()) for e in entries]
        labels = _labels_for(args, manifest)
    else:
        if not args.labels:
            raise UsageError("--labels is required with --results")
        results = [json.loads(Path(p).read_text()) for p in args.results]
        labels = read_labels_file(args.labels)
    if not results:
        raise UsageError("no slide results to evaluate")
    report, roc = evaluate_results(results, labels)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    if roc is not None:
        roc.write_csv(out / "roc_diagnosis.csv")
    (out / "metrics.json").write_text(dump_json(report))
    for stage in ("diagnosis", "pipeline"):
        blk = report.get(stage)
        if blk:
            r = blk["metrics_rounded"]
            print(f"{stage:9s} n={blk['n']:3d} sens={r['sensitivity']} spec={r['specificity']} "
                  f"f1={r['f1']} acc={r['accuracy']}" + (f" auc={blk['auc']}" if "auc" in blk else ""))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    manifest, entries = _load_run(args.run_dir)
    labels = _labels_for(args, manifest)
    cfg = _resolve_config(args)
    method = args.ratio_method or manifest["config"]["ratio_method"]
    truths, grids = [], []
    for e in entries:
        if e["slide_id"] not in labels:
            raise UsageError(f"no clinical label for slide {e['slide_id']}")
        truths.append(labels[e["slide_id"]].diagnosis)
        grid = load_grid(args.run_dir / e["outputs"]["grid"])
        grids.append((grid, load_scores(args.run_dir / e["outputs"]["scores"], 3)))
    if not truths:
        raise UsageError("no successfully processed slides in the run")
    psi_by_tp = {tp: [psi_for_threshold(g, s, tp, method) for g, s in grids] for tp in args.t_p_grid}
    res = calibrate(psi_by_tp, truths, args.t_p_grid, args.t_r_grid, args.objective or cfg.objective)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    roc_files = {}
    for i, (tp, roc) in enumerate(res.rocs.items()):
        if roc is None:
            roc_files[repr(tp)] = {"file": None, "auc": None}
            continue
        name = f"roc_tp_{i:02d}.csv"
        roc.write_csv(out / name)
        roc_files[repr(tp)] = {"file": name, "auc": roc.auc}
    summary = {
        "method": method,
        "objective": res.objective,
        "chosen": {"t_p": res.t_p, "t_r": res.t_r, "value": _finite(res.value),
                   "confusion": {"tp": res.confusion.tp, "fp": res.confusion.fp,
                                 "tn": res.confusion.tn, "fn": res.confusion.fn}},
        "roc": roc_files,
        "grid": [{"t_p": a, "t_r": b, "objective": _finite(v), "sensitivity": s} for a, b, v, s in res.table],
    }
    (out / "calibration.json").write_text(dump_json(summary))
    (out / "calibrated_config.yaml").write_text(
        f"# chosen by {res.objective} on {len(truths)} validation slides\n"
        f"t_p: {res.t_p!r}\nt_r: {res.t_r!r}\nratio_method: {method}\n")
    print(f"chosen t_p={res.t_p} t_r={res.t_r} ({res.objective}={res.value})")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="melanopipe", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", help="full pipeline over a cohort of slide packages")
    s.add_argument("slides", nargs="+", type=Path)
    s.add_argument("--labels", type=Path, help="slide_id,diagnosis[,prognosis] file")
    s.add_argument("--scorer", default="reference", help="reference | scores-file=PATH (file or directory)")
    s.add_argument("--prog-scorer", default="reference", help="reference | scores-file=PATH")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out-dir", type=Path, required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("segment", help="tissue mask of one slide")
    s.add_argument("slide", type=Path)
    s.add_argument("--out", type=Path, required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("extract", help="valid diagnosis patch grid from a tissue mask")
    s.add_argument("slide", type=Path)
    s.add_argument("--mask", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("score", help="score grid patches into a score file")
    s.add_argument("slide", type=Path)
    s.add_argument("--grid", type=Path, required=True)
    s.add_argument("--scorer", default="reference")
    s.add_argument("--arity", type=int, choices=(2, 3), default=3)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("diagnose", help="slide diagnosis from a grid and its scores")
    s.add_argument("--grid", type=Path, required=True)
    s.add_argument("--scores", type=Path, required=True)
    s.add_argument("--out-dir", type=Path, required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("prognose", help="prognosis over the malignant ROI of a diagnosis")
    s.add_argument("slide", type=Path)
    s.add_argument("--diagnosis", type=Path, required=True)
    s.add_argument("--prog-scorer", default="reference")
    s.add_argument("--out-dir", type=Path, required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_prognose)

    s = sub.add_parser("eval", help="metrics and ROC against clinical labels")
    s.add_argument("--run-dir", type=Path)
    s.add_argument("--results", type=Path, nargs="*")
    s.add_argument("--labels", type=Path)
    s.add_argument("--out-dir", type=Path, required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("calibrate", help="choose t_p and t_r on a validation run")
    s.add_argument("--run-dir", type=Path, required=True)
    s.add_argument("--labels", type=Path)
    s.add_argument("--t-p-grid", type=_float_list, required=True)
    s.add_argument("--t-r-grid", type=_float_list, required=True)
    s.add_argument("--out-dir", type=Path, required=True)
    _add_config_flags(s)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("render", help="colour-coded patch label mask (M red, B green, NE blue, T gray)")
    s.add_argument("slide", type=Path)
    s.add_argument("--grid", type=Path, required=True)
    s.add_argument("--scores", type=Path, required=True)
    s.add_argument("--t-p", type=float, default=0.999)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("synth", help="generate a synthetic slide package from a spec file")
    s.add_argument("spec", type=Path)
    s.add_argument("--out-dir", type=Path, required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, SpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SLIDE_FAILED


if __name__ == "__main__":
    sys.exit(main())
