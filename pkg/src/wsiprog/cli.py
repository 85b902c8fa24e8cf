"""Staged command-line pipeline: synth, mask, extract, train, eval, report.

Every stage reads the previous stage's artifacts from one output directory:

    cohort/    slide pyramids + index.json          (synth)
    masks/     lesion masks, 1-bit PNG + sidecar    (mask)
    datasets/  fold manifests D_m<mags>_<t|v><k>.csv (extract)
    models/    classifier checkpoints + histories   (train)
    eval/      per-fold metrics and ROC points      (eval)
    report/    aggregated JSON/CSV/SVG report       (report)
    logs/      stage logs with versions and timings

Settings come from a JSON config file (--config) overridden by flags. Exit
codes: 0 success, 2 validation error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import load_checkpoint, save_checkpoint
from .embedding import ReferenceEmbedder, import_embeddings
from .evaluation import (
    METRIC_KEYS,
    CohortSlide,
    FoldReport,
    PipelineConfig,
    evaluate_fold,
    fit_fold,
    materialize_bundle,
    mean_report,
    write_roc_csv,
    write_roc_svg_from_points,
)
from .masking import (
    HsvThresholds,
    compute_lesion_mask,
    compute_tissue_mask,
    load_mask,
    rasterize_annotations,
    save_mask,
)
from .patching import (
    build_dataset,
    manifest_filename,
    read_manifest,
    stratified_kfold,
    write_manifest,
)
from .pyramid import load_slide, read_cohort_index, save_slide, write_cohort_index
from .synthetic import LESION_SHAPES, cohort_specs, generate_synthetic_slide
from .util import derive_seed


class CliError(Exception):
    """Configuration or precondition problem; maps to exit code 2."""


_CONFIG_KEYS = {
    "seed", "k", "magnifications", "patch_size", "coverage_min", "cap",
    "morph_radius", "hue_min", "hue_max", "sat_min", "augment",
    "learning_rate", "momentum", "dropout_rate", "max_epochs", "patience",
    "min_delta", "batch_size", "n", "balance", "size_40x", "shape", "signal",
    "workers",
}


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file {p} does not exist")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError(f"config file {p} must hold a JSON object")
    unknown = sorted(set(data) - _CONFIG_KEYS)
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(unknown)}")
    return data


def _parse_magnifications(value) -> tuple[float, ...]:
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",") if p.strip()]
    else:
        parts = list(value)
    try:
        mags = tuple(sorted(float(p) for p in parts))
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad magnification list {value!r}") from exc
    if not mags or any(m not in (10.0, 20.0, 40.0) for m in mags):
        raise CliError("magnifications must be a non-empty subset of 10,20,40")
    if len(set(mags)) != len(mags):
        raise CliError("magnifications must be distinct")
    return mags


class Settings:
    """Resolved stage settings: flag > config file > default."""

    def __init__(self, ns: argparse.Namespace):
        self.ns = ns
        self.fileconf = _load_config_file(ns.config)
        self.out = Path(ns.out)
        self.workers = int(self._get("workers", 1))
        self.seed = int(self._get("seed", 0))
        self.force = bool(getattr(ns, "force", False))

    def _get(self, key, default, flag: str | None = None):
        value = getattr(self.ns, flag or key, None)
        if value is not None:
            return value
        if key in self.fileconf:
            return self.fileconf[key]
        return default

    def magnifications(self) -> tuple[float, ...]:
        return _parse_magnifications(self._get("magnifications", "20"))

    def pipeline_config(self) -> PipelineConfig:
        thresholds = HsvThresholds(
            hue_min=float(self._get("hue_min", 100.0)),
            hue_max=float(self._get("hue_max", 180.0)),
            sat_min=float(self._get("sat_min", 30.0)),
        )
        augment = bool(self._get("augment", True))
        if getattr(self.ns, "no_augment", False):
            augment = False
        lr = self._get("learning_rate", None)
        return PipelineConfig(
            magnifications=self.magnifications(),
            k=int(self._get("k", 5)),
            seed=self.seed,
            patch_size=int(self._get("patch_size", 224)),
            coverage_min=float(self._get("coverage_min", 0.7)),
            cap=int(self._get("cap", 250)),
            thresholds=thresholds,
            morph_radius=int(self._get("morph_radius", 5)),
            augment=augment,
            learning_rate=None if lr is None else float(lr),
            momentum=float(self._get("momentum", 0.9)),
            dropout_rate=float(self._get("dropout_rate", 0.5)),
            max_epochs=int(self._get("max_epochs", 20)),
            patience=int(self._get("patience", 3)),
            min_delta=float(self._get("min_delta", 1e-4)),
            batch_size=int(self._get("batch_size", 32)),
        )

    def folds_to_run(self, k: int) -> list[int]:
        fold = getattr(self.ns, "fold", None)
        if fold is None:
            return list(range(1, k + 1))
        fold = int(fold)
        if not 1 <= fold <= k:
            raise CliError(f"--fold {fold} outside 1..{k}")
        return [fold]


def _mag_tag(mags: tuple[float, ...]) -> str:
    return "-".join(str(int(m)) for m in mags)


def _write_stage_log(out: Path, stage: str, settings: Settings, started: float,
                     extra: dict | None = None) -> None:
    import platform

    logs = out / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    payload = {
        "stage": stage,
        "seed": settings.seed,
        "workers": settings.workers,
        "duration_seconds": round(time.perf_counter() - started, 3),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "package_version": __version__,
    }
    if extra:
        payload.update(extra)
    (logs / f"{stage}.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def _run_parallel(worker, items: list, workers: int) -> list:
    """Apply `worker` to items, optionally across processes, keeping order."""
    if workers <= 1 or len(items) <= 1:
        return [worker(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, items))


# ---------------------------------------------------------------------------
# synth


def _synth_one(args) -> tuple[str, str]:
    spec, directory = args
    slide = generate_synthetic_slide(spec)
    save_slide(slide, directory)
    return slide.slide_id, slide.label


def cmd_synth(settings: Settings) -> int:
    started = time.perf_counter()
    ns = settings.ns
    n = settings._get("n", None, flag="n")
    if n is None:
        raise CliError("synth requires --n (or config key n)")
    n = int(n)
    if n < 2:
        raise CliError("--n must be at least 2")
    balance = settings._get("balance", None, flag="balance")
    if balance is None:
        n_bad = n // 2
        n_good = n - n_bad
    else:
        try:
            good_s, bad_s = str(balance).split(":")
            n_good, n_bad = int(good_s), int(bad_s)
        except ValueError as exc:
            raise CliError(f"--balance must look like G:B, got {balance!r}") from exc
        if n_good < 0 or n_bad < 0 or n_good + n_bad != n:
            raise CliError(f"--balance {balance} inconsistent with --n {n}")
    size = int(settings._get("size_40x", 2048, flag="size_40x"))
    shape = str(settings._get("shape", "lobed"))
    if shape not in LESION_SHAPES:
        raise CliError(f"--shape must be one of {', '.join(LESION_SHAPES)}")
    signal = float(settings._get("signal", 0.8))

    cohort_dir = settings.out / "cohort"
    if cohort_dir.exists() and any(cohort_dir.iterdir()):
        if not settings.force:
            raise CliError(f"{cohort_dir} is not empty; pass --force to overwrite")
        shutil.rmtree(cohort_dir)
    cohort_dir.mkdir(parents=True, exist_ok=True)

    specs = cohort_specs(
        n_good, n_bad, settings.seed, (size, size), shape, signal
    )
    jobs = [(spec, str(cohort_dir / spec.slide_id)) for spec in specs]
    results = _run_parallel(_synth_one, jobs, settings.workers)
    entries = [
        {"slide_id": sid, "label": label, "path": sid} for sid, label in results
    ]
    write_cohort_index(cohort_dir, entries)
    _write_stage_log(settings.out, "synth", settings, started, {"slides": len(entries)})
    print(f"synth: wrote {len(entries)} slides to {cohort_dir}")
    return 0


# ---------------------------------------------------------------------------
# mask


def _mask_one(args) -> str:
    slide_dir, mask_path, hue_min, hue_max, sat_min, radius = args
    pyramid = load_slide(slide_dir)
    thresholds = HsvThresholds(hue_min=hue_min, hue_max=hue_max, sat_min=sat_min)
    tissue = compute_tissue_mask(pyramid.levels[2.5], thresholds, pyramid.slide_id)
    annotation = rasterize_annotations(
        list(pyramid.annotations), tissue.shape, pyramid.slide_id
    )
    lesion = compute_lesion_mask(tissue, annotation, radius)
    save_mask(lesion, mask_path, thresholds, radius)
    return pyramid.slide_id


def _cohort_entries(settings: Settings) -> list[dict]:
    cohort_dir = settings.out / "cohort"
    try:
        return read_cohort_index(cohort_dir)
    except FileNotFoundError as exc:
        raise CliError(f"{exc}; run synth first") from exc


def cmd_mask(settings: Settings) -> int:
    started = time.perf_counter()
    entries = _cohort_entries(settings)
    config = settings.pipeline_config()
    masks_dir = settings.out / "masks"
    masks_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for entry in entries:
        mask_path = masks_dir / f"{entry['slide_id']}.png"
        if mask_path.exists() and not settings.force:
            continue
        jobs.append(
            (
                str(settings.out / "cohort" / entry["path"]),
                str(mask_path),
                config.thresholds.hue_min,
                config.thresholds.hue_max,
                config.thresholds.sat_min,
                config.morph_radius,
            )
        )
    _run_parallel(_mask_one, jobs, settings.workers)
    _write_stage_log(
        settings.out, "mask", settings, started,
        {"computed": len(jobs), "skipped": len(entries) - len(jobs)},
    )
    print(f"mask: {len(jobs)} computed, {len(entries) - len(jobs)} already present")
    return 0


# ---------------------------------------------------------------------------
# extract


def _load_lesion_masks(settings: Settings, entries: list[dict]) -> dict:
    masks_dir = settings.out / "masks"
    masks = {}
    for entry in entries:
        path = masks_dir / f"{entry['slide_id']}.png"
        if not path.exists():
            raise CliError(f"no mask at {path}; run mask first")
        masks[entry["slide_id"]] = load_mask(path)
    return masks


def cmd_extract(settings: Settings) -> int:
    started = time.perf_counter()
    entries = _cohort_entries(settings)
    config = settings.pipeline_config()
    masks = _load_lesion_masks(settings, entries)
    patients = [(e["slide_id"], e["label"]) for e in entries]
    assignments = stratified_kfold(
        patients, config.k, derive_seed(config.seed, "folds")
    )
    slides = [(e["slide_id"], e["label"], masks[e["slide_id"]]) for e in entries]
    datasets_dir = settings.out / "datasets"
    written = []
    for fold in settings.folds_to_run(config.k):
        train_ids, val_ids = assignments[fold - 1]
        train_m, val_m = build_dataset(
            slides,
            fold,
            train_ids,
            val_ids,
            config.magnifications,
            cap=config.cap,
            seed=config.seed,
            patch_size=config.patch_size,
            coverage_min=config.coverage_min,
        )
        for manifest in (train_m, val_m):
            name = manifest_filename(
                manifest.magnifications, manifest.split, manifest.fold
            )
            written.append(write_manifest(manifest, datasets_dir / name))
    _write_stage_log(
        settings.out, "extract", settings, started, {"manifests": len(written)}
    )
    print(f"extract: wrote {len(written)} manifests to {datasets_dir}")
    return 0


# ---------------------------------------------------------------------------
# train


def _read_fold_manifests(settings: Settings, config: PipelineConfig, fold: int):
    datasets_dir = settings.out / "datasets"
    manifests = []
    for split in ("t", "v"):
        path = datasets_dir / manifest_filename(config.magnifications, split, fold)
        if not path.exists():
            raise CliError(f"no dataset manifest at {path}; run extract first")
        manifests.append(read_manifest(path))
    return manifests


def _bundles_from_manifest(
    settings: Settings,
    config: PipelineConfig,
    manifest,
    entries: list[dict],
    embedders: dict,
    imported,
    keep_rasters: bool,
):
    by_path = {e["slide_id"]: e["path"] for e in entries}
    grouped = manifest.entries_by_slide()
    bundles = []
    for slide_id, coords in grouped.items():
        if slide_id not in by_path:
            raise CliError(f"manifest slide {slide_id} missing from cohort index")
        slide = CohortSlide(
            slide_id=slide_id,
            label=coords[0].label,
            loader=partial(load_slide, settings.out / "cohort" / by_path[slide_id]),
        )
        bundle = materialize_bundle(
            slide, coords, config, embedders, imported, keep_rasters
        )
        slide.release_pyramid()
        bundles.append(bundle)
    return bundles


def _model_paths(settings: Settings, config: PipelineConfig, fold: int):
    tag = _mag_tag(config.magnifications)
    models_dir = settings.out / "models"
    return (
        models_dir / f"model_m{tag}_fold{fold}.npz",
        models_dir / f"history_m{tag}_fold{fold}.json",
    )


def _augmentation_note(config: PipelineConfig, imported) -> str:
    if imported is not None:
        return "disabled: training used precomputed embeddings"
    if not config.augment:
        return "disabled by configuration"
    return "enabled: random resized crop and horizontal flip, re-embedded per epoch"


def cmd_train(settings: Settings) -> int:
    started = time.perf_counter()
    entries = _cohort_entries(settings)
    config = settings.pipeline_config()
    imported = None
    if getattr(settings.ns, "embeddings", None):
        path = Path(settings.ns.embeddings)
        if not path.exists():
            raise CliError(f"embeddings file {path} does not exist")
        imported = import_embeddings(path)
    augment = config.augment and imported is None
    note = _augmentation_note(config, imported)
    embedders = {
        m: ReferenceEmbedder(m, config.seed, config.patch_size)
        for m in config.magnifications
    }
    for fold in settings.folds_to_run(config.k):
        train_m, val_m = _read_fold_manifests(settings, config, fold)
        train_bundles = _bundles_from_manifest(
            settings, config, train_m, entries, embedders, imported, augment
        )
        val_bundles = _bundles_from_manifest(
            settings, config, val_m, entries, embedders, imported, False
        )
        params, history = fit_fold(
            fold, train_bundles, val_bundles, config, embedders, augment
        )
        model_path, history_path = _model_paths(settings, config, fold)
        save_checkpoint(params, config.train_config(fold, augment), model_path)
        history_path.parent.mkdir(parents=True, exist_ok=True)
        history_path.write_text(
            json.dumps(
                {
                    "train_loss": history.train_loss,
                    "val_loss": history.val_loss,
                    "val_accuracy": history.val_accuracy,
                    "stopped_epoch": history.stopped_epoch,
                    "stop_reason": history.stop_reason,
                    "augmentation": note,
                },
                indent=2,
                sort_keys=True,
            )
            + "\n"
        )
        print(
            f"train: fold {fold} stopped at epoch {history.stopped_epoch} "
            f"({history.stop_reason}), model at {model_path}"
        )
    _write_stage_log(settings.out, "train", settings, started)
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(settings: Settings) -> int:
    started = time.perf_counter()
    entries = _cohort_entries(settings)
    config = settings.pipeline_config()
    imported = None
    if getattr(settings.ns, "embeddings", None):
        imported = import_embeddings(Path(settings.ns.embeddings))
    embedders = {
        m: ReferenceEmbedder(m, config.seed, config.patch_size)
        for m in config.magnifications
    }
    eval_dir = settings.out / "eval"
    tag = _mag_tag(config.magnifications)
    for fold in settings.folds_to_run(config.k):
        model_path, history_path = _model_paths(settings, config, fold)
        if not model_path.exists():
            raise CliError(f"no checkpoint at {model_path}; run train first")
        params, _ = load_checkpoint(model_path)
        history_info = json.loads(history_path.read_text())
        train_m, val_m = _read_fold_manifests(settings, config, fold)
        train_bundles = _bundles_from_manifest(
            settings, config, train_m, entries, embedders, imported, False
        )
        val_bundles = _bundles_from_manifest(
            settings, config, val_m, entries, embedders, imported, False
        )
        outcome = evaluate_fold(fold, params, train_bundles, val_bundles)
        payload = {
            **outcome.report.to_dict(),
            "stop_reason": history_info["stop_reason"],
            "stopped_epoch": history_info["stopped_epoch"],
            "augmentation": history_info["augmentation"],
            "n_train_patients": len(outcome.train_scores),
            "n_val_patients": len(outcome.val_scores),
            "warnings": sorted(set(train_m.warnings + val_m.warnings)),
        }
        eval_dir.mkdir(parents=True, exist_ok=True)
        (eval_dir / f"eval_m{tag}_fold{fold}.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n"
        )
        write_roc_csv(outcome.val_curve, eval_dir / f"roc_m{tag}_fold{fold}.csv")
        print(
            f"eval: fold {fold} AUC {outcome.report.auc:.4f} "
            f"threshold {outcome.report.threshold:.4f}"
        )
    _write_stage_log(settings.out, "eval", settings, started)
    return 0


# ---------------------------------------------------------------------------
# report


def cmd_report(settings: Settings) -> int:
    started = time.perf_counter()
    config = settings.pipeline_config()
    eval_dir = settings.out / "eval"
    tag = _mag_tag(config.magnifications)
    fold_payloads = []
    curves = []
    for fold in range(1, config.k + 1):
        path = eval_dir / f"eval_m{tag}_fold{fold}.json"
        if not path.exists():
            raise CliError(f"no fold evaluation at {path}; run eval first")
        payload = json.loads(path.read_text())
        fold_payloads.append(payload)
        roc_path = eval_dir / f"roc_m{tag}_fold{fold}.csv"
        if roc_path.exists():
            rows = roc_path.read_text().splitlines()[1:]
            fpr = [float(r.split(",")[4]) for r in rows]
            tpr = [float(r.split(",")[3]) for r in rows]
            curves.append(
                (f"fold {fold} (AUC {payload['auc']:.3f})", fpr, tpr)
            )

    reports = [
        FoldReport(**{k: p[k] for k in (
            "fold", "threshold", "sensitivity", "specificity", "f1",
            "accuracy", "auc", "tp", "fn", "tn", "fp",
        )})
        for p in fold_payloads
    ]
    mean = mean_report(reports)
    warnings = sorted({w for p in fold_payloads for w in p.get("warnings", [])})
    report = {
        "config": config.to_dict(),
        "augmentation": fold_payloads[0]["augmentation"],
        "folds": fold_payloads,
        "mean": mean,
        "warnings": warnings,
    }
    report_dir = settings.out / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    json_path = report_dir / f"report_m{tag}.json"
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    csv_path = report_dir / f"report_m{tag}.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fold"] + list(METRIC_KEYS) + ["tp", "fn", "tn", "fp"])
        for rep in reports:
            writer.writerow(
                [rep.fold]
                + [repr(getattr(rep, k)) for k in METRIC_KEYS]
                + [rep.tp, rep.fn, rep.tn, rep.fp]
            )
        writer.writerow(["mean"] + [repr(mean[k]) for k in METRIC_KEYS] + [""] * 4)

    svg_path = report_dir / f"roc_m{tag}.svg"
    write_roc_svg_from_points(
        curves, f"Validation ROC, mean AUC {mean['auc']:.3f}", svg_path
    )
    _write_stage_log(settings.out, "report", settings, started)
    print(f"report: mean AUC {mean['auc']:.4f}, artifacts in {report_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wsiprog",
        description="Slide-to-prognosis pipeline on synthetic slide pyramids.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--out", default="wsiout", help="output directory root")
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--workers", type=int, default=None,
                        help="slide-level parallelism (default 1)")
    common.add_argument("--force", action="store_true",
                        help="overwrite existing artifacts")

    sub = parser.add_subparsers(dest="stage", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic cohort")
    p.add_argument("--n", type=int, default=None, help="number of slides")
    p.add_argument("--balance", default=None, help="good:bad counts, e.g. 26:26")
    p.add_argument("--size-40x", dest="size_40x", type=int, default=None,
                   help="square 40x side length (default 2048)")
    p.add_argument("--shape", default=None, choices=LESION_SHAPES)
    p.add_argument("--signal", type=float, default=None,
                   help="class signal strength in [0,1]")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mask", parents=[common], help="compute lesion masks")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("extract", parents=[common],
                       help="build fold dataset manifests")
    p.add_argument("--magnifications", default=None, help="e.g. 20 or 10,20,40")
    p.add_argument("--fold", type=int, default=None, help="restrict to one fold")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="train fold classifiers")
    p.add_argument("--magnifications", default=None)
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--embeddings", default=None,
                   help="precomputed embedding file (disables augmentation)")
    p.add_argument("--no-augment", dest="no_augment", action="store_true",
                   help="train on un-augmented features")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate fold models")
    p.add_argument("--magnifications", default=None)
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--embeddings", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="aggregate fold reports")
    p.add_argument("--magnifications", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        settings = Settings(ns)
        return ns.func(settings)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # stage failure
        print(f"error: {ns.stage} failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
