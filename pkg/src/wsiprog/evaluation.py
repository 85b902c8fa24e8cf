"""Patient-level scoring, ROC analysis, and the cross-validation harness.

A patient's score Y is the fraction of their patches predicted bad; Y > T
classifies the patient as bad prognosis. T is chosen on the training set as
the threshold maximizing sensitivity + specificity (smallest T on ties). ROC
curves keep integer confusion counts so the trapezoidal AUC equals the
pairwise rank statistic exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .classifier import (
    StaticFeatureSource,
    TrainConfig,
    TrainHistory,
    init_classifier,
    predict_batch,
    train,
)
from .embedding import (
    FEATURE_DIM,
    AugmentedFeatureSource,
    ConcatFeature,
    PatchRef,
    ReferenceEmbedder,
    read_patch,
)
from .masking import (
    DEFAULT_MORPH_RADIUS,
    BinaryMask,
    HsvThresholds,
    WORKING_MAGNIFICATION,
    compute_lesion_mask,
    compute_tissue_mask,
    rasterize_annotations,
)
from .patching import (
    COVERAGE_MIN,
    PATCH_CAP,
    PATCH_SIZE,
    DatasetManifest,
    PatchCoordinate,
    extract_valid_coordinates,
    sample_coordinates,
    stratified_kfold,
)
from .pyramid import SlidePyramid, label_to_int
from .util import derive_seed


@dataclass(frozen=True)
class PatientScore:
    """Fraction of a patient's patches predicted bad, with provenance."""

    slide_id: str
    Y: float
    n_patches: int
    label: str

    def __post_init__(self):
        if self.n_patches < 1:
            raise ValueError("a patient score needs at least one patch")
        if not 0.0 <= self.Y <= 1.0:
            raise ValueError("Y must lie in [0, 1]")


def aggregate_patient(
    patch_predictions, slide_id: str = "", label: str = "good"
) -> PatientScore:
    """Mean of hard patch labels for one slide."""
    preds = np.asarray(list(patch_predictions), dtype=np.int64)
    if preds.size == 0:
        raise ValueError(f"no patches for slide {slide_id!r}")
    if not np.all((preds == 0) | (preds == 1)):
        raise ValueError("patch predictions must be 0 or 1")
    return PatientScore(
        slide_id=slide_id,
        Y=float(preds.mean()),
        n_patches=int(preds.size),
        label=label,
    )


def _label_ints(labels) -> np.ndarray:
    out = np.array(
        [label_to_int(lab) if isinstance(lab, str) else int(lab) for lab in labels],
        dtype=np.int64,
    )
    if not np.all((out == 0) | (out == 1)):
        raise ValueError("labels must be good/bad or 0/1")
    return out


@dataclass
class RocCurve:
    """ROC points with integer confusion counts per threshold.

    Thresholds run descending: the first point classifies nothing bad (0,0),
    the last everything bad (1,1). Keeping tp/fp as integers lets AUC and
    threshold selection work in exact arithmetic.
    """

    thresholds: np.ndarray  # float, descending
    tp: np.ndarray  # int, non-decreasing
    fp: np.ndarray  # int, non-decreasing
    n_pos: int
    n_neg: int

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.tp = np.asarray(self.tp, dtype=np.int64)
        self.fp = np.asarray(self.fp, dtype=np.int64)

    @property
    def tpr(self) -> np.ndarray:
        return self.tp / self.n_pos

    @property
    def fpr(self) -> np.ndarray:
        return self.fp / self.n_neg

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return [
            (float(f), float(t), float(th))
            for f, t, th in zip(self.fpr, self.tpr, self.thresholds)
        ]


def roc_curve(scores) -> RocCurve:
    """Sweep the rule "Y > T -> bad" over sentinel and midpoint thresholds.

    `scores` holds (Y, label) pairs; labels may be good/bad strings or 0/1
    integers with 1 = bad = positive class.
    """
    pairs = list(scores)
    if not pairs:
        raise ValueError("no scores given")
    ys = np.array([y for y, _ in pairs], dtype=np.float64)
    labels = _label_ints([lab for _, lab in pairs])
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")
    distinct = np.unique(ys)
    candidates = [distinct[-1] + 1.0]
    for i in range(len(distinct) - 1, 0, -1):
        candidates.append((distinct[i - 1] + distinct[i]) / 2.0)
    candidates.append(distinct[0] - 1.0)
    thresholds = np.array(candidates)
    bad_scores = ys[labels == 1]
    good_scores = ys[labels == 0]
    tp = np.array([int(np.sum(bad_scores > t)) for t in thresholds])
    fp = np.array([int(np.sum(good_scores > t)) for t in thresholds])
    return RocCurve(thresholds=thresholds, tp=tp, fp=fp, n_pos=n_pos, n_neg=n_neg)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area in integer arithmetic, divided once at the end.

    Equals the rank statistic P(Y_bad > Y_good) + 0.5 P(Y_bad = Y_good).
    """
    total = 0
    for i in range(len(curve.thresholds) - 1):
        dfp = int(curve.fp[i + 1] - curve.fp[i])
        total += dfp * int(curve.tp[i] + curve.tp[i + 1])
    return total / (2 * curve.n_pos * curve.n_neg)


def select_threshold(curve: RocCurve) -> float:
    """Maximize sensitivity + specificity; ties resolve to the smallest T.

    The objective is evaluated as the integer tp*n_neg - fp*n_pos, an
    affine transform of sensitivity + specificity, so ties are exact.
    """
    best_j = None
    best_t = None
    for i in range(len(curve.thresholds)):
        j = int(curve.tp[i]) * curve.n_neg - int(curve.fp[i]) * curve.n_pos
        # thresholds descend, so accepting ties keeps the smallest T
        if best_j is None or j >= best_j:
            best_j = j
            best_t = float(curve.thresholds[i])
    return best_t


def confusion_counts(predictions, labels) -> tuple[int, int, int, int]:
    """(TP, FN, TN, FP) with bad prognosis as the positive class."""
    preds = _label_ints(predictions)
    labs = _label_ints(labels)
    if len(preds) != len(labs):
        raise ValueError("predictions and labels differ in length")
    tp = int(np.sum((preds == 1) & (labs == 1)))
    fn = int(np.sum((preds == 0) & (labs == 1)))
    tn = int(np.sum((preds == 0) & (labs == 0)))
    fp = int(np.sum((preds == 1) & (labs == 0)))
    return tp, fn, tn, fp


def metrics_from_counts(tp: int, fn: int, tn: int, fp: int) -> dict[str, float]:
    if tp + fn == 0 or tn + fp == 0:
        raise ValueError("confusion counts must cover both classes")
    return {
        "sensitivity": tp / (tp + fn),
        "specificity": tn / (tn + fp),
        "f1": 2 * tp / (2 * tp + fp + fn),
        "accuracy": (tp + tn) / (tp + fn + tn + fp),
    }


def confusion_metrics(predictions, labels) -> dict[str, float]:
    tp, fn, tn, fp = confusion_counts(predictions, labels)
    return metrics_from_counts(tp, fn, tn, fp)


@dataclass
class FoldReport:
    fold: int
    threshold: float
    sensitivity: float
    specificity: float
    f1: float
    accuracy: float
    auc: float
    tp: int
    fn: int
    tn: int
    fp: int

    def recomputed_metrics(self) -> dict[str, float]:
        return metrics_from_counts(self.tp, self.fn, self.tn, self.fp)

    def to_dict(self) -> dict:
        return asdict(self)


METRIC_KEYS = ("threshold", "sensitivity", "specificity", "f1", "accuracy", "auc")


def mean_report(folds: list[FoldReport]) -> dict[str, float]:
    """Average each metric over folds (not pooled predictions)."""
    if not folds:
        raise ValueError("no fold reports to average")
    return {
        key: float(np.mean([getattr(f, key) for f in folds])) for key in METRIC_KEYS
    }


# ---------------------------------------------------------------------------
# Cross-validation harness


@dataclass
class CohortSlide:
    """One patient's slide, backed by memory or a lazy loader."""

    slide_id: str
    label: str
    pyramid: SlidePyramid | None = None
    loader: Callable[[], SlidePyramid] | None = None
    mask: BinaryMask | None = None

    @classmethod
    def from_pyramid(cls, pyramid: SlidePyramid) -> "CohortSlide":
        return cls(slide_id=pyramid.slide_id, label=pyramid.label, pyramid=pyramid)

    def get_pyramid(self) -> SlidePyramid:
        if self.pyramid is None:
            if self.loader is None:
                raise ValueError(f"slide {self.slide_id} has no pyramid or loader")
            self.pyramid = self.loader()
        return self.pyramid

    def release_pyramid(self) -> None:
        if self.loader is not None:
            self.pyramid = None


@dataclass
class PipelineConfig:
    """Everything a cross-validation run depends on, in one place."""

    magnifications: tuple[float, ...] = (20.0,)
    k: int = 5
    seed: int = 0
    patch_size: int = PATCH_SIZE
    coverage_min: float = COVERAGE_MIN
    cap: int = PATCH_CAP
    thresholds: HsvThresholds = field(default_factory=HsvThresholds)
    morph_radius: int = DEFAULT_MORPH_RADIUS
    augment: bool = True
    learning_rate: float | None = None  # None -> per-scale default
    momentum: float = 0.9
    dropout_rate: float = 0.5
    max_epochs: int = 20
    patience: int = 3
    min_delta: float = 1e-4
    batch_size: int = 32

    def __post_init__(self):
        self.magnifications = tuple(sorted(float(m) for m in self.magnifications))
        if not self.magnifications:
            raise ValueError("at least one magnification required")
        if self.k < 2:
            raise ValueError("k must be at least 2")

    def train_config(self, fold: int, augment: bool | None = None) -> TrainConfig:
        kwargs = dict(
            momentum=self.momentum,
            dropout_rate=self.dropout_rate,
            max_epochs=self.max_epochs,
            patience=self.patience,
            min_delta=self.min_delta,
            batch_size=self.batch_size,
            seed=derive_seed(self.seed, "train", fold),
            augmentation_enabled=self.augment if augment is None else augment,
        )
        if self.learning_rate is not None:
            kwargs["learning_rate"] = self.learning_rate
        return TrainConfig.for_scales(len(self.magnifications), **kwargs)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["magnifications"] = list(self.magnifications)
        return data


def compute_slide_mask(slide: CohortSlide, config: PipelineConfig) -> BinaryMask:
    """Tissue AND annotation at 2.5x, morphologically cleaned; cached."""
    if slide.mask is None:
        pyramid = slide.get_pyramid()
        level = pyramid.levels[WORKING_MAGNIFICATION]
        tissue = compute_tissue_mask(level, config.thresholds, slide.slide_id)
        annotation = rasterize_annotations(
            list(pyramid.annotations), tissue.shape, slide.slide_id
        )
        slide.mask = compute_lesion_mask(tissue, annotation, config.morph_radius)
    return slide.mask


@dataclass
class PatchBundle:
    """All per-slide patch material one run needs: sampled coordinates,
    rasters per magnification (when augmenting), and base features."""

    slide_id: str
    label: str
    coords: list[PatchCoordinate]
    refs: list[PatchRef]
    rasters: list[dict[float, np.ndarray]]
    base_features: np.ndarray  # (n_patches, 512 * n_mags) float32
    warning: str | None = None


def _empty_bundle(slide_id: str, label: str, n_mags: int) -> PatchBundle:
    return PatchBundle(
        slide_id=slide_id,
        label=label,
        coords=[],
        refs=[],
        rasters=[],
        base_features=np.zeros((0, FEATURE_DIM * n_mags), dtype=np.float32),
        warning=f"{slide_id}: no valid patches",
    )


def materialize_bundle(
    slide: CohortSlide,
    picked: list[PatchCoordinate],
    config: PipelineConfig,
    embedders: dict[float, ReferenceEmbedder],
    imported: dict[PatchRef, ConcatFeature] | None = None,
    keep_rasters: bool = True,
) -> PatchBundle:
    """Cut and embed already-sampled coordinates for one slide.

    With `imported` features neither the pyramid nor the embedders run; every
    coordinate must resolve in the imported map.
    """
    if not picked:
        return _empty_bundle(slide.slide_id, slide.label, len(config.magnifications))
    refs: list[PatchRef] = [(c.slide_id, c.center_20x) for c in picked]
    rasters: list[dict[float, np.ndarray]] = []
    rows = []
    if imported is not None:
        for ref in refs:
            feat = imported.get(ref)
            if feat is None:
                raise ValueError(f"imported embeddings missing patch {ref}")
            if tuple(feat.magnifications) != config.magnifications:
                raise ValueError(
                    f"imported magnifications {feat.magnifications} do not match "
                    f"configured {config.magnifications} for patch {ref}"
                )
            rows.append(feat.values)
    else:
        pyramid = slide.get_pyramid()
        for coord, ref in zip(picked, refs):
            by_mag = {
                m: read_patch(pyramid, coord, m, config.patch_size)
                for m in config.magnifications
            }
            parts = [embedders[m].embed(by_mag[m], ref) for m in config.magnifications]
            rows.append(np.concatenate([p.values for p in parts]))
            if keep_rasters:
                rasters.append(by_mag)

    return PatchBundle(
        slide_id=slide.slide_id,
        label=slide.label,
        coords=list(picked),
        refs=refs,
        rasters=rasters,
        base_features=np.vstack(rows).astype(np.float32),
    )


def sample_slide_coordinates(
    slide: CohortSlide, config: PipelineConfig
) -> list[PatchCoordinate]:
    """Extract valid coordinates and sample down to the cap for one slide.

    The sampling seed depends only on (config.seed, slide_id), never on fold
    membership, so a slide contributes identical patches in every fold.
    """
    mask = compute_slide_mask(slide, config)
    coords = extract_valid_coordinates(
        mask,
        config.patch_size,
        config.coverage_min,
        slide_id=slide.slide_id,
        label=slide.label,
    )
    if not coords:
        return []
    return sample_coordinates(
        coords, config.cap, derive_seed(config.seed, "sample", slide.slide_id)
    )


def build_patch_bundle(
    slide: CohortSlide,
    config: PipelineConfig,
    embedders: dict[float, ReferenceEmbedder],
    imported: dict[PatchRef, ConcatFeature] | None = None,
    keep_rasters: bool = True,
) -> PatchBundle:
    """Extract, sample, cut, and embed one slide's patches."""
    picked = sample_slide_coordinates(slide, config)
    if not picked:
        return _empty_bundle(slide.slide_id, slide.label, len(config.magnifications))
    return materialize_bundle(slide, picked, config, embedders, imported, keep_rasters)


@dataclass
class FoldOutcome:
    report: FoldReport
    val_curve: RocCurve
    train_curve: RocCurve
    train_scores: list[PatientScore]
    val_scores: list[PatientScore]
    train_ids: list[str]
    val_ids: list[str]
    history: TrainHistory | None = None


@dataclass
class CrossValidationResult:
    config: PipelineConfig
    fold_reports: list[FoldReport]
    mean: dict[str, float]
    outcomes: list[FoldOutcome]
    warnings: list[str]
    augmentation_note: str

    def manifest_for(self, fold: int, split: str) -> DatasetManifest:
        """Reconstruct the dataset manifest for one fold and split."""
        outcome = self.outcomes[fold - 1]
        ids = outcome.train_ids if split == "t" else outcome.val_ids
        manifest = DatasetManifest(
            magnifications=self.config.magnifications,
            split=split,
            fold=fold,
            seed=self.config.seed,
            patch_size=self.config.patch_size,
            cap=self.config.cap,
        )
        for sid in ids:
            bundle = self._bundles[sid]
            if bundle.warning:
                manifest.warnings.append(bundle.warning)
            manifest.entries.extend(bundle.coords)
        return manifest

    _bundles: dict[str, PatchBundle] = field(default_factory=dict, repr=False)


def _patient_scores(
    params, bundles: list[PatchBundle]
) -> list[PatientScore]:
    scores = []
    for bundle in bundles:
        if not bundle.coords:
            continue
        preds = predict_batch(params, bundle.base_features.astype(np.float64))
        scores.append(
            aggregate_patient(preds, slide_id=bundle.slide_id, label=bundle.label)
        )
    return scores


def fit_fold(
    fold: int,
    train_bundles: list[PatchBundle],
    val_bundles: list[PatchBundle],
    config: PipelineConfig,
    embedders: dict[float, ReferenceEmbedder],
    augment: bool,
):
    """Train one fold's classifier; returns (params, history)."""
    usable_train = [b for b in train_bundles if b.coords]
    usable_val = [b for b in val_bundles if b.coords]
    if not usable_train or not usable_val:
        raise ValueError("fold has no usable slides after extraction")

    train_labels = np.concatenate(
        [np.full(len(b.coords), label_to_int(b.label)) for b in usable_train]
    )
    val_labels = np.concatenate(
        [np.full(len(b.coords), label_to_int(b.label)) for b in usable_val]
    )
    val_features = np.vstack([b.base_features for b in usable_val]).astype(np.float64)
    val_source = StaticFeatureSource(val_features, val_labels)

    cfg = config.train_config(fold, augment=augment)
    if augment:
        train_source = AugmentedFeatureSource(
            rasters=[r for b in usable_train for r in b.rasters],
            labels=train_labels,
            refs=[r for b in usable_train for r in b.refs],
            embedders=embedders,
            magnifications=config.magnifications,
            seed=cfg.seed,
        )
    else:
        train_features = np.vstack(
            [b.base_features for b in usable_train]
        ).astype(np.float64)
        train_source = StaticFeatureSource(train_features, train_labels)

    params = init_classifier(
        len(config.magnifications), derive_seed(config.seed, "init", fold)
    )
    return train(params, train_source, val_source, cfg)


def evaluate_fold(
    fold: int,
    params,
    train_bundles: list[PatchBundle],
    val_bundles: list[PatchBundle],
    history: TrainHistory | None = None,
) -> FoldOutcome:
    """Score patients with a trained classifier: training-set scores fix T,
    validation scores yield the confusion metrics and AUC."""
    usable_train = [b for b in train_bundles if b.coords]
    usable_val = [b for b in val_bundles if b.coords]
    if not usable_train or not usable_val:
        raise ValueError("fold has no usable slides after extraction")

    train_scores = _patient_scores(params, usable_train)
    val_scores = _patient_scores(params, usable_val)
    train_curve = roc_curve([(s.Y, s.label) for s in train_scores])
    threshold = select_threshold(train_curve)

    val_curve = roc_curve([(s.Y, s.label) for s in val_scores])
    predictions = [int(s.Y > threshold) for s in val_scores]
    labels = [s.label for s in val_scores]
    tp, fn, tn, fp = confusion_counts(predictions, labels)
    metrics = metrics_from_counts(tp, fn, tn, fp)
    report = FoldReport(
        fold=fold,
        threshold=threshold,
        sensitivity=metrics["sensitivity"],
        specificity=metrics["specificity"],
        f1=metrics["f1"],
        accuracy=metrics["accuracy"],
        auc=auc(val_curve),
        tp=tp,
        fn=fn,
        tn=tn,
        fp=fp,
    )
    return FoldOutcome(
        report=report,
        val_curve=val_curve,
        train_curve=train_curve,
        train_scores=train_scores,
        val_scores=val_scores,
        train_ids=[b.slide_id for b in train_bundles],
        val_ids=[b.slide_id for b in val_bundles],
        history=history,
    )


def run_fold(
    fold: int,
    train_bundles: list[PatchBundle],
    val_bundles: list[PatchBundle],
    config: PipelineConfig,
    embedders: dict[float, ReferenceEmbedder],
    augment: bool,
) -> FoldOutcome:
    """Fit then evaluate one fold."""
    params, history = fit_fold(
        fold, train_bundles, val_bundles, config, embedders, augment
    )
    return evaluate_fold(fold, params, train_bundles, val_bundles, history)


def run_cross_validation(
    cohort,
    config: PipelineConfig,
    imported: dict[PatchRef, ConcatFeature] | None = None,
) -> CrossValidationResult:
    """Full stratified k-fold pipeline over a cohort.

    `cohort` is a list of CohortSlide or SlidePyramid. Precomputed features
    via `imported` disable augmentation, and the result says so. Any fold
    failure aborts with the fold index and cause.
    """
    slides = [
        s if isinstance(s, CohortSlide) else CohortSlide.from_pyramid(s)
        for s in cohort
    ]
    embedders = {
        m: ReferenceEmbedder(m, config.seed, config.patch_size)
        for m in config.magnifications
    }
    augment = config.augment and imported is None
    if imported is not None:
        note = "disabled: training used precomputed embeddings"
    elif not config.augment:
        note = "disabled by configuration"
    else:
        note = "enabled: random resized crop and horizontal flip, re-embedded per epoch"

    bundles: dict[str, PatchBundle] = {}
    warnings: list[str] = []
    for slide in slides:
        bundle = build_patch_bundle(
            slide, config, embedders, imported=imported, keep_rasters=augment
        )
        slide.release_pyramid()
        bundles[slide.slide_id] = bundle
        if bundle.warning:
            warnings.append(bundle.warning)

    patients = [(s.slide_id, s.label) for s in slides]
    assignments = stratified_kfold(patients, config.k, derive_seed(config.seed, "folds"))

    outcomes = []
    for fold, (train_ids, val_ids) in enumerate(assignments, start=1):
        try:
            outcome = run_fold(
                fold,
                [bundles[sid] for sid in train_ids],
                [bundles[sid] for sid in val_ids],
                config,
                embedders,
                augment,
            )
        except Exception as exc:
            raise RuntimeError(f"fold {fold} failed: {exc}") from exc
        outcomes.append(outcome)

    reports = [o.report for o in outcomes]
    result = CrossValidationResult(
        config=config,
        fold_reports=reports,
        mean=mean_report(reports),
        outcomes=outcomes,
        warnings=warnings,
        augmentation_note=note,
    )
    result._bundles = bundles
    return result


# ---------------------------------------------------------------------------
# Report writers. Artifacts embed the full config echo and are byte-stable
# across reruns with identical inputs.


def report_as_dict(result: CrossValidationResult) -> dict:
    return {
        "config": result.config.to_dict(),
        "augmentation": result.augmentation_note,
        "folds": [
            {
                **o.report.to_dict(),
                "stop_reason": o.history.stop_reason if o.history else None,
                "stopped_epoch": o.history.stopped_epoch if o.history else None,
                "n_train_patients": len(o.train_scores),
                "n_val_patients": len(o.val_scores),
            }
            for o in result.outcomes
        ],
        "mean": result.mean,
        "warnings": result.warnings,
    }


def write_report_json(result: CrossValidationResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report_as_dict(result), indent=2, sort_keys=True) + "\n")
    return path


def write_report_csv(result: CrossValidationResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = ["fold"] + list(METRIC_KEYS) + ["tp", "fn", "tn", "fp"]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rep in result.fold_reports:
            row = [rep.fold] + [repr(getattr(rep, k)) for k in METRIC_KEYS]
            writer.writerow(row + [rep.tp, rep.fn, rep.tn, rep.fp])
        writer.writerow(
            ["mean"] + [repr(result.mean[k]) for k in METRIC_KEYS] + ["", "", "", ""]
        )
    return path


def write_roc_csv(curve: RocCurve, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "tp", "fp", "tpr", "fpr"])
        for i in range(len(curve.thresholds)):
            writer.writerow(
                [
                    repr(float(curve.thresholds[i])),
                    int(curve.tp[i]),
                    int(curve.fp[i]),
                    repr(float(curve.tpr[i])),
                    repr(float(curve.fpr[i])),
                ]
            )
    return path


def write_roc_svg_from_points(curves, title: str, path) -> Path:
    """Deterministic SVG of ROC curves; `curves` holds (label, fpr, tpr)."""
    import matplotlib

    matplotlib.rcParams["svg.hashsalt"] = "roc-report"
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    for label, fpr, tpr in curves:
        ax.plot(fpr, tpr, label=label)
    ax.plot([0, 1], [0, 1], linestyle="--", linewidth=0.8, color="grey")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def write_roc_svg(result: CrossValidationResult, path) -> Path:
    """Per-fold validation ROC curves as a deterministic SVG."""
    curves = [
        (
            f"fold {o.report.fold} (AUC {o.report.auc:.3f})",
            o.val_curve.fpr,
            o.val_curve.tpr,
        )
        for o in result.outcomes
    ]
    title = f"Validation ROC, mean AUC {result.mean['auc']:.3f}"
    return write_roc_svg_from_points(curves, title, path)
