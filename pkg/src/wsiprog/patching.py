"""Patch coordinate extraction and dataset assembly.

Patches are anchored on a non-overlapping 20x grid. A candidate is valid when
its footprint, mapped onto the 2.5x lesion mask, is covered at least
`coverage_min`. Centers project to other magnifications around the same
physical midpoint. Datasets pair per-slide sampled coordinates with stratified
k-fold patient splits.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .masking import BinaryMask
from .pyramid import GOOD, LABELS
from .util import derive_seed, round_half_up

PATCH_SIZE = 224
COVERAGE_MIN = 0.7
PATCH_CAP = 250
ANCHOR_MAGNIFICATION = 20.0
TARGET_MAGNIFICATIONS = (10.0, 20.0, 40.0)


@dataclass(frozen=True)
class PatchCoordinate:
    """A patch anchored by its center pixel at 20x; the label is the slide's."""

    slide_id: str
    center_20x: tuple[int, int]
    label: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")
        object.__setattr__(
            self, "center_20x", (int(self.center_20x[0]), int(self.center_20x[1]))
        )


def _integral_image(grid: np.ndarray) -> np.ndarray:
    s = np.zeros((grid.shape[0] + 1, grid.shape[1] + 1), dtype=np.float64)
    s[1:, 1:] = grid.astype(np.float64).cumsum(axis=0).cumsum(axis=1)
    return s


def _eval_integral(s: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Cumulative mask area over [0,x) x [0,y) at fractional coordinates.

    The mask is constant on unit cells, so the cumulative integral is bilinear
    within each cell and interpolation from the corner sums is exact.
    """
    x0 = np.minimum(np.floor(xs).astype(np.int64), s.shape[1] - 2)
    y0 = np.minimum(np.floor(ys).astype(np.int64), s.shape[0] - 2)
    fx = xs - x0
    fy = ys - y0
    s00 = s[y0, x0]
    s01 = s[y0, x0 + 1]
    s10 = s[y0 + 1, x0]
    s11 = s[y0 + 1, x0 + 1]
    return (
        s00 * (1 - fx) * (1 - fy)
        + s01 * fx * (1 - fy)
        + s10 * (1 - fx) * fy
        + s11 * fx * fy
    )


def extract_valid_coordinates(
    lesion: BinaryMask,
    patch_size: int = PATCH_SIZE,
    coverage_min: float = COVERAGE_MIN,
    slide_id: str | None = None,
    label: str = GOOD,
) -> list[PatchCoordinate]:
    """Row-major list of valid patch centers on the non-overlapping 20x grid.

    The 20x plane extent is the mask extent times 8 (20 / 2.5). Coverage is
    the exact area fraction of the footprint rectangle covered by true mask
    pixels; parts of a footprint falling outside the mask count as uncovered.
    An all-false mask yields an empty list, meaning "no lesion".
    """
    if patch_size <= 0:
        raise ValueError("patch_size must be positive")
    if not 0.0 < coverage_min <= 1.0:
        raise ValueError("coverage_min must lie in (0, 1]")
    if slide_id is None:
        slide_id = lesion.slide_id
    h, w = lesion.shape
    scale = lesion.working_magnification / ANCHOR_MAGNIFICATION  # 1/8 default
    n_cols = int(w / scale) // patch_size
    n_rows = int(h / scale) // patch_size
    if n_cols <= 0 or n_rows <= 0 or not lesion.grid.any():
        return []

    side = patch_size * scale
    s = _integral_image(lesion.grid)
    cols = np.arange(n_cols)
    rows = np.arange(n_rows)
    x0 = np.clip(cols * side, 0.0, w)
    x1 = np.clip((cols + 1) * side, 0.0, w)
    y0 = np.clip(rows * side, 0.0, h)
    y1 = np.clip((rows + 1) * side, 0.0, h)
    xx0, yy0 = np.meshgrid(x0, y0)
    xx1, yy1 = np.meshgrid(x1, y1)
    area = (
        _eval_integral(s, xx1, yy1)
        - _eval_integral(s, xx0, yy1)
        - _eval_integral(s, xx1, yy0)
        + _eval_integral(s, xx0, yy0)
    )
    coverage = area / (side * side)

    half = patch_size // 2
    coords = []
    for i in range(n_rows):
        for j in range(n_cols):
            if coverage[i, j] >= coverage_min:
                center = (j * patch_size + half, i * patch_size + half)
                coords.append(PatchCoordinate(slide_id, center, label))
    return coords


def project_patch(
    center_20x: tuple[int, int],
    target_magnification: float,
    patch_size: int = PATCH_SIZE,
) -> tuple[int, int]:
    """Top-left corner at the target magnification of the patch whose physical
    midpoint is the given 20x center. Footprint is [top_left, top_left + P)."""
    if target_magnification not in TARGET_MAGNIFICATIONS:
        raise ValueError(
            f"target magnification must be one of {TARGET_MAGNIFICATIONS}"
        )
    if patch_size <= 0 or patch_size % 2 != 0:
        raise ValueError("patch_size must be a positive even number")
    scale = target_magnification / ANCHOR_MAGNIFICATION
    sx = int(round_half_up(center_20x[0] * scale))
    sy = int(round_half_up(center_20x[1] * scale))
    half = patch_size // 2
    return (sx - half, sy - half)


def sample_coordinates(
    coords: list[PatchCoordinate], cap: int = PATCH_CAP, seed: int = 0
) -> list[PatchCoordinate]:
    """Uniform sample without replacement down to `cap`, preserving the
    original relative order; lists at or under the cap pass through."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    if len(coords) <= cap:
        return list(coords)
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(coords), size=cap, replace=False)
    return [coords[i] for i in np.sort(picked)]


def stratified_kfold(
    patients: list[tuple[str, str]], k: int, seed: int = 0
) -> list[tuple[list[str], list[str]]]:
    """Partition patients into k folds with per-class counts within 1 of
    perfect stratification; returns (train_ids, val_ids) per fold, sorted.

    Remainder chunks are staggered across classes so total fold sizes stay
    as even as the arithmetic allows.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    ids = [sid for sid, _ in patients]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate slide ids in patient list")
    by_class: dict[str, list[str]] = {lab: [] for lab in LABELS}
    for sid, lab in patients:
        if lab not in by_class:
            raise ValueError(f"label must be one of {LABELS}, got {lab!r}")
        by_class[lab].append(sid)

    rng = np.random.default_rng(seed)
    val_folds: list[list[str]] = [[] for _ in range(k)]
    offset = 0
    for lab in LABELS:
        members = by_class[lab]
        if len(members) < k:
            raise ValueError(
                f"class {lab!r} has {len(members)} members, needs at least {k}"
            )
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        base, rem = divmod(len(members), k)
        pos = 0
        for f in range(k):
            size = base + (1 if (f - offset) % k < rem else 0)
            val_folds[f].extend(shuffled[pos : pos + size])
            pos += size
        offset = (offset + rem) % k

    all_sorted = sorted(ids)
    folds = []
    for f in range(k):
        val = sorted(val_folds[f])
        val_set = set(val)
        train = [sid for sid in all_sorted if sid not in val_set]
        folds.append((train, val))
    return folds


@dataclass
class DatasetManifest:
    """One split of one fold: header metadata plus patch coordinate entries."""

    magnifications: tuple[float, ...]
    split: str  # "t" for training, "v" for validation
    fold: int
    seed: int
    patch_size: int = PATCH_SIZE
    cap: int = PATCH_CAP
    entries: list[PatchCoordinate] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.magnifications = tuple(sorted(float(m) for m in self.magnifications))
        if not self.magnifications or any(
            m not in TARGET_MAGNIFICATIONS for m in self.magnifications
        ):
            raise ValueError(
                f"magnifications must be a non-empty subset of {TARGET_MAGNIFICATIONS}"
            )
        if self.split not in ("t", "v"):
            raise ValueError("split must be 't' or 'v'")
        if self.fold < 1:
            raise ValueError("fold must be >= 1")
        counts: dict[str, int] = {}
        for e in self.entries:
            counts[e.slide_id] = counts.get(e.slide_id, 0) + 1
        over = [sid for sid, n in counts.items() if n > self.cap]
        if over:
            raise ValueError(f"per-slide entry count exceeds cap for {over}")

    def slide_ids(self) -> list[str]:
        seen = dict.fromkeys(e.slide_id for e in self.entries)
        return list(seen)

    def entries_by_slide(self) -> dict[str, list[PatchCoordinate]]:
        grouped: dict[str, list[PatchCoordinate]] = {}
        for e in self.entries:
            grouped.setdefault(e.slide_id, []).append(e)
        return grouped


def manifest_filename(
    magnifications, split: str, fold: int
) -> str:
    mags = "-".join(str(int(m)) for m in sorted(float(m) for m in magnifications))
    return f"D_m{mags}_{split}{fold}.csv"


def write_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "magnifications": [
            int(m) if float(m).is_integer() else m for m in manifest.magnifications
        ],
        "split": manifest.split,
        "fold": manifest.fold,
        "seed": manifest.seed,
        "patch_size": manifest.patch_size,
        "cap": manifest.cap,
        "warnings": manifest.warnings,
    }
    with path.open("w", newline="") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["slide_id", "label", "center_x_20", "center_y_20"])
        for e in manifest.entries:
            writer.writerow([e.slide_id, e.label, e.center_20x[0], e.center_20x[1]])
    return path


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path} missing JSON header line")
        header = json.loads(first[2:])
        reader = csv.reader(fh)
        columns = next(reader)
        if columns != ["slide_id", "label", "center_x_20", "center_y_20"]:
            raise ValueError(f"{path} has unexpected columns {columns}")
        entries = [
            PatchCoordinate(sid, (int(x), int(y)), lab)
            for sid, lab, x, y in reader
        ]
    return DatasetManifest(
        magnifications=tuple(float(m) for m in header["magnifications"]),
        split=header["split"],
        fold=header["fold"],
        seed=header["seed"],
        patch_size=header["patch_size"],
        cap=header["cap"],
        entries=entries,
        warnings=list(header["warnings"]),
    )


def build_dataset(
    slides: list[tuple[str, str, BinaryMask]],
    fold: int,
    train_ids: list[str],
    val_ids: list[str],
    magnifications,
    cap: int = PATCH_CAP,
    seed: int = 0,
    patch_size: int = PATCH_SIZE,
    coverage_min: float = COVERAGE_MIN,
) -> tuple[DatasetManifest, DatasetManifest]:
    """Extract, sample, and split coordinates into train/validation manifests.

    `slides` holds (slide_id, label, lesion_mask) triples. Slides without any
    valid coordinate are recorded in the owning manifest's warnings and
    skipped. Sampling seeds depend only on the global seed and the slide id,
    so a slide contributes the same patches regardless of fold membership.
    """
    train_set, val_set = set(train_ids), set(val_ids)
    overlap = train_set & val_set
    if overlap:
        raise ValueError(f"slides assigned to both splits: {sorted(overlap)}")

    def fresh(split):
        return DatasetManifest(
            magnifications=tuple(magnifications),
            split=split,
            fold=fold,
            seed=seed,
            patch_size=patch_size,
            cap=cap,
        )

    train_manifest, val_manifest = fresh("t"), fresh("v")
    for slide_id, label, mask in slides:
        if slide_id in train_set:
            manifest = train_manifest
        elif slide_id in val_set:
            manifest = val_manifest
        else:
            continue
        coords = extract_valid_coordinates(
            mask, patch_size, coverage_min, slide_id=slide_id, label=label
        )
        if not coords:
            manifest.warnings.append(f"{slide_id}: no valid patches")
            continue
        picked = sample_coordinates(coords, cap, derive_seed(seed, "sample", slide_id))
        manifest.entries.extend(picked)
    return train_manifest, val_manifest
