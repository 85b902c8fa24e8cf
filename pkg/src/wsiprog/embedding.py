"""Frozen per-magnification feature embedders and multi-scale concatenation.

The reference embedder maps a patch to 512 dimensions: box-downsample to
32x32, take channel means, channel variances, and an 8x8 grid of block means
per channel (198 statistics), then apply a fixed seeded random projection.
Each magnification gets an independent projection so the per-scale backbones
are unrelated, and real externally computed features can be swapped in via
the embedding file format.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .patching import PATCH_SIZE, PatchCoordinate, project_patch
from .pyramid import SlidePyramid, read_region
from .util import box_downsample, derive_seed, round_half_up

FEATURE_DIM = 512
_STAT_DIM = 198  # 3 means + 3 variances + 8*8*3 block means
_MAGIC = b"WSIPEMB1"
_VERSION = 1

PatchRef = tuple[str, tuple[int, int]]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray  # 512 float32
    magnification: float
    patch_ref: PatchRef

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.shape != (FEATURE_DIM,):
            raise ValueError(f"feature length must be {FEATURE_DIM}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class ConcatFeature:
    values: np.ndarray  # 512 * len(magnifications) float32
    magnifications: tuple[float, ...]
    patch_ref: PatchRef

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        mags = tuple(float(m) for m in self.magnifications)
        if len(set(mags)) != len(mags):
            raise ValueError("magnifications must be distinct")
        if values.shape != (FEATURE_DIM * len(mags),):
            raise ValueError(
                f"expected {FEATURE_DIM * len(mags)} values, got {values.shape}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "magnifications", mags)


class ReferenceEmbedder:
    """Deterministic hand-crafted embedder standing in for a frozen CNN.

    Immutable after construction: the projection matrix is fixed by
    (seed, magnification) and embedding never mutates state.
    """

    def __init__(self, magnification: float, seed: int, patch_size: int = PATCH_SIZE):
        self.magnification = float(magnification)
        self.seed = int(seed)
        self.patch_size = int(patch_size)
        rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, int(self.magnification)])
        )
        self._projection = rng.standard_normal((FEATURE_DIM, _STAT_DIM)) / np.sqrt(
            _STAT_DIM
        )

    def statistics(self, patch: np.ndarray) -> np.ndarray:
        """198 raw image statistics on the intensity scale [0, 1]."""
        if patch.shape != (self.patch_size, self.patch_size, 3):
            raise ValueError(
                f"patch must be {self.patch_size}x{self.patch_size}x3, got {patch.shape}"
            )
        small = box_downsample(np.asarray(patch, dtype=np.float64) / 255.0, 32, 32)
        means = small.mean(axis=(0, 1))
        variances = small.var(axis=(0, 1))
        blocks = small.reshape(8, 4, 8, 4, 3).mean(axis=(1, 3))
        return np.concatenate([means, variances, blocks.ravel()])

    def embed(self, patch: np.ndarray, patch_ref: PatchRef) -> FeatureVector:
        projected = self._projection @ self.statistics(patch)
        return FeatureVector(
            values=projected.astype(np.float32),
            magnification=self.magnification,
            patch_ref=patch_ref,
        )


def embed_patch(
    embedder: ReferenceEmbedder, patch: np.ndarray, patch_ref: PatchRef = ("", (0, 0))
) -> FeatureVector:
    return embedder.embed(patch, patch_ref)


def read_patch(
    pyramid: SlidePyramid, coord: PatchCoordinate, magnification: float,
    patch_size: int = PATCH_SIZE,
) -> np.ndarray:
    """Cut the patch raster for one coordinate at one magnification."""
    top_left = project_patch(coord.center_20x, magnification, patch_size)
    return read_region(pyramid, magnification, top_left, (patch_size, patch_size))


def concat_features(parts: list[FeatureVector]) -> ConcatFeature:
    """Block concatenation in the declared order; a single part passes its
    values through unchanged."""
    if not parts:
        raise ValueError("need at least one feature vector")
    ref = parts[0].patch_ref
    for p in parts[1:]:
        if p.patch_ref != ref:
            raise ValueError(f"mismatched patch refs: {ref} vs {p.patch_ref}")
    mags = tuple(p.magnification for p in parts)
    return ConcatFeature(
        values=np.concatenate([p.values for p in parts]),
        magnifications=mags,
        patch_ref=ref,
    )


# ---------------------------------------------------------------------------
# Embedding file format: little-endian binary, one record per patch holding
# one 512-float block per magnification, in the header's magnification order.


def write_embeddings(path, features: list[ConcatFeature]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if features:
        mags = features[0].magnifications
    else:
        mags = ()
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HH", _VERSION, len(mags)))
        for m in mags:
            fh.write(struct.pack("<i", int(m)))
        fh.write(struct.pack("<Q", len(features)))
        for feat in features:
            if feat.magnifications != mags:
                raise ValueError(
                    f"record {feat.patch_ref} has magnifications "
                    f"{feat.magnifications}, header says {mags}"
                )
            sid, (cx, cy) = feat.patch_ref
            encoded = sid.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<ii", cx, cy))
            fh.write(np.ascontiguousarray(feat.values, dtype="<f4").tobytes())
    return path


def import_embeddings(path) -> dict[PatchRef, ConcatFeature]:
    """Read an embedding file into a patch_ref -> feature map.

    A record whose float payload is short (truncated file, wrong vector
    length) raises an error naming the offending patch ref.
    """
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path} is not an embedding file")
        version, n_mags = struct.unpack("<HH", fh.read(4))
        if version != _VERSION:
            raise ValueError(f"unsupported embedding file version {version}")
        mags = tuple(
            float(struct.unpack("<i", fh.read(4))[0]) for _ in range(n_mags)
        )
        (count,) = struct.unpack("<Q", fh.read(8))
        out: dict[PatchRef, ConcatFeature] = {}
        for _ in range(count):
            (id_len,) = struct.unpack("<H", fh.read(2))
            sid = fh.read(id_len).decode("utf-8")
            cx, cy = struct.unpack("<ii", fh.read(8))
            ref: PatchRef = (sid, (cx, cy))
            payload = fh.read(4 * FEATURE_DIM * n_mags)
            if len(payload) != 4 * FEATURE_DIM * n_mags:
                raise ValueError(
                    f"record for patch {ref} holds "
                    f"{len(payload) // 4} floats, expected {FEATURE_DIM * n_mags}"
                )
            values = np.frombuffer(payload, dtype="<f4").astype(np.float32)
            out[ref] = ConcatFeature(values=values, magnifications=mags, patch_ref=ref)
    return out


def export_embeddings_csv(path, features: list[ConcatFeature]) -> Path:
    """Human-inspectable dump: one row per patch and magnification block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["slide_id", "center_x_20", "center_y_20", "magnification"]
            + [f"f{i:03d}" for i in range(FEATURE_DIM)]
        )
        for feat in features:
            sid, (cx, cy) = feat.patch_ref
            for b, mag in enumerate(feat.magnifications):
                block = feat.values[b * FEATURE_DIM : (b + 1) * FEATURE_DIM]
                writer.writerow(
                    [sid, cx, cy, int(mag) if mag.is_integer() else mag]
                    + [repr(float(v)) for v in block]
                )
    return path


# ---------------------------------------------------------------------------
# Augmentation: random resized crop + horizontal flip in patch pixel space.
# One parameter draw is shared by all magnifications of a patch so the views
# stay geometrically aligned.


@dataclass(frozen=True)
class CropFlipParams:
    side: int
    x0: int
    y0: int
    flip: bool


class RandomCropFlipAugmenter:
    """Random resized crop (area scale in [scale_min, 1]) plus horizontal
    flip with probability 0.5, resized back to the patch size."""

    def __init__(self, patch_size: int = PATCH_SIZE, scale_min: float = 0.8):
        if not 0.0 < scale_min <= 1.0:
            raise ValueError("scale_min must lie in (0, 1]")
        self.patch_size = int(patch_size)
        self.scale_min = float(scale_min)

    def draw(self, rng: np.random.Generator) -> CropFlipParams:
        area = rng.uniform(self.scale_min, 1.0)
        side = int(round_half_up(self.patch_size * np.sqrt(area)))
        side = max(1, min(side, self.patch_size))
        x0 = int(rng.integers(0, self.patch_size - side + 1))
        y0 = int(rng.integers(0, self.patch_size - side + 1))
        flip = bool(rng.random() < 0.5)
        return CropFlipParams(side=side, x0=x0, y0=y0, flip=flip)

    def apply(self, patch: np.ndarray, params: CropFlipParams) -> np.ndarray:
        p = self.patch_size
        if patch.shape != (p, p, 3):
            raise ValueError(f"patch must be {p}x{p}x3, got {patch.shape}")
        window = patch[params.y0 : params.y0 + params.side,
                       params.x0 : params.x0 + params.side]
        if params.side != p:
            img = Image.fromarray(np.ascontiguousarray(window))
            window = np.asarray(img.resize((p, p), Image.BILINEAR))
        if params.flip:
            window = window[:, ::-1]
        return np.ascontiguousarray(window)


class AugmentedFeatureSource:
    """Training features recomputed each epoch from augmented patch rasters.

    Holds the base raster of every patch at every magnification (uint8, in
    memory), draws one crop/flip per patch per epoch shared across the
    magnifications, and re-embeds. The epoch stream is seeded independently
    of everything else, so two runs with the same seed see identical
    augmentations.
    """

    def __init__(
        self,
        rasters: list[dict[float, np.ndarray]],
        labels,
        refs: list[PatchRef],
        embedders: dict[float, ReferenceEmbedder],
        magnifications,
        seed: int,
        augmenter: RandomCropFlipAugmenter | None = None,
    ):
        self.rasters = rasters
        self.labels = np.asarray(labels, dtype=np.int64)
        self.refs = list(refs)
        self.magnifications = tuple(float(m) for m in magnifications)
        self.embedders = embedders
        self.seed = int(seed)
        patch_size = next(iter(embedders.values())).patch_size
        self.augmenter = augmenter or RandomCropFlipAugmenter(patch_size)
        self.augmented = True
        self._base: np.ndarray | None = None
        if not (len(rasters) == len(self.labels) == len(self.refs)):
            raise ValueError("rasters, labels, and refs disagree in length")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return FEATURE_DIM * len(self.magnifications)

    def _embed_row(self, patch_by_mag, ref: PatchRef) -> np.ndarray:
        parts = [
            self.embedders[m].embed(patch_by_mag[m], ref) for m in self.magnifications
        ]
        return concat_features(parts).values

    def base_features(self) -> np.ndarray:
        """Un-augmented features, used for post-training score computation."""
        if self._base is None:
            rows = [
                self._embed_row(raster, ref)
                for raster, ref in zip(self.rasters, self.refs)
            ]
            self._base = np.vstack(rows) if rows else np.zeros((0, self.input_dim))
        return self._base

    def features_for_epoch(self, epoch: int) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(self.seed, "augment", epoch))
        rows = []
        for raster, ref in zip(self.rasters, self.refs):
            params = self.augmenter.draw(rng)
            augmented = {
                m: self.augmenter.apply(raster[m], params)
                for m in self.magnifications
            }
            rows.append(self._embed_row(augmented, ref))
        return np.vstack(rows) if rows else np.zeros((0, self.input_dim))
