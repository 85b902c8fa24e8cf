"""Multi-resolution slide model: magnification-indexed levels, region reads,
and a lossless on-disk directory format (manifest.json + one PNG per level).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .util import scale_dim

MAGNIFICATIONS = (40.0, 20.0, 10.0, 2.5)
FULL_MAGNIFICATION = 40.0
GOOD = "good"
BAD = "bad"
LABELS = (GOOD, BAD)

BACKGROUND = np.array([255, 255, 255], dtype=np.uint8)


def label_to_int(label: str) -> int:
    """Numeric label encoding: bad prognosis is the positive class (1)."""
    if label not in LABELS:
        raise ValueError(f"unknown prognosis label {label!r}")
    return 1 if label == BAD else 0


@dataclass(frozen=True)
class Polygon:
    """Closed polygon in full-resolution (40x) pixel coordinates.

    Self-intersection is allowed; rasterization uses even-odd fill.
    """

    vertices: tuple[tuple[float, float], ...]
    kind: str = "lesion"  # "lesion" | "other"

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        object.__setattr__(
            self, "vertices", tuple((float(x), float(y)) for x, y in self.vertices)
        )


@dataclass
class SlidePyramid:
    """One slide as a set of magnification-indexed RGB rasters.

    All levels depict the same physical extent; level dimensions follow
    dim(m) = round(dim(40x) * m / 40). Immutable after construction
    (level arrays are marked read-only), so concurrent reads are safe.
    """

    slide_id: str
    label: str
    levels: dict[float, np.ndarray]
    annotations: list[Polygon] = field(default_factory=list)

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown prognosis label {self.label!r}")
        self.levels = {float(m): lvl for m, lvl in self.levels.items()}
        if FULL_MAGNIFICATION not in self.levels:
            raise ValueError("pyramid must include the 40x level")
        for mag, lvl in self.levels.items():
            if lvl.ndim != 3 or lvl.shape[2] != 3 or lvl.dtype != np.uint8:
                raise ValueError(f"level {mag} must be an RGB uint8 raster")
            expect = self.level_dimensions(mag)
            if (lvl.shape[1], lvl.shape[0]) != expect:
                raise ValueError(
                    f"level {mag} is {lvl.shape[1]}x{lvl.shape[0]}, "
                    f"expected {expect[0]}x{expect[1]}"
                )
            lvl.flags.writeable = False

    @property
    def width_40x(self) -> int:
        return self.levels[FULL_MAGNIFICATION].shape[1]

    @property
    def height_40x(self) -> int:
        return self.levels[FULL_MAGNIFICATION].shape[0]

    def level_dimensions(self, magnification: float) -> tuple[int, int]:
        """(width, height) of a level under the dim(m) scaling rule."""
        full = self.levels[FULL_MAGNIFICATION]
        return (
            scale_dim(full.shape[1], magnification),
            scale_dim(full.shape[0], magnification),
        )

    def magnifications(self) -> tuple[float, ...]:
        return tuple(sorted(self.levels, reverse=True))


def read_region(
    pyramid: SlidePyramid,
    magnification: float,
    top_left: tuple[int, int],
    size: tuple[int, int],
) -> np.ndarray:
    """Read a w x h RGB region from one level, white-padding out-of-bounds.

    Pure: identical arguments always return identical rasters. Coordinates
    are integer pixels of the requested level and may be negative.
    """
    mag = float(magnification)
    if mag not in pyramid.levels:
        avail = ", ".join(str(m) for m in pyramid.magnifications())
        raise ValueError(f"level {magnification} not available (stored: {avail})")
    w, h = int(size[0]), int(size[1])
    if w <= 0 or h <= 0:
        raise ValueError(f"region size must be positive, got {w}x{h}")
    x0, y0 = int(top_left[0]), int(top_left[1])
    level = pyramid.levels[mag]
    lh, lw = level.shape[:2]
    out = np.empty((h, w, 3), dtype=np.uint8)
    out[:] = BACKGROUND
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + w, lw), min(y0 + h, lh)
    if sx0 < sx1 and sy0 < sy1:
        out[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = level[sy0:sy1, sx0:sx1]
    return out


def _format_magnification(mag: float) -> str:
    return str(int(mag)) if float(mag).is_integer() else str(mag)


def save_slide(pyramid: SlidePyramid, directory) -> Path:
    """Write a slide as manifest.json + level_<m>.png files (lossless)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "slide_id": pyramid.slide_id,
        "label": pyramid.label,
        "width_40x": pyramid.width_40x,
        "height_40x": pyramid.height_40x,
        "levels": [
            float(m) if not float(m).is_integer() else int(m)
            for m in pyramid.magnifications()
        ],
        "annotations": [
            {"kind": poly.kind, "vertices": [[x, y] for x, y in poly.vertices]}
            for poly in pyramid.annotations
        ],
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    for mag in pyramid.magnifications():
        name = f"level_{_format_magnification(mag)}.png"
        Image.fromarray(pyramid.levels[mag]).save(directory / name)
    return directory


def load_slide(directory) -> SlidePyramid:
    """Read a slide directory written by save_slide (bit-exact round trip)."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no slide manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    levels = {}
    for mag in manifest["levels"]:
        name = f"level_{_format_magnification(float(mag))}.png"
        with Image.open(directory / name) as img:
            levels[float(mag)] = np.asarray(img.convert("RGB"))
    annotations = [
        Polygon(vertices=tuple((x, y) for x, y in entry["vertices"]), kind=entry["kind"])
        for entry in manifest.get("annotations", [])
    ]
    return SlidePyramid(
        slide_id=manifest["slide_id"],
        label=manifest["label"],
        levels=levels,
        annotations=annotations,
    )


def write_cohort_index(directory, entries: list[dict]) -> Path:
    """Write index.json listing {slide_id, label, path} per slide."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = {"slides": sorted(entries, key=lambda e: e["slide_id"])}
    path = directory / "index.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def read_cohort_index(directory) -> list[dict]:
    path = Path(directory) / "index.json"
    if not path.exists():
        raise FileNotFoundError(f"no cohort index at {path}")
    return json.loads(path.read_text())["slides"]
