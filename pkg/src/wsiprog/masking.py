"""Tissue, annotation, and lesion masks at the 2.5x working magnification.

Tissue is segmented by hue (blue through magenta, the stain color range) with
a saturation floor to drop the white background. The lesion mask is the
intersection of tissue and annotation, cleaned by closing-then-opening with a
disk structuring element.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .pyramid import Polygon

WORKING_MAGNIFICATION = 2.5
ANNOTATION_SOURCE_MAGNIFICATION = 40.0
DEFAULT_MORPH_RADIUS = 5


@dataclass(frozen=True)
class HsvThresholds:
    """Tissue color gate. Hue on the half-degree [0, 180] scale, so the
    default 100..180 window covers 200..360 degrees (blue to magenta)."""

    hue_min: float = 100.0
    hue_max: float = 180.0
    sat_min: float = 30.0

    def __post_init__(self):
        if not 0.0 <= self.hue_min <= self.hue_max <= 180.0:
            raise ValueError("need 0 <= hue_min <= hue_max <= 180")
        if not 0.0 <= self.sat_min <= 255.0:
            raise ValueError("sat_min must lie in [0, 255]")


@dataclass
class BinaryMask:
    grid: np.ndarray  # 2-D bool
    working_magnification: float = WORKING_MAGNIFICATION
    slide_id: str = ""

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.grid.ndim != 2:
            raise ValueError("mask grid must be 2-D")

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape


def rgb_to_hue_sat(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hue on [0, 180) half-degrees and saturation on [0, 255] per pixel."""
    rgb = np.asarray(image, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    cmax = rgb.max(axis=-1)
    cmin = rgb.min(axis=-1)
    delta = cmax - cmin
    hue = np.zeros_like(cmax)
    nz = delta > 0
    r_is_max = nz & (cmax == r)
    g_is_max = nz & ~r_is_max & (cmax == g)
    b_is_max = nz & ~r_is_max & ~g_is_max
    hue[r_is_max] = (60.0 * (g[r_is_max] - b[r_is_max]) / delta[r_is_max]) % 360.0
    hue[g_is_max] = 60.0 * (b[g_is_max] - r[g_is_max]) / delta[g_is_max] + 120.0
    hue[b_is_max] = 60.0 * (r[b_is_max] - g[b_is_max]) / delta[b_is_max] + 240.0
    sat = np.zeros_like(cmax)
    pos = cmax > 0
    sat[pos] = 255.0 * delta[pos] / cmax[pos]
    return hue / 2.0, sat


def compute_tissue_mask(
    level_image: np.ndarray,
    thresholds: HsvThresholds = HsvThresholds(),
    slide_id: str = "",
) -> BinaryMask:
    """Pixels whose hue falls in the stain window and saturation clears the floor."""
    if level_image.size == 0:
        raise ValueError("empty level image")
    hue, sat = rgb_to_hue_sat(level_image)
    grid = (hue >= thresholds.hue_min) & (hue <= thresholds.hue_max) & (sat >= thresholds.sat_min)
    return BinaryMask(grid=grid, slide_id=slide_id)


def _even_odd_fill(polygon: Polygon, shape_hw: tuple[int, int], scale: float) -> np.ndarray:
    """Even-odd rasterization: pixel true iff its center is inside the polygon."""
    h, w = shape_hw
    vx = np.array([v[0] * scale for v in polygon.vertices])
    vy = np.array([v[1] * scale for v in polygon.vertices])
    px = (np.arange(w) + 0.5)[None, :]
    py = (np.arange(h) + 0.5)[:, None]
    inside = np.zeros(shape_hw, dtype=bool)
    n = len(vx)
    for i in range(n):
        x1, y1 = vx[i], vy[i]
        x2, y2 = vx[(i + 1) % n], vy[(i + 1) % n]
        crosses = (y1 > py) != (y2 > py)
        if not crosses.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = (x2 - x1) * (py - y1) / (y2 - y1) + x1
        inside ^= crosses & (px < x_at)
    return inside


def rasterize_annotations(
    polygons: list[Polygon],
    target_shape: tuple[int, int],
    slide_id: str = "",
    source_magnification: float = ANNOTATION_SOURCE_MAGNIFICATION,
    working_magnification: float = WORKING_MAGNIFICATION,
) -> BinaryMask:
    """Union of even-odd fills of the lesion polygons on the working grid.

    Vertices are given in full-resolution pixels and scaled down (1/16 by
    default). An empty polygon list yields an all-false mask, meaning
    "no annotation" rather than an error.
    """
    scale = working_magnification / source_magnification
    grid = np.zeros(target_shape, dtype=bool)
    for poly in polygons:
        if poly.kind != "lesion":
            continue
        grid |= _even_odd_fill(poly, target_shape, scale)
    return BinaryMask(grid=grid, working_magnification=working_magnification, slide_id=slide_id)


def disk_element(radius: int) -> np.ndarray:
    """Disk structuring element: offsets with dx^2 + dy^2 <= r^2."""
    if radius <= 0:
        return np.ones((1, 1), dtype=bool)
    span = np.arange(-radius, radius + 1)
    return (span[:, None] ** 2 + span[None, :] ** 2) <= radius * radius


def morph_close_open(mask: BinaryMask, radius: int = DEFAULT_MORPH_RADIUS) -> BinaryMask:
    """Closing then opening with a disk element; radius 0 is the identity.

    The grid is padded with background by the element radius before
    filtering, so the result equals closing/opening of the mask embedded in
    an infinite empty plane. Clamping at the grid edge instead would let the
    closing invent pixels along borders the mask merely comes near.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return BinaryMask(
            grid=mask.grid.copy(),
            working_magnification=mask.working_magnification,
            slide_id=mask.slide_id,
        )
    element = disk_element(radius)
    padded = np.pad(mask.grid, radius, constant_values=False)
    closed = ndimage.binary_erosion(ndimage.binary_dilation(padded, element), element)
    opened = ndimage.binary_dilation(ndimage.binary_erosion(closed, element), element)
    return BinaryMask(
        grid=opened[radius:-radius, radius:-radius],
        working_magnification=mask.working_magnification,
        slide_id=mask.slide_id,
    )


def compute_lesion_mask(
    tissue: BinaryMask,
    annotation: BinaryMask,
    radius: int = DEFAULT_MORPH_RADIUS,
) -> BinaryMask:
    """Intersection of tissue and annotation, then morphological cleanup.

    The result is the region from which all patches are drawn.
    """
    if tissue.shape != annotation.shape:
        raise ValueError(
            f"mask dimensions differ: tissue {tissue.shape} vs annotation {annotation.shape}"
        )
    combined = BinaryMask(
        grid=tissue.grid & annotation.grid,
        working_magnification=tissue.working_magnification,
        slide_id=tissue.slide_id or annotation.slide_id,
    )
    return morph_close_open(combined, radius)


def save_mask(mask: BinaryMask, png_path, thresholds: HsvThresholds | None = None,
              radius: int | None = None) -> Path:
    """Write a 1-bit PNG plus a JSON sidecar describing how it was made."""
    png_path = Path(png_path)
    png_path.parent.mkdir(parents=True, exist_ok=True)
    img = Image.fromarray((mask.grid * 255).astype(np.uint8), mode="L")
    img.convert("1", dither=Image.NONE).save(png_path)
    sidecar = {
        "slide_id": mask.slide_id,
        "working_magnification": mask.working_magnification,
    }
    if thresholds is not None:
        sidecar["thresholds"] = {
            "hue_min": thresholds.hue_min,
            "hue_max": thresholds.hue_max,
            "sat_min": thresholds.sat_min,
        }
    if radius is not None:
        sidecar["radius"] = radius
    png_path.with_suffix(".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
    )
    return png_path


def load_mask(png_path) -> BinaryMask:
    png_path = Path(png_path)
    with Image.open(png_path) as img:
        grid = np.asarray(img.convert("L")) > 127
    sidecar = json.loads(png_path.with_suffix(".json").read_text())
    return BinaryMask(
        grid=grid,
        working_magnification=sidecar["working_magnification"],
        slide_id=sidecar["slide_id"],
    )
