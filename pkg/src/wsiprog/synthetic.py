"""Deterministic synthetic slide cohorts.

Each slide is a white background with one stained lesion blob whose texture
statistics carry a label-dependent shift scaled by signal_strength, plus a
rough polygon annotation loosely covering the blob. Used to exercise the
whole pipeline at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from PIL import Image

from .pyramid import BAD, GOOD, MAGNIFICATIONS, Polygon, SlidePyramid
from .util import box_downsample, derive_seed, hsv_to_rgb, scale_dim

LESION_SHAPES = ("round", "lobed", "irregular")
_SHAPE_WIGGLE = {"round": 0.0, "lobed": 0.10, "irregular": 0.20}

# Baseline texture; the label shifts hue / noise / spot density around these.
_BASE_HUE_DEG = 250.0
_HUE_CLASS_SHIFT = 25.0
_BASE_SAT = 70.0
_BASE_VAL = 205.0
_BASE_NOISE = 6.0
_SPOT_DENSITY = 0.9e-4  # spots per 40x pixel of blob area


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic slide; identical specs give identical pixels."""

    seed: int
    label: str
    size_40x: tuple[int, int] = (2048, 2048)  # (width, height)
    lesion_shape: str = "lobed"
    signal_strength: float = 0.8
    slide_id: str = ""

    def __post_init__(self):
        if self.label not in (GOOD, BAD):
            raise ValueError(f"unknown prognosis label {self.label!r}")
        if self.lesion_shape not in LESION_SHAPES:
            raise ValueError(f"lesion_shape must be one of {LESION_SHAPES}")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must lie in [0, 1]")
        w, h = self.size_40x
        if w < 1024 or h < 1024:
            raise ValueError(f"size_40x must be at least 1024x1024, got {w}x{h}")
        if not self.slide_id:
            object.__setattr__(self, "slide_id", f"syn_{self.seed:016x}")


@dataclass(frozen=True)
class _SlideParams:
    center: tuple[float, float]  # 40x pixels
    base_radius: float
    harmonics: tuple[tuple[int, float, float], ...]  # (k, amplitude, phase)
    hue_deg: float
    sat: float
    val: float
    noise_sigma: float
    n_spots: int
    annotation_factors: np.ndarray


def _draw_params(spec: SyntheticSpec) -> _SlideParams:
    """Sample all texture parameters with a label-independent draw order.

    The label enters only through a signed shift scaled by signal_strength,
    so at signal_strength 0 both labels produce identical pixels.
    """
    rng = np.random.default_rng(spec.seed)
    sign = 1.0 if spec.label == BAD else -1.0
    s = spec.signal_strength
    w, h = spec.size_40x

    cx = w * (0.5 + rng.uniform(-0.05, 0.05))
    cy = h * (0.5 + rng.uniform(-0.05, 0.05))
    base_radius = 0.42 * min(w, h) * (1.0 + rng.uniform(-0.08, 0.08))
    wiggle = _SHAPE_WIGGLE[spec.lesion_shape]
    harmonics = tuple(
        (k, wiggle * rng.uniform(0.5, 1.0) / (k - 1), rng.uniform(0.0, 2 * np.pi))
        for k in (2, 3, 4)
    )
    hue_deg = _BASE_HUE_DEG + sign * s * _HUE_CLASS_SHIFT + rng.uniform(-6.0, 6.0)
    sat = _BASE_SAT + rng.uniform(-12.0, 12.0)
    val = _BASE_VAL + rng.uniform(-10.0, 10.0)
    noise_sigma = _BASE_NOISE * (1.0 + sign * s * 0.35) * (1.0 + rng.uniform(-0.08, 0.08))
    blob_area = np.pi * base_radius**2
    n_spots = int(
        blob_area * _SPOT_DENSITY * (1.0 + sign * s * 0.5) * (1.0 + rng.uniform(-0.15, 0.15))
    )
    annotation_factors = 1.06 + rng.uniform(0.0, 0.10, size=40)
    return _SlideParams(
        center=(cx, cy),
        base_radius=base_radius,
        harmonics=harmonics,
        hue_deg=hue_deg,
        sat=sat,
        val=val,
        noise_sigma=noise_sigma,
        n_spots=n_spots,
        annotation_factors=annotation_factors,
    )


def _radius_at(params: _SlideParams, theta: np.ndarray) -> np.ndarray:
    r = np.ones_like(theta)
    for k, amp, phase in params.harmonics:
        r = r + amp * np.cos(k * theta + phase)
    return params.base_radius * r


def _blob_mask(params: _SlideParams, shape_hw: tuple[int, int], scale: float) -> np.ndarray:
    """Rasterize the radial blob on a grid whose pixels are `scale` 40x pixels wide."""
    h, w = shape_hw
    xs = (np.arange(w) + 0.5) * scale - params.center[0]
    ys = (np.arange(h) + 0.5) * scale - params.center[1]
    dx = xs[None, :]
    dy = ys[:, None]
    dist = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    return dist <= _radius_at(params, theta)


def ground_truth_blob_mask(spec: SyntheticSpec, magnification: float = 2.5) -> np.ndarray:
    """Analytic blob raster at a pyramid level, for oracle comparisons."""
    params = _draw_params(spec)
    w, h = spec.size_40x
    shape = (scale_dim(h, magnification), scale_dim(w, magnification))
    return _blob_mask(params, shape, 40.0 / magnification)


def _smooth_field(rng: np.random.Generator, shape_hw: tuple[int, int], amplitude: float) -> np.ndarray:
    """Low-frequency modulation: coarse noise grid upsampled bilinearly."""
    coarse = rng.normal(0.0, 1.0, size=(16, 16)).astype(np.float32)
    img = Image.fromarray(coarse, mode="F").resize(
        (shape_hw[1], shape_hw[0]), resample=Image.BILINEAR
    )
    return np.asarray(img, dtype=np.float64) * amplitude


def generate_synthetic_slide(spec: SyntheticSpec) -> SlidePyramid:
    """Render one synthetic slide with all pyramid levels populated.

    Deterministic under spec.seed. The lesion is a star-convex blob of
    stained texture (hue inside the blue-magenta range) on a white
    background, annotated by a rough polygon that covers it with margin.
    """
    params = _draw_params(spec)
    w, h = spec.size_40x
    rng = np.random.default_rng(derive_seed(spec.seed, "texture"))

    blob = _blob_mask(params, (h, w), 1.0)
    value = params.val + _smooth_field(rng, (h, w), 8.0)
    value = value + rng.normal(0.0, params.noise_sigma, size=(h, w))
    saturation = params.sat + rng.normal(0.0, params.noise_sigma * 0.5, size=(h, w))

    image = np.full((h, w, 3), 255.0)
    r, g, b = hsv_to_rgb(
        np.full(int(blob.sum()), params.hue_deg),
        np.clip(saturation[blob], 25.0, 255.0),
        np.clip(value[blob], 0.0, 255.0),
    )
    image[blob] = np.stack([r, g, b], axis=-1)

    _stamp_spots(image, blob, params, rng)

    full = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    levels = {40.0: full}
    for mag in MAGNIFICATIONS:
        if mag == 40.0:
            continue
        lw, lh = scale_dim(w, mag), scale_dim(h, mag)
        levels[mag] = np.clip(np.rint(box_downsample(full, lh, lw)), 0, 255).astype(np.uint8)

    annotation = _annotation_polygon(params)
    return SlidePyramid(
        slide_id=spec.slide_id,
        label=spec.label,
        levels=levels,
        annotations=[annotation],
    )


def _stamp_spots(image: np.ndarray, blob: np.ndarray, params: _SlideParams, rng) -> None:
    """Blend darker nuclei-like dots into the blob, in place."""
    h, w = blob.shape
    cx, cy = params.center
    reach = params.base_radius * 1.2
    xs = rng.uniform(cx - reach, cx + reach, size=params.n_spots)
    ys = rng.uniform(cy - reach, cy + reach, size=params.n_spots)
    radii = rng.uniform(4.0, 9.0, size=params.n_spots)
    sr, sg, sb = hsv_to_rgb(
        params.hue_deg + 15.0, min(params.sat * 1.6, 255.0), params.val * 0.55
    )
    color = np.array([sr, sg, sb])
    for x, y, rad in zip(xs, ys, radii):
        x0, x1 = int(np.floor(x - rad)), int(np.ceil(x + rad)) + 1
        y0, y1 = int(np.floor(y - rad)), int(np.ceil(y + rad)) + 1
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, w), min(y1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        gy, gx = np.mgrid[y0:y1, x0:x1]
        inside = ((gx + 0.5 - x) ** 2 + (gy + 0.5 - y) ** 2 <= rad * rad) & blob[y0:y1, x0:x1]
        window = image[y0:y1, x0:x1]
        window[inside] = 0.25 * window[inside] + 0.75 * color


def _annotation_polygon(params: _SlideParams) -> Polygon:
    """Rough lesion annotation: blob outline pushed outward by a jittered margin."""
    n = len(params.annotation_factors)
    theta = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    radii = _radius_at(params, theta) * params.annotation_factors
    xs = params.center[0] + radii * np.cos(theta)
    ys = params.center[1] + radii * np.sin(theta)
    return Polygon(vertices=tuple(zip(xs.tolist(), ys.tolist())), kind="lesion")


def cohort_specs(
    n_good: int,
    n_bad: int,
    seed: int,
    size_40x: tuple[int, int] = (2048, 2048),
    lesion_shape: str = "lobed",
    signal_strength: float = 0.8,
    id_prefix: str = "slide",
) -> list[SyntheticSpec]:
    """Balanced-or-not cohort recipes with labels interleaved good/bad."""
    labels = []
    remaining = {GOOD: n_good, BAD: n_bad}
    turn = GOOD
    while remaining[GOOD] or remaining[BAD]:
        if remaining[turn]:
            labels.append(turn)
            remaining[turn] -= 1
        turn = BAD if turn == GOOD else GOOD
    return [
        SyntheticSpec(
            seed=derive_seed(seed, "slide", i),
            label=label,
            size_40x=size_40x,
            lesion_shape=lesion_shape,
            signal_strength=signal_strength,
            slide_id=f"{id_prefix}_{i:04d}",
        )
        for i, label in enumerate(labels)
    ]


def generate_cohort(specs: list[SyntheticSpec]) -> list[SlidePyramid]:
    return [generate_synthetic_slide(spec) for spec in specs]
