"""Shared fixtures: a couple of small synthetic slides and their masks.

Slide generation is the slow part of the suite, so anything reusable is
session-scoped and treated as read-only by the tests that consume it.
"""

import numpy as np
import pytest

from wsiprog.evaluation import CohortSlide
from wsiprog.masking import (
    HsvThresholds,
    compute_lesion_mask,
    compute_tissue_mask,
    rasterize_annotations,
)
from wsiprog.synthetic import SyntheticSpec, generate_synthetic_slide


@pytest.fixture(scope="session")
def bad_slide():
    spec = SyntheticSpec(seed=5, label="bad", size_40x=(1024, 1024))
    return generate_synthetic_slide(spec)


@pytest.fixture(scope="session")
def good_slide():
    spec = SyntheticSpec(seed=6, label="good", size_40x=(1024, 1024))
    return generate_synthetic_slide(spec)


@pytest.fixture(scope="session")
def bad_lesion_mask(bad_slide):
    tissue = compute_tissue_mask(bad_slide.levels[2.5], HsvThresholds(), bad_slide.slide_id)
    annotation = rasterize_annotations(
        list(bad_slide.annotations), tissue.shape, bad_slide.slide_id
    )
    return compute_lesion_mask(tissue, annotation)


@pytest.fixture(scope="session")
def mini_cohort():
    """12 slides (6 good, 6 bad) at the minimum slide size."""
    slides = []
    for i in range(12):
        spec = SyntheticSpec(
            seed=100 + i,
            label="good" if i % 2 == 0 else "bad",
            size_40x=(1024, 1024),
            slide_id=f"mini_{i:02d}",
        )
        slides.append(generate_synthetic_slide(spec))
    return slides


@pytest.fixture()
def mini_cohort_slides(mini_cohort):
    """Fresh CohortSlide wrappers so per-test label games cannot leak."""
    return [CohortSlide.from_pyramid(p) for p in mini_cohort]


def checkerboard(h, w, block=4):
    """Boolean checkerboard, handy as an arbitrary non-trivial mask."""
    rows = (np.arange(h) // block)[:, None]
    cols = (np.arange(w) // block)[None, :]
    return (rows + cols) % 2 == 0
