"""Patch grids, coverage, sampling, folds, and dataset manifests."""

import numpy as np
import pytest

from wsiprog.masking import BinaryMask
from wsiprog.patching import (
    DatasetManifest,
    PatchCoordinate,
    build_dataset,
    extract_valid_coordinates,
    manifest_filename,
    project_patch,
    read_manifest,
    sample_coordinates,
    stratified_kfold,
    write_manifest,
)

from conftest import checkerboard


def _coverage_oracle(grid, patch_size):
    """Exact area coverage per grid cell, via per-pixel overlap weights.

    Cell (i, j) covers the half-open square of side patch_size/8 mask pixels
    anchored at (i, j) times that side; the mask is piecewise constant on
    unit pixels, so the integral is a weighted sum of pixel values.
    """
    side = patch_size / 8.0
    h, w = grid.shape
    n_cols = int(w * 8) // patch_size
    n_rows = int(h * 8) // patch_size

    def axis_weights(start, length):
        w_ = np.zeros(length)
        for p in range(length):
            w_[p] = max(0.0, min(start + side, p + 1) - max(start, p))
        return w_

    out = np.zeros((n_rows, n_cols))
    for i in range(n_rows):
        wy = axis_weights(i * side, h)
        for j in range(n_cols):
            wx = axis_weights(j * side, w)
            out[i, j] = wy @ grid.astype(float) @ wx / (side * side)
    return out


class TestExtractValidCoordinates:
    def test_all_true_grid_counts(self):
        mask = BinaryMask(grid=np.ones((224, 224), dtype=bool))
        coords = extract_valid_coordinates(mask)
        assert len(coords) == 64

    def test_centers_row_major(self):
        mask = BinaryMask(grid=np.ones((56, 56), dtype=bool))
        coords = extract_valid_coordinates(mask)  # 2x2 grid of 224-px patches
        assert [c.center_20x for c in coords] == [
            (112, 112), (336, 112), (112, 336), (336, 336)
        ]

    def test_matches_area_oracle(self):
        rng = np.random.default_rng(3)
        for trial in range(6):
            grid = ndimage_blobs(rng, (60, 68))
            for threshold in (0.3, 0.7, 0.95):
                got = {
                    c.center_20x
                    for c in extract_valid_coordinates(
                        BinaryMask(grid=grid), patch_size=30, coverage_min=threshold
                    )
                }
                cov = _coverage_oracle(grid, 30)
                want = set()
                for i in range(cov.shape[0]):
                    for j in range(cov.shape[1]):
                        if cov[i, j] >= threshold - 1e-12:
                            want.add((j * 30 + 15, i * 30 + 15))
                assert got == want, (trial, threshold)

    def test_coverage_threshold_boundary(self):
        # half-covered cell: included at 0.5, excluded just above
        grid = np.zeros((28, 28), dtype=bool)
        grid[:14, :] = True
        mask = BinaryMask(grid=grid)
        assert len(extract_valid_coordinates(mask, coverage_min=0.5)) == 1
        assert len(extract_valid_coordinates(mask, coverage_min=0.5001)) == 0

    def test_carries_slide_id_and_label(self):
        mask = BinaryMask(grid=np.ones((28, 28), bool), slide_id="s9")
        coords = extract_valid_coordinates(mask, slide_id="s9", label="bad")
        assert coords == [PatchCoordinate(slide_id="s9", center_20x=(112, 112), label="bad")]

    def test_empty_mask(self):
        coords = extract_valid_coordinates(BinaryMask(grid=np.zeros((56, 56), bool)))
        assert coords == []

    def test_checkerboard_partial_coverage(self):
        grid = checkerboard(28, 28, block=2)
        mask = BinaryMask(grid=grid)
        # exactly half the area is true, nowhere near 0.7
        assert extract_valid_coordinates(mask, coverage_min=0.7) == []
        assert len(extract_valid_coordinates(mask, coverage_min=0.5)) == 1


def ndimage_blobs(rng, shape):
    """Union of a few random disks, used as an arbitrary lesion stand-in."""
    ys, xs = np.mgrid[: shape[0], : shape[1]]
    grid = np.zeros(shape, dtype=bool)
    for _ in range(4):
        cy = rng.integers(0, shape[0])
        cx = rng.integers(0, shape[1])
        r = int(rng.integers(4, 18))
        grid |= (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r
    return grid


class TestSampleCoordinates:
    @staticmethod
    def _coords(n):
        return [
            PatchCoordinate(slide_id="s", center_20x=(112 + 224 * i, 112), label="good")
            for i in range(n)
        ]

    def test_under_cap_returns_all(self):
        coords = self._coords(5)
        assert sample_coordinates(coords, cap=10, seed=0) == coords

    def test_cap_applies(self):
        picked = sample_coordinates(self._coords(40), cap=10, seed=1)
        assert len(picked) == 10
        assert len(set(picked)) == 10

    def test_preserves_original_order(self):
        coords = self._coords(40)
        picked = sample_coordinates(coords, cap=10, seed=2)
        idx = [coords.index(c) for c in picked]
        assert idx == sorted(idx)

    def test_deterministic_per_seed(self):
        coords = self._coords(30)
        assert sample_coordinates(coords, 8, seed=5) == sample_coordinates(coords, 8, seed=5)
        assert sample_coordinates(coords, 8, seed=5) != sample_coordinates(coords, 8, seed=6)

    def test_uniform_inclusion(self):
        coords = self._coords(40)
        hits = np.zeros(40)
        trials = 8000
        for t in range(trials):
            for c in sample_coordinates(coords, cap=10, seed=t):
                hits[coords.index(c)] += 1
        freq = hits / trials
        assert np.all(np.abs(freq - 0.25) < 0.02)


class TestProjectPatch:
    def test_reference_points(self):
        assert project_patch((1001, 999), 10.0) == (389, 388)
        assert project_patch((1001, 999), 20.0) == (889, 887)
        assert project_patch((1001, 999), 40.0) == (1890, 1886)

    def test_center_recovery_within_one_pixel(self):
        rng = np.random.default_rng(9)
        for _ in range(500):
            c = (int(rng.integers(112, 50_000)), int(rng.integers(112, 50_000)))
            for mag in (10.0, 40.0):
                top_left = project_patch(c, mag)
                scaled_center = (top_left[0] + 112, top_left[1] + 112)
                back = (
                    np.floor(scaled_center[0] * 20.0 / mag + 0.5),
                    np.floor(scaled_center[1] * 20.0 / mag + 0.5),
                )
                assert abs(back[0] - c[0]) <= 1 and abs(back[1] - c[1]) <= 1

    def test_rejects_unknown_magnification(self):
        with pytest.raises(ValueError):
            project_patch((500, 500), 2.5)

    def test_rejects_odd_patch(self):
        with pytest.raises(ValueError):
            project_patch((500, 500), 20.0, patch_size=223)


class TestStratifiedKfold:
    @staticmethod
    def _patients(n_good, n_bad):
        pts = [(f"g{i:02d}", "good") for i in range(n_good)]
        pts += [(f"b{i:02d}", "bad") for i in range(n_bad)]
        return pts

    def test_fold_sizes_26_26(self):
        folds = stratified_kfold(self._patients(26, 26), k=5, seed=0)
        sizes = sorted(len(val) for _, val in folds)
        assert sizes == [10, 10, 10, 11, 11]

    def test_partition_properties(self):
        pts = self._patients(13, 9)
        folds = stratified_kfold(pts, k=4, seed=3)
        all_ids = {p for p, _ in pts}
        seen = []
        for train, val in folds:
            assert set(train) | set(val) == all_ids
            assert not set(train) & set(val)
            assert train == sorted(train) and val == sorted(val)
            seen.extend(val)
        assert sorted(seen) == sorted(all_ids)

    def test_stratification_balance(self):
        pts = self._patients(26, 26)
        label_of = dict(pts)
        for _, val in stratified_kfold(pts, k=5, seed=1):
            good = sum(1 for p in val if label_of[p] == "good")
            bad = len(val) - good
            assert abs(good - bad) <= 1

    def test_deterministic_and_seed_sensitive(self):
        pts = self._patients(10, 10)
        assert stratified_kfold(pts, 5, seed=4) == stratified_kfold(pts, 5, seed=4)
        assert stratified_kfold(pts, 5, seed=4) != stratified_kfold(pts, 5, seed=5)

    def test_duplicate_ids(self):
        pts = [("a", "good"), ("a", "bad"), ("b", "good"), ("c", "bad")]
        with pytest.raises(ValueError, match="duplicate"):
            stratified_kfold(pts, 2, seed=0)

    def test_unknown_label(self):
        with pytest.raises(ValueError):
            stratified_kfold([("a", "good"), ("b", "meh")], 2, seed=0)

    def test_class_smaller_than_k(self):
        pts = self._patients(2, 8)
        with pytest.raises(ValueError):
            stratified_kfold(pts, 3, seed=0)


class TestManifest:
    @staticmethod
    def _manifest(**kw):
        defaults = dict(magnifications=(20.0,), split="t", fold=1, seed=11)
        defaults.update(kw)
        m = DatasetManifest(**defaults)
        m.entries.extend(
            [
                PatchCoordinate("s1", (112, 112), "good"),
                PatchCoordinate("s1", (336, 112), "good"),
                PatchCoordinate("s2", (112, 336), "bad"),
            ]
        )
        return m

    def test_filename_law(self):
        assert manifest_filename((20.0,), "t", 1) == "D_m20_t1.csv"
        assert manifest_filename((40.0, 10.0, 20.0), "v", 3) == "D_m10-20-40_v3.csv"

    def test_round_trip(self, tmp_path):
        m = self._manifest(magnifications=(40.0, 20.0))
        m.warnings.append("s3: no valid patches")
        path = write_manifest(m, tmp_path / "d.csv")
        back = read_manifest(path)
        assert back.magnifications == (20.0, 40.0)
        assert back.split == "t" and back.fold == 1 and back.seed == 11
        assert back.entries == m.entries
        assert back.warnings == m.warnings

    def test_header_line_is_json_comment(self, tmp_path):
        path = write_manifest(self._manifest(), tmp_path / "d.csv")
        first = path.read_text().splitlines()[0]
        assert first.startswith("# {") and '"split": "t"' in first

    def test_rejects_tampered_columns(self, tmp_path):
        path = write_manifest(self._manifest(), tmp_path / "d.csv")
        lines = path.read_text().splitlines()
        lines[1] = "slide,label,x,y"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ValueError):
            read_manifest(path)

    def test_rejects_missing_header(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("slide_id,label,center_x_20,center_y_20\n")
        with pytest.raises(ValueError):
            read_manifest(p)

    def test_validates_split_fold_mags(self):
        with pytest.raises(ValueError):
            DatasetManifest(magnifications=(20.0,), split="train", fold=1, seed=0)
        with pytest.raises(ValueError):
            DatasetManifest(magnifications=(20.0,), split="t", fold=0, seed=0)
        with pytest.raises(ValueError):
            DatasetManifest(magnifications=(25.0,), split="t", fold=1, seed=0)

    def test_per_slide_cap_enforced(self):
        entries = [
            PatchCoordinate("s1", (112 + 224 * i, 112), "good") for i in range(3)
        ]
        with pytest.raises(ValueError, match="cap"):
            DatasetManifest(
                magnifications=(20.0,), split="t", fold=1, seed=0, cap=2,
                entries=entries,
            )

    def test_entries_by_slide(self):
        m = self._manifest()
        groups = m.entries_by_slide()
        assert sorted(groups) == ["s1", "s2"]
        assert len(groups["s1"]) == 2


class TestBuildDataset:
    @staticmethod
    def _slides():
        full = np.ones((56, 56), dtype=bool)
        return [
            ("s1", "good", BinaryMask(grid=full.copy(), slide_id="s1")),
            ("s2", "bad", BinaryMask(grid=full.copy(), slide_id="s2")),
            ("s3", "good", BinaryMask(grid=np.zeros((56, 56), bool), slide_id="s3")),
        ]

    def test_split_and_counts(self):
        train, val = build_dataset(
            self._slides(), fold=1, train_ids=["s1"], val_ids=["s2"],
            magnifications=(20.0,), cap=3, seed=0,
        )
        assert {c.slide_id for c in train.entries} == {"s1"}
        assert {c.slide_id for c in val.entries} == {"s2"}
        assert len(train.entries) == 3  # capped from 4 candidates
        assert train.split == "t" and val.split == "v"

    def test_empty_slide_warns_and_skips(self):
        train, val = build_dataset(
            self._slides(), fold=1, train_ids=["s1", "s3"], val_ids=["s2"],
            magnifications=(20.0,), seed=0,
        )
        assert any("s3" in w for w in train.warnings)
        assert {c.slide_id for c in train.entries} == {"s1"}

    def test_overlapping_ids_rejected(self):
        with pytest.raises(ValueError, match="both"):
            build_dataset(
                self._slides(), fold=1, train_ids=["s1", "s2"], val_ids=["s2"],
                magnifications=(20.0,), seed=0,
            )

    def test_unlisted_slides_ignored(self):
        train, val = build_dataset(
            self._slides(), fold=2, train_ids=["s1"], val_ids=[], magnifications=(20.0,),
            seed=0,
        )
        assert {c.slide_id for c in train.entries} == {"s1"}
        assert val.entries == []

    def test_sampling_is_fold_independent(self):
        slides = self._slides()
        t1, _ = build_dataset(slides, 1, ["s1"], ["s2"], (20.0,), cap=2, seed=9)
        t2, _ = build_dataset(slides, 2, ["s1"], ["s2"], (20.0,), cap=2, seed=9)
        assert t1.entries == t2.entries
