"""Staged CLI: full walkthrough on a small cohort, precondition errors,
config handling, and artifact determinism, all in-process via main()."""

import json

import pytest

from wsiprog import __version__
from wsiprog.cli import main
from wsiprog.embedding import ConcatFeature, ReferenceEmbedder, write_embeddings
from wsiprog.evaluation import CohortSlide, PipelineConfig, materialize_bundle
from wsiprog.patching import manifest_filename, read_manifest
from wsiprog.pyramid import load_slide, read_cohort_index

STAGES = ("synth", "mask", "extract", "train", "eval", "report")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(
        json.dumps(
            {
                "k": 2,
                "max_epochs": 2,
                "patience": 2,
                "magnifications": [20],
                "size_40x": 1024,
            }
        )
    )
    out = root / "run"
    base = ["--config", str(cfg), "--out", str(out), "--seed", "5"]
    assert main(["synth", *base, "--n", "6"]) == 0
    for stage in STAGES[1:]:
        assert main([stage, *base]) == 0, stage
    return out, base


@pytest.fixture(scope="module")
def partial(tmp_path_factory):
    """Workspace that stops after synth: downstream stages must refuse."""
    out = tmp_path_factory.mktemp("partial") / "run"
    base = ["--out", str(out), "--seed", "9"]
    assert main(["synth", *base, "--n", "2", "--size-40x", "1024"]) == 0
    return out, base


class TestWalkthrough:
    def test_artifacts_exist(self, workspace):
        out, _ = workspace
        entries = read_cohort_index(out / "cohort")
        assert len(entries) == 6
        assert sorted(e["label"] for e in entries) == ["bad"] * 3 + ["good"] * 3
        for entry in entries:
            assert (out / "masks" / f"{entry['slide_id']}.png").exists()
        for fold in (1, 2):
            for split in ("t", "v"):
                name = manifest_filename((20.0,), split, fold)
                assert (out / "datasets" / name).exists()
            assert (out / "models" / f"model_m20_fold{fold}.npz").exists()
            assert (out / "models" / f"history_m20_fold{fold}.json").exists()
            assert (out / "eval" / f"eval_m20_fold{fold}.json").exists()
            assert (out / "eval" / f"roc_m20_fold{fold}.csv").exists()
        for suffix in ("json", "csv"):
            assert (out / "report" / f"report_m20.{suffix}").exists()
        assert (out / "report" / "roc_m20.svg").exists()

    def test_stage_logs(self, workspace):
        out, _ = workspace
        for stage in STAGES:
            payload = json.loads((out / "logs" / f"{stage}.json").read_text())
            assert payload["stage"] == stage
            assert payload["duration_seconds"] >= 0
            assert payload["seed"] == 5
            assert payload["package_version"] == __version__

    def test_report_contents(self, workspace):
        out, _ = workspace
        report = json.loads((out / "report" / "report_m20.json").read_text())
        assert report["config"]["k"] == 2
        assert report["config"]["magnifications"] == [20.0]
        assert len(report["folds"]) == 2
        assert "enabled" in report["augmentation"]
        assert 0.0 <= report["mean"]["auc"] <= 1.0
        csv_lines = (out / "report" / "report_m20.csv").read_text().splitlines()
        assert csv_lines[0].startswith("fold,")
        assert len(csv_lines) == 1 + 2 + 1

    def test_mask_skips_existing(self, workspace, capsys):
        _, base = workspace
        assert main(["mask", *base]) == 0
        assert "0 computed, 6 already present" in capsys.readouterr().out

    def test_report_rerun_byte_identical(self, workspace):
        out, base = workspace
        path = out / "report" / "report_m20.json"
        before = path.read_bytes()
        assert main(["report", *base]) == 0
        assert path.read_bytes() == before

    def test_synth_refuses_then_force(self, workspace, capsys):
        out, base = workspace
        assert main(["synth", *base, "--n", "6"]) == 2
        assert "not empty" in capsys.readouterr().err
        assert main(["synth", *base, "--n", "6", "--force"]) == 0
        assert len(read_cohort_index(out / "cohort")) == 6

    def test_train_from_embeddings_file(self, workspace, tmp_path, capsys):
        out, base = workspace
        config = PipelineConfig(magnifications=(20.0,), k=2, seed=5)
        embedders = {20.0: ReferenceEmbedder(20.0, 5, 224)}
        feats = {}
        for split in ("t", "v"):
            name = manifest_filename((20.0,), split, 1)
            manifest = read_manifest(out / "datasets" / name)
            for sid, coords in manifest.entries_by_slide().items():
                slide = CohortSlide.from_pyramid(load_slide(out / "cohort" / sid))
                bundle = materialize_bundle(
                    slide, coords, config, embedders, keep_rasters=False
                )
                for ref, row in zip(bundle.refs, bundle.base_features):
                    feats[ref] = ConcatFeature(row, (20.0,), ref)
        emb_path = write_embeddings(tmp_path / "cohort.emb", list(feats.values()))

        assert main(
            ["train", *base, "--fold", "1", "--embeddings", str(emb_path)]
        ) == 0
        history = json.loads(
            (out / "models" / "history_m20_fold1.json").read_text()
        )
        assert "precomputed" in history["augmentation"]


class TestPreconditions:
    def test_mask_needs_cohort(self, tmp_path, capsys):
        assert main(["mask", "--out", str(tmp_path / "empty")]) == 2
        assert "run synth first" in capsys.readouterr().err

    def test_extract_needs_masks(self, partial, capsys):
        _, base = partial
        assert main(["extract", *base]) == 2
        assert "run mask first" in capsys.readouterr().err

    def test_train_needs_manifests(self, partial, capsys):
        _, base = partial
        assert main(["train", *base]) == 2
        assert "run extract first" in capsys.readouterr().err

    def test_eval_needs_checkpoint(self, partial, capsys):
        _, base = partial
        assert main(["eval", *base]) == 2
        assert "run train first" in capsys.readouterr().err

    def test_report_needs_eval(self, tmp_path, capsys):
        assert main(["report", "--out", str(tmp_path / "empty")]) == 2
        assert "run eval first" in capsys.readouterr().err

    def test_corrupt_manifest_is_stage_failure(self, partial, capsys):
        out, base = partial
        datasets = out / "datasets"
        datasets.mkdir(exist_ok=True)
        (datasets / manifest_filename((20.0,), "t", 1)).write_text("garbage\n")
        (datasets / manifest_filename((20.0,), "v", 1)).write_text("garbage\n")
        assert main(["train", *base, "--fold", "1"]) == 3
        assert "train failed" in capsys.readouterr().err


class TestValidation:
    def test_synth_requires_n(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "o")]) == 2
        assert "requires --n" in capsys.readouterr().err

    def test_synth_n_too_small(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "o"), "--n", "1"]) == 2
        assert "at least 2" in capsys.readouterr().err

    def test_balance_inconsistent(self, tmp_path, capsys):
        out = str(tmp_path / "o")
        assert main(["synth", "--out", out, "--n", "6", "--balance", "3:2"]) == 2
        assert "inconsistent" in capsys.readouterr().err
        assert main(["synth", "--out", out, "--n", "6", "--balance", "nope"]) == 2
        assert "G:B" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"k": 2, "epochs": 5}')
        out = str(tmp_path / "o")
        assert main(["synth", "--config", str(cfg), "--out", out, "--n", "2"]) == 2
        assert "unknown config keys: epochs" in capsys.readouterr().err

    def test_config_file_problems(self, tmp_path, capsys):
        out = str(tmp_path / "o")
        missing = str(tmp_path / "nope.json")
        assert main(["synth", "--config", missing, "--out", out, "--n", "2"]) == 2
        assert "does not exist" in capsys.readouterr().err

        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["synth", "--config", str(bad), "--out", out, "--n", "2"]) == 2
        assert "not valid JSON" in capsys.readouterr().err

        array = tmp_path / "arr.json"
        array.write_text("[1, 2]")
        assert main(["synth", "--config", str(array), "--out", out, "--n", "2"]) == 2
        assert "JSON object" in capsys.readouterr().err

    def test_fold_out_of_range(self, workspace, capsys):
        _, base = workspace
        assert main(["extract", *base, "--fold", "3"]) == 2
        assert "outside 1..2" in capsys.readouterr().err

    def test_bad_magnifications(self, workspace, capsys):
        _, base = workspace
        assert main(["extract", *base, "--magnifications", "15"]) == 2
        assert "subset of 10,20,40" in capsys.readouterr().err

    def test_missing_embeddings_file(self, workspace, tmp_path, capsys):
        _, base = workspace
        missing = str(tmp_path / "none.emb")
        assert main(["train", *base, "--embeddings", missing]) == 2
        assert "does not exist" in capsys.readouterr().err

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert capsys.readouterr().out.strip() == __version__


class TestDeterminism:
    def test_full_rerun_matches(self, workspace, tmp_path):
        out, _ = workspace
        cfg = tmp_path / "config.json"
        cfg.write_text(
            json.dumps(
                {
                    "k": 2,
                    "max_epochs": 2,
                    "patience": 2,
                    "magnifications": [20],
                    "size_40x": 1024,
                }
            )
        )
        out2 = tmp_path / "run2"
        base = ["--config", str(cfg), "--out", str(out2), "--seed", "5"]
        assert main(["synth", *base, "--n", "6"]) == 0
        for stage in STAGES[1:]:
            assert main([stage, *base]) == 0, stage
        first = (out / "report" / "report_m20.json").read_bytes()
        second = (out2 / "report" / "report_m20.json").read_bytes()
        assert first == second
