import json

import numpy as np
import pytest
from PIL import Image

from itmdetect.cli import main
from itmdetect.perturb import decode_image, encode_png, perturb_gaussian_noise
from itmdetect.pipeline import RunConfig, load_representations_csv
from itmdetect.providers import write_synthetic_corpus


@pytest.fixture
def corpus(tmp_path):
    return write_synthetic_corpus(tmp_path / "corpus", n_real=6, n_fake=6)


def small_config(tmp_path, **overrides):
    cfg = RunConfig.from_dict(
        {
            "provider": {"embedding_dim": 8, **overrides.pop("provider", {})},
            **overrides,
        }
    )
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg.to_dict()), encoding="utf-8")
    return path, cfg


class TestUsageErrors:
    def test_no_command(self):
        assert main([]) == 1

    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1

    def test_missing_required_flag(self):
        assert main(["featurize"]) == 1

    def test_bad_provider_choice(self, corpus):
        assert main(["--provider", "quantum", "featurize", "--manifest", str(corpus)]) == 1

    def test_config_file_missing(self, tmp_path, corpus):
        code = main(
            ["--config", str(tmp_path / "nope.json"), "featurize", "--manifest", str(corpus)]
        )
        assert code == 1

    def test_config_file_malformed(self, tmp_path, corpus):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json", encoding="utf-8")
        assert main(["--config", str(bad), "featurize", "--manifest", str(corpus)]) == 1


class TestFeaturize:
    def test_success_writes_artifacts(self, tmp_path, corpus, capsys):
        cfg_path, _ = small_config(tmp_path)
        out = tmp_path / "out"
        code = main(
            ["--config", str(cfg_path), "--out", str(out), "featurize", "--manifest", str(corpus)]
        )
        assert code == 0
        assert (out / "representations.item").is_file()
        assert (out / "representations.item.index.jsonl").is_file()
        assert (out / "manifest.augmented.jsonl").is_file()
        assert "featurized 12/12 samples" in capsys.readouterr().out

    def test_missing_manifest_is_data_error(self, tmp_path):
        assert main(["--out", str(tmp_path / "o"), "featurize", "--manifest", str(tmp_path / "none.jsonl")]) == 2

    def test_file_provider_without_artifacts_is_provider_error(self, tmp_path, corpus):
        code = main(
            ["--provider", "file", "--out", str(tmp_path / "o"), "featurize", "--manifest", str(corpus)]
        )
        assert code == 3


class TestTrainEval:
    def test_round_trip(self, tmp_path, corpus, capsys):
        cfg_path, cfg = small_config(tmp_path)
        train_out = tmp_path / "train-out"
        assert (
            main(["--config", str(cfg_path), "--out", str(train_out), "train", "--manifest", str(corpus)])
            == 0
        )
        model = train_out / "model.itmc"
        assert model.is_file()
        run = json.loads((train_out / "run.json").read_text())
        assert run["config_hash"] == cfg.config_hash()

        eval_out = tmp_path / "eval-out"
        code = main(
            [
                "--config", str(cfg_path),
                "--out", str(eval_out),
                "eval", "--manifest", str(corpus), "--model", str(model),
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "acc=" in out and "ap=" in out
        assert (eval_out / "scores.csv").is_file()
        assert (eval_out / "eval.json").is_file()

    def test_eval_missing_model_is_data_error(self, tmp_path, corpus):
        code = main(
            [
                "--out", str(tmp_path / "o"),
                "eval", "--manifest", str(corpus), "--model", str(tmp_path / "none.itmc"),
            ]
        )
        assert code == 2

    def test_seed_determinism_and_sensitivity(self, tmp_path, corpus):
        cfg_path, _ = small_config(tmp_path)
        outs = {}
        for name, seed in (("a", "7"), ("b", "7"), ("c", "8")):
            out = tmp_path / name
            code = main(
                [
                    "--config", str(cfg_path),
                    "--seed", seed,
                    "--out", str(out),
                    "train", "--manifest", str(corpus),
                ]
            )
            assert code == 0
            outs[name] = (out / "model.itmc").read_bytes()
        assert outs["a"] == outs["b"]
        assert outs["a"] != outs["c"]


class TestExportReps:
    def test_csv_written(self, tmp_path, corpus):
        cfg_path, _ = small_config(tmp_path)
        out = tmp_path / "out"
        code = main(
            ["--config", str(cfg_path), "--out", str(out), "export-reps", "--manifest", str(corpus)]
        )
        assert code == 0
        rows = load_representations_csv(out / "representations.csv")
        assert len(rows) == 12
        assert all(vec.shape == (8,) for _, _, _, vec in rows)

    def test_mode_override_changes_representations(self, tmp_path, corpus):
        cfg_path, _ = small_config(tmp_path)
        results = {}
        for mode in ("both", "global_only"):
            out = tmp_path / f"out-{mode}"
            code = main(
                [
                    "--config", str(cfg_path),
                    "--mode", mode,
                    "--out", str(out),
                    "export-reps", "--manifest", str(corpus),
                ]
            )
            assert code == 0
            results[mode] = load_representations_csv(out / "representations.csv")
        both = np.stack([vec for _, _, _, vec in results["both"]])
        global_only = np.stack([vec for _, _, _, vec in results["global_only"]])
        assert not np.allclose(both, global_only)


class TestStrict:
    def test_nonstrict_reports_and_succeeds(self, tmp_path, corpus, capsys):
        cfg_path, _ = small_config(tmp_path)
        victim = corpus.parent / "images" / "real_00000.img"
        victim.unlink()
        out = tmp_path / "out"
        code = main(
            ["--config", str(cfg_path), "--out", str(out), "featurize", "--manifest", str(corpus)]
        )
        assert code == 0
        captured = capsys.readouterr()
        assert "featurized 11/12 samples" in captured.out
        assert "real-00000" in captured.err

    def test_strict_aborts_with_provider_exit(self, tmp_path, corpus):
        # An unreadable image surfaces as a provider-side failure.
        cfg_path, _ = small_config(tmp_path)
        (corpus.parent / "images" / "real_00000.img").unlink()
        code = main(
            [
                "--config", str(cfg_path),
                "--strict",
                "--out", str(tmp_path / "out"),
                "featurize", "--manifest", str(corpus),
            ]
        )
        assert code == 3


class TestPerturb:
    @pytest.fixture
    def image_tree(self, tmp_path):
        rng = np.random.default_rng(0)
        root = tmp_path / "tree"
        (root / "sub").mkdir(parents=True)
        for rel in ("top.png", "sub/nested.png"):
            image = rng.random((32, 40, 3))
            (root / rel).write_bytes(encode_png(image))
        return root

    def test_noise_preserves_tree_and_pixels(self, tmp_path, image_tree):
        out = tmp_path / "noised"
        code = main(
            [
                "--seed", "5",
                "--out", str(out),
                "perturb", "--kind", "noise", "--param", "0.01", "--in", str(image_tree),
            ]
        )
        assert code == 0
        assert (out / "top.png").is_file()
        assert (out / "sub" / "nested.png").is_file()
        source = decode_image((image_tree / "top.png").read_bytes())
        expected = perturb_gaussian_noise(source, 0.01, seed=5)
        written = decode_image((out / "top.png").read_bytes())
        assert np.max(np.abs(written - expected)) <= 0.5 / 255.0

    def test_jpeg_outputs_jpg_files(self, tmp_path, image_tree):
        out = tmp_path / "jpegged"
        code = main(
            ["--out", str(out), "perturb", "--kind", "jpeg", "--param", "60", "--in", str(image_tree)]
        )
        assert code == 0
        assert (out / "top.jpg").is_file()
        assert (out / "sub" / "nested.jpg").is_file()
        with Image.open(out / "top.jpg") as img:
            assert img.format == "JPEG"

    def test_blur_runs(self, tmp_path, image_tree):
        out = tmp_path / "blurred"
        code = main(
            ["--out", str(out), "perturb", "--kind", "blur", "--param", "1.5", "--in", str(image_tree)]
        )
        assert code == 0
        assert (out / "top.png").is_file()

    def test_bad_jpeg_quality_is_usage_error(self, tmp_path, image_tree):
        code = main(
            [
                "--out", str(tmp_path / "o"),
                "perturb", "--kind", "jpeg", "--param", "0", "--in", str(image_tree),
            ]
        )
        assert code == 1

    def test_missing_input_dir_is_data_error(self, tmp_path):
        code = main(
            [
                "--out", str(tmp_path / "o"),
                "perturb", "--kind", "blur", "--param", "1.0", "--in", str(tmp_path / "nope"),
            ]
        )
        assert code == 2

    def test_dir_without_images_is_data_error(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        (empty / "notes.txt").write_text("no images here")
        code = main(
            ["--out", str(tmp_path / "o"), "perturb", "--kind", "blur", "--param", "1.0", "--in", str(empty)]
        )
        assert code == 2
