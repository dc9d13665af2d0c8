"""End-to-end command line behaviour, in process via main()."""

import json

import numpy as np
import pytest

from capnet import ctf
from capnet.cli import main
from capnet.config import parse_config_text
from capnet.data import save_png

TINY_SETTINGS = {
    "train.epochs": 1,
    "train.batch_size": 3,
    "train.lr0": 0.05,
    "augment.crop_from": 18,
    "augment.crop_to": 16,
    "backbone.stages": [[4, True], [4, True]],
    "backbone.upsample_to": [6, 6],
    "regions.delta": [2, 2],
    "regions.pyramid_levels": [[1, 2], [2, 2]],
    "pool.target": [2, 2],
    "encoder.hidden_size": 6,
    "vlad.clusters": 3,
    "data.num_classes": 3,
    "data.per_class_train": 3,
    "data.per_class_test": 2,
    "data.image_size": 18,
}


def tiny_args(command, out, extra=()):
    args = [command, "--out", str(out)]
    for key, value in TINY_SETTINGS.items():
        args += ["--set", f"{key}={json.dumps(value)}"]
    return args + list(extra)


@pytest.fixture
def trained(tmp_path):
    out = tmp_path / "run"
    assert main(tiny_args("train", out)) == 0
    return out


def test_train_writes_run_artifacts(trained):
    resolved = parse_config_text((trained / "config.resolved").read_text())
    for key, value in TINY_SETTINGS.items():
        assert resolved[key] == value
    lines = (trained / "metrics.csv").read_text().splitlines()
    assert len(lines) == 2
    ckpt = trained / "checkpoint-final"
    assert (ckpt / "manifest.json").is_file()
    assert (ckpt / "config.resolved").is_file()


def test_train_honors_mode_and_epoch_flags(tmp_path, capsys):
    out = tmp_path / "b"
    code = main(tiny_args("train", out, ["--mode", "B", "--epochs", "2"]))
    assert code == 0
    resolved = parse_config_text((out / "config.resolved").read_text())
    assert resolved["train.mode"] == "B"
    assert resolved["train.epochs"] == 2
    assert len((out / "metrics.csv").read_text().splitlines()) == 3


def test_overrides_beat_config_file(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("train.epochs = 5\n")
    out = tmp_path / "run"
    code = main(tiny_args("train", out, ["--config", str(conf),
                                         "--set", "train.epochs=0"]))
    assert code == 0
    resolved = parse_config_text((out / "config.resolved").read_text())
    assert resolved["train.epochs"] == 0
    # Even a zero-epoch run leaves a loadable checkpoint behind.
    assert (out / "checkpoint-final" / "manifest.json").is_file()


def test_cap_out_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("CAP_OUT", str(tmp_path / "env_out"))
    args = [a for a in tiny_args("train", "ignored") if a != "--out"]
    args.remove("ignored")
    assert main(args) == 0
    assert (tmp_path / "env_out" / "metrics.csv").is_file()


def test_missing_out_dir_is_usage_error(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("CAP_OUT", raising=False)
    args = [a for a in tiny_args("train", "ignored") if a != "--out"]
    args.remove("ignored")
    assert main(args) == 2
    assert "output directory" in capsys.readouterr().err


def test_eval_reports_json(trained, tmp_path, capsys):
    report_path = tmp_path / "report.json"
    code = main(["eval", "--checkpoint", str(trained / "checkpoint-final"),
                 "--out", str(report_path)])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["split"] == "test"
    assert report["n_items"] == 6
    assert set(report["top_n"]) == {"1", "2", "5"}
    tops = report["top_n"]
    assert tops["1"] <= tops["2"] <= tops["5"]
    assert json.loads(report_path.read_text()) == report


def test_eval_train_split(trained, capsys):
    code = main(["eval", "--checkpoint", str(trained / "checkpoint-final"),
                 "--split", "train"])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["split"] == "train"
    assert report["n_items"] == 9


def test_eval_without_resolved_config(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["eval", "--checkpoint", str(tmp_path / "empty")]) == 2
    assert "config.resolved" in capsys.readouterr().err


def test_dump_regions(trained, tmp_path, capsys):
    out = tmp_path / "dump"
    code = main(["dump", "regions", "--checkpoint",
                 str(trained / "checkpoint-final"), "--out", str(out)])
    assert code == 0
    lines = (out / "regions.csv").read_text().splitlines()
    assert lines[0] == "i,j,w_px,h_px"
    # Two pyramid levels on a 2x2 anchor grid.
    assert len(lines) == 9


def test_dump_attn_and_features(trained, tmp_path, rng):
    img_path = tmp_path / "sample.png"
    save_png(img_path, rng.random((18, 18, 3)))
    out = tmp_path / "dump"
    code = main(["dump", "attn", "--checkpoint",
                 str(trained / "checkpoint-final"),
                 "--input", str(img_path), "--out", str(out)])
    assert code == 0
    alpha = ctf.load_tensor(out / "sample.alpha.ctf")
    pixel = ctf.load_tensor(out / "sample.pixel_attn.ctf")
    assert alpha.shape == (8, 8)
    assert pixel.shape == (36, 36)
    np.testing.assert_allclose(alpha.sum(axis=1), np.ones(8), atol=1e-9)

    code = main(["dump", "features", "--checkpoint",
                 str(trained / "checkpoint-final"),
                 "--input", str(img_path), "--out", str(out)])
    assert code == 0
    feats = ctf.load_tensor(out / "sample.features.ctf")
    assert feats.shape == (6, 3)


def test_dump_attn_requires_inputs_and_attention_mode(trained, tmp_path, capsys):
    code = main(["dump", "attn", "--checkpoint",
                 str(trained / "checkpoint-final"), "--out", str(tmp_path / "x")])
    assert code == 2
    assert "--input" in capsys.readouterr().err

    out_b = tmp_path / "b"
    assert main(tiny_args("train", out_b, ["--mode", "B", "--epochs", "0"])) == 0
    img_path = tmp_path / "img.png"
    save_png(img_path, np.zeros((18, 18, 3)))
    code = main(["dump", "attn", "--checkpoint", str(out_b / "checkpoint-final"),
                 "--input", str(img_path), "--out", str(tmp_path / "y")])
    assert code == 2
    assert "attention" in capsys.readouterr().err


def test_make_dataset_tree(tmp_path):
    root = tmp_path / "data"
    code = main(["make-dataset", "--out", str(root), "--classes", "2",
                 "--per-class-train", "2", "--per-class-test", "1",
                 "--image-size", "18"])
    assert code == 0
    assert len(list((root / "train" / "class_0").glob("*.png"))) == 2
    assert len(list((root / "test" / "class_1").glob("*.png"))) == 1


def test_train_from_png_directory(tmp_path):
    root = tmp_path / "data"
    assert main(["make-dataset", "--out", str(root), "--classes", "3",
                 "--per-class-train", "3", "--per-class-test", "2",
                 "--image-size", "18"]) == 0
    out = tmp_path / "run"
    code = main(tiny_args("train", out, ["--data", str(root), "--mode", "B"]))
    assert code == 0
    assert (out / "metrics.csv").is_file()


def test_dataset_class_count_mismatch(tmp_path, capsys):
    root = tmp_path / "data"
    assert main(["make-dataset", "--out", str(root), "--classes", "4",
                 "--per-class-train", "1", "--per-class-test", "1",
                 "--image-size", "18"]) == 0
    out = tmp_path / "run"
    code = main(tiny_args("train", out, ["--data", str(root)]))
    assert code == 2
    assert "classes" in capsys.readouterr().err


def test_verify_invariants_passes(capsys):
    assert main(["verify", "invariants"]) == 0
    out = capsys.readouterr().out
    assert "checks passed" in out
    assert "FAIL" not in out


def test_verify_failure_exit_code(monkeypatch, capsys):
    from capnet.verify import CheckResult

    monkeypatch.setattr("capnet.cli.run_suites",
                        lambda *a, **k: [CheckResult("stub", False, "boom")])
    assert main(["verify", "invariants"]) == 1
    assert "0/1 checks passed" in capsys.readouterr().out


def test_usage_errors_exit_two(tmp_path, capsys):
    assert main([]) == 2
    assert main(["train", "--mode", "bogus", "--out", str(tmp_path)]) == 2
    assert main(["frobnicate"]) == 2
    code = main(tiny_args("train", tmp_path / "x",
                          ["--set", "train.warp=9"]))
    assert code == 2
    assert "unknown config key" in capsys.readouterr().err
