import json

import numpy as np
import pytest

from capspoe import dataio, pipeline
from capspoe.cli import main
from capspoe.config import load_config

from conftest import tiny_config_text


def test_verify_passes(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path), "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "6/6 checks passed" in out
    summary = json.loads((tmp_path / "verify_summary.json").read_text())
    assert summary["passed"] and summary["seed"] == 1


def test_verify_detects_injected_fault(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path), "--inject-fault"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_usage_errors(tmp_path, capsys):
    assert main([]) == 2
    assert main(["train-autoencoder", "--config", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nunknown = 1\n")
    assert main(["verify", "--config", str(bad)]) == 2


def test_missing_dataset(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(tiny_config_text(tmp_path / "nothing-here", tmp_path / "out"))
    assert main(["train-autoencoder", "--config", str(cfg)]) == 2


def test_synth_data(tmp_path):
    path = tmp_path / "d.idx"
    assert main(["synth-data", str(path), "--count", "12"]) == 0
    assert dataio.load_idx(path, (28, 28)).shape == (12, 28, 28)
    assert main(["synth-data", str(path), "--count", "0"]) == 2


def test_full_cycle(tiny_config, capsys):
    cfg = load_config(tiny_config)
    out = pipeline.out_dir(cfg)
    args = ["--config", str(tiny_config)]
    assert main(["train-autoencoder", *args]) == 0
    assert main(["train-capsules", *args]) == 0
    assert main(["generate", *args]) == 0
    grid = dataio.read_pnm(out / "generated.pgm")
    assert grid.shape == (2 * 29 + 1, 4 * 29 + 1, 1)
    assert main(["diagram", *args, "--sample-index", "3"]) == 0
    svg = (out / "routing.svg").read_text()
    assert svg.count("<rect") == 36 + 4 + 1
    for name in ("autoencoder_metrics.csv", "capsules_metrics.csv", "autoencoder_loss.png",
                 "capsules_xent.png", "generated.png"):
        assert (out / name).stat().st_size > 0
    assert pipeline.read_log(out / "capsules_metrics.csv")[-1]["epoch"] == 2

    # contract violations
    assert main(["generate", *args, "--samples-per-capsule", "0"]) == 2
    assert main(["diagram", *args, "--sample-index", "32"]) == 2


def test_mismatched_checkpoints(tmp_path, small_idx):
    a = tmp_path / "a.ini"
    a.write_text(tiny_config_text(small_idx, tmp_path / "a", epochs=1))
    assert main(["train-autoencoder", "--config", str(a)]) == 0
    assert main(["train-capsules", "--config", str(a)]) == 0
    # an autoencoder with 16 channels yields 72 lower capsules, not 36
    b = tmp_path / "b.ini"
    b.write_text(tiny_config_text(small_idx, tmp_path / "b", epochs=1).replace("channels = 8", "channels = 16"))
    assert main(["train-autoencoder", "--config", str(b)]) == 0
    cfg_b = load_config(b)
    with pytest.raises(pipeline.CheckpointMismatchError):
        pipeline.generate_grid(cfg_b, capsule_checkpoint=tmp_path / "a" / pipeline.CAPS_CKPT)
    assert main(["generate", "--config", str(b), "--capsules", str(tmp_path / "a" / pipeline.CAPS_CKPT)]) == 2


def test_resume_rejects_changed_config(tmp_path, small_idx):
    a = tmp_path / "a.ini"
    a.write_text(tiny_config_text(small_idx, tmp_path / "out", epochs=1))
    assert main(["train-autoencoder", "--config", str(a)]) == 0
    a.write_text(tiny_config_text(small_idx, tmp_path / "out", epochs=2).replace("batch = 16", "batch = 8", 1))
    assert main(["train-autoencoder", "--config", str(a), "--resume"]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_training_exits_one(tmp_path, small_idx):
    cfg = tmp_path / "c.ini"
    cfg.write_text(tiny_config_text(small_idx, tmp_path / "out", epochs=1).replace("lr = 0.05", "lr = 1e300"))
    assert main(["train-autoencoder", "--config", str(cfg)]) == 0
    assert main(["train-capsules", "--config", str(cfg)]) == 1
