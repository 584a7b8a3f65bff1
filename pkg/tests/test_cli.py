import csv
import hashlib

import numpy as np
import pytest

from dctnn import cli, imageio, tensorio
from dctnn.masks import undersample
from dctnn.metrics import ssim
from dctnn.phantom import phantom_dataset, phantom_generate
from dctnn.pipeline import build_model, load_checkpoint, zero_filled
from dctnn.training import read_history

CONFIG = """\
[model]
kinds = kd
n_d = 2
height = 16
width = 16
p = 4
d_model = 8
n_t = 1
n_heads = 2
d_ff = 16

[data]
n_images = 10
reduction = 4

[train]
epochs = 1
batch_size = 4
lr = 1e-3
"""


def _rows(path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(CONFIG)
    return path


@pytest.fixture
def trained_init(tmp_path, config):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(config), "--epochs", "0", "--out", str(out)]) == 0
    return out


def test_mask_command(tmp_path, capsys):
    assert cli.main(["mask", "--width", "320", "--r", "4", "--out", str(tmp_path / "m")]) == 0
    assert "sampled 80/320 columns" in capsys.readouterr().out
    assert tensorio.load(tmp_path / "m.ktns").sum() == 80
    assert (tmp_path / "m.png").is_file()


def test_mask_r1_is_full(tmp_path, capsys):
    assert cli.main(["mask", "--width", "64", "--r", "1", "--out", str(tmp_path / "m")]) == 0
    assert "sampled 64/64" in capsys.readouterr().out
    assert tensorio.load(tmp_path / "m.ktns").all()


def test_mask_is_byte_identical_across_runs(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["mask", "--width", "320", "--r", "6", "--seed", "0", "--out", str(tmp_path / name)]) == 0
    assert _digest(tmp_path / "a.ktns") == _digest(tmp_path / "b.ktns")
    assert _digest(tmp_path / "a.png") == _digest(tmp_path / "b.png")


def test_mask_infeasible_exits_1(tmp_path, capsys):
    assert cli.main(["mask", "--width", "320", "--r", "40", "--center-frac", "0.2",
                     "--out", str(tmp_path / "m")]) == 1
    assert "error" in capsys.readouterr().err


def test_kt_demo_mosaic(tmp_path):
    src = tmp_path / "in.png"
    imageio.write_png(src, phantom_generate(320, 320, 0).image)
    out = tmp_path / "mosaic.png"
    assert cli.main(["kt-demo", "--input", str(src), "--nu", "5", "--out", str(out)]) == 0
    img, tiled = imageio.read_png(src), imageio.read_png(out)
    assert tiled.shape == (320, 320)
    np.testing.assert_array_equal(tiled[64:128, 128:192], img[1::5, 2::5])


def test_kt_demo_nu1_reproduces_input(tmp_path):
    src = tmp_path / "in.png"
    imageio.write_png(src, phantom_generate(32, 32, 0).image)
    assert cli.main(["kt-demo", "--input", str(src), "--nu", "1", "--out", str(tmp_path / "o.png")]) == 0
    np.testing.assert_array_equal(imageio.read_png(tmp_path / "o.png"), imageio.read_png(src))


def test_kt_demo_bad_nu_exits_1(tmp_path):
    src = tmp_path / "in.png"
    imageio.write_png(src, np.zeros((32, 32)))
    assert cli.main(["kt-demo", "--input", str(src), "--nu", "3", "--out", str(tmp_path / "o.png")]) == 1


def test_kt_demo_round_trip_failure_exits_2(tmp_path, monkeypatch):
    src = tmp_path / "in.png"
    imageio.write_png(src, phantom_generate(32, 32, 0).image)
    real_inverse = cli.kt_inverse
    monkeypatch.setattr(cli, "kt_inverse", lambda stack: real_inverse(stack) + 1e-3)
    assert cli.main(["kt-demo", "--input", str(src), "--nu", "4", "--out", str(tmp_path / "o.png")]) == 2


def test_simulate_and_kspace(tmp_path):
    assert cli.main(["simulate", "--n", "2", "--height", "16", "--width", "16", "--out", str(tmp_path / "ph")]) == 0
    images = imageio.read_dataset(tmp_path / "ph")
    np.testing.assert_array_equal(images, phantom_dataset(2, 16, 16, 0))
    assert cli.main(["mask", "--width", "16", "--r", "4", "--out", str(tmp_path / "m")]) == 0
    assert cli.main(["kspace", "--image", str(tmp_path / "ph" / "phantom_0000.ktns"), "--mask",
                     str(tmp_path / "m.ktns"), "--out", str(tmp_path / "k.ktns")]) == 0
    y = tensorio.load(tmp_path / "k.ktns")
    cols = tensorio.load(tmp_path / "m.ktns").astype(bool)
    np.testing.assert_allclose(y, np.where(cols, np.fft.fft2(images[0], norm="ortho"), 0), atol=1e-12)


def test_train_with_zero_epochs_keeps_init(trained_init):
    model = load_checkpoint(trained_init / "checkpoint")
    fresh = build_model(model.config, seed=0)
    for name in fresh.params.names():
        assert np.array_equal(model.params[name].data, fresh.params[name].data), name
    assert read_history(trained_init / "history.csv") == []
    assert (trained_init / "loss_curve.png").is_file()
    assert (trained_init / "test_metrics.csv").is_file()


def test_train_writes_artifacts(tmp_path, config):
    out = tmp_path / "run"
    assert cli.main(["--deterministic", "train", "--config", str(config), "--epochs", "2", "--out", str(out)]) == 0
    assert len(read_history(out / "history.csv")) == 2
    for name in ("checkpoint/manifest.txt", "mask.ktns", "mask.png", "loss_curve.png", "test_metrics.csv"):
        assert (out / name).is_file(), name


def test_train_output_env_default(tmp_path, config, monkeypatch):
    monkeypatch.setenv("DCTNN_OUTPUT_DIR", str(tmp_path / "env"))
    assert cli.main(["train", "--config", str(config), "--epochs", "0"]) == 0
    assert (tmp_path / "env" / "train" / "history.csv").is_file()


def test_reconstruct_identity_model_gives_zero_filled(tmp_path, trained_init):
    img = phantom_generate(16, 16, 7).image
    tensorio.save(tmp_path / "x.ktns", img)
    mask_path = trained_init / "mask.ktns"
    assert cli.main(["kspace", "--image", str(tmp_path / "x.ktns"), "--mask", str(mask_path),
                     "--out", str(tmp_path / "y.ktns")]) == 0
    assert cli.main(["reconstruct", "--checkpoint", str(trained_init / "checkpoint"), "--kspace",
                     str(tmp_path / "y.ktns"), "--mask", str(mask_path), "--out", str(tmp_path / "r")]) == 0
    model = load_checkpoint(trained_init / "checkpoint")
    zf = zero_filled(undersample(img, model.mask), model.mask)
    np.testing.assert_allclose(tensorio.load(tmp_path / "r.ktns"), zf, atol=1e-10)
    imageio.write_png(tmp_path / "zf.png", zf)
    np.testing.assert_array_equal(imageio.read_png(tmp_path / "r.png"), imageio.read_png(tmp_path / "zf.png"))


def test_reconstruct_is_deterministic(tmp_path, trained_init):
    tensorio.save(tmp_path / "x.ktns", phantom_generate(16, 16, 1).image)
    cli.main(["kspace", "--image", str(tmp_path / "x.ktns"), "--mask", str(trained_init / "mask.ktns"),
              "--out", str(tmp_path / "y.ktns")])
    for name in ("a", "b"):
        assert cli.main(["reconstruct", "--checkpoint", str(trained_init / "checkpoint"),
                         "--kspace", str(tmp_path / "y.ktns"), "--out", str(tmp_path / name)]) == 0
    assert _digest(tmp_path / "a.ktns") == _digest(tmp_path / "b.ktns")


def test_eval_ground_truth_predictions(tmp_path, trained_init):
    data = tmp_path / "data.ktns"
    tensorio.save(data, phantom_dataset(3, 16, 16, seed=5))
    out = tmp_path / "metrics.csv"
    assert cli.main(["eval", "--checkpoint", str(trained_init / "checkpoint"), "--dataset", str(data),
                     "--predictions", str(data), "--out", str(out)]) == 0
    (values,) = _rows(out)
    assert float(values["ssim"]) == 1.0


def test_eval_identity_checkpoint_matches_baseline(tmp_path, trained_init):
    data = tmp_path / "data.ktns"
    images = phantom_dataset(3, 16, 16, seed=5)
    tensorio.save(data, images)
    out = tmp_path / "metrics.csv"
    assert cli.main(["eval", "--checkpoint", str(trained_init / "checkpoint"), "--dataset", str(data),
                     "--out", str(out)]) == 0
    (values,) = _rows(out)
    assert abs(float(values["psnr"]) - float(values["zf_psnr"])) < 1e-6
    assert abs(float(values["ssim"]) - float(values["zf_ssim"])) < 1e-6
    assert 0 < ssim(images[0], images[0]) <= 1


def test_corrupt_checkpoint_prints_manifest_diff(tmp_path, trained_init, capsys):
    mf = trained_init / "checkpoint" / "manifest.txt"
    mf.write_text(mf.read_text().replace("config.n_t=1", "config.n_t=2"))
    data = tmp_path / "data.ktns"
    tensorio.save(data, phantom_dataset(2, 16, 16))
    code = cli.main(["eval", "--checkpoint", str(trained_init / "checkpoint"), "--dataset", str(data)])
    err = capsys.readouterr().err
    assert code == 1
    assert "- block.0=kind=kd n_t=1" in err and "+ tensor.stage0.kd.tokens.layer1.wq=8x8" in err


def test_missing_checkpoint_exits_nonzero(tmp_path):
    assert cli.main(["reconstruct", "--checkpoint", str(tmp_path / "none"), "--kspace", str(tmp_path / "y")]) == 1


def test_unknown_config_key_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text(CONFIG + "frobnicate = 3\n")
    assert cli.main(["train", "--config", str(path)]) == 1
    assert "frobnicate" in capsys.readouterr().err
    path.write_text(CONFIG + "[extras]\nx = 1\n")
    assert cli.main(["train", "--config", str(path)]) == 1


def test_missing_dataset_fails_before_training(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text(CONFIG.replace("[data]\n", f"[data]\ndataset = {tmp_path / 'nowhere'}\n"))
    assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert not (tmp_path / "o").exists()


def test_usage_errors_exit_1(capsys):
    assert cli.main([]) == 1
    assert cli.main(["mask", "--width", "x", "--r", "4"]) == 1
    assert cli.main(["--help"]) == 0
