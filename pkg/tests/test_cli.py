import numpy as np
import pytest

from qednet import cli, train
from qednet.data import read_mask, read_raster, write_mask


def _synth(path, seed, size=8):
    assert cli.main(["synth", "--out", str(path), "--seed", str(seed), "--size", str(size)]) == 0


@pytest.fixture
def scene_dirs(tmp_path):
    tr, va = tmp_path / "train", tmp_path / "val"
    tr.mkdir()
    va.mkdir()
    for s in range(2):
        _synth(tr / f"s{s}", s)
    _synth(va / "v0", 100)
    return tr, va


def _train_args(tr, va, out, *extra):
    return ["train", "--train-dir", str(tr), "--val-dir", str(va), "--out", str(out),
            "--feat-width", "4", "--epochs", "2", "--workers", "1", *extra]


def test_synth_writes_pair(tmp_path):
    _synth(tmp_path / "a", 3, size=10)
    assert read_raster(tmp_path / "a.mqr").values.shape == (10, 10, 12)
    assert read_mask(tmp_path / "a.mqm").shape == (10, 10)


def test_train_predict_evaluate(scene_dirs, tmp_path, capsys):
    tr, va = scene_dirs
    ckpt = tmp_path / "m.mqc"
    assert cli.main(_train_args(tr, va, ckpt, "--seed", "7")) == 0
    out = capsys.readouterr().out
    assert "best epoch" in out
    assert (tmp_path / "m.mqc.history.csv").read_text().startswith("epoch,lr,train_loss,val_loss,val_kappa")

    # same seed, same checkpoint bytes
    again = tmp_path / "m2.mqc"
    assert cli.main(_train_args(tr, va, again, "--seed", "7")) == 0
    assert ckpt.read_bytes() == again.read_bytes()

    pred = tmp_path / "p"
    assert cli.main(["predict", "--checkpoint", str(ckpt), "--input", str(va / "v0.mqr"), "--out", str(pred)]) == 0
    assert "threshold" in capsys.readouterr().out
    y = read_raster(f"{pred}.sigmoid.mqr").values[..., 0]
    assert y.shape == (8, 8)
    # the predicted map equals the in-library forward pass
    params, _ = train.load_checkpoint(ckpt)
    expected = train.qmodel.forward(read_raster(va / "v0.mqr").values.astype(float), params)
    assert np.array_equal(y, expected.astype(np.float32))

    assert cli.main(["predict", "--checkpoint", str(ckpt), "--input", str(va / "v0.mqr"),
                     "--out", str(pred), "--threshold", "0.5"]) == 0
    np.testing.assert_array_equal(read_mask(f"{pred}.class.mqm"), (expected > 0.5).astype(np.uint8))

    report = tmp_path / "r.csv"
    assert cli.main(["evaluate", "--input", str(va / "v0"), "--checkpoint", str(ckpt), "--report", str(report)]) == 0
    assert "kappa" in capsys.readouterr().out
    assert report.read_text().startswith("method,OA,AA,kappa")


def test_predict_variant_mismatch(scene_dirs, tmp_path):
    tr, va = scene_dirs
    ckpt = tmp_path / "m.mqc"
    assert cli.main(_train_args(tr, va, ckpt, "--epochs", "1")) == 0
    rc = cli.main(["predict", "--checkpoint", str(ckpt), "--input", str(va / "v0.mqr"),
                   "--out", str(tmp_path / "p"), "--variant", "cnn_only"])
    assert rc == 3


def test_evaluate_perfect(tmp_path, capsys):
    m = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    write_mask(tmp_path / "gt.mqm", m)
    assert cli.main(["evaluate", "--input", str(tmp_path / "gt.mqm"), str(tmp_path / "gt.mqm")]) == 0
    out = capsys.readouterr().out
    assert "100.00" in out and "1.000" in out


def test_index_command(tmp_path, capsys):
    _synth(tmp_path / "s", 0)
    assert cli.main(["index", "--input", str(tmp_path / "s.mqr"), "--index", "ndvi",
                     "--threshold", "0.33", "--out", str(tmp_path / "o")]) == 0
    assert read_raster(tmp_path / "o.ndvi.mqr").values.shape == (8, 8, 1)
    assert read_mask(tmp_path / "o.class.mqm").shape == (8, 8)
    assert cli.main(["evaluate", "--input", str(tmp_path / "s"), "--index", "mvi"]) == 0
    assert "MVI" in capsys.readouterr().out


def test_emvi_needs_threshold(tmp_path):
    _synth(tmp_path / "s", 0)
    assert cli.main(["index", "--input", str(tmp_path / "s.mqr"), "--index", "emvi", "--out", str(tmp_path / "o")]) == 2


def test_missing_val_dir(scene_dirs, tmp_path, capsys):
    tr, _ = scene_dirs
    assert cli.main(["train", "--train-dir", str(tr), "--out", str(tmp_path / "m.mqc")]) == 2
    assert "--val-dir" in capsys.readouterr().err
    assert not (tmp_path / "m.mqc").exists()


def test_unknown_flag_rejected():
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--bogus"])
    assert exc.value.code == 2


def test_data_errors(tmp_path):
    (tmp_path / "bad.mqr").write_bytes(b"not a raster at all")
    assert cli.main(["index", "--input", str(tmp_path / "bad.mqr"), "--index", "ndvi", "--out", str(tmp_path / "o")]) == 3
    assert cli.main(["train", "--train-dir", str(tmp_path / "none"), "--val-dir", str(tmp_path / "none"),
                     "--out", str(tmp_path / "m")]) == 3


def test_workers_env_override(scene_dirs, tmp_path, monkeypatch):
    tr, va = scene_dirs
    a, b = tmp_path / "a.mqc", tmp_path / "b.mqc"
    assert cli.main(_train_args(tr, va, a, "--epochs", "1")) == 0
    monkeypatch.setenv("QEDNET_WORKERS", "3")
    assert cli.main(_train_args(tr, va, b, "--epochs", "1")) == 0
    assert a.read_bytes() == b.read_bytes()
    monkeypatch.setenv("QEDNET_WORKERS", "many")
    assert cli.main(_train_args(tr, va, b, "--epochs", "1")) == 2


def test_selftest_exit_zero(capsys):
    assert cli.main(["selftest"]) == 0
    assert "checks passed" in capsys.readouterr().out
