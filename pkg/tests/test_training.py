import json
import os

import numpy as np
import pytest

from igcrn import training
from igcrn.nn import ConfigError
from igcrn.tensor import NumericError, Tensor
from igcrn.training import LOSS_LOG, TrainConfig, Trainer, checkpoint_path, crop_or_pad, latest_checkpoint

from conftest import TINY_MODEL


def _cfg(**kw):
    base = dict(model=TINY_MODEL, lr=1e-3, batch_size=2, epochs=2, crop_seconds=0.5, seed=4)
    base.update(kw)
    return TrainConfig(**base)


def _quiet(_msg):
    pass


def test_two_epochs_write_log_and_checkpoints(tiny_data, tmp_path):
    hist = Trainer(_cfg(), tiny_data, tmp_path, log=_quiet).run()
    assert [h["epoch"] for h in hist] == [1, 2]
    assert [h["steps"] for h in hist] == [2, 4]
    assert all(np.isfinite(h["train_loss"]) and np.isfinite(h["val_loss"]) for h in hist)
    lines = (tmp_path / LOSS_LOG).read_text().splitlines()
    assert [json.loads(x) for x in lines] == hist
    assert latest_checkpoint(str(tmp_path)) == (2, checkpoint_path(str(tmp_path), 2))


def test_resume_matches_uninterrupted_run(tiny_data, tmp_path):
    Trainer(_cfg(), tiny_data, tmp_path / "full", log=_quiet).run()
    Trainer(_cfg(epochs=1), tiny_data, tmp_path / "split", log=_quiet).run()
    Trainer(_cfg(epochs=2), tiny_data, tmp_path / "split", log=_quiet).run(resume=True)
    for name in (LOSS_LOG, "epoch_002.ckpt"):
        assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "split" / name).read_bytes()


def test_lr_schedule_and_resume_across_drop(tiny_data, tmp_path):
    cfg = _cfg(epochs=3, lr_drop_epochs=(2,), lr_drop_factor=0.5)
    assert [cfg.lr_at(e) for e in (1, 2, 3)] == [1e-3, 5e-4, 5e-4]
    hist = Trainer(cfg, tiny_data, tmp_path / "full", log=_quiet).run()
    assert [h["lr"] for h in hist] == [1e-3, 5e-4, 5e-4]
    Trainer(_cfg(epochs=1, lr_drop_epochs=(2,), lr_drop_factor=0.5), tiny_data, tmp_path / "split",
            log=_quiet).run()
    Trainer(cfg, tiny_data, tmp_path / "split", log=_quiet).run(resume=True)
    assert (tmp_path / "full" / "epoch_003.ckpt").read_bytes() == (tmp_path / "split" / "epoch_003.ckpt").read_bytes()


def test_resume_refuses_changed_config(tiny_data, tmp_path):
    Trainer(_cfg(epochs=1), tiny_data, tmp_path, log=_quiet).run()
    with pytest.raises(ConfigError):
        Trainer(_cfg(lr=5e-4), tiny_data, tmp_path, log=_quiet).run(resume=True)


def test_validation_is_eval_mode(tiny_data, tmp_path):
    tr = Trainer(_cfg(epochs=1), tiny_data, tmp_path, log=_quiet)
    tr.run()
    _, noisy, clean = training.load_split(tiny_data, "val")
    stats = [st.running_mean.copy() for _, st in tr.model.params.bn_items()]
    a = tr.validate(noisy, clean)
    b = tr.validate(noisy, clean)
    assert a == b
    for s, (_, st) in zip(stats, tr.model.params.bn_items()):
        np.testing.assert_array_equal(s, st.running_mean)
    assert tr.validate([], []) is None


def test_nan_loss_aborts(tiny_data, tmp_path, monkeypatch):
    monkeypatch.setattr(training, "batch_loss", lambda *a, **k: Tensor(np.float32(np.nan)))
    with pytest.raises(NumericError):
        Trainer(_cfg(epochs=1), tiny_data, tmp_path, log=_quiet).run()
    assert not os.path.exists(checkpoint_path(str(tmp_path), 1))


def test_crop_or_pad():
    x = np.arange(10.0)
    np.testing.assert_array_equal(crop_or_pad(x, 4, 3), [3, 4, 5, 6])
    np.testing.assert_array_equal(crop_or_pad(x[:2], 4, 0), [0, 1, 0, 0])


def test_bad_train_config():
    with pytest.raises(ConfigError):
        _cfg(lr=0.0)
    with pytest.raises(ConfigError):
        _cfg(batch_size=0)
    with pytest.raises(ConfigError):
        _cfg(lr_drop_factor=1.5)
    assert TrainConfig.from_dict(_cfg(lr_drop_epochs=(3, 5)).to_dict()).lr_drop_epochs == (3, 5)
    assert TrainConfig.from_dict(_cfg().to_dict()) == _cfg()
