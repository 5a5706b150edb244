import numpy as np
import pytest

from igcrn.checkpoint import CheckpointError, load_model, read_checkpoint, restore, save_checkpoint
from igcrn.model import IGCRN, ModelConfig
from igcrn.nn import ConfigError
from igcrn.optim import Adam
from igcrn.training import batch_loss

from conftest import TINY_MODEL


def _trained(seed=0):
    model = IGCRN(TINY_MODEL, seed=seed)
    opt = Adam(model.params, lr=1e-3)
    rng = np.random.default_rng(seed)
    for _ in range(2):
        x = rng.standard_normal((2, 2, 1600)).astype(np.float32)
        c = rng.standard_normal((2, 1600)).astype(np.float32)
        loss = batch_loss(model, x, c, True)
        model.params.zero_grad()
        loss.backward()
        opt.step()
    return model, opt


def test_round_trip_is_byte_identical(tmp_path):
    model, opt = _trained()
    save_checkpoint(tmp_path / "a.ckpt", model, opt, epoch=2, extra={"note": "x"})
    loaded, ckpt = load_model(tmp_path / "a.ckpt")
    assert ckpt.epoch == 2 and ckpt.step == 2 and ckpt.extra == {"note": "x"}
    opt2 = Adam(loaded.params)
    restore(ckpt, loaded, opt2)
    save_checkpoint(tmp_path / "b.ckpt", loaded, opt2, epoch=2, extra={"note": "x"})
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_restored_model_gives_identical_output(tmp_path):
    model, opt = _trained(1)
    save_checkpoint(tmp_path / "m.ckpt", model, opt)
    loaded, _ = load_model(tmp_path / "m.ckpt")
    x = np.random.default_rng(5).standard_normal((1, 2, 2400)).astype(np.float32)
    c = np.zeros((1, 2400), np.float32)
    a = batch_loss(model, x, c, False).data
    b = batch_loss(loaded, x, c, False).data
    assert a == b


def test_config_mismatch_and_corruption(tmp_path):
    model, opt = _trained()
    p = tmp_path / "c.ckpt"
    save_checkpoint(p, model, opt)
    with pytest.raises(ConfigError):
        load_model(p, expected=ModelConfig(base_channels=4))
    with pytest.raises(ConfigError):
        restore(read_checkpoint(p), IGCRN(ModelConfig(base_channels=3)))
    save_checkpoint(tmp_path / "noopt.ckpt", model)
    with pytest.raises(CheckpointError):
        restore(read_checkpoint(tmp_path / "noopt.ckpt"), model, Adam(model.params))
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "junk.ckpt")
    raw = p.read_bytes()
    (tmp_path / "short.ckpt").write_bytes(raw[:-100])
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "short.ckpt")

