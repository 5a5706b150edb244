import json
import os

import numpy as np
import pytest

from igcrn.acoustics import doa_grid, measured_snr
from igcrn.dataset import TARGET_RMS, DataError, SimConfig, plan_split, read_manifest, simulate
from igcrn.wavio import read_wav

from conftest import TINY_SIM


def test_manifest_layout(tiny_data):
    recs = read_manifest(tiny_data)
    assert [r["split"] for r in recs] == ["train"] * 4 + ["val"] + ["test"] * 3
    assert read_manifest(tiny_data, "val")[0]["id"] == "val-00000"
    for r in recs:
        for k in ("noisy_path", "clean_path", "noise_path"):
            assert os.path.exists(os.path.join(tiny_data, r[k]))
        assert r["speech_doa"] != r["noise_doa"]
    with open(os.path.join(tiny_data, "sim_config.json")) as fh:
        assert SimConfig.from_dict(json.load(fh)) == TINY_SIM


def test_rendered_audio_consistent(tiny_data):
    for r in read_manifest(tiny_data, "train"):
        noisy, fs = read_wav(os.path.join(tiny_data, r["noisy_path"]))
        clean, _ = read_wav(os.path.join(tiny_data, r["clean_path"]))
        noise, _ = read_wav(os.path.join(tiny_data, r["noise_path"]))
        assert noisy.shape == (2, int(0.8 * fs))
        np.testing.assert_allclose(noisy, clean + noise, atol=1e-6)
        assert np.sqrt(np.mean(noisy.astype(np.float64) ** 2)) == pytest.approx(TARGET_RMS, rel=1e-4)
        assert abs(measured_snr(clean, noise) - r["snr_db"]) < 0.01


def test_split_grids_and_balance():
    cfg = SimConfig(n_train=30, n_test=30, seed=9)
    train = plan_split(cfg, "train")
    assert {r["speech_doa"] for r in train} <= set(doa_grid("train"))
    test = plan_split(cfg, "test")
    assert {r["speech_doa"] for r in test} <= set(doa_grid("test"))
    keys = {(r["snr_db"], r["noise"]) for r in test}
    assert keys == {(s, n) for s in (-3.0, 0.0, 3.0) for n in ("white", "babble", "machinery")}
    shifted = plan_split(SimConfig(n_test=20, test_offset=5.625), "test")
    assert not {r["speech_doa"] for r in shifted} & set(doa_grid("train"))


def test_test_pairs_share_sources():
    cfg = SimConfig(n_test=3, test_pairs=((0.0, 11.25), (78.75, 90.0)))
    recs = plan_split(cfg, "test")
    assert len(recs) == 6
    assert [r["speech_seed"] for r in recs[:3]] == [r["speech_seed"] for r in recs[3:]]
    assert {(r["speech_doa"], r["noise_doa"]) for r in recs} == {(0.0, 11.25), (78.75, 90.0)}


def test_planning_is_seeded():
    a = plan_split(SimConfig(seed=1), "train")[:5]
    assert a == plan_split(SimConfig(seed=1), "train")[:5]
    assert a != plan_split(SimConfig(seed=2), "train")[:5]


def test_simulate_is_byte_identical(tmp_path):
    cfg = SimConfig(n_train=2, n_val=0, n_test=0, duration=0.5, t60=0.0)
    simulate(cfg, tmp_path / "a")
    simulate(cfg, tmp_path / "b")
    for name in ("manifest.jsonl", "train/train-00001_noisy.wav"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_bad_configs(tmp_path):
    with pytest.raises(DataError):
        SimConfig(noises=("pink",))
    with pytest.raises(DataError):
        SimConfig(duration=0.1)
    with pytest.raises(DataError):
        read_manifest(tmp_path)
    (tmp_path / "manifest.jsonl").write_text("{broken\n")
    with pytest.raises(DataError):
        read_manifest(tmp_path)
