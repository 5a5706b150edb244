import numpy as np
import pytest

from igcrn.wavio import WavError, read_wav, write_wav


def test_float32_round_trip_multichannel(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.9, 0.9, (2, 1000))
    p = tmp_path / "a.wav"
    write_wav(p, x, 16000, "float32")
    y, fs = read_wav(p)
    assert fs == 16000 and y.shape == (2, 1000)
    np.testing.assert_allclose(y, x.astype(np.float32), rtol=0, atol=0)


def test_pcm16_round_trip_within_one_lsb(tmp_path):
    x = np.linspace(-0.99, 0.99, 500)
    p = tmp_path / "b.wav"
    write_wav(p, x, 16000, "pcm16")
    y, _ = read_wav(p)
    assert y.shape == (1, 500)
    assert np.max(np.abs(y[0] - x)) <= 0.5 / 32768 + 1e-12


def test_rate_mismatch_and_bad_format(tmp_path):
    p = tmp_path / "c.wav"
    write_wav(p, np.zeros(10), 8000)
    with pytest.raises(WavError):
        read_wav(p, 16000)
    assert read_wav(p, None)[1] == 8000
    with pytest.raises(WavError):
        write_wav(tmp_path / "d.wav", np.zeros(10), 16000, "mp3")
    with pytest.raises(WavError):
        read_wav(tmp_path / "missing.wav")


def test_same_input_same_bytes(tmp_path):
    x = np.sin(np.arange(300) / 7.0)
    write_wav(tmp_path / "1.wav", x)
    write_wav(tmp_path / "2.wav", x)
    assert (tmp_path / "1.wav").read_bytes() == (tmp_path / "2.wav").read_bytes()
