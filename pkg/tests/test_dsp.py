import numpy as np
import pytest
from scipy.signal import check_COLA, get_window

from igcrn.dsp import (DspError, StftConfig, amplitude_phase, interior, istft, pack_features, stft,
                       unpack_features, unpack_to_complex)

CFG = StftConfig()


def test_defaults_are_32ms_16ms_512():
    assert CFG == StftConfig.from_ms(16000, 32.0, 16.0)
    assert CFG.frame_length == 512 and CFG.hop == 256 and CFG.bins == 257


def test_window_is_sqrt_periodic_hann_and_cola():
    w = CFG.window()
    np.testing.assert_allclose(w ** 2, get_window("hann", 512, fftbins=True), atol=1e-15)
    assert check_COLA(w ** 2, 512, 256)
    # squared window overlap-adds to exactly one
    acc = np.zeros(512 * 4)
    for k in range(0, acc.size - 511, 256):
        acc[k:k + 512] += w ** 2
    np.testing.assert_allclose(acc[512:-512], 1.0, atol=1e-12)


def test_stft_matches_direct_dft():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(2000)
    s = stft(x)
    k = 2
    frame = x[k * 256:k * 256 + 512] * CFG.window()
    n = np.arange(512)
    direct = np.array([np.sum(frame * np.exp(-2j * np.pi * f * n / 512)) for f in range(257)])
    np.testing.assert_allclose(s[:, k], direct, atol=1e-9)


def test_round_trip_on_interior():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        x = rng.standard_normal((2, int(rng.integers(1000, 6000))))
        y = istft(stft(x))
        sl = interior(x.shape[1])
        worst = max(worst, np.linalg.norm(y[:, sl] - x[:, sl]) / np.linalg.norm(x[:, sl]))
    assert worst < 1e-12


def test_short_signal_and_bad_bins_raise():
    with pytest.raises(DspError):
        stft(np.zeros(100))
    with pytest.raises(DspError):
        istft(np.zeros((1, 100, 4), complex))
    with pytest.raises(DspError):
        StftConfig(hop=0)


def test_pack_order_and_unpack():
    rng = np.random.default_rng(2)
    spec = rng.standard_normal((2, 257, 5)) + 1j * rng.standard_normal((2, 257, 5))
    f = pack_features(spec, np.float64)
    assert f.shape == (1, 4, 256, 5)
    np.testing.assert_array_equal(f[0, 0], spec[0, :256].real)
    np.testing.assert_array_equal(f[0, 1], spec[0, :256].imag)
    np.testing.assert_array_equal(f[0, 2], spec[1, :256].real)
    np.testing.assert_array_equal(f[0, 3], spec[1, :256].imag)
    back = unpack_features(f)
    np.testing.assert_array_equal(back[0, :, :256], spec[:, :256])
    assert np.all(back[0, :, 256] == 0)
    with pytest.raises(DspError):
        pack_features(spec[:1])


def test_amplitude_phase_and_unpack_to_complex():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((1, 256, 4)) + 1j * rng.standard_normal((1, 256, 4))
    z[0, 0, 0] = 0
    amp, ph = amplitude_phase(z)
    assert ph.shape == (1, 2, 256, 4)
    np.testing.assert_array_equal(ph[0, :, 0, 0], [1.0, 0.0])
    rebuilt = unpack_to_complex(amp[:, None], ph)
    np.testing.assert_allclose(rebuilt[:, :256], z, atol=1e-12)
    with pytest.raises(DspError):
        unpack_to_complex(amp[:, None], 2 * ph)


def test_unpack_accepts_shrunken_phase_from_near_zero_raw_output():
    from igcrn.model import NetworkOutput, recover_spectrum
    from igcrn.tensor import Tensor
    raw = np.zeros((1, 2, 256, 3), np.float32)
    raw[0, 0, :, 0] = 1e-7
    raw[0, 1, :, 1] = 3.0
    ones = np.ones((1, 1, 256, 3), np.float32)
    amp, ph = recover_spectrum(NetworkOutput(Tensor(ones), Tensor(0 * ones), Tensor(raw)), ones)
    z = unpack_to_complex(amp.data.astype(np.float64), ph.data.astype(np.float64))
    assert np.all(np.abs(z[0, :256]) <= 1 + 1e-6)
    np.testing.assert_allclose(z[0, :256, 1], 1j, atol=1e-6)
