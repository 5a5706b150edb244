"""Waveform <-> network plumbing shared by training, enhancement and evaluation."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .dsp import MODEL_BINS, DspError, StftConfig, amplitude_phase, istft, pack_features, stft, unpack_to_complex
from .model import IGCRN, recover_spectrum
from .tensor import Tensor, no_grad

REFERENCE_CHANNEL = 0


class Batch(NamedTuple):
    features: np.ndarray     # [B, 4, F, T]
    noisy_amp: np.ndarray    # [B, 1, F, T]
    clean_amp: np.ndarray    # [B, 1, F, T]
    clean_phase: np.ndarray  # [B, 2, F, T]


def make_batch(noisy: np.ndarray, clean: np.ndarray, cfg: StftConfig = StftConfig(),
               dtype=np.float32) -> Batch:
    """``noisy`` is ``[B, 2, N]``; ``clean`` is the ``[B, N]`` reference-channel target."""
    if noisy.ndim != 3 or noisy.shape[1] != 2:
        raise DspError(f"noisy batch must be [B, 2, N], got {noisy.shape}")
    spec = np.stack([stft(x, cfg) for x in noisy])          # [B, 2, 257, T]
    target = np.stack([stft(c, cfg) for c in clean])        # [B, 257, T]
    feats = pack_features(spec, dtype)
    amp_n = np.abs(spec[:, REFERENCE_CHANNEL, :MODEL_BINS])[:, None]
    amp_c, ph_c = amplitude_phase(target[:, :MODEL_BINS])
    return Batch(feats, amp_n.astype(dtype), amp_c[:, None].astype(dtype), ph_c.astype(dtype))


def enhance_waveform(model: IGCRN, noisy: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Enhance a ``[2, N]`` mixture; returns the ``istft`` span of ``(T-1)*hop + frame`` samples.

    Samples past the last full frame are not synthesized.
    """
    x = np.asarray(noisy, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != 2:
        raise DspError(f"expected a 2-channel waveform, got shape {x.shape}")
    spec = stft(x, cfg)
    dtype = next(iter(model.params.items()))[1].dtype
    feats = pack_features(spec, dtype)
    amp_n = np.abs(spec[REFERENCE_CHANNEL, :MODEL_BINS])[None, None].astype(dtype)
    with no_grad():
        out = model.forward(Tensor(feats), training=False)
        amp, phase = recover_spectrum(out, amp_n)
    return istft(unpack_to_complex(amp.data.astype(np.float64), phase.data.astype(np.float64))[0], cfg)


def enhance_full_length(model: IGCRN, noisy: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """As :func:`enhance_waveform`, zero-padded back to the input length."""
    y = enhance_waveform(model, noisy, cfg)
    out = np.zeros(np.shape(noisy)[-1])
    out[: y.size] = y
    return out
