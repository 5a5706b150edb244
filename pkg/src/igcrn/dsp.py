"""STFT analysis/synthesis and conversion to and from the network layout.

Frames are taken without centering or boundary padding, so ``istft``
reproduces only samples covered by two overlapping frames exactly (the
first and last ``hop`` samples are attenuated by the window).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

MODEL_BINS = 256


class DspError(ValueError):
    """Malformed audio or spectrogram input."""


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 16000
    frame_length: int = 512
    hop: int = 256
    dft_size: int = 512

    def __post_init__(self):
        if self.hop <= 0 or self.hop > self.frame_length:
            raise DspError(f"hop must be in (0, frame_length], got {self.hop}")
        if self.dft_size < self.frame_length:
            raise DspError("dft_size must be at least frame_length")

    @classmethod
    def from_ms(cls, sample_rate: int = 16000, frame_ms: float = 32.0, hop_ms: float = 16.0,
                dft_size: int | None = None) -> "StftConfig":
        frame = int(round(sample_rate * frame_ms / 1000))
        hop = int(round(sample_rate * hop_ms / 1000))
        return cls(sample_rate, frame, hop, dft_size or frame)

    @property
    def bins(self) -> int:
        return self.dft_size // 2 + 1

    def window(self) -> np.ndarray:
        """Square-root periodic Hann; its square overlap-adds to one at 50 % overlap."""
        n = np.arange(self.frame_length)
        return np.sqrt(0.5 - 0.5 * np.cos(2 * np.pi * n / self.frame_length))

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_length:
            raise DspError(f"signal of {n_samples} samples is shorter than one frame ({self.frame_length})")
        return (n_samples - self.frame_length) // self.hop + 1

    def n_samples(self, n_frames: int) -> int:
        return (n_frames - 1) * self.hop + self.frame_length


def stft(wave: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """One-sided STFT of ``[channels, samples]`` (or 1-d) -> ``[channels, bins, frames]`` complex."""
    x = np.asarray(wave, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None]
    n_frames = cfg.n_frames(x.shape[-1])
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.frame_length, axis=-1)[..., ::cfg.hop, :]
    frames = frames[:, :n_frames] * cfg.window()
    spec = np.fft.rfft(frames, n=cfg.dft_size, axis=-1).transpose(0, 2, 1)
    return spec[0] if squeeze else spec


def istft(spec: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Weighted overlap-add synthesis; inverse of :func:`stft` on interior samples."""
    s = np.asarray(spec)
    squeeze = s.ndim == 2
    if squeeze:
        s = s[None]
    if s.shape[1] != cfg.bins:
        raise DspError(f"spectrogram has {s.shape[1]} bins, config expects {cfg.bins}")
    n_ch, _, n_frames = s.shape
    frames = np.fft.irfft(s.transpose(0, 2, 1), n=cfg.dft_size, axis=-1)[..., :cfg.frame_length]
    frames = frames * cfg.window()
    out = np.zeros((n_ch, cfg.n_samples(n_frames)))
    for k in range(n_frames):
        out[:, k * cfg.hop: k * cfg.hop + cfg.frame_length] += frames[:, k]
    return out[0] if squeeze else out


def interior(n_samples: int, cfg: StftConfig = StftConfig()) -> slice:
    """Sample range reconstructed exactly by ``istft(stft(x))`` for a signal of this length."""
    end = cfg.n_samples(cfg.n_frames(n_samples))
    return slice(cfg.frame_length - cfg.hop, end - (cfg.frame_length - cfg.hop))


def pack_features(spec2ch: np.ndarray, dtype=np.float32) -> np.ndarray:
    """``[2, 257, T]`` complex -> ``[1, 4, 256, T]`` real as (re1, im1, re2, im2).

    A leading batch axis ``[B, 2, 257, T]`` is also accepted.
    """
    s = np.asarray(spec2ch)
    batched = s.ndim == 4
    if not batched:
        s = s[None]
    if s.shape[1] != 2:
        raise DspError(f"expected 2 channels, got {s.shape[1]}")
    if s.shape[2] < MODEL_BINS:
        raise DspError(f"need at least {MODEL_BINS} bins, got {s.shape[2]}")
    kept = s[:, :, :MODEL_BINS]
    feats = np.stack([kept[:, 0].real, kept[:, 0].imag, kept[:, 1].real, kept[:, 1].imag], axis=1)
    return feats.astype(dtype)


def unpack_features(feats: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pack_features`; the Nyquist bin comes back as zero."""
    f = np.asarray(feats)
    if f.ndim != 4 or f.shape[1] != 4:
        raise DspError(f"expected [B, 4, F, T], got {f.shape}")
    b, _, n_bins, t = f.shape
    out = np.zeros((b, 2, n_bins + 1, t), dtype=np.complex128)
    out[:, 0, :n_bins] = f[:, 0] + 1j * f[:, 1]
    out[:, 1, :n_bins] = f[:, 2] + 1j * f[:, 3]
    return out


def unpack_to_complex(amp, phase, tol: float = 1e-4) -> np.ndarray:
    """Combine ``[B,1,F,T]`` amplitude and ``[B,2,F,T]`` phase into ``[B, F+1, T]`` complex.

    The phase comes from an epsilon-guarded normalization, so its modulus is
    at most 1 and falls below 1 only where the raw phase output is near zero.
    A modulus above ``1 + tol`` is rejected.
    """
    a = amp.data if isinstance(amp, Tensor) else np.asarray(amp)
    p = phase.data if isinstance(phase, Tensor) else np.asarray(phase)
    if a.ndim != 4 or a.shape[1] != 1 or p.shape[1] != 2 or p.shape[2:] != a.shape[2:]:
        raise DspError(f"amplitude {a.shape} / phase {p.shape} layout mismatch")
    mod = np.hypot(p[:, 0], p[:, 1])
    if np.any(mod > 1 + tol):
        raise DspError("phase modulus exceeds 1")
    b, _, n_bins, t = a.shape
    out = np.zeros((b, n_bins + 1, t), dtype=np.complex128)
    out[:, :n_bins] = a[:, 0] * (p[:, 0] + 1j * p[:, 1])
    return out


def amplitude_phase(spec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude and unit phase (real, imag stacked on axis -3) of a complex array.

    Zero-magnitude bins get phase (1, 0).
    """
    amp = np.abs(spec)
    safe = np.where(amp > 0, amp, 1.0)
    unit = np.where(amp > 0, spec / safe, 1.0 + 0j)
    return amp, np.stack([unit.real, unit.imag], axis=-3)
