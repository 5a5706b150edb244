"""WAV read/write for 16-bit PCM and 32-bit float, mono or multichannel."""

from __future__ import annotations

import os

import numpy as np
from scipy.io import wavfile


class WavError(ValueError):
    pass


def read_wav(path: str | os.PathLike, expected_rate: int | None = 16000) -> tuple[np.ndarray, int]:
    """Return ``([channels, samples] float64 in [-1, 1], rate)``.

    A rate differing from ``expected_rate`` is an error; nothing is resampled.
    """
    try:
        rate, data = wavfile.read(os.fspath(path))
    except (ValueError, OSError) as exc:
        raise WavError(f"cannot read {path}: {exc}") from exc
    if expected_rate is not None and rate != expected_rate:
        raise WavError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        x = data.astype(np.float64)
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    else:
        raise WavError(f"{path}: unsupported sample format {data.dtype}")
    x = x[None] if x.ndim == 1 else x.T
    return np.ascontiguousarray(x), int(rate)


def write_wav(path: str | os.PathLike, wave: np.ndarray, rate: int = 16000, fmt: str = "float32") -> None:
    """Write ``[channels, samples]`` (or 1-d) as ``fmt`` in {"float32", "pcm16"}."""
    x = np.asarray(wave, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2:
        raise WavError("wave must be [channels, samples]")
    if fmt == "float32":
        data = x.T.astype(np.float32)
    elif fmt == "pcm16":
        data = np.clip(np.round(x.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise WavError(f"unknown WAV format {fmt!r}")
    if data.shape[1] == 1:
        data = data[:, 0]
    wavfile.write(os.fspath(path), int(rate), np.ascontiguousarray(data))
