"""Frequency-domain MVDR beamformer for a two-microphone array with known DOA."""

from __future__ import annotations

import numpy as np

from .acoustics import SPEED_OF_SOUND
from .dsp import StftConfig, istft, stft

MIN_COV_FRAMES = 10


class BeamformerError(ValueError):
    pass


def steering_vector(doa_deg: float, freqs, mic_spacing: float = 0.02,
                    c: float = SPEED_OF_SOUND) -> np.ndarray:
    """Far-field plane-wave response ``[len(freqs), 2]`` relative to microphone 1."""
    if abs(doa_deg) > 90:
        raise BeamformerError(f"DOA {doa_deg} outside [-90, 90]")
    f = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    tau = mic_spacing * np.sin(np.deg2rad(doa_deg)) / c
    return np.stack([np.ones_like(f, dtype=np.complex128), np.exp(-2j * np.pi * f * tau)], axis=-1)


def mvdr_weights(noise_cov: np.ndarray, steering: np.ndarray, loading: float = 1e-6) -> np.ndarray:
    """``w = R^-1 d / (d^H R^-1 d)`` per bin after loading ``R`` by ``loading * tr(R) / M``.

    ``noise_cov`` is ``[F, M, M]`` Hermitian and ``steering`` is ``[F, M]``.
    """
    r = np.asarray(noise_cov, dtype=np.complex128)
    d = np.asarray(steering, dtype=np.complex128)
    if r.ndim != 3 or r.shape[1] != r.shape[2] or d.shape != r.shape[:2]:
        raise BeamformerError(f"covariance {r.shape} and steering {d.shape} do not match")
    m = r.shape[1]
    tr = np.trace(r, axis1=1, axis2=2).real
    r = r + (loading * tr / m)[:, None, None] * np.eye(m)
    try:
        rinv_d = np.linalg.solve(r, d[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise BeamformerError("noise covariance is singular after loading") from exc
    denom = np.einsum("fm,fm->f", d.conj(), rinv_d)
    if np.any(~np.isfinite(rinv_d)) or np.any(np.abs(denom) == 0):
        raise BeamformerError("noise covariance is singular after loading")
    return rinv_d / denom[:, None]


def spatial_covariance(spec: np.ndarray) -> np.ndarray:
    """``[M, F, T]`` STFT -> ``[F, M, M]`` frame-averaged covariance."""
    if spec.shape[-1] < MIN_COV_FRAMES:
        raise BeamformerError(f"covariance needs at least {MIN_COV_FRAMES} frames, got {spec.shape[-1]}")
    return np.einsum("mft,nft->fmn", spec, spec.conj()) / spec.shape[-1]


def apply_weights(weights: np.ndarray, spec: np.ndarray) -> np.ndarray:
    """``y[f, t] = w[f]^H x[:, f, t]``."""
    return np.einsum("fm,mft->ft", weights.conj(), spec)


def enhance_mvdr(noisy: np.ndarray, doa_deg: float, mode: str = "oracle", noise: np.ndarray | None = None,
                 noise_frames: int = MIN_COV_FRAMES, mic_spacing: float = 0.02,
                 cfg: StftConfig = StftConfig(), loading: float = 1e-6) -> np.ndarray:
    """Beamform a ``[2, N]`` mixture towards ``doa_deg`` and resynthesize one channel.

    ``oracle`` estimates the noise covariance from the separate noise image
    ``noise``; ``recursive`` uses the first ``noise_frames`` frames of the
    mixture, assumed speech-free.
    """
    x = np.asarray(noisy, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != 2:
        raise BeamformerError(f"expected a [2, N] mixture, got {x.shape}")
    spec = stft(x, cfg)
    if mode == "oracle":
        if noise is None:
            raise BeamformerError("oracle mode needs the noise image")
        cov = spatial_covariance(stft(np.asarray(noise, dtype=np.float64), cfg))
    elif mode == "recursive":
        if noise_frames < MIN_COV_FRAMES:
            raise BeamformerError(f"covariance needs at least {MIN_COV_FRAMES} frames, got {noise_frames}")
        cov = spatial_covariance(spec[:, :, :noise_frames])
    else:
        raise BeamformerError(f"unknown covariance mode {mode!r}")
    freqs = np.arange(cfg.bins) * cfg.sample_rate / cfg.dft_size
    w = mvdr_weights(cov, steering_vector(doa_deg, freqs, mic_spacing), loading)
    y = istft(apply_weights(w, spec), cfg)
    out = np.zeros(x.shape[1])
    out[: y.size] = y
    return out
