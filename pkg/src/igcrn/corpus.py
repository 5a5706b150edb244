"""Deterministic speech-like and noise-like test signals.

These stand in for recorded corpora. Speech-like signals are voiced
syllables (harmonic pulse trains with gliding pitch, formant shaping and a
syllabic envelope) separated by short pauses and occasional fricative
bursts. Noise presets are ``white``, ``babble`` (several overlapping
speech-like talkers) and ``machinery`` (motor hum plus modulated low-passed
noise).
"""

from __future__ import annotations

import numpy as np
from scipy.signal import butter, sosfilt

NOISE_PRESETS = ("white", "babble", "machinery")
PITCH_RANGE = (80.0, 300.0)

_VOWELS = (  # formant frequencies (Hz) loosely spread over the vowel space
    (730, 1090, 2440), (270, 2290, 3010), (300, 870, 2240), (530, 1840, 2480),
    (660, 1720, 2410), (490, 1350, 1690), (640, 1190, 2390), (570, 840, 2410),
)


def _formant_gain(freqs: np.ndarray, formants, bandwidth: float = 90.0) -> np.ndarray:
    g = np.zeros_like(freqs)
    for k, fc in enumerate(formants):
        g += (0.6 ** k) / (1.0 + ((freqs - fc) / bandwidth) ** 2)
    return g + 0.02


def _syllable(rng: np.random.Generator, n: int, fs: int) -> np.ndarray:
    lo, hi = PITCH_RANGE
    f_start = rng.uniform(lo + 10, hi - 60)
    f_end = np.clip(f_start * rng.uniform(0.8, 1.25), lo + 5, hi - 5)
    f0 = np.linspace(f_start, f_end, n)
    phase = 2 * np.pi * np.cumsum(f0) / fs
    formants = _VOWELS[rng.integers(len(_VOWELS))]
    mean_f0 = 0.5 * (f_start + f_end)
    n_harm = int((0.45 * fs) // max(f_start, f_end))
    harm = np.arange(1, n_harm + 1)
    amps = _formant_gain(harm * mean_f0, formants) / np.sqrt(harm)
    sig = (amps[:, None] * np.sin(harm[:, None] * phase[None, :] + rng.uniform(0, 2 * np.pi, (n_harm, 1)))).sum(0)
    env = np.sin(np.pi * np.linspace(0, 1, n)) ** 1.5
    return sig * env / (np.abs(amps).sum() + 1e-12)


def _fricative(rng: np.random.Generator, n: int, fs: int) -> np.ndarray:
    sos = butter(4, rng.uniform(2500, 4500) / (fs / 2), btype="high", output="sos")
    env = np.sin(np.pi * np.linspace(0, 1, n)) ** 2
    return 0.15 * sosfilt(sos, rng.standard_normal(n)) * env


def speech_like(seed: int, duration: float, sample_rate: int = 16000) -> np.ndarray:
    """Mono speech-like waveform of ``duration`` seconds, peak-normalized to 0.5."""
    rng = np.random.default_rng(seed)
    n_total = int(round(duration * sample_rate))
    out = np.zeros(n_total)
    pos = int(rng.integers(0, int(0.1 * sample_rate) + 1))
    while pos < n_total:
        n = int(rng.uniform(0.12, 0.32) * sample_rate)
        seg = _syllable(rng, n, sample_rate) * rng.uniform(0.5, 1.0)
        if rng.random() < 0.25:
            fn = int(rng.uniform(0.05, 0.12) * sample_rate)
            seg = np.concatenate([_fricative(rng, fn, sample_rate), seg])
        end = min(pos + seg.size, n_total)
        out[pos:end] += seg[: end - pos]
        pos = end + int(rng.uniform(0.02, 0.15) * sample_rate)
    peak = np.abs(out).max()
    return out * (0.5 / peak) if peak > 0 else out


def noise_like(preset: str, seed: int, duration: float, sample_rate: int = 16000) -> np.ndarray:
    """Mono noise of the given preset, unit RMS."""
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    if preset == "white":
        x = rng.standard_normal(n)
    elif preset == "babble":
        talkers = int(rng.integers(4, 8))
        seeds = rng.integers(0, 2 ** 31, talkers)
        x = sum(speech_like(int(s), duration, sample_rate) * rng.uniform(0.6, 1.0) for s in seeds)
    elif preset == "machinery":
        t = np.arange(n) / sample_rate
        f_hum = rng.uniform(45, 120)
        hum = sum((0.7 ** k) * np.sin(2 * np.pi * f_hum * (k + 1) * t + rng.uniform(0, 2 * np.pi))
                  for k in range(8))
        sos = butter(2, rng.uniform(600, 1500) / (sample_rate / 2), output="sos")
        rumble = sosfilt(sos, rng.standard_normal(n))
        rumble /= np.std(rumble) + 1e-12
        am = 1 + 0.5 * np.sin(2 * np.pi * rng.uniform(2, 8) * t)
        x = 0.6 * hum / np.std(hum) + rumble * am
    else:
        raise ValueError(f"unknown noise preset {preset!r}; choose from {NOISE_PRESETS}")
    return x / (np.sqrt(np.mean(x ** 2)) + 1e-12)
